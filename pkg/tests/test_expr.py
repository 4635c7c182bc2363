import pytest
from hypothesis import given, settings, strategies as st

from symread.expr import (
    BinOp,
    Binary,
    Const,
    Extend,
    Extract,
    Ite,
    NotConcrete,
    ParseError,
    UnboundVariable,
    Unary,
    UnOp,
    Var,
    WidthMismatch,
    additive_terms,
    and_all,
    binop,
    bv,
    eval_expr,
    ite,
    or_all,
    parse_sexpr,
    split_concrete_symbolic,
    to_sexpr,
    to_sexpr_with_decls,
    var,
    var_widths,
)


def test_eval_constant():
    assert eval_expr(bv(5, 32), {}) == 5


def test_eval_modular_wraparound():
    x = var("x", 32)
    assert eval_expr(x + 1, {"x": 0xFFFFFFFF}) == 0


def test_eval_ite_direct_substitution():
    x = var("x", 8)
    e = ite(x.eq(4), bv(5, 32), bv(9, 32))
    assert eval_expr(e, {"x": 4}) == 5
    assert eval_expr(e, {"x": 5}) == 9


def test_eval_signed_comparisons():
    x = var("x", 8)
    assert eval_expr(x.slt(0), {"x": 0x80}) == 1  # -128 < 0
    assert eval_expr(x.slt(0), {"x": 0x7F}) == 0
    assert eval_expr(x.sle(0xFF), {"x": 0}) == 0  # 0 <= -1 is false


def test_eval_extract_extend_concat():
    x = var("x", 16)
    assert eval_expr(x.extract(7, 0), {"x": 0xABCD}) == 0xCD
    assert eval_expr(x.extract(15, 8), {"x": 0xABCD}) == 0xAB
    assert eval_expr(x.zext(8), {"x": 0xFFFF}) == 0xFFFF
    assert eval_expr(x.sext(8), {"x": 0x8000}) == 0xFF8000
    from symread.expr import Concat

    assert eval_expr(Concat(bv(0xAB, 8), bv(0xCD, 8)), {}) == 0xABCD


def test_eval_unbound_variable():
    with pytest.raises(UnboundVariable):
        eval_expr(var("x", 8), {})


def test_assignment_values_reduced_modulo_width():
    assert eval_expr(var("x", 8), {"x": 0x1FF}) == 0xFF


def test_width_mismatch_rejected():
    with pytest.raises(WidthMismatch):
        binop(BinOp.ADD, bv(1, 8), bv(1, 16))
    with pytest.raises(WidthMismatch):
        ite(bv(1, 2), bv(0, 8), bv(0, 8))
    with pytest.raises(WidthMismatch):
        Extract(8, 0, bv(0, 8))
    with pytest.raises(WidthMismatch):
        Const(0, 513)
    with pytest.raises(WidthMismatch):
        Const(0, 0)


def test_structural_equality_and_hash():
    a = bv(0x10, 64) + var("x", 64)
    b = bv(0x10, 64) + var("x", 64)
    assert a == b
    assert hash(a) == hash(b)
    assert a != bv(0x10, 64) + var("y", 64)


def test_const_value_reduced():
    assert Const(-1, 8).value == 0xFF
    assert Const(256, 8).value == 0


def test_var_widths_conflict():
    e = binop(BinOp.ADD, var("x", 8).zext(8), var("x", 16))
    with pytest.raises(WidthMismatch):
        var_widths(e)


# -- concrete/symbolic splitting -------------------------------------------

def test_split_table_address_shape():
    # rax + rdi*4 with rax holding the table base
    addr = bv(0x201020, 64) + var("x", 8).zext(56) * 4
    concrete, symbolic = split_concrete_symbolic(addr)
    assert concrete is not None and symbolic is not None
    assert eval_expr(concrete, {}) == 0x201020
    for x in (0, 3, 200):
        got = eval_expr(binop(BinOp.ADD, concrete, symbolic), {"x": x})
        assert got == eval_expr(addr, {"x": x})


def test_split_fully_symbolic():
    e = var("x", 64) + var("y", 64)
    concrete, symbolic = split_concrete_symbolic(e)
    assert concrete is None
    assert symbolic == e


def test_split_folds_constant_spine():
    e = (bv(0x201020, 64) + bv(0x100, 64)) + var("x", 64)
    concrete, symbolic = split_concrete_symbolic(e)
    assert eval_expr(concrete, {}) == 0x201120
    assert set(eval_expr(t, {}) for t in additive_terms(concrete)) == {0x201020, 0x100}
    assert symbolic == var("x", 64)


def test_split_subtracted_symbolic():
    e = bv(0x100, 64) - var("x", 64)
    concrete, symbolic = split_concrete_symbolic(e)
    assert eval_expr(concrete, {}) == 0x100
    for x in (0, 1, 99):
        assert eval_expr(binop(BinOp.ADD, concrete, symbolic), {"x": x}) == eval_expr(
            e, {"x": x}
        )


def test_additive_terms_goldens():
    e = bv(0x201020, 64) + bv(0x100, 64)
    assert [eval_expr(t, {}) for t in additive_terms(e)] == [0x201020, 0x100]
    assert [eval_expr(t, {}) for t in additive_terms(bv(0x42, 64))] == [0x42]
    e2 = (bv(0x1000, 64) - bv(0x10, 64)) + bv(0x8, 64)
    terms = additive_terms(e2)
    assert [eval_expr(t, {}) for t in terms] == [0x1000, (-0x10) % (1 << 64), 0x8]
    # terms sum back to the whole expression
    assert sum(eval_expr(t, {}) for t in terms) % (1 << 64) == eval_expr(e2, {})


def test_additive_terms_rejects_variables():
    with pytest.raises(NotConcrete):
        additive_terms(var("x", 8))


# -- s-expression syntax ------------------------------------------------------

def test_parse_literals():
    assert parse_sexpr("#x0f") == Const(15, 8)
    assert parse_sexpr("#b101") == Const(5, 3)
    assert parse_sexpr("(_ bv77 64)") == Const(77, 64)


def test_parse_with_declarations():
    e = parse_sexpr("(declare-const q (_ BitVec 8)) (bvadd q (_ bv1 8))")
    assert e == var("q", 8) + 1


def test_parse_env_variables():
    e = parse_sexpr("(bvmul ((_ zero_extend 56) x) (_ bv4 64))", {"x": 8})
    assert e == var("x", 8).zext(56) * 4


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_sexpr("(bvadd x)")  # arity
    with pytest.raises(ParseError):
        parse_sexpr("undeclared")
    with pytest.raises(ParseError):
        parse_sexpr("(bvadd (_ bv1 8) (_ bv1 8)) (_ bv2 8)")  # two terms
    with pytest.raises(ParseError):
        parse_sexpr("(bvadd (_ bv1 8) (_ bv1 8)")  # unbalanced


# -- properties ---------------------------------------------------------------

_names = st.sampled_from(["x", "y", "z"])


def _exprs(width: int, depth: int) -> st.SearchStrategy:
    base = st.one_of(
        st.integers(min_value=0, max_value=(1 << width) - 1).map(lambda v: bv(v, width)),
        _names.map(lambda n: var(n, width)),
    )
    if depth == 0:
        return base
    sub = _exprs(width, depth - 1)
    return st.one_of(
        base,
        st.tuples(st.sampled_from([BinOp.ADD, BinOp.SUB, BinOp.MUL, BinOp.AND, BinOp.OR, BinOp.XOR]), sub, sub).map(
            lambda t: binop(*t)
        ),
        sub.map(lambda e: Unary(UnOp.NOT, e)),
        sub.map(lambda e: Unary(UnOp.NEG, e)),
        st.tuples(sub, sub, sub).map(lambda t: ite(t[0].eq(t[1]), t[1], t[2])),
    )


@given(e=_exprs(16, 3), assign=st.fixed_dictionaries({"x": st.integers(0, 0xFFFF), "y": st.integers(0, 0xFFFF), "z": st.integers(0, 0xFFFF)}))
@settings(max_examples=200, deadline=None)
def test_sexpr_roundtrip(e, assign):
    text = to_sexpr_with_decls(e)
    back = parse_sexpr(text)
    assert back == e
    assert eval_expr(back, assign) == eval_expr(e, assign)


@given(e=_exprs(16, 3), assign=st.fixed_dictionaries({"x": st.integers(0, 0xFFFF), "y": st.integers(0, 0xFFFF), "z": st.integers(0, 0xFFFF)}))
@settings(max_examples=200, deadline=None)
def test_split_roundtrip_eval(e, assign):
    concrete, symbolic = split_concrete_symbolic(e)
    if concrete is None:
        combined = symbolic
    elif symbolic is None:
        combined = concrete
    else:
        combined = binop(BinOp.ADD, concrete, symbolic)
    assert eval_expr(combined, assign) == eval_expr(e, assign)
    if concrete is not None:
        assert not var_widths(concrete)


@given(
    values=st.lists(st.integers(-(1 << 63), (1 << 63) - 1), min_size=1, max_size=6),
)
@settings(max_examples=100, deadline=None)
def test_additive_terms_sum_property(values):
    e = bv(values[0], 64)
    for v in values[1:]:
        if v % 2:
            e = e - bv(abs(v), 64)
        else:
            e = e + bv(v, 64)
    terms = additive_terms(e)
    assert sum(eval_expr(t, {}) for t in terms) % (1 << 64) == eval_expr(e, {})


def test_bool_helpers():
    x = var("x", 1)
    assert eval_expr(and_all([]), {}) == 1
    assert eval_expr(or_all([]), {}) == 0
    assert eval_expr(and_all([x, bv(1, 1)]), {"x": 1}) == 1
    assert eval_expr(or_all([x, bv(0, 1)]), {"x": 0}) == 0

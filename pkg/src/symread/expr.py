"""Immutable bitvector expression AST.

Expressions are fixed-width bitvectors (1..512 bits). Booleans are 1-bit
bitvectors; the SMT script emitter converts at that boundary. There is no
rewriting or simplification: constructors preserve structure exactly, so
expression trees are predictable in golden tests.

The textual syntax is an s-expression dialect using the QF_BV operator
names (``bvadd``, ``bvult``, ``ite``, ``concat``, ``(_ bvN W)`` literals,
...). Unlike strict SMT-LIB, comparisons and ``ite`` conditions are 1-bit
bitvector terms. Variables are introduced by ``declare-const`` forms, either
supplied as a prefix of the parsed text or through a name->width mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union

MAX_WIDTH = 512

Assignment = Mapping[str, int]


class ExprError(Exception):
    pass


class WidthMismatch(ExprError):
    pass


class UnboundVariable(ExprError):
    pass


class NotConcrete(ExprError):
    pass


class ParseError(ExprError):
    pass


class UnOp(Enum):
    NOT = "bvnot"
    NEG = "bvneg"


class BinOp(Enum):
    ADD = "bvadd"
    SUB = "bvsub"
    MUL = "bvmul"
    AND = "bvand"
    OR = "bvor"
    XOR = "bvxor"
    EQ = "="
    ULT = "bvult"
    SLT = "bvslt"
    ULE = "bvule"
    SLE = "bvsle"


COMPARISONS = frozenset({BinOp.EQ, BinOp.ULT, BinOp.SLT, BinOp.ULE, BinOp.SLE})


def _check_width(width: int) -> None:
    if not 1 <= width <= MAX_WIDTH:
        raise WidthMismatch(f"width {width} outside 1..{MAX_WIDTH}")


@dataclass(frozen=True)
class BitVecExpr:
    """Base class; all nodes carry an explicit bit width."""

    def __post_init__(self) -> None:
        _check_width(self.width)  # type: ignore[attr-defined]

    # -- operator sugar (ints coerce to constants of the peer's width) -----

    def _coerce(self, other: Union["BitVecExpr", int]) -> "BitVecExpr":
        if isinstance(other, BitVecExpr):
            return other
        return Const(other, self.width)  # type: ignore[attr-defined]

    def __add__(self, other): return binop(BinOp.ADD, self, self._coerce(other))
    def __radd__(self, other): return binop(BinOp.ADD, self._coerce(other), self)
    def __sub__(self, other): return binop(BinOp.SUB, self, self._coerce(other))
    def __rsub__(self, other): return binop(BinOp.SUB, self._coerce(other), self)
    def __mul__(self, other): return binop(BinOp.MUL, self, self._coerce(other))
    def __rmul__(self, other): return binop(BinOp.MUL, self._coerce(other), self)
    def __and__(self, other): return binop(BinOp.AND, self, self._coerce(other))
    def __or__(self, other): return binop(BinOp.OR, self, self._coerce(other))
    def __xor__(self, other): return binop(BinOp.XOR, self, self._coerce(other))
    def __invert__(self): return Unary(UnOp.NOT, self)
    def __neg__(self): return Unary(UnOp.NEG, self)

    def eq(self, other): return binop(BinOp.EQ, self, self._coerce(other))
    def ne(self, other): return Unary(UnOp.NOT, self.eq(other))
    def ult(self, other): return binop(BinOp.ULT, self, self._coerce(other))
    def ule(self, other): return binop(BinOp.ULE, self, self._coerce(other))
    def slt(self, other): return binop(BinOp.SLT, self, self._coerce(other))
    def sle(self, other): return binop(BinOp.SLE, self, self._coerce(other))

    def zext(self, by: int) -> "BitVecExpr":
        return Extend(False, by, self)

    def sext(self, by: int) -> "BitVecExpr":
        return Extend(True, by, self)

    def extract(self, hi: int, lo: int) -> "BitVecExpr":
        return Extract(hi, lo, self)

    def __str__(self) -> str:
        return to_sexpr(self)


@dataclass(frozen=True)
class Const(BitVecExpr):
    value: int
    width: int

    def __post_init__(self) -> None:
        _check_width(self.width)
        object.__setattr__(self, "value", self.value & ((1 << self.width) - 1))


@dataclass(frozen=True)
class Var(BitVecExpr):
    name: str
    width: int

    def __post_init__(self) -> None:
        _check_width(self.width)
        if not self.name:
            raise ExprError("variable name must be non-empty")


@dataclass(frozen=True)
class Unary(BitVecExpr):
    op: UnOp
    a: BitVecExpr
    width: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "width", self.a.width)


@dataclass(frozen=True)
class Binary(BitVecExpr):
    op: BinOp
    a: BitVecExpr
    b: BitVecExpr
    width: int = field(init=False)

    def __post_init__(self) -> None:
        if self.a.width != self.b.width:
            raise WidthMismatch(
                f"{self.op.value} operands differ: {self.a.width} vs {self.b.width}"
            )
        object.__setattr__(self, "width", 1 if self.op in COMPARISONS else self.a.width)


@dataclass(frozen=True)
class Ite(BitVecExpr):
    cond: BitVecExpr
    if_true: BitVecExpr
    if_false: BitVecExpr
    width: int = field(init=False)

    def __post_init__(self) -> None:
        if self.cond.width != 1:
            raise WidthMismatch("ite condition must have width 1")
        if self.if_true.width != self.if_false.width:
            raise WidthMismatch("ite arms differ in width")
        object.__setattr__(self, "width", self.if_true.width)


@dataclass(frozen=True)
class Extract(BitVecExpr):
    hi: int
    lo: int
    a: BitVecExpr
    width: int = field(init=False)

    def __post_init__(self) -> None:
        if not 0 <= self.lo <= self.hi < self.a.width:
            raise WidthMismatch(
                f"extract [{self.hi}:{self.lo}] out of range for width {self.a.width}"
            )
        object.__setattr__(self, "width", self.hi - self.lo + 1)


@dataclass(frozen=True)
class Extend(BitVecExpr):
    signed: bool
    by: int
    a: BitVecExpr
    width: int = field(init=False)

    def __post_init__(self) -> None:
        if self.by < 0:
            raise WidthMismatch("extend amount must be non-negative")
        _check_width(self.a.width + self.by)
        object.__setattr__(self, "width", self.a.width + self.by)


@dataclass(frozen=True)
class Concat(BitVecExpr):
    a: BitVecExpr  # high bits
    b: BitVecExpr  # low bits
    width: int = field(init=False)

    def __post_init__(self) -> None:
        _check_width(self.a.width + self.b.width)
        object.__setattr__(self, "width", self.a.width + self.b.width)


def bv(value: int, width: int) -> Const:
    return Const(value, width)


def var(name: str, width: int) -> Var:
    return Var(name, width)


def binop(op: BinOp, a: BitVecExpr, b: BitVecExpr) -> Binary:
    return Binary(op, a, b)


def ite(cond: BitVecExpr, if_true: BitVecExpr, if_false: BitVecExpr) -> Ite:
    return Ite(cond, if_true, if_false)


TRUE = Const(1, 1)
FALSE = Const(0, 1)


def and_all(conds: Iterable[BitVecExpr]) -> BitVecExpr:
    """Left fold of 1-bit conjuncts; empty input yields true."""
    acc: BitVecExpr | None = None
    for c in conds:
        acc = c if acc is None else binop(BinOp.AND, acc, c)
    return TRUE if acc is None else acc


def or_all(conds: Iterable[BitVecExpr]) -> BitVecExpr:
    acc: BitVecExpr | None = None
    for c in conds:
        acc = c if acc is None else binop(BinOp.OR, acc, c)
    return FALSE if acc is None else acc


def _to_signed(v: int, width: int) -> int:
    return v - (1 << width) if v >> (width - 1) else v


def eval_expr(e: BitVecExpr, assignment: Assignment) -> int:
    """Evaluate under a variable assignment, all arithmetic mod 2^width.

    Signed comparisons use two's-complement interpretation. Iterative so
    deeply nested trees (large ITE chains) do not hit the recursion limit.
    Raises UnboundVariable if a variable is missing from the assignment.
    """
    vals: dict[int, int] = {}
    stack: list[BitVecExpr] = [e]
    while stack:
        n = stack[-1]
        ni = id(n)
        if ni in vals:
            stack.pop()
            continue
        t = type(n)
        if t is Const:
            vals[ni] = n.value
            stack.pop()
        elif t is Var:
            try:
                v = assignment[n.name]
            except KeyError:
                raise UnboundVariable(n.name) from None
            vals[ni] = v & ((1 << n.width) - 1)
            stack.pop()
        elif t is Unary:
            ai = id(n.a)
            if ai in vals:
                va = vals[ai]
                mask = (1 << n.width) - 1
                vals[ni] = (~va & mask) if n.op is UnOp.NOT else (-va & mask)
                stack.pop()
            else:
                stack.append(n.a)
        elif t is Binary:
            ai, bi = id(n.a), id(n.b)
            if ai in vals and bi in vals:
                va, vb = vals[ai], vals[bi]
                op = n.op
                w = n.a.width
                mask = (1 << w) - 1
                if op is BinOp.ADD:
                    r = (va + vb) & mask
                elif op is BinOp.SUB:
                    r = (va - vb) & mask
                elif op is BinOp.MUL:
                    r = (va * vb) & mask
                elif op is BinOp.AND:
                    r = va & vb
                elif op is BinOp.OR:
                    r = va | vb
                elif op is BinOp.XOR:
                    r = va ^ vb
                elif op is BinOp.EQ:
                    r = int(va == vb)
                elif op is BinOp.ULT:
                    r = int(va < vb)
                elif op is BinOp.ULE:
                    r = int(va <= vb)
                elif op is BinOp.SLT:
                    r = int(_to_signed(va, w) < _to_signed(vb, w))
                elif op is BinOp.SLE:
                    r = int(_to_signed(va, w) <= _to_signed(vb, w))
                else:  # pragma: no cover
                    raise ExprError(f"unhandled op {op}")
                vals[ni] = r
                stack.pop()
            else:
                if bi not in vals:
                    stack.append(n.b)
                if ai not in vals:
                    stack.append(n.a)
        elif t is Ite:
            ci = id(n.cond)
            if ci not in vals:
                stack.append(n.cond)
                continue
            branch = n.if_true if vals[ci] else n.if_false
            bi = id(branch)
            if bi in vals:
                vals[ni] = vals[bi]
                stack.pop()
            else:
                stack.append(branch)
        elif t is Extract:
            ai = id(n.a)
            if ai in vals:
                vals[ni] = (vals[ai] >> n.lo) & ((1 << n.width) - 1)
                stack.pop()
            else:
                stack.append(n.a)
        elif t is Extend:
            ai = id(n.a)
            if ai in vals:
                va = vals[ai]
                if n.signed and n.by and va >> (n.a.width - 1):
                    va |= ((1 << n.by) - 1) << n.a.width
                vals[ni] = va
                stack.pop()
            else:
                stack.append(n.a)
        elif t is Concat:
            ai, bi = id(n.a), id(n.b)
            if ai in vals and bi in vals:
                vals[ni] = (vals[ai] << n.b.width) | vals[bi]
                stack.pop()
            else:
                if bi not in vals:
                    stack.append(n.b)
                if ai not in vals:
                    stack.append(n.a)
        else:
            raise ExprError(f"unknown node type {t.__name__}")
    return vals[id(e)]


def var_widths(e: BitVecExpr) -> dict[str, int]:
    """All variables of e with their widths, name-sorted.

    Raises WidthMismatch if one name occurs with two different widths.
    """
    out: dict[str, int] = {}
    stack = [e]
    seen: set[int] = set()
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        t = type(n)
        if t is Var:
            prev = out.get(n.name)
            if prev is not None and prev != n.width:
                raise WidthMismatch(f"variable {n.name} used at widths {prev} and {n.width}")
            out[n.name] = n.width
        elif t is Unary or t is Extract or t is Extend:
            stack.append(n.a)
        elif t is Binary or t is Concat:
            stack.append(n.a)
            stack.append(n.b)
        elif t is Ite:
            stack.extend((n.cond, n.if_true, n.if_false))
    return dict(sorted(out.items()))


def is_concrete(e: BitVecExpr) -> bool:
    return not var_widths(e)


def _negate_term(t: BitVecExpr) -> BitVecExpr:
    # Folding a negated constant is the one simplification we allow: it keeps
    # subtracted constants recognizable as single additive terms.
    if type(t) is Const:
        return Const(-t.value, t.width)
    return Unary(UnOp.NEG, t)


def _spine(e: BitVecExpr) -> list[tuple[BitVecExpr, bool]]:
    """Top-level additive decomposition: [(term, negated)] in source order.

    Only bvadd/bvsub at the top are traversed; any other node is an atomic
    term. This is the fixed traversal depth for concrete-part extraction:
    extends or multiplications wrapping a sum are treated as opaque.
    """
    out: list[tuple[BitVecExpr, bool]] = []
    stack: list[tuple[BitVecExpr, bool]] = [(e, False)]
    while stack:
        n, neg = stack.pop()
        if type(n) is Binary and n.op in (BinOp.ADD, BinOp.SUB):
            stack.append((n.b, neg ^ (n.op is BinOp.SUB)))
            stack.append((n.a, neg))
        else:
            out.append((n, neg))
    return out


def split_concrete_symbolic(
    e: BitVecExpr,
) -> tuple[BitVecExpr | None, BitVecExpr | None]:
    """Partition the top-level sum of e into variable-free and variable parts.

    Returns (concrete_sum, symbolic_rest); either side is None when empty.
    Adding the two sides back together evaluates to e for any assignment.
    """
    concrete: BitVecExpr | None = None
    symbolic: BitVecExpr | None = None
    for term, neg in _spine(e):
        t = _negate_term(term) if neg else term
        if is_concrete(term):
            concrete = t if concrete is None else binop(BinOp.ADD, concrete, t)
        else:
            symbolic = t if symbolic is None else binop(BinOp.ADD, symbolic, t)
    return concrete, symbolic


def additive_terms(e: BitVecExpr) -> list[BitVecExpr]:
    """Atomic terms of a concrete expression's top-level sum.

    Subtraction folds into negated terms, so the mod-2^width sum of the
    result equals e. Raises NotConcrete if e contains a variable.
    """
    if not is_concrete(e):
        raise NotConcrete("additive_terms requires a variable-free expression")
    return [_negate_term(t) if neg else t for t, neg in _spine(e)]


# ---------------------------------------------------------------------------
# Textual s-expression syntax
# ---------------------------------------------------------------------------

_UNOP_NAMES = {op.value: op for op in UnOp}
_BINOP_NAMES = {op.value: op for op in BinOp}


def to_sexpr(e: BitVecExpr) -> str:
    """Render e in the QF_BV s-expression dialect (term only)."""
    out: list[str] = []
    stack: list[BitVecExpr | str] = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, str):
            out.append(n)
            continue
        t = type(n)
        if t is Const:
            out.append(f"(_ bv{n.value} {n.width})")
        elif t is Var:
            out.append(n.name)
        elif t is Unary:
            out.append(f"({n.op.value} ")
            stack.extend((")", n.a))
        elif t is Binary:
            out.append(f"({n.op.value} ")
            stack.extend((")", n.b, " ", n.a))
        elif t is Ite:
            out.append("(ite ")
            stack.extend((")", n.if_false, " ", n.if_true, " ", n.cond))
        elif t is Extract:
            out.append(f"((_ extract {n.hi} {n.lo}) ")
            stack.extend((")", n.a))
        elif t is Extend:
            kind = "sign_extend" if n.signed else "zero_extend"
            out.append(f"((_ {kind} {n.by}) ")
            stack.extend((")", n.a))
        elif t is Concat:
            out.append("(concat ")
            stack.extend((")", n.b, " ", n.a))
        else:
            raise ExprError(f"unknown node type {t.__name__}")
    return "".join(out)


def to_sexpr_with_decls(e: BitVecExpr) -> str:
    """Render e prefixed by declare-const forms for each of its variables."""
    decls = [
        f"(declare-const {name} (_ BitVec {width}))"
        for name, width in var_widths(e).items()
    ]
    decls.append(to_sexpr(e))
    return " ".join(decls)


def _tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in "()":
            tokens.append(c)
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def _nest(tokens: list[str]) -> list:
    """Token list -> list of nested lists/atoms (all top-level forms)."""
    stack: list[list] = [[]]
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ParseError("unbalanced '('")
    return stack[0]


def _atom_to_expr(tok: str, env: Mapping[str, int]) -> BitVecExpr:
    if tok.startswith("#x"):
        digits = tok[2:]
        if not digits or any(c not in "0123456789abcdefABCDEF" for c in digits):
            raise ParseError(f"bad hex literal {tok!r}")
        return Const(int(digits, 16), 4 * len(digits))
    if tok.startswith("#b"):
        digits = tok[2:]
        if not digits or any(c not in "01" for c in digits):
            raise ParseError(f"bad binary literal {tok!r}")
        return Const(int(digits, 2), len(digits))
    if tok in env:
        return Var(tok, env[tok])
    raise ParseError(f"undeclared variable or bad token {tok!r}")


def _form_to_expr(form, env: Mapping[str, int]) -> BitVecExpr:
    """Nested-list form -> expression. Iterative post-order conversion."""
    # Work items: (form, results_list, index_in_parent). A two-phase stack:
    # expand phase pushes children, build phase combines results.
    def build(node) -> BitVecExpr:
        # Recursion depth equals expression nesting depth; parsed inputs
        # (snapshot cells, CLI address expressions) are shallow.
        if isinstance(node, str):
            return _atom_to_expr(node, env)
        if not node:
            raise ParseError("empty form")
        head = node[0]
        if isinstance(head, list):
            # ((_ extract hi lo) a) / ((_ zero_extend n) a) / ((_ sign_extend n) a)
            if len(head) == 3 and head[0] == "_" and head[1] == "extract":
                raise ParseError("extract needs two indices")
            if len(head) >= 2 and head[0] == "_":
                if head[1] == "extract":
                    if len(head) != 4 or len(node) != 2:
                        raise ParseError("malformed extract")
                    return Extract(int(head[2]), int(head[3]), build(node[1]))
                if head[1] in ("zero_extend", "sign_extend"):
                    if len(head) != 3 or len(node) != 2:
                        raise ParseError("malformed extend")
                    return Extend(head[1] == "sign_extend", int(head[2]), build(node[1]))
            raise ParseError(f"bad operator form {head!r}")
        if head == "_":
            # (_ bvN W)
            if len(node) != 3 or not node[1].startswith("bv"):
                raise ParseError(f"malformed literal {node!r}")
            try:
                value = int(node[1][2:])
                width = int(node[2])
            except ValueError as exc:
                raise ParseError(f"malformed literal {node!r}") from exc
            return Const(value, width)
        if head == "ite":
            if len(node) != 4:
                raise ParseError("ite needs three arguments")
            return Ite(build(node[1]), build(node[2]), build(node[3]))
        if head == "concat":
            if len(node) != 3:
                raise ParseError("concat needs two arguments")
            return Concat(build(node[1]), build(node[2]))
        if head in _UNOP_NAMES:
            if len(node) != 2:
                raise ParseError(f"{head} needs one argument")
            return Unary(_UNOP_NAMES[head], build(node[1]))
        if head in _BINOP_NAMES:
            if len(node) != 3:
                raise ParseError(f"{head} needs two arguments")
            return binop(_BINOP_NAMES[head], build(node[1]), build(node[2]))
        raise ParseError(f"unknown operator {head!r}")

    return build(form)


def parse_sexpr(text: str, env: Mapping[str, int] | None = None) -> BitVecExpr:
    """Parse one term, optionally preceded by declare-const forms.

    ``env`` supplies widths for variables not declared in the text itself.
    """
    forms = _nest(_tokenize(text))
    scope: dict[str, int] = dict(env) if env else {}
    terms = []
    for form in forms:
        if (
            isinstance(form, list)
            and form
            and form[0] == "declare-const"
        ):
            if (
                len(form) != 3
                or not isinstance(form[1], str)
                or not isinstance(form[2], list)
                or len(form[2]) != 3
                or form[2][0] != "_"
                or form[2][1] != "BitVec"
            ):
                raise ParseError(f"malformed declare-const {form!r}")
            scope[form[1]] = int(form[2][2])
        else:
            terms.append(form)
    if len(terms) != 1:
        raise ParseError(f"expected exactly one term, found {len(terms)}")
    return _form_to_expr(terms[0], scope)

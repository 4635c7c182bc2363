import random

import pytest
from hypothesis import given, settings, strategies as st

from symread.bounds import BoundsMethod, MemoryBounds
from symread.expr import (
    Binary,
    BinOp,
    Const,
    Ite,
    Unary,
    bv,
    eval_expr,
    ite,
    or_all,
    var,
)
from symread.memmodel import (
    Cell,
    EmptyRegion,
    LinearSegment,
    MemModelError,
    MemorySnapshot,
    ModeledRead,
    Strategy,
    WidthOverflow,
    build_bst,
    build_ite,
    build_linearized,
    dump_snapshot,
    linearize,
    merge_horizontal,
    model_read,
    parse_snapshot,
    snapshot_from_memory,
)

FIG_VALUES = [1, 9, 17, 15, 13, 1, 17, 15]


def make_snapshot(values, base=0x100, size=4, current_idx=0, syms=None):
    cells = []
    for i, v in enumerate(values):
        sym = syms.get(i) if syms else None
        cells.append(Cell(offset=i * size, value=v, sym=sym))
    return MemorySnapshot(
        base=base, access_size=size, cells=tuple(cells), current_offset=current_idx * size
    )


def make_bounds(snap):
    return MemoryBounds(
        lower=snap.base,
        upper=snap.end,
        access_size=snap.access_size,
        method_lower=BoundsMethod.CONSTANT_WINDOW,
        method_upper=BoundsMethod.CONSTANT_WINDOW,
    )


def eval_at(modeled, addr_value, extra=None):
    assignment = {"a": addr_value}
    if extra:
        assignment.update(extra)
    return eval_expr(modeled.expr, assignment)


ADDR = var("a", 64)


# -- snapshot validation -------------------------------------------------------

def test_snapshot_rejects_gaps():
    with pytest.raises(MemModelError):
        MemorySnapshot(0x100, 4, (Cell(0, 1), Cell(8, 2)), 0)


def test_snapshot_rejects_bad_current():
    with pytest.raises(MemModelError):
        MemorySnapshot(0x100, 4, (Cell(0, 1), Cell(4, 2)), 2)
    with pytest.raises(MemModelError):
        MemorySnapshot(0x100, 4, (Cell(0, 1), Cell(4, 2)), 8)


def test_snapshot_rejects_wide_value():
    with pytest.raises(MemModelError):
        MemorySnapshot(0x100, 1, (Cell(0, 256),), 0)


def test_empty_region():
    with pytest.raises(EmptyRegion):
        MemorySnapshot(0x100, 4, (), 0)


# -- nested ITE golden cases ---------------------------------------------------

def test_ite_motivating_table():
    # int table[7] = {3, 7, 14, 0, 5, 11, 9}; current path read table[2]
    table = [3, 7, 14, 0, 5, 11, 9]
    snap = make_snapshot(table, base=0x201020, current_idx=2)
    modeled = build_ite(snap, ADDR)
    # chain tests every distinct value in offset order; final else is the
    # current value 14
    expected = bv(14, 32)
    for i, v in reversed(list(enumerate(table))):
        expected = ite(ADDR.eq(bv(0x201020 + 4 * i, 64)), bv(v, 32), expected)
    assert modeled.expr == expected
    for i, v in enumerate(table):
        assert eval_at(modeled, 0x201020 + 4 * i) == v
    assert eval_at(modeled, 0x201020 + 4 * 100) == 14


def test_ite_merges_equal_values():
    snap = make_snapshot([5, 7, 5], base=0x100, current_idx=0)
    modeled = build_ite(snap, ADDR)
    cond = or_all([ADDR.eq(bv(0x100, 64)), ADDR.eq(bv(0x108, 64))])
    expected = ite(cond, bv(5, 32), ite(ADDR.eq(bv(0x104, 64)), bv(7, 32), bv(5, 32)))
    assert modeled.expr == expected


def test_ite_single_cell():
    snap = make_snapshot([42], current_idx=0)
    modeled = build_ite(snap, ADDR)
    assert eval_at(modeled, 0x100) == 42
    assert eval_at(modeled, 0x104) == 42  # else leaf is the same value


def test_ite_symbolic_cell_leaf():
    s = var("s0", 32)
    snap = make_snapshot([5, 0, 9], current_idx=0, syms={1: s})
    modeled = build_ite(snap, ADDR)
    assert eval_at(modeled, 0x104, {"s0": 1234}) == 1234
    assert eval_at(modeled, 0x100, {"s0": 1234}) == 5


def test_ite_merging_preserves_semantics():
    rng = random.Random(11)
    values = [rng.choice([3, 9, 12]) for _ in range(12)]
    snap = make_snapshot(values, current_idx=3)
    modeled = build_ite(snap, ADDR)
    for i, v in enumerate(values):
        assert eval_at(modeled, 0x100 + 4 * i) == v


# -- BST golden cases ----------------------------------------------------------

def test_bst_four_cell_tree_shape():
    # four sampled addresses with the middle pair sharing one value
    v1, v2, v3 = 0x11, 0x22, 0x33
    snap = make_snapshot([v1, v2, v2, v3], base=0x100, size=4, current_idx=0)
    modeled = build_bst(snap, ADDR, make_bounds(snap))
    cur = bv(v1, 32)
    a0, a1, a2, a3 = (bv(0x100 + 4 * i, 64) for i in range(4))
    expected = ite(
        ADDR.ult(a2),
        ite(ADDR.ult(a0), cur, ite(ADDR.eq(a0), bv(v1, 32), bv(v2, 32))),
        ite(ADDR.ult(a3), bv(v2, 32), ite(ADDR.eq(a3), bv(v3, 32), cur)),
    )
    assert modeled.expr == expected


def test_bst_two_cell_depth():
    snap = make_snapshot([7, 8], current_idx=0)
    modeled = build_bst(snap, ADDR, make_bounds(snap))

    def depth(e):
        if isinstance(e, Ite):
            return 1 + max(depth(e.if_true), depth(e.if_false))
        return 0

    assert depth(modeled.expr) == 2
    assert eval_at(modeled, 0x0F0) == 7  # below lower -> current
    assert eval_at(modeled, 0x200) == 7  # above upper -> current
    assert eval_at(modeled, 0x100) == 7
    assert eval_at(modeled, 0x104) == 8


def test_bst_random_region_oracle():
    rng = random.Random(5)
    n = 64
    values = [rng.randrange(1 << 32) for _ in range(n)]
    snap = make_snapshot(values, base=0x4000, current_idx=17)
    modeled = build_bst(snap, ADDR, make_bounds(snap))
    current = values[17]
    for k in range(-2, n + 2):
        a = 0x4000 + 4 * k
        expected = values[k] if 0 <= k < n else current
        assert eval_at(modeled, a) == expected


# -- linearization -------------------------------------------------------------

def test_linearize_mixed_region():
    points = [(4 * i, v) for i, v in enumerate(FIG_VALUES)]
    segments, leftovers = linearize(points, 4)
    assert [(s.m, s.b, s.first_offset, s.last_offset, s.points) for s in segments] == [
        (2, 1, 0, 8, 3),
        (-3, 61, 16, 20, 2),
    ]
    assert leftovers == [(12, 15), (24, 17), (28, 15)]


def test_linearize_constant_run():
    segments, leftovers = linearize([(0, 5), (4, 5), (8, 5)], 4)
    assert len(segments) == 1 and segments[0].m == 0 and segments[0].b == 5
    assert leftovers == []


def test_linearize_fractional_slope_rejected():
    # slope 1/4 is not an integer; an exact-rational oracle agrees
    points = [(0, 1), (4, 2)]
    assert (2 - 1) % 4 != 0
    segments, leftovers = linearize(points, 4)
    assert segments == []
    assert leftovers == points


def test_linearize_segments_exact():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(2, 40)
        size = rng.choice([1, 2, 4, 8])
        vals = [rng.randrange(1 << (8 * size)) for _ in range(n)]
        points = [(size * i, v) for i, v in enumerate(vals)]
        segments, leftovers = linearize(points, size)
        covered = set()
        for seg in segments:
            offs = range(seg.first_offset, seg.last_offset + 1, size)
            assert len(list(offs)) == seg.points >= 2
            for off in offs:
                assert seg.m * off + seg.b == vals[off // size]
                covered.add(off)
        for off, val in leftovers:
            assert vals[off // size] == val
            assert off not in covered
        assert covered | {o for o, _ in leftovers} == {size * i for i in range(n)}


def test_merge_horizontal_goldens():
    groups, singles = merge_horizontal([(12, 15), (24, 17), (28, 15)])
    assert groups == [(15, [12, 28])]
    assert singles == [(24, 17)]

    groups, singles = merge_horizontal([(0, 1), (4, 2), (8, 3)])
    assert groups == []
    assert len(singles) == 3

    groups, singles = merge_horizontal([(0, 9), (8, 9), (16, 9)])
    assert groups == [(9, [0, 8, 16])]
    assert singles == []


def test_linearized_semantics_match_reference_tree():
    # sym == 12 or sym == 28 -> 15; else sym < 24 ? (sym < 16 ? 2x+1 : -3x+61)
    #                                : (sym < 32 ? 17 : current)
    base = 0x100
    snap = make_snapshot(FIG_VALUES, base=base, current_idx=0)
    modeled = build_linearized(snap, ADDR, make_bounds(snap))
    assert [s.formula() for s in modeled.segments] == ["y = 2*x + 1", "y = -3*x + 61"]
    assert modeled.horizontal_groups == 1

    def reference(x):
        if x in (12, 28):
            return 15
        if x < 24:
            return 2 * x + 1 if x < 16 else (-3 * x + 61) % (1 << 32)
        return 17 if x < 32 else FIG_VALUES[0]

    for idx in range(0, 32, 4):
        assert eval_at(modeled, base + idx) == reference(idx)
    for idx in (32, 36, 4000):
        assert eval_at(modeled, base + idx) == FIG_VALUES[0]


def test_linearized_symbolic_prefix_order():
    s = var("s0", 32)
    snap = make_snapshot([1, 9, 0, 15], current_idx=0, syms={2: s})
    modeled = build_linearized(snap, ADDR, make_bounds(snap))
    assert modeled.symbolic_prefix_count == 1
    top = modeled.expr
    assert isinstance(top, Ite)
    # outermost node tests the symbolic cell's offset (8)
    assert eval_at(modeled, 0x108, {"s0": 777}) == 777
    assert eval_at(modeled, 0x100, {"s0": 777}) == 1


def test_linearized_wraparound_below_base():
    snap = make_snapshot(FIG_VALUES, base=0x100, current_idx=2)
    modeled = build_linearized(snap, ADDR, make_bounds(snap))
    current = FIG_VALUES[2]
    # below-base addresses wrap to huge offsets and take the current leaf
    assert eval_at(modeled, 0x100 - 4) == current
    assert eval_at(modeled, 0x100 - 400) == current


def test_linearized_rejects_large_access():
    snap = MemorySnapshot(0, 16, (Cell(0, 7), Cell(16, 9)), 0)
    with pytest.raises(WidthOverflow):
        build_linearized(snap, ADDR, None)


def test_model_read_fallback_16_byte():
    snap = MemorySnapshot(0x1000, 16, (Cell(0, 7), Cell(16, 9)), 0)
    modeled = model_read(snap, ADDR, None, Strategy.LINEARIZED)
    assert modeled.strategy is Strategy.LINEARIZED
    assert modeled.fell_back_to_ite
    assert eval_at(modeled, 0x1000) == 7
    assert eval_at(modeled, 0x1010) == 9
    assert eval_at(modeled, 0x1040) == 7


def test_model_read_dispatch_matches_builders():
    snap = make_snapshot(FIG_VALUES, current_idx=1)
    assert model_read(snap, ADDR, None, Strategy.ITE).expr == build_ite(snap, ADDR).expr
    assert (
        model_read(snap, ADDR, make_bounds(snap), Strategy.BST).expr
        == build_bst(snap, ADDR, make_bounds(snap)).expr
    )


def test_equation_width_minimal_and_byte_rounded():
    snap = make_snapshot(FIG_VALUES, current_idx=0)
    modeled = build_linearized(snap, ADDR, make_bounds(snap))
    assert modeled.equation_width % 8 == 0
    assert modeled.equation_width >= 8 * snap.access_size


# -- cross-strategy equivalence -------------------------------------------------

@given(data=st.data())
@settings(max_examples=80, deadline=None)
def test_strategies_agree_on_aligned_addresses(data):
    rng = random.Random(data.draw(st.integers(0, 1 << 30)))
    size = rng.choice([1, 2, 4, 8])
    n = rng.randint(2, 32)
    limit = 1 << (8 * size)
    if rng.random() < 0.5:
        m = rng.choice([-3, -1, 0, 1, 2, 3]) * size
        b = rng.randrange(1 << 12)
        values = [(m * (size * i) + b) % limit for i in range(n)]
    else:
        values = [rng.randrange(limit) for _ in range(n)]
    base = rng.randrange(0x1000, 0x10000, size)
    snap = make_snapshot(values, base=base, size=size, current_idx=rng.randrange(n))
    bounds = make_bounds(snap)
    current = values[snap.current_offset // size]

    reads = {s: model_read(snap, ADDR, bounds, s) for s in Strategy}
    for k in list(range(n)) + [-2, -1, n, n + 1, n + 7]:
        a = base + size * k
        expected_in = values[k] if 0 <= k < n else None
        for strat, modeled in reads.items():
            got = eval_at(modeled, a % (1 << 64))
            if expected_in is not None:
                assert got == expected_in, (strat, k)
            else:
                assert got == current, (strat, k)


# -- snapshot file format --------------------------------------------------------

def test_snapshot_roundtrip_bit_exact():
    s = var("s0", 32)
    snap = make_snapshot([5, 6, 0], current_idx=1, syms={2: s})
    text = dump_snapshot(snap)
    again = parse_snapshot(text)
    assert again == snap
    assert dump_snapshot(again) == text


def test_snapshot_parse_errors():
    with pytest.raises(MemModelError):
        parse_snapshot("")
    with pytest.raises(MemModelError):
        parse_snapshot("nonsense\n")
    with pytest.raises(MemModelError):
        parse_snapshot("base=100 access=4 current=0\n0\n")


def test_snapshot_from_memory_with_shadow():
    mem = bytearray(64)
    mem[8:12] = (1234).to_bytes(4, "little")
    shadow = {13: var("s", 8)}
    bounds = MemoryBounds(8, 24, 4, BoundsMethod.CONSTANT_WINDOW, BoundsMethod.CONSTANT_WINDOW)
    snap = snapshot_from_memory(mem, shadow, bounds, 8)
    assert snap.cells[0].value == 1234 and snap.cells[0].sym is None
    assert snap.cells[1].sym is not None
    got = eval_expr(snap.cells[1].sym, {"s": 0xAB})
    assert got == int.from_bytes(bytes([mem[12], 0xAB, mem[14], mem[15]]), "little")

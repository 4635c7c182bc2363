"""Bitvector encodings of a memory read at a symbolic address.

Given a snapshot of the reachable window, three interchangeable encodings
produce one expression for the read result:

* nested ITE: address equality per cell, equal-valued cells merged into one
  disjunction node, with the current-path value as the final else;
* BST: balanced unsigned-comparison tree over the cell addresses, with
  out-of-window leaves returning the current-path value;
* linearization: runs of cells on a common integer-coefficient line become
  single formula leaves inside a small BST over the normalized offset;
  same-valued stragglers merge into horizontal-line nodes and symbolic
  cells become exact-match prefix nodes, both in front of the BST. Only an
  upper-bound check is needed: an address below the window wraps around to
  a huge offset and lands in the out-of-range leaf.

Reads of 16 bytes and up fall back from linearization to the nested ITE
tree (the equation widths stop paying off).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .bounds import ACCESS_SIZES, MemoryBounds
from .expr import (
    MAX_WIDTH,
    BitVecExpr,
    Const,
    ExprError,
    binop,
    BinOp,
    eval_expr,
    ite,
    or_all,
    parse_sexpr,
    to_sexpr_with_decls,
)

LINEARIZE_MAX_ACCESS = 16  # bytes; at and above this, fall back to ITE


class MemModelError(Exception):
    pass


class EmptyRegion(MemModelError):
    pass


class WidthOverflow(MemModelError):
    """The linearized equation width would exceed the expression width cap."""


class Strategy(Enum):
    ITE = "ite"
    BST = "bst"
    LINEARIZED = "lin"


@dataclass(frozen=True)
class Cell:
    offset: int
    value: int
    sym: BitVecExpr | None = None


@dataclass(frozen=True)
class MemorySnapshot:
    """Little-endian window sampled at access-size stride from ``base``.

    ``current_offset`` marks the cell the concrete execution actually read;
    its value backs every out-of-window leaf.
    """

    base: int
    access_size: int
    cells: tuple[Cell, ...]
    current_offset: int

    def __post_init__(self) -> None:
        if self.access_size not in ACCESS_SIZES:
            raise MemModelError(f"unsupported access size {self.access_size}")
        if not self.cells:
            raise EmptyRegion("snapshot has no cells")
        limit = 1 << (8 * self.access_size)
        for i, cell in enumerate(self.cells):
            if cell.offset != i * self.access_size:
                raise MemModelError(
                    f"cell {i} at offset {cell.offset:#x}, expected {i * self.access_size:#x}"
                )
            if not 0 <= cell.value < limit:
                raise MemModelError(f"cell value {cell.value:#x} exceeds access width")
            if cell.sym is not None and cell.sym.width != 8 * self.access_size:
                raise MemModelError("symbolic cell width differs from access width")
        if self.current_offset % self.access_size or not (
            0 <= self.current_offset < len(self.cells) * self.access_size
        ):
            raise MemModelError(f"current offset {self.current_offset:#x} is not a sampled cell")

    @property
    def value_width(self) -> int:
        return 8 * self.access_size

    @property
    def span(self) -> int:
        return len(self.cells) * self.access_size

    @property
    def end(self) -> int:
        return self.base + self.span

    @property
    def current_cell(self) -> Cell:
        return self.cells[self.current_offset // self.access_size]

    def current_value_expr(self) -> BitVecExpr:
        cell = self.current_cell
        return cell.sym if cell.sym is not None else Const(cell.value, self.value_width)

    def concrete_points(self) -> list[tuple[int, int]]:
        return [(c.offset, c.value) for c in self.cells if c.sym is None]

    def symbolic_cells(self) -> list[Cell]:
        return [c for c in self.cells if c.sym is not None]


@dataclass(frozen=True)
class LinearSegment:
    """y = m*x + b over a run of consecutive cells, exact in integers."""

    m: int
    b: int
    first_offset: int
    last_offset: int
    points: int

    def __post_init__(self) -> None:
        if self.points < 2:
            raise MemModelError("a segment needs at least two points")

    def value_at(self, offset: int) -> int:
        return self.m * offset + self.b

    def formula(self) -> str:
        return f"y = {self.m}*x + {self.b}" if self.b >= 0 else f"y = {self.m}*x - {-self.b}"


@dataclass(frozen=True)
class ModeledRead:
    expr: BitVecExpr
    strategy: Strategy
    fell_back_to_ite: bool
    equation_width: int
    segments: tuple[LinearSegment, ...] = ()
    horizontal_groups: int = 0
    symbolic_prefix_count: int = 0


def _cell_addr(snap: MemorySnapshot, offset: int, width: int) -> Const:
    return Const(snap.base + offset, width)


def build_ite(snap: MemorySnapshot, addr: BitVecExpr) -> ModeledRead:
    """Nested ITE over absolute cell addresses.

    Concrete cells sharing a value collapse into one disjunction node (first
    occurrence fixes the node position, offsets ascend within it). Symbolic
    cells keep their own equality node. Everything else, including addresses
    outside the window, evaluates to the current-path value; no range
    assertion is attached.
    """
    width = addr.width
    groups: dict[int, list[int]] = {}
    order: list[tuple[str, int]] = []  # ("group", value) | ("sym", cell index)
    for i, cell in enumerate(snap.cells):
        if cell.sym is not None:
            order.append(("sym", i))
        elif cell.value not in groups:
            groups[cell.value] = [cell.offset]
            order.append(("group", cell.value))
        else:
            groups[cell.value].append(cell.offset)

    expr: BitVecExpr = snap.current_value_expr()
    for kind, key in reversed(order):
        if kind == "sym":
            cell = snap.cells[key]
            cond: BitVecExpr = addr.eq(_cell_addr(snap, cell.offset, width))
            leaf: BitVecExpr = cell.sym  # type: ignore[assignment]
        else:
            offs = groups[key]
            cond = or_all(addr.eq(_cell_addr(snap, o, width)) for o in offs)
            leaf = Const(key, snap.value_width)
        expr = ite(cond, leaf, expr)
    return ModeledRead(
        expr=expr,
        strategy=Strategy.ITE,
        fell_back_to_ite=False,
        equation_width=snap.value_width,
    )


def _cell_leaf(snap: MemorySnapshot, cell: Cell) -> BitVecExpr:
    return cell.sym if cell.sym is not None else Const(cell.value, snap.value_width)


def _bst(
    snap: MemorySnapshot,
    addr: BitVecExpr,
    cells: Sequence[Cell],
    open_below: bool,
    open_above: bool,
    current: BitVecExpr,
) -> BitVecExpr:
    """Recursive range bisection over the sampled cells.

    ``open_below``/``open_above`` mark subtrees whose range extends past the
    window, where an extra leaf returns the current-path value. Two-cell
    subtrees at the window edges compress to one comparison plus one
    equality test, mirroring how ranges between sampled addresses take a
    neighbor cell's value.
    """
    width = addr.width
    n = len(cells)
    if n == 1:
        c = cells[0]
        a = _cell_addr(snap, c.offset, width)
        leaf = _cell_leaf(snap, c)
        if open_below and open_above:
            return ite(addr.eq(a), leaf, current)
        if open_below:
            return ite(addr.ult(a), current, leaf)
        if open_above:
            return ite(addr.eq(a), leaf, current)
        return leaf
    if n == 2 and not (open_below and open_above):
        c0, c1 = cells
        a0 = _cell_addr(snap, c0.offset, width)
        a1 = _cell_addr(snap, c1.offset, width)
        v0, v1 = _cell_leaf(snap, c0), _cell_leaf(snap, c1)
        if open_below:
            return ite(addr.ult(a0), current, ite(addr.eq(a0), v0, v1))
        if open_above:
            return ite(addr.ult(a1), v0, ite(addr.eq(a1), v1, current))
        return ite(addr.ult(a1), v0, v1)
    mid = n // 2
    pivot = _cell_addr(snap, cells[mid].offset, width)
    left = _bst(snap, addr, cells[:mid], open_below, False, current)
    right = _bst(snap, addr, cells[mid:], False, open_above, current)
    return ite(addr.ult(pivot), left, right)


def build_bst(snap: MemorySnapshot, addr: BitVecExpr, bounds: MemoryBounds | None = None) -> ModeledRead:
    """Balanced unsigned-comparison tree over the cell addresses."""
    _check_bounds(snap, bounds)
    current = snap.current_value_expr()
    expr = _bst(snap, addr, snap.cells, True, True, current)
    return ModeledRead(
        expr=expr,
        strategy=Strategy.BST,
        fell_back_to_ite=False,
        equation_width=snap.value_width,
    )


def linearize(
    points: Sequence[tuple[int, int]],
    stride: int,
) -> tuple[list[LinearSegment], list[tuple[int, int]]]:
    """Greedy left-to-right fit of integer-coefficient lines.

    A line starts from two adjacent points when their slope divides evenly,
    extends while following points stay on it exactly, and never jumps a
    gap: only consecutive points (offset step == stride) join a segment.
    Uncovered points come back as leftovers.
    """
    segments: list[LinearSegment] = []
    leftovers: list[tuple[int, int]] = []
    i = 0
    n = len(points)
    while i < n - 1:
        (x0, y0), (x1, y1) = points[i], points[i + 1]
        if x1 - x0 != stride or (y1 - y0) % stride:
            leftovers.append(points[i])
            i += 1
            continue
        m = (y1 - y0) // stride
        b = y0 - m * x0
        j = i + 2
        while (
            j < n
            and points[j][0] - points[j - 1][0] == stride
            and m * points[j][0] + b == points[j][1]
        ):
            j += 1
        segments.append(
            LinearSegment(m=m, b=b, first_offset=x0, last_offset=points[j - 1][0], points=j - i)
        )
        i = j
    if i == n - 1:
        leftovers.append(points[i])
    return segments, leftovers


def merge_horizontal(
    leftovers: Sequence[tuple[int, int]],
) -> tuple[list[tuple[int, list[int]]], list[tuple[int, int]]]:
    """Group leftover points sharing one value (horizontal lines).

    Groups keep first-occurrence order with offsets ascending; points with a
    unique value stay single.
    """
    by_value: dict[int, list[int]] = {}
    for off, val in leftovers:
        by_value.setdefault(val, []).append(off)
    groups = [(val, sorted(offs)) for val, offs in by_value.items() if len(offs) >= 2]
    singles = [(off, val) for off, val in leftovers if len(by_value[val]) < 2]
    return groups, singles


def _equation_width(snap: MemorySnapshot, segments: Sequence[LinearSegment]) -> int:
    """Smallest byte-rounded width fitting offsets, pivots, and line values."""
    need = max(snap.value_width, snap.span.bit_length())
    for seg in segments:
        magnitude = abs(seg.m) * seg.last_offset + abs(seg.b)
        need = max(need, magnitude.bit_length() + 1)
    return ((need + 7) // 8) * 8


def _segment_bst(
    snap: MemorySnapshot,
    idx_w: BitVecExpr,
    segments: Sequence[LinearSegment],
    w: int,
) -> BitVecExpr:
    """Balanced tree over segment start offsets; leaves evaluate the line."""
    if len(segments) == 1:
        seg = segments[0]
        product = binop(BinOp.MUL, Const(seg.m, w), idx_w)
        value = binop(BinOp.ADD, product, Const(seg.b, w))
        if w > snap.value_width:
            return value.extract(snap.value_width - 1, 0)
        return value
    mid = len(segments) // 2
    pivot = Const(segments[mid].first_offset, w)
    left = _segment_bst(snap, idx_w, segments[:mid], w)
    right = _segment_bst(snap, idx_w, segments[mid:], w)
    return ite(idx_w.ult(pivot), left, right)


def _check_bounds(snap: MemorySnapshot, bounds: MemoryBounds | None) -> None:
    if bounds is None:
        return
    if bounds.lower != snap.base or bounds.upper != snap.end:
        raise MemModelError(
            f"snapshot [{snap.base:#x}, {snap.end:#x}) does not match "
            f"bounds [{bounds.lower:#x}, {bounds.upper:#x})"
        )
    if bounds.access_size != snap.access_size:
        raise MemModelError("bounds access size differs from snapshot")


def build_linearized(
    snap: MemorySnapshot,
    addr: BitVecExpr,
    bounds: MemoryBounds | None = None,
) -> ModeledRead:
    """Linearized encoding over the base-normalized offset.

    Layout, outermost first: exact-match nodes for symbolic cells, then
    horizontal-line groups, then single points, then one upper-bound guard
    around a balanced tree over the line segments. The guard compares the
    full-width offset, so addresses below the base wrap around past the
    window and reach the current-value leaf without a lower-bound check.
    """
    _check_bounds(snap, bounds)
    if snap.access_size >= LINEARIZE_MAX_ACCESS:
        raise WidthOverflow(f"{snap.access_size}-byte access")
    width = addr.width
    idx = binop(BinOp.SUB, addr, Const(snap.base, width))
    current = snap.current_value_expr()

    segments, leftovers = linearize(snap.concrete_points(), snap.access_size)
    groups, singles = merge_horizontal(leftovers)

    w = _equation_width(snap, segments)
    if w > MAX_WIDTH:
        raise WidthOverflow(f"equation width {w}")
    if w > width:
        idx_w: BitVecExpr = idx.zext(w - width)
    elif w < width:
        idx_w = idx.extract(w - 1, 0)
    else:
        idx_w = idx

    if segments:
        core: BitVecExpr = ite(
            idx.ult(Const(snap.span, width)),
            _segment_bst(snap, idx_w, segments, w),
            current,
        )
    else:
        core = current

    expr = core
    for off, val in reversed(singles):
        expr = ite(idx.eq(Const(off, width)), Const(val, snap.value_width), expr)
    for val, offs in reversed(groups):
        cond = or_all(idx.eq(Const(o, width)) for o in offs)
        expr = ite(cond, Const(val, snap.value_width), expr)
    sym_cells = snap.symbolic_cells()
    for cell in reversed(sym_cells):
        expr = ite(idx.eq(Const(cell.offset, width)), cell.sym, expr)  # type: ignore[arg-type]

    return ModeledRead(
        expr=expr,
        strategy=Strategy.LINEARIZED,
        fell_back_to_ite=False,
        equation_width=w,
        segments=tuple(segments),
        horizontal_groups=len(groups),
        symbolic_prefix_count=len(sym_cells),
    )


def model_read(
    snap: MemorySnapshot,
    addr: BitVecExpr,
    bounds: MemoryBounds | None = None,
    strategy: Strategy = Strategy.LINEARIZED,
) -> ModeledRead:
    """Dispatch to the chosen encoding.

    Linearization falls back to the nested ITE tree for large accesses or
    when the equation width would blow past the cap; the result still
    reports the requested strategy with ``fell_back_to_ite`` set.
    """
    if strategy is Strategy.ITE:
        return build_ite(snap, addr)
    if strategy is Strategy.BST:
        return build_bst(snap, addr, bounds)
    try:
        return build_linearized(snap, addr, bounds)
    except WidthOverflow:
        fallback = build_ite(snap, addr)
        return ModeledRead(
            expr=fallback.expr,
            strategy=Strategy.LINEARIZED,
            fell_back_to_ite=True,
            equation_width=fallback.equation_width,
        )


# ---------------------------------------------------------------------------
# Snapshot file format
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^base=([0-9a-fA-Fx]+)\s+access=(\d+)\s+current=([0-9a-fA-Fx]+)\s*$")


def _parse_hex(text: str) -> int:
    return int(text, 16)


def save_snapshot(snap: MemorySnapshot, path: str | Path) -> None:
    Path(path).write_text(dump_snapshot(snap))


def dump_snapshot(snap: MemorySnapshot) -> str:
    lines = [f"base={snap.base:x} access={snap.access_size} current={snap.current_offset:x}"]
    for cell in snap.cells:
        line = f"{cell.offset:x} {cell.value:x}"
        if cell.sym is not None:
            line += f" sym={to_sexpr_with_decls(cell.sym)}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> MemorySnapshot:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MemModelError("empty snapshot file")
    header = _HEADER_RE.match(lines[0])
    if not header:
        raise MemModelError(f"bad snapshot header: {lines[0]!r}")
    base = _parse_hex(header.group(1))
    access = int(header.group(2))
    current = _parse_hex(header.group(3))
    cells: list[Cell] = []
    for ln in lines[1:]:
        parts = ln.split(maxsplit=2)
        if len(parts) < 2:
            raise MemModelError(f"bad cell line: {ln!r}")
        offset = _parse_hex(parts[0])
        value = _parse_hex(parts[1])
        sym = None
        if len(parts) == 3:
            if not parts[2].startswith("sym="):
                raise MemModelError(f"bad cell annotation: {parts[2]!r}")
            try:
                sym = parse_sexpr(parts[2][4:])
            except ExprError as exc:
                raise MemModelError(f"bad sym expression in {ln!r}: {exc}") from exc
        cells.append(Cell(offset=offset, value=value, sym=sym))
    return MemorySnapshot(base=base, access_size=access, cells=tuple(cells), current_offset=current)


def load_snapshot(path: str | Path) -> MemorySnapshot:
    return parse_snapshot(Path(path).read_text())


def snapshot_from_memory(
    mem,
    shadow: dict[int, BitVecExpr] | None,
    bounds: MemoryBounds,
    concrete_addr: int,
) -> MemorySnapshot:
    """Sample a raw little-endian memory (bytes-like) over the bounds window.

    ``shadow`` maps byte addresses to width-8 expressions; a cell touching
    any shadowed byte becomes symbolic, concatenating shadowed and constant
    bytes.
    """
    from .expr import Concat

    size = bounds.access_size
    cells: list[Cell] = []
    for off in bounds.offsets():
        a = bounds.lower + off
        raw = bytes(mem[a : a + size])
        value = int.from_bytes(raw, "little")
        sym: BitVecExpr | None = None
        if shadow and any((a + i) in shadow for i in range(size)):
            parts = [
                shadow.get(a + i, Const(raw[i], 8)) for i in range(size)
            ]  # parts[0] is the lowest byte
            acc = parts[0]
            for p in parts[1:]:
                acc = Concat(p, acc)
            sym = acc
        cells.append(Cell(offset=off, value=value, sym=sym))
    return MemorySnapshot(
        base=bounds.lower,
        access_size=size,
        cells=tuple(cells),
        current_offset=concrete_addr - bounds.lower,
    )

"""Deterministic synthetic corpus for the encoding benchmark.

Two case shapes, both lookup-table-like:

* ``eq``: one read at a free symbolic address, asserted equal to a value
  that is present in the table (satisfiable) or absent (unsatisfiable).
* ``sum_eq``: two independent indexes into the same table, the sum of the
  two reads asserted equal to a target; reachable targets are satisfiable,
  parity-impossible ones are not. These pair queries are where encoding
  size shows up in solving time.

Tables are piecewise linear in the byte offset (values step by an integer
multiple of the access size per element) with constant runs and repeated
stray values mixed in, so the line-fitting encoder has real structure to
find.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .expr import BitVecExpr, Var, parse_sexpr, to_sexpr_with_decls
from .memmodel import Cell, MemorySnapshot, dump_snapshot, parse_snapshot

ADDR_VAR = "a"
ADDR2_VAR = "b"


@dataclass(frozen=True)
class BenchCase:
    name: str
    snapshot: MemorySnapshot
    addr_expr: BitVecExpr
    relation: str  # "eq" | "sum_eq"
    value: int
    addr2_expr: BitVecExpr | None = None


def _ramp(rng: random.Random, n: int, size: int, even_only: bool) -> list[int]:
    limit = 1 << (8 * size)
    slopes = [2, 4, -2, -4, 6] if even_only else [1, 2, 3, 5, -1, -3, 7]
    m = rng.choice(slopes)
    b = rng.randrange(0, 1 << 16)
    if even_only:
        b &= ~1
    return [(m * (size * i) + b) % limit for i in range(n)]


def _values(
    rng: random.Random,
    n: int,
    size: int,
    even_only: bool = False,
    stray_budget: int = 8,
) -> list[int]:
    """Byte-linear runs and constant runs, plus a few stray points.

    Strays break the line structure, so they stay rare: a table that is
    mostly noise defeats every compact encoding equally.
    """
    limit = 1 << (8 * size)
    step = 2 if even_only else 1
    vals: list[int] = []
    strays = 0
    while len(vals) < n:
        run = min(rng.randint(32, 160), n - len(vals))
        kind = rng.random()
        if kind < 0.75 or strays >= stray_budget:
            vals.extend(_ramp(rng, run, size, even_only)[:run])
        elif kind < 0.95:
            vals.extend([rng.randrange(0, limit, step)] * run)
        else:
            vals.append(rng.randrange(0, limit, step))
            strays += 1
    return vals[:n]


def _make_snapshot(rng: random.Random, n: int, size: int, vals: list[int]) -> MemorySnapshot:
    base = rng.randrange(0x1000, 0x100000, size)
    cells = tuple(Cell(i * size, v) for i, v in enumerate(vals))
    current = rng.randrange(n) * size
    return MemorySnapshot(base=base, access_size=size, cells=cells, current_offset=current)


def generate_case(rng: random.Random, index: int) -> BenchCase:
    name = f"case{index:03d}"
    want_sat = index % 2 == 0
    if index % 5 < 2:
        # single read
        size = rng.choice([4, 8])
        n = rng.randint(128, 512)
        vals = _values(rng, n, size)
        snap = _make_snapshot(rng, n, size, vals)
        limit = 1 << (8 * size)
        if want_sat:
            value = rng.choice(vals)
        else:
            present = set(vals)
            while True:
                value = rng.randrange(limit)
                if value not in present:
                    break
        return BenchCase(name, snap, Var(ADDR_VAR, 64), "eq", value)
    # two indexes into one table
    size = 4
    n = rng.randint(512, 1280)
    limit = 1 << (8 * size)
    if want_sat:
        vals = _values(rng, n, size)
        i, j = rng.randrange(n), rng.randrange(n)
        value = (vals[i] + vals[j]) % limit
    else:
        vals = _values(rng, n, size, even_only=True)
        value = rng.randrange(1, limit, 2)  # odd target, even-only table
    snap = _make_snapshot(rng, n, size, vals)
    return BenchCase(name, snap, Var(ADDR_VAR, 64), "sum_eq", value, Var(ADDR2_VAR, 64))


def write_case(case: BenchCase, out_dir: Path) -> None:
    (out_dir / f"{case.name}.snap").write_text(dump_snapshot(case.snapshot))
    lines = [f"addr={to_sexpr_with_decls(case.addr_expr)}"]
    if case.addr2_expr is not None:
        lines.append(f"addr2={to_sexpr_with_decls(case.addr2_expr)}")
    lines.append(f"relation={case.relation}")
    lines.append(f"value={case.value:x}")
    (out_dir / f"{case.name}.query").write_text("\n".join(lines) + "\n")


def load_case(snap_path: Path) -> BenchCase:
    snap = parse_snapshot(snap_path.read_text())
    query_path = snap_path.with_suffix(".query")
    fields: dict[str, str] = {}
    for line in query_path.read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            fields[key.strip()] = val.strip()
    addr = parse_sexpr(fields["addr"])
    addr2 = parse_sexpr(fields["addr2"]) if "addr2" in fields else None
    relation = fields.get("relation", "eq")
    if relation not in ("eq", "sum_eq"):
        raise ValueError(f"{query_path}: unsupported relation {relation!r}")
    if relation == "sum_eq" and addr2 is None:
        raise ValueError(f"{query_path}: sum_eq needs addr2")
    value = int(fields["value"], 16)
    return BenchCase(
        name=snap_path.stem,
        snapshot=snap,
        addr_expr=addr,
        relation=relation,
        value=value,
        addr2_expr=addr2,
    )


def generate_corpus(out_dir: str | Path, cases: int = 50, seed: int = 2021) -> list[BenchCase]:
    rng = random.Random(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = []
    for i in range(cases):
        case = generate_case(rng, i)
        write_case(case, out)
        result.append(case)
    return result


def load_corpus(corpus_dir: str | Path) -> list[BenchCase]:
    return [load_case(p) for p in sorted(Path(corpus_dir).glob("*.snap"))]

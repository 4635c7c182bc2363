"""Command-line workflows.

Subcommands:
  model       encode one snapshot read and print the script plus a summary
  bench       time the three encodings over a corpus with a real solver
  run         concolic exploration of a program (corpus + stats output)
  covdiff     replay two run directories and diff their block coverage
  gen-corpus  write the deterministic synthetic benchmark corpus

Exit codes: 0 success, 1 usage error, 2 input error, 3 solver missing.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import benchgen
from .bounds import BoundsPolicy, MemoryBounds, BoundsMethod
from .expr import Const, ExprError, binop, BinOp, Unary, UnOp, parse_sexpr, var_widths
from .memmodel import (
    Cell,
    MemModelError,
    MemorySnapshot,
    ModeledRead,
    Strategy,
    load_snapshot,
    model_read,
)
from .microexec import (
    ExploreConfig,
    MalformedProgram,
    RunConfig,
    RunStatus,
    explore,
    load_program,
    run_concolic,
)
from .smtlib import (
    SOLVER_ENV_VAR,
    Script,
    SolverError,
    SolverSpawnError,
    Status,
    check,
    emit_term,
    find_default_solver,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NO_SOLVER = 3

_STRATEGIES = {"lin": Strategy.LINEARIZED, "ite": Strategy.ITE, "bst": Strategy.BST}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage problems, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class InputError(Exception):
    pass


def _resolve_solver(arg: str | None) -> list[str]:
    if arg:
        import shlex

        return shlex.split(arg)
    found = find_default_solver()
    if found is None:
        print(
            f"symread: no SMT solver found; pass --solver, set {SOLVER_ENV_VAR}, "
            "or install the bundled tools/z3-smt2 wrapper",
            file=sys.stderr,
        )
        raise SystemExit(EXIT_NO_SOLVER)
    return found


def _parse_bounds_flag(spec: str) -> tuple[str, int | None]:
    if spec == "auto" or spec == "solver":
        return spec, None
    if spec.startswith("const:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad --bounds value {spec!r}") from None
        if n < 2:
            raise InputError("--bounds const:N needs N >= 2")
        return "const", n
    raise InputError(f"bad --bounds value {spec!r} (want auto, const:N, or solver)")


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def _window_snapshot(snap: MemorySnapshot, n_elements: int) -> MemorySnapshot:
    """Re-center a snapshot on its current cell with at most n elements."""
    size = snap.access_size
    cur_idx = snap.current_offset // size
    lo = max(cur_idx - n_elements // 2, 0)
    hi = min(lo + n_elements, len(snap.cells))
    lo = max(hi - n_elements, 0)
    cells = tuple(
        Cell(offset=(i - lo) * size, value=c.value, sym=c.sym)
        for i, c in enumerate(snap.cells[lo:hi], start=lo)
    )
    return MemorySnapshot(
        base=snap.base + lo * size,
        access_size=size,
        cells=cells,
        current_offset=snap.current_offset - lo * size,
    )


def _model_summary(modeled: ModeledRead, snap: MemorySnapshot) -> list[str]:
    lines = [
        f"strategy={modeled.strategy.value}",
        f"fell_back_to_ite={'yes' if modeled.fell_back_to_ite else 'no'}",
        f"equation_width={modeled.equation_width}",
        f"cells={len(snap.cells)}",
        f"window=[{snap.base:#x}, {snap.end:#x})",
    ]
    for seg in modeled.segments:
        lines.append(
            f"segment: {seg.formula()} over offsets {seg.first_offset}..{seg.last_offset}"
            f" ({seg.points} points)"
        )
    lines.append(f"horizontal_groups={modeled.horizontal_groups}")
    lines.append(f"symbolic_prefix={modeled.symbolic_prefix_count}")
    return lines


def cmd_model(args: argparse.Namespace) -> int:
    try:
        snap = load_snapshot(args.snapshot)
    except (OSError, MemModelError) as exc:
        raise InputError(f"cannot load snapshot: {exc}") from exc
    try:
        addr = parse_sexpr(args.expr)
    except ExprError as exc:
        raise InputError(f"cannot parse --expr: {exc}") from exc
    mode, n = _parse_bounds_flag(args.bounds)
    if mode == "solver":
        raise InputError("--bounds solver needs an execution context; use `symread run`")
    if mode == "const":
        snap = _window_snapshot(snap, n or 2)
    bounds = MemoryBounds(
        lower=snap.base,
        upper=snap.end,
        access_size=snap.access_size,
        method_lower=BoundsMethod.CONSTANT_WINDOW,
        method_upper=BoundsMethod.CONSTANT_WINDOW,
    )
    modeled = model_read(snap, addr, bounds, _STRATEGIES[args.strategy])

    decls = [
        f"(declare-const {name} (_ BitVec {width}))"
        for name, width in var_widths(modeled.expr).items()
    ]
    script = "\n".join(
        ["(set-logic QF_BV)"]
        + decls
        + [
            f"(define-fun modeled_read () (_ BitVec {modeled.expr.width}) "
            f"{emit_term(modeled.expr)})"
        ]
    ) + "\n"
    for line in _model_summary(modeled, snap):
        print(line)
    if args.out:
        Path(args.out).write_text(script)
    else:
        print(script, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

@dataclass
class BenchCell:
    case: str
    strategy: str
    status: str
    wall_time: float


@dataclass
class BenchReport:
    cells: list[BenchCell]
    strategies: list[str]

    def total(self, strategy: str) -> float:
        return sum(c.wall_time for c in self.cells if c.strategy == strategy)

    def timeouts(self, strategy: str) -> int:
        return sum(
            1 for c in self.cells if c.strategy == strategy and c.status == "timeout"
        )

    def to_csv(self) -> str:
        lines = ["case,strategy,status,wall_time"]
        for c in self.cells:
            lines.append(f"{c.case},{c.strategy},{c.status},{c.wall_time:.4f}")
        for s in self.strategies:
            lines.append(f"TOTAL,{s},{self.timeouts(s)}to,{self.total(s):.4f}")
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        cases = sorted({c.case for c in self.cells})
        cell_map = {(c.case, c.strategy): c for c in self.cells}
        name_w = max([len(x) for x in cases] + [8])
        header = "case".ljust(name_w) + "".join(s.upper().rjust(16) for s in self.strategies)
        rows = [header]
        for case in cases:
            row = case.ljust(name_w)
            for s in self.strategies:
                cell = cell_map.get((case, s))
                text = f"{cell.status}/{cell.wall_time:.2f}s" if cell else "skipped"
                row += text.rjust(16)
            rows.append(row)
        total = "TOTAL".ljust(name_w)
        for s in self.strategies:
            total += f"{self.total(s):.2f}s ({self.timeouts(s)} t/o)".rjust(16)
        rows.append(total)
        return "\n".join(rows)


def _bench_one(
    case: benchgen.BenchCase,
    strategy_key: str,
    solver_cmd: list[str],
    timeout: float,
) -> BenchCell:
    snap = case.snapshot
    bounds = MemoryBounds(
        lower=snap.base,
        upper=snap.end,
        access_size=snap.access_size,
        method_lower=BoundsMethod.CONSTANT_WINDOW,
        method_upper=BoundsMethod.CONSTANT_WINDOW,
    )
    strategy = _STRATEGIES[strategy_key]
    modeled = model_read(snap, case.addr_expr, bounds, strategy)
    if case.relation == "sum_eq":
        assert case.addr2_expr is not None
        second = model_read(snap, case.addr2_expr, bounds, strategy)
        lhs = binop(BinOp.ADD, modeled.expr, second.expr)
    else:
        lhs = modeled.expr
    goal = binop(BinOp.EQ, lhs, Const(case.value, snap.value_width))
    script = Script.from_assertions([goal])
    try:
        verdict = check(script, solver_cmd, timeout)
        return BenchCell(case.name, strategy_key, verdict.status.value, verdict.wall_time)
    except SolverError as exc:
        return BenchCell(case.name, strategy_key, f"error({exc})", 0.0)


def cmd_bench(args: argparse.Namespace) -> int:
    solver_cmd = _resolve_solver(args.solver)
    try:
        cases = benchgen.load_corpus(args.corpus)
    except (OSError, ValueError, MemModelError, ExprError) as exc:
        raise InputError(f"cannot load corpus: {exc}") from exc
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in _STRATEGIES:
            raise InputError(f"unknown strategy {s!r}")

    work = [(case, s) for case in cases for s in strategies]

    def run_one(item: tuple[benchgen.BenchCase, str]) -> BenchCell:
        case, strat = item
        return _bench_one(case, strat, solver_cmd, args.timeout)

    if args.jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            cells = list(pool.map(run_one, work))
    else:
        cells = [run_one(w) for w in work]

    report = BenchReport(cells=cells, strategies=strategies)
    print(report.render())
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _build_run_config(args: argparse.Namespace, solver_cmd: list[str]) -> RunConfig:
    mode, n = _parse_bounds_flag(args.bounds)
    policy = BoundsPolicy(
        use_solver=(mode == "solver"),
        max_elements=n if n is not None else args.max_elements,
        solver_limit_bytes=args.solver_limit,
        solver_timeout=args.timeout,
        ast_enabled=(mode != "const"),
    )
    return RunConfig(
        symaddr=(args.symaddr == "on"),
        strategy=_STRATEGIES[args.strategy],
        bounds=policy,
        solver_cmd=solver_cmd if mode == "solver" else None,
    )


def cmd_run(args: argparse.Namespace) -> int:
    solver_cmd = _resolve_solver(args.solver)
    try:
        program = load_program(args.program)
        seed = Path(args.input).read_bytes()
    except OSError as exc:
        raise InputError(str(exc)) from exc
    except MalformedProgram as exc:
        raise InputError(f"bad program: {exc}") from exc
    if not seed:
        raise InputError("input file is empty")

    run_cfg = _build_run_config(args, solver_cmd)
    cfg = ExploreConfig(
        run=run_cfg,
        solver_cmd=solver_cmd,
        timeout=args.timeout,
        optimistic=args.optimistic,
        static_cache=not args.no_static_cache,
        max_queries=args.max_queries,
        jobs=args.jobs,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = explore(program, seed, cfg, out_dir=out_dir)

    stats_lines = report.stats_lines() + [
        f"symaddr={args.symaddr}",
        f"strategy={args.strategy}",
        f"program={Path(args.program).name}",
        f"program_blocks={program.block_count}",
    ]
    (out_dir / "stats.txt").write_text("\n".join(stats_lines) + "\n")
    (out_dir / "coverage.txt").write_text(
        "\n".join(str(b) for b in sorted(report.blocks)) + "\n"
    )
    shutil.copyfile(args.program, out_dir / "program.asm")
    (out_dir / "seed.bin").write_bytes(seed)
    for line in stats_lines:
        print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# covdiff
# ---------------------------------------------------------------------------

def _replay_coverage(run_dir: Path) -> tuple[set[int], int]:
    program_path = run_dir / "program.asm"
    if not program_path.is_file():
        raise InputError(f"{run_dir} has no program.asm (not a run directory?)")
    program = load_program(program_path)
    inputs = [run_dir / "seed.bin"] + sorted(run_dir.glob("out-*.bin"))
    blocks: set[int] = set()
    cfg = RunConfig(symaddr=False)  # concrete replay; coverage is mode-independent
    for path in inputs:
        if not path.is_file():
            continue
        data = path.read_bytes()
        if not data:
            continue
        _, _, stats = run_concolic(program, data, cfg)
        blocks |= stats.blocks
    return blocks, program.block_count


def cmd_covdiff(args: argparse.Namespace) -> int:
    dir_a, dir_b = Path(args.run_a), Path(args.run_b)
    for d in (dir_a, dir_b):
        if not d.is_dir():
            raise InputError(f"missing run directory {d}")
    prog_a = (dir_a / "program.asm").read_text() if (dir_a / "program.asm").is_file() else None
    prog_b = (dir_b / "program.asm").read_text() if (dir_b / "program.asm").is_file() else None
    if prog_a is None or prog_b is None or prog_a != prog_b:
        raise InputError("run directories were produced from different programs")
    cov_a, total = _replay_coverage(dir_a)
    cov_b, _ = _replay_coverage(dir_b)
    a_only = cov_a - cov_b
    b_only = cov_b - cov_a
    common = cov_a & cov_b

    def pct(n: int) -> float:
        return 100.0 * n / total if total else 0.0

    print(f"blocks_total={total}")
    print(f"a_only={len(a_only)}")
    print(f"b_only={len(b_only)}")
    print(f"common={len(common)}")
    print(f"a_only_pct={pct(len(a_only)):.2f}")
    print(f"b_only_pct={pct(len(b_only)):.2f}")
    print(f"common_pct={pct(len(common)):.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-corpus
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args: argparse.Namespace) -> int:
    benchgen.generate_corpus(args.out, cases=args.cases, seed=args.seed)
    print(f"wrote {args.cases} cases to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symread", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_model = sub.add_parser("model", help="encode a snapshot read")
    p_model.add_argument("--snapshot", required=True)
    p_model.add_argument("--expr", required=True, help="address s-expression (with declare-const)")
    p_model.add_argument("--strategy", choices=sorted(_STRATEGIES), default="lin")
    p_model.add_argument("--bounds", default="auto")
    p_model.add_argument("--out")
    p_model.set_defaults(func=cmd_model)

    p_bench = sub.add_parser("bench", help="time encodings over a corpus")
    p_bench.add_argument("--corpus", required=True)
    p_bench.add_argument("--solver")
    p_bench.add_argument("--timeout", type=float, default=90.0)
    p_bench.add_argument("--strategies", default="lin,ite,bst")
    p_bench.add_argument("--out")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(func=cmd_bench)

    p_run = sub.add_parser("run", help="concolic exploration")
    p_run.add_argument("--program", required=True)
    p_run.add_argument("--input", required=True)
    p_run.add_argument("--symaddr", choices=["on", "off"], default="on")
    p_run.add_argument("--strategy", choices=sorted(_STRATEGIES), default="lin")
    p_run.add_argument("--solver")
    p_run.add_argument("--timeout", type=float, default=90.0)
    p_run.add_argument("--optimistic", action="store_true")
    p_run.add_argument("--bounds", default="auto")
    p_run.add_argument("--max-elements", type=int, default=64)
    p_run.add_argument("--solver-limit", type=int, default=4096)
    p_run.add_argument("--max-queries", type=int)
    p_run.add_argument("--no-static-cache", action="store_true")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=cmd_run)

    p_diff = sub.add_parser("covdiff", help="diff coverage of two runs")
    p_diff.add_argument("--run-a", required=True)
    p_diff.add_argument("--run-b", required=True)
    p_diff.set_defaults(func=cmd_covdiff)

    p_gen = sub.add_parser("gen-corpus", help="write the synthetic bench corpus")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--cases", type=int, default=50)
    p_gen.add_argument("--seed", type=int, default=2021)
    p_gen.set_defaults(func=cmd_gen_corpus)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"symread: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverSpawnError as exc:
        print(f"symread: {exc}", file=sys.stderr)
        return EXIT_NO_SOLVER


if __name__ == "__main__":
    sys.exit(main())

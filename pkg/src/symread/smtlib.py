"""QF_BV script emission and external SMT solver processes.

No solving happens in-process: every query runs an external SMT-LIB2
binary (``z3 -in``, ``bitwuzla``, ``cvc5``, the bundled z3-smt2 wrapper,
...). ``check`` spawns one process per query, which keeps per-query wall
times honest; ``Session`` holds one incremental process for query bursts
such as the bounds binary search.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .expr import (
    BinOp,
    Binary,
    BitVecExpr,
    COMPARISONS,
    Concat,
    Const,
    Extend,
    Extract,
    Ite,
    ParseError,
    UnOp,
    Unary,
    Var,
    _nest,
    _tokenize,
    and_all,
    binop,
    eval_expr,
    var_widths,
)

SOLVER_ENV_VAR = "SYMREAD_SOLVER"


class SolverError(Exception):
    pass


class SolverSpawnError(SolverError):
    pass


class SolverOutputError(SolverError):
    pass


class SolverFailure(SolverError):
    """A query came back unknown, timed out, or the process died."""


class UndeclaredVariable(SolverError):
    pass


class Status(Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"


@dataclass
class SolverVerdict:
    status: Status
    model: dict[str, int] | None
    wall_time: float


@dataclass(frozen=True)
class Script:
    """Declarations, width-1 assertions, and a goal."""

    variables: tuple[tuple[str, int], ...]
    assertions: tuple[BitVecExpr, ...]
    model_vars: tuple[str, ...] | None = None  # None: check-sat only

    def __post_init__(self) -> None:
        declared = dict(self.variables)
        if len(declared) != len(self.variables):
            raise UndeclaredVariable("duplicate declaration")
        for a in self.assertions:
            if a.width != 1:
                raise SolverOutputError("assertions must have width 1")
            for name, width in var_widths(a).items():
                if declared.get(name) != width:
                    raise UndeclaredVariable(f"{name} (width {width})")
        if self.model_vars is not None:
            for name in self.model_vars:
                if name not in declared:
                    raise UndeclaredVariable(name)

    @classmethod
    def from_assertions(
        cls,
        assertions: Iterable[BitVecExpr],
        want_model: bool = False,
    ) -> "Script":
        """Collect declarations from the assertions, name-sorted."""
        asserts = tuple(assertions)
        merged: dict[str, int] = {}
        for a in asserts:
            merged.update(var_widths(a))
        names = tuple(sorted(merged))
        return cls(
            variables=tuple((n, merged[n]) for n in names),
            assertions=asserts,
            model_vars=names if want_model else None,
        )


def _const_text(value: int, width: int) -> str:
    if width % 4 == 0:
        return f"#x{value:0{width // 4}x}"
    return f"#b{value:0{width}b}"


def emit_term(e: BitVecExpr, as_bool: bool = False) -> str:
    """Render e as an SMT-LIB2 term.

    Internally everything is a bitvector; SMT-LIB wants Bool at comparison
    and assertion positions, so rendering happens in one of two modes. A
    width-1 node with no boolean counterpart bridges via ``(= x #b1)`` or
    ``(ite c #b1 #b0)``. Iterative: modeled reads nest thousands deep.
    """
    BOOL, BV = True, False
    out: list[str] = []
    stack: list[str | tuple[BitVecExpr, bool]] = [(e, as_bool)]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        n, mode = item
        t = type(n)
        if t is Const:
            if mode is BOOL:
                out.append("true" if n.value else "false")
            else:
                out.append(_const_text(n.value, n.width))
        elif t is Var:
            if mode is BOOL:
                out.append(f"(= {n.name} #b1)")
            else:
                out.append(n.name)
        elif t is Unary:
            if mode is BOOL:
                if n.op is UnOp.NOT:
                    out.append("(not ")
                    stack.extend((")", (n.a, BOOL)))
                else:
                    # width-1 bitvector result used as a boolean
                    out.append(f"(= ({n.op.value} ")
                    stack.extend((" #b1)", ")", (n.a, BV)))
            else:
                out.append(f"({n.op.value} ")
                stack.extend((")", (n.a, BV)))
        elif t is Binary:
            if n.op in COMPARISONS:
                if mode is BOOL:
                    out.append(f"({n.op.value} ")
                    stack.extend((")", (n.b, BV), " ", (n.a, BV)))
                else:
                    out.append(f"(ite ({n.op.value} ")
                    stack.extend((" #b1 #b0)", ")", (n.b, BV), " ", (n.a, BV)))
            elif mode is BOOL and n.op in (BinOp.AND, BinOp.OR, BinOp.XOR):
                out.append(f"({n.op.value.removeprefix('bv')} ")
                stack.extend((")", (n.b, BOOL), " ", (n.a, BOOL)))
            else:
                prefix = "(= " if mode is BOOL else ""
                suffix = " #b1)" if mode is BOOL else ""
                out.append(f"{prefix}({n.op.value} ")
                stack.extend((suffix, ")", (n.b, BV), " ", (n.a, BV)))
        elif t is Ite:
            out.append("(ite ")
            arm_mode = BOOL if mode is BOOL else BV
            stack.extend(
                (")", (n.if_false, arm_mode), " ", (n.if_true, arm_mode), " ", (n.cond, BOOL))
            )
        elif t is Extract:
            prefix = "(= " if mode is BOOL else ""
            suffix = " #b1)" if mode is BOOL else ""
            out.append(f"{prefix}((_ extract {n.hi} {n.lo}) ")
            stack.extend((suffix, ")", (n.a, BV)))
        elif t is Extend:
            kind = "sign_extend" if n.signed else "zero_extend"
            out.append(f"((_ {kind} {n.by}) ")
            stack.extend((")", (n.a, BV)))
        elif t is Concat:
            out.append("(concat ")
            stack.extend((")", (n.b, BV), " ", (n.a, BV)))
        else:
            raise SolverOutputError(f"cannot emit node {t.__name__}")
    return "".join(out)


def emit(script: Script) -> str:
    """Deterministic SMT-LIB2 text for a script."""
    lines: list[str] = []
    if script.model_vars is not None:
        lines.append("(set-option :produce-models true)")
    lines.append("(set-logic QF_BV)")
    for name, width in script.variables:
        lines.append(f"(declare-const {name} (_ BitVec {width}))")
    for a in script.assertions:
        lines.append(f"(assert {emit_term(a, as_bool=True)})")
    lines.append("(check-sat)")
    if script.model_vars is not None and script.model_vars:
        lines.append(f"(get-value ({' '.join(script.model_vars)}))")
    return "\n".join(lines) + "\n"


def _as_argv(solver_cmd: str | Sequence[str]) -> list[str]:
    if isinstance(solver_cmd, str):
        return shlex.split(solver_cmd)
    return list(solver_cmd)


def _parse_value_token(tok: str) -> int | None:
    if tok.startswith("#x"):
        return int(tok[2:], 16)
    if tok.startswith("#b"):
        return int(tok[2:], 2)
    return None


def _parse_model_forms(forms: list, widths: Mapping[str, int]) -> dict[str, int]:
    model: dict[str, int] = {}
    for form in forms:
        if not isinstance(form, list):
            continue
        for pair in form:
            if not (isinstance(pair, list) and len(pair) == 2 and isinstance(pair[0], str)):
                continue
            name, val = pair
            v: int | None = None
            if isinstance(val, str):
                v = _parse_value_token(val)
            elif isinstance(val, list) and len(val) == 3 and val[0] == "_":
                try:
                    v = int(val[1][2:])
                except (ValueError, IndexError):
                    v = None
            if v is None or name not in widths:
                continue
            model[name] = v & ((1 << widths[name]) - 1)
    return model


def parse_solver_output(text: str, widths: Mapping[str, int]) -> tuple[Status, dict[str, int] | None]:
    status: Status | None = None
    rest_lines: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if status is None:
            if stripped in ("sat", "unsat", "unknown", "timeout"):
                status = Status(stripped)
            elif stripped.startswith("(error"):
                raise SolverOutputError(stripped)
            elif stripped:
                raise SolverOutputError(f"unexpected solver output: {stripped!r}")
        else:
            rest_lines.append(line)
    if status is None:
        raise SolverOutputError("no status line in solver output")
    if status is not Status.SAT:
        return status, None
    rest = "\n".join(rest_lines)
    if not rest.strip():
        return status, None
    try:
        forms = _nest(_tokenize(rest))
    except ParseError as exc:
        raise SolverOutputError(f"malformed model: {exc}") from exc
    return status, _parse_model_forms(forms, widths)


def check(
    script: Script,
    solver_cmd: str | Sequence[str],
    timeout: float | None = None,
) -> SolverVerdict:
    """Run one solver process over the emitted script."""
    argv = _as_argv(solver_cmd)
    text = emit(script)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            argv,
            input=text.encode(),
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            timeout=timeout,
        )
    except (FileNotFoundError, PermissionError) as exc:
        raise SolverSpawnError(f"cannot run solver {argv[0]!r}: {exc}") from exc
    except subprocess.TimeoutExpired:
        return SolverVerdict(Status.TIMEOUT, None, time.monotonic() - start)
    wall = time.monotonic() - start
    status, model = parse_solver_output(proc.stdout.decode(), dict(script.variables))
    if script.model_vars is None:
        model = None
    return SolverVerdict(status, model, wall)


class EqOutcome(Enum):
    EQUAL = "equal"
    DIFFERS = "differs"
    INCONCLUSIVE = "inconclusive"


@dataclass
class EqResult:
    outcome: EqOutcome
    witness: dict[str, int] | None = None


def prove_equal(
    e1: BitVecExpr,
    e2: BitVecExpr,
    domain: BitVecExpr,
    solver_cmd: str | Sequence[str] | None = None,
    timeout: float | None = None,
    session: "Session | None" = None,
) -> EqResult:
    """Decide e1 == e2 over the given width-1 domain constraint.

    UNSAT of ``domain and (e1 != e2)`` proves equality; a model is a
    counterexample. Runs on a one-shot process, or on ``session`` when
    given (cheaper for sweeps).
    """
    if e1.width != e2.width:
        raise SolverOutputError("prove_equal operands differ in width")
    neq = Unary(UnOp.NOT, binop(BinOp.EQ, e1, e2))
    script = Script.from_assertions([domain, neq], want_model=True)
    if session is not None:
        verdict = session.check_script(script)
    else:
        if solver_cmd is None:
            raise SolverSpawnError("no solver command given")
        verdict = check(script, solver_cmd, timeout)
    if verdict.status is Status.UNSAT:
        return EqResult(EqOutcome.EQUAL)
    if verdict.status is Status.SAT:
        return EqResult(EqOutcome.DIFFERS, verdict.model or {})
    return EqResult(EqOutcome.INCONCLUSIVE)


class Session:
    """One incremental solver process (push/pop across many queries)."""

    def __init__(self, solver_cmd: str | Sequence[str], timeout: float | None = None):
        argv = _as_argv(solver_cmd)
        self.timeout = timeout
        self._declared: dict[str, int] = {}
        self._decl_scopes: list[dict[str, int]] = []
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except (FileNotFoundError, PermissionError) as exc:
            raise SolverSpawnError(f"cannot run solver {argv[0]!r}: {exc}") from exc
        self._write("(set-option :produce-models true)\n(set-logic QF_BV)\n")

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _write(self, text: str) -> None:
        if self._proc.poll() is not None:
            raise SolverFailure("solver process exited")
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(text)
            self._proc.stdin.flush()
        except BrokenPipeError as exc:
            raise SolverFailure("solver closed its input") from exc

    def _read_line(self) -> str:
        assert self._proc.stdout is not None
        timer = None
        if self.timeout is not None:
            timer = threading.Timer(self.timeout, self._proc.kill)
            timer.start()
        try:
            line = self._proc.stdout.readline()
        finally:
            if timer is not None:
                expired = not timer.is_alive() and self._proc.poll() is not None
                timer.cancel()
                if expired:
                    raise SolverFailure("per-query timeout")
        if not line:
            raise SolverFailure("solver process closed its output")
        return line.strip()

    def _read_balanced(self) -> str:
        assert self._proc.stdout is not None
        chunks: list[str] = []
        depth = 0
        while True:
            line = self._read_line()
            chunks.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0:
                return "\n".join(chunks)

    def declare(self, variables: Mapping[str, int]) -> None:
        for name, width in variables.items():
            known = self._declared.get(name)
            if known == width:
                continue
            if known is not None:
                raise UndeclaredVariable(f"{name} redeclared at width {width} (was {known})")
            self._write(f"(declare-const {name} (_ BitVec {width}))\n")
            self._declared[name] = width

    def add_assertion(self, e: BitVecExpr) -> None:
        self.declare(var_widths(e))
        self._write(f"(assert {emit_term(e, as_bool=True)})\n")

    def push(self) -> None:
        # declare-const is scoped: remember what pop() will undo
        self._decl_scopes.append(dict(self._declared))
        self._write("(push 1)\n")

    def pop(self) -> None:
        if self._decl_scopes:
            self._declared = self._decl_scopes.pop()
        self._write("(pop 1)\n")

    def check_sat(self) -> Status:
        self._write("(check-sat)\n")
        line = self._read_line()
        if line.startswith("(error"):
            raise SolverOutputError(line)
        try:
            return Status(line)
        except ValueError as exc:
            raise SolverOutputError(f"unexpected check-sat reply {line!r}") from exc

    def get_values(self, names: Sequence[str]) -> dict[str, int]:
        if not names:
            return {}
        self._write(f"(get-value ({' '.join(names)}))\n")
        reply = self._read_balanced()
        if reply.startswith("(error"):
            raise SolverOutputError(reply)
        widths = {n: self._declared[n] for n in names if n in self._declared}
        forms = _nest(_tokenize(reply))
        return _parse_model_forms(forms, widths)

    def check_script(self, script: Script) -> SolverVerdict:
        """Run a whole script inside push/pop, as one timed query."""
        start = time.monotonic()
        self.push()
        try:
            self.declare(dict(script.variables))
            for a in script.assertions:
                self.add_assertion(a)
            try:
                status = self.check_sat()
            except SolverFailure:
                return SolverVerdict(Status.TIMEOUT, None, time.monotonic() - start)
            model = None
            if status is Status.SAT and script.model_vars:
                model = self.get_values(list(script.model_vars))
            return SolverVerdict(status, model, time.monotonic() - start)
        finally:
            if self._proc.poll() is None:
                self.pop()

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._write("(exit)\n")
            except SolverFailure:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._proc.stdin:
            self._proc.stdin.close()
        if self._proc.stdout:
            self._proc.stdout.close()


def eval_constraints(constraints: Iterable[BitVecExpr], assignment: Mapping[str, int]) -> bool:
    return eval_expr(and_all(constraints), assignment) == 1


def _repo_root_candidates() -> list[Path]:
    here = Path(__file__).resolve()
    return [p for p in (here.parents[2], here.parents[3] if len(here.parents) > 3 else None, Path.cwd()) if p]


def bundled_wrapper_path() -> Path | None:
    """Locate tools/z3-smt2/z3smt2.cjs relative to a source checkout."""
    for root in _repo_root_candidates():
        cand = root / "tools" / "z3-smt2" / "z3smt2.cjs"
        if cand.is_file():
            return cand
    return None


def find_default_solver(incremental: bool = False) -> list[str] | None:
    """Pick a solver command: env override, a binary on PATH, or the
    bundled z3-smt2 wrapper (requires node and an `npm install` next to it).
    """
    env = os.environ.get(SOLVER_ENV_VAR)
    if env:
        argv = shlex.split(env)
        if incremental and argv and Path(argv[-1]).name == "z3smt2.cjs":
            argv = argv + ["-i"]
        return argv
    if shutil.which("z3"):
        return ["z3", "-in"]
    if shutil.which("bitwuzla"):
        return ["bitwuzla"]
    if shutil.which("cvc5"):
        argv = ["cvc5", "--lang", "smt2"]
        return argv + ["--incremental"] if incremental else argv
    wrapper = bundled_wrapper_path()
    node = shutil.which("node")
    if wrapper and node:
        argv = [node, str(wrapper)]
        return argv + ["-i"] if incremental else argv
    return None

"""Miniature concolic executor over a toy register VM.

The VM has eight 64-bit registers, a flat little-endian byte memory, and a
textual assembly format (one instruction per line, ``;`` comments,
``label:`` definitions, ``.data`` directives). Input bytes enter through
the ``input`` instruction, one fresh 8-bit symbol per byte.

Execution is concrete throughout; symbolic expressions ride along per
register and per memory byte. A load whose address depends on input either
gets modeled into one read expression over the reachable window (symaddr
on) or concretized (symaddr off). Branches over symbolic data append
constraints to the path predicate; inverting a constraint with the prefix
held produces candidate inputs, which a replay pass verifies.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .bounds import BoundsPolicy, MemoryBounds, resolve_bounds
from .expr import (
    BinOp,
    BitVecExpr,
    Binary,
    Const,
    Extract,
    Unary,
    UnOp,
    Var,
    binop,
    eval_expr,
    var_widths,
)
from .memmodel import Strategy, model_read, snapshot_from_memory
from .smtlib import (
    Script,
    Session,
    SolverError,
    SolverFailure,
    Status,
    check,
)

WORD = 64
MASK64 = (1 << 64) - 1
N_REGS = 8
DEFAULT_MEM_SIZE = 1 << 20
INPUT_VAR_PREFIX = "in_"

_CONTROL_OPS = frozenset({"jeq", "jne", "jult", "jule", "jmp", "jtab", "abort", "halt"})
_COND_OPS = frozenset({"jeq", "jne", "jult", "jule"})
_LOAD_RE = re.compile(r"^load([1248])$")
_STORE_RE = re.compile(r"^store([1248])$")


class MalformedProgram(Exception):
    pass


class RunStatus(Enum):
    HALT = "halt"
    ABORT = "abort"
    FAULT = "fault"


@dataclass(frozen=True)
class MemRef:
    """base + index*scale + disp addressing."""

    base: int | None = None
    index: int | None = None
    scale: int = 1
    disp: int = 0


@dataclass(frozen=True)
class Instr:
    op: str
    line: int
    rd: int | None = None
    rs: int | None = None
    imm: int | None = None
    mem: MemRef | None = None
    size: int | None = None
    target: int | None = None
    count: int | None = None


@dataclass
class Program:
    instrs: list[Instr]
    labels: dict[str, int]
    data: list[tuple[int, bytes]]
    mem_size: int = DEFAULT_MEM_SIZE

    def __post_init__(self) -> None:
        for addr, blob in self.data:
            if addr < 0 or addr + len(blob) > self.mem_size:
                raise MalformedProgram(f".data at {addr:#x} outside memory")
        spans = sorted((a, a + len(b)) for a, b in self.data)
        for (_, end), (start, _) in zip(spans, spans[1:]):
            if start < end:
                raise MalformedProgram("overlapping .data regions")
        self._leaders = self._compute_leaders()

    def _compute_leaders(self) -> list[int]:
        leaders = {0} | set(self.labels.values())
        for i, ins in enumerate(self.instrs):
            if ins.op in _CONTROL_OPS and i + 1 < len(self.instrs):
                leaders.add(i + 1)
        ordered = sorted(x for x in leaders if x < len(self.instrs))
        block_of = []
        cur = 0
        for i in range(len(self.instrs)):
            while cur + 1 < len(ordered) and ordered[cur + 1] <= i:
                cur += 1
            block_of.append(ordered[cur] if ordered else 0)
        return block_of

    def block_of(self, instr_index: int) -> int:
        return self._leaders[instr_index]

    @property
    def block_count(self) -> int:
        return len(set(self._leaders))

    def initial_memory(self) -> bytearray:
        mem = bytearray(self.mem_size)
        for addr, blob in self.data:
            mem[addr : addr + len(blob)] = blob
        return mem


# ---------------------------------------------------------------------------
# Assembler
# ---------------------------------------------------------------------------

def _parse_int(tok: str, line: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise MalformedProgram(f"line {line}: bad number {tok!r}") from None


def _parse_reg(tok: str, line: int) -> int:
    m = re.fullmatch(r"r([0-9]+)", tok.strip())
    if not m or not 0 <= int(m.group(1)) < N_REGS:
        raise MalformedProgram(f"line {line}: bad register {tok!r}")
    return int(m.group(1))


def _parse_memref(tok: str, line: int) -> MemRef:
    tok = tok.strip()
    if not (tok.startswith("[") and tok.endswith("]")):
        raise MalformedProgram(f"line {line}: bad memory operand {tok!r}")
    inner = tok[1:-1].replace("-", "+-")
    base = index = None
    scale = 1
    disp = 0
    for part in inner.split("+"):
        part = part.strip()
        if not part:
            continue
        if "*" in part:
            if index is not None:
                raise MalformedProgram(f"line {line}: two index terms")
            reg_tok, scale_tok = part.split("*", 1)
            index = _parse_reg(reg_tok, line)
            scale = _parse_int(scale_tok, line)
            if scale not in (1, 2, 4, 8):
                raise MalformedProgram(f"line {line}: scale must be 1/2/4/8")
        elif re.fullmatch(r"-?r[0-9]+", part):
            if part.startswith("-"):
                raise MalformedProgram(f"line {line}: cannot negate a register")
            if base is not None:
                raise MalformedProgram(f"line {line}: two base registers")
            base = _parse_reg(part, line)
        else:
            disp += _parse_int(part, line)
    if base is None and index is None:
        raise MalformedProgram(f"line {line}: memory operand needs a register")
    return MemRef(base=base, index=index, scale=scale, disp=disp)


def _parse_data(rest: str, line: int, labels_pending: list[tuple[str, int, int]]) -> tuple[int, bytes]:
    if ":" not in rest:
        raise MalformedProgram(f"line {line}: .data needs 'addr: bytes'")
    addr_tok, payload = rest.split(":", 1)
    addr = _parse_int(addr_tok.strip(), line)
    blob = bytearray()
    for tok in payload.split():
        if tok.startswith("@"):
            # 8-byte little-endian reference to a code label, resolved later
            labels_pending.append((tok[1:], addr + len(blob), line))
            blob.extend(b"\x00" * 8)
        else:
            if not re.fullmatch(r"[0-9a-fA-F]{1,2}", tok):
                raise MalformedProgram(f"line {line}: bad data byte {tok!r}")
            blob.append(int(tok, 16))
    return addr, bytes(blob)


def assemble(text: str, mem_size: int = DEFAULT_MEM_SIZE) -> Program:
    """Assemble the textual format into a Program.

    Raises MalformedProgram on any syntax error, unresolved label, or
    invalid data placement.
    """
    instrs: list[Instr] = []
    labels: dict[str, int] = {}
    data: list[tuple[int, bytes]] = []
    label_refs: list[tuple[str, int, int]] = []  # branch targets (name, instr idx, line)
    data_label_refs: list[tuple[str, int, int]] = []  # label, memory addr, line

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split(";", 1)[0].strip()
        if not stmt:
            continue
        while True:
            m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*):(?!\S)", stmt) or re.match(
                r"^([A-Za-z_][A-Za-z0-9_]*):\s+", stmt
            )
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise MalformedProgram(f"line {lineno}: duplicate label {name!r}")
            labels[name] = len(instrs)
            stmt = stmt[m.end() :].strip()
        if not stmt:
            continue
        if stmt.startswith(".data"):
            data.append(_parse_data(stmt[len(".data") :].strip(), lineno, data_label_refs))
            continue

        parts = stmt.split(None, 1)
        op = parts[0].lower()
        rest = parts[1].strip() if len(parts) > 1 else ""
        args = [a.strip() for a in _split_args(rest)] if rest else []

        def need(n: int) -> None:
            if len(args) != n:
                raise MalformedProgram(f"line {lineno}: {op} expects {n} operand(s)")

        if op == "const":
            need(2)
            instrs.append(
                Instr("const", lineno, rd=_parse_reg(args[0], lineno), imm=_parse_int(args[1], lineno) & MASK64)
            )
        elif op in ("mov", "add", "sub", "mul", "cmp"):
            need(2)
            instrs.append(
                Instr(op, lineno, rd=_parse_reg(args[0], lineno), rs=_parse_reg(args[1], lineno))
            )
        elif op == "input":
            need(1)
            instrs.append(Instr("input", lineno, rd=_parse_reg(args[0], lineno)))
        elif (m := _LOAD_RE.match(op)) is not None:
            need(2)
            instrs.append(
                Instr(
                    "load", lineno,
                    rd=_parse_reg(args[0], lineno),
                    mem=_parse_memref(args[1], lineno),
                    size=int(m.group(1)),
                )
            )
        elif (m := _STORE_RE.match(op)) is not None:
            need(2)
            instrs.append(
                Instr(
                    "store", lineno,
                    rs=_parse_reg(args[1], lineno),
                    mem=_parse_memref(args[0], lineno),
                    size=int(m.group(1)),
                )
            )
        elif op in _COND_OPS or op == "jmp":
            need(1)
            label_refs.append((args[0], len(instrs), lineno))
            instrs.append(Instr(op, lineno, target=-1))
        elif op == "jtab":
            need(2)
            instrs.append(
                Instr(
                    "jtab", lineno,
                    mem=_parse_memref(args[0], lineno),
                    count=_parse_int(args[1], lineno),
                )
            )
        elif op in ("abort", "halt"):
            need(0)
            instrs.append(Instr(op, lineno))
        else:
            raise MalformedProgram(f"line {lineno}: unknown instruction {op!r}")

    resolved: list[Instr] = list(instrs)
    for name, idx, lineno in label_refs:
        if name not in labels:
            raise MalformedProgram(f"line {lineno}: unresolved label {name!r}")
        resolved[idx] = replace(resolved[idx], target=labels[name])

    final_data: list[tuple[int, bytes]] = []
    for addr, blob in data:
        patched = bytearray(blob)
        for name, ref_addr, lineno in data_label_refs:
            if addr <= ref_addr < addr + len(blob):
                if name not in labels:
                    raise MalformedProgram(f"line {lineno}: unresolved label {name!r}")
                off = ref_addr - addr
                patched[off : off + 8] = labels[name].to_bytes(8, "little")
        final_data.append((addr, bytes(patched)))

    return Program(instrs=resolved, labels=labels, data=final_data, mem_size=mem_size)


def _split_args(rest: str) -> list[str]:
    """Split on commas outside brackets."""
    out = []
    depth = 0
    cur = []
    for c in rest:
        if c == "[":
            depth += 1
        elif c == "]":
            depth -= 1
        if c == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(c)
    if cur:
        out.append("".join(cur))
    return out


def load_program(path: str | Path, mem_size: int = DEFAULT_MEM_SIZE) -> Program:
    return assemble(Path(path).read_text(), mem_size=mem_size)


# ---------------------------------------------------------------------------
# Path predicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchConstraint:
    expr: BitVecExpr  # width 1
    taken: bool
    site: int  # instruction index

    def held(self) -> BitVecExpr:
        """The constraint as it held on the recording path."""
        return self.expr if self.taken else Unary(UnOp.NOT, self.expr)

    def inverted(self) -> BitVecExpr:
        return Unary(UnOp.NOT, self.expr) if self.taken else self.expr


@dataclass(frozen=True)
class ReadBoundConstraint:
    expr: BitVecExpr  # width 1

    def held(self) -> BitVecExpr:
        return self.expr


Constraint = BranchConstraint | ReadBoundConstraint


@dataclass
class PathPredicate:
    constraints: list[Constraint]
    input_len: int
    status: RunStatus

    def held_exprs(self, upto: int | None = None) -> list[BitVecExpr]:
        items = self.constraints if upto is None else self.constraints[:upto]
        return [c.held() for c in items]

    def satisfied_by(self, input_bytes: bytes) -> bool:
        assignment = input_assignment(input_bytes)
        return all(eval_expr(c.held(), assignment) == 1 for c in self.constraints)


def input_assignment(input_bytes: bytes) -> dict[str, int]:
    return {f"{INPUT_VAR_PREFIX}{k}": b for k, b in enumerate(input_bytes)}


def slice_predicate(pp: PathPredicate, target: BitVecExpr) -> PathPredicate:
    """Constraints transitively sharing input variables with the target.

    Union-find over variable co-occurrence: variables appearing in one
    constraint merge into one component; a constraint stays if it touches
    any component of the target's variables.
    """
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        root = x
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    con_vars: list[set[str]] = []
    for c in pp.constraints:
        names = set(var_widths(c.held()))
        con_vars.append(names)
        names_iter = iter(names)
        first = next(names_iter, None)
        if first is not None:
            for other in names_iter:
                union(first, other)

    target_roots = {find(v) for v in var_widths(target) if v in parent}
    kept = [
        c
        for c, names in zip(pp.constraints, con_vars)
        if any(v in parent and find(v) in target_roots for v in names)
    ]
    return PathPredicate(constraints=kept, input_len=pp.input_len, status=pp.status)


def jump_table_targets(
    pp: PathPredicate,
    table_base: int,
    entries: Sequence[int],
    idx_expr: BitVecExpr,
) -> list[tuple[int, BitVecExpr]]:
    """Per-entry (target, index-equality constraint) pairs for a jump table.

    No read expression is modeled for the jump itself: each possible target
    gets its own path constraint. A concrete index yields the single taken
    pair. ``pp`` and ``table_base`` identify the site for callers; the
    constraints depend only on the index expression.
    """
    del pp, table_base
    width = idx_expr.width
    if not var_widths(idx_expr):
        k = eval_expr(idx_expr, {})
        return [(entries[k], binop(BinOp.EQ, idx_expr, Const(k, width)))]
    return [
        (target, binop(BinOp.EQ, idx_expr, Const(k, width)))
        for k, target in enumerate(entries)
    ]


# ---------------------------------------------------------------------------
# Concolic execution
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    symaddr: bool = True
    strategy: Strategy = Strategy.LINEARIZED
    bounds: BoundsPolicy = field(default_factory=BoundsPolicy)
    solver_cmd: str | Sequence[str] | None = None  # for solver-assisted bounds
    max_steps: int = 1_000_000
    record_read_bounds: bool = False


@dataclass
class RunStats:
    status: RunStatus = RunStatus.HALT
    fault_reason: str | None = None
    instructions: int = 0
    total_symbolic_branches: int = 0
    unique_symbolic_sites: set[int] = field(default_factory=set)
    reads_modeled: int = 0
    reads_concretized: int = 0
    blocks: set[int] = field(default_factory=set)
    jtab_entries: dict[int, tuple[int, ...]] = field(default_factory=dict)


class _Fault(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class _VM:
    def __init__(self, program: Program, input_bytes: bytes, cfg: RunConfig):
        self.program = program
        self.input = input_bytes
        self.cfg = cfg
        self.regs = [0] * N_REGS
        self.rsym: list[BitVecExpr | None] = [None] * N_REGS
        self.mem = program.initial_memory()
        self.shadow: dict[int, BitVecExpr] = {}
        self.cursor = 0
        self.pc = 0
        self.cmp_state: tuple[int, int, BitVecExpr | None, BitVecExpr | None] | None = None
        self.constraints: list[Constraint] = []
        self.trace: list[int] = []
        self.stats = RunStats()
        self._session: Session | None = None

    # -- symbolic helpers ---------------------------------------------------

    def _sym_or_const(self, value: int, sym: BitVecExpr | None) -> BitVecExpr:
        return sym if sym is not None else Const(value, WORD)

    def _addr_parts(self, mem: MemRef) -> tuple[int, BitVecExpr | None]:
        """Concrete address plus the symbolic expression when any part is."""
        concrete = 0
        any_sym = False
        if mem.base is not None:
            concrete += self.regs[mem.base]
            any_sym |= self.rsym[mem.base] is not None
        if mem.index is not None:
            concrete += self.regs[mem.index] * mem.scale
            any_sym |= self.rsym[mem.index] is not None
        concrete = (concrete + mem.disp) & MASK64
        if not any_sym:
            return concrete, None
        # base + index*scale + disp, concrete parts as constants
        terms: list[BitVecExpr] = []
        if mem.base is not None:
            terms.append(self._sym_or_const(self.regs[mem.base], self.rsym[mem.base]))
        if mem.index is not None:
            idx = self._sym_or_const(self.regs[mem.index], self.rsym[mem.index])
            terms.append(binop(BinOp.MUL, idx, Const(mem.scale, WORD)))
        if mem.disp:
            terms.append(Const(mem.disp, WORD))
        expr = terms[0]
        for t in terms[1:]:
            expr = binop(BinOp.ADD, expr, t)
        return concrete, expr

    def _shadow_value(self, addr: int, size: int) -> BitVecExpr | None:
        if not any((addr + i) in self.shadow for i in range(size)):
            return None
        from .expr import Concat

        acc: BitVecExpr = self.shadow.get(addr, Const(self.mem[addr], 8))
        for i in range(1, size):
            byte = self.shadow.get(addr + i, Const(self.mem[addr + i], 8))
            acc = Concat(byte, acc)
        return acc

    def _extend_to_word(self, e: BitVecExpr) -> BitVecExpr:
        if e.width == WORD:
            return e
        return e.zext(WORD - e.width)

    def _bounds_session(self) -> Session | None:
        if not (self.cfg.bounds.use_solver and self.cfg.solver_cmd):
            return None
        if self._session is None:
            self._session = Session(self.cfg.solver_cmd, timeout=self.cfg.bounds.solver_timeout)
        return self._session

    # -- memory accesses ----------------------------------------------------

    def _check_range(self, addr: int, size: int) -> None:
        if addr + size > len(self.mem):
            raise _Fault(f"memory access at {addr:#x}+{size} out of bounds")

    def _do_load(self, ins: Instr) -> None:
        size = ins.size or 1
        concrete_addr, addr_expr = self._addr_parts(ins.mem)  # type: ignore[arg-type]
        self._check_range(concrete_addr, size)
        value = int.from_bytes(self.mem[concrete_addr : concrete_addr + size], "little")
        self.regs[ins.rd] = value  # type: ignore[index]

        if addr_expr is None:
            sym = self._shadow_value(concrete_addr, size)
            self.rsym[ins.rd] = self._extend_to_word(sym) if sym is not None else None
            return
        if not self.cfg.symaddr:
            # default engines lose the dependency here
            self.rsym[ins.rd] = None
            self.stats.reads_concretized += 1
            return

        pp_so_far = PathPredicate(list(self.constraints), len(self.input), RunStatus.HALT)
        path_slice = [c.held() for c in slice_predicate(pp_so_far, addr_expr).constraints]
        bounds = resolve_bounds(
            addr_expr,
            concrete_addr,
            size,
            path_slice,
            self.cfg.bounds,
            session=self._bounds_session(),
        )
        bounds = self._clip_to_memory(bounds, concrete_addr)
        snap = snapshot_from_memory(self.mem, self.shadow, bounds, concrete_addr)
        modeled = model_read(snap, addr_expr, bounds, self.cfg.strategy)
        self.rsym[ins.rd] = self._extend_to_word(modeled.expr)
        self.stats.reads_modeled += 1
        if self.cfg.record_read_bounds:
            width = addr_expr.width
            in_window = binop(
                BinOp.AND,
                Const(bounds.lower, width).ule(addr_expr),
                addr_expr.ult(Const(bounds.upper, width)),
            )
            self.constraints.append(ReadBoundConstraint(in_window))

    def _clip_to_memory(self, bounds: MemoryBounds, concrete_addr: int) -> MemoryBounds:
        size = bounds.access_size
        lower, upper = bounds.lower, bounds.upper
        if upper > len(self.mem):
            upper = lower + ((len(self.mem) - lower) // size) * size
        if upper <= concrete_addr:
            upper = concrete_addr + size
        if lower == bounds.lower and upper == bounds.upper:
            return bounds
        return MemoryBounds(
            lower=lower,
            upper=upper,
            access_size=size,
            method_lower=bounds.method_lower,
            method_upper=bounds.method_upper,
        )

    def _do_store(self, ins: Instr) -> None:
        size = ins.size or 1
        concrete_addr, addr_expr = self._addr_parts(ins.mem)  # type: ignore[arg-type]
        if addr_expr is not None and self.cfg.symaddr:
            # writes at symbolic addresses are out of modeling scope: refuse
            # loudly instead of silently dropping behavior
            raise _Fault(f"symbolic store address at instruction {self.pc}")
        self._check_range(concrete_addr, size)
        value = self.regs[ins.rs] & ((1 << (8 * size)) - 1)  # type: ignore[index]
        self.mem[concrete_addr : concrete_addr + size] = value.to_bytes(size, "little")
        vsym = self.rsym[ins.rs]  # type: ignore[index]
        for i in range(size):
            if vsym is None:
                self.shadow.pop(concrete_addr + i, None)
            else:
                self.shadow[concrete_addr + i] = Extract(8 * i + 7, 8 * i, vsym)

    # -- instruction dispatch -------------------------------------------------

    def _branch_cond(self, op: str) -> tuple[bool, BitVecExpr | None]:
        if self.cmp_state is None:
            raise _Fault(f"{op} without a preceding cmp")
        va, vb, sa, sb = self.cmp_state
        if op == "jeq":
            outcome = va == vb
        elif op == "jne":
            outcome = va != vb
        elif op == "jult":
            outcome = va < vb
        else:
            outcome = va <= vb
        if sa is None and sb is None:
            return outcome, None
        lhs = self._sym_or_const(va, sa)
        rhs = self._sym_or_const(vb, sb)
        if op == "jeq":
            cond: BitVecExpr = binop(BinOp.EQ, lhs, rhs)
        elif op == "jne":
            cond = Unary(UnOp.NOT, binop(BinOp.EQ, lhs, rhs))
        elif op == "jult":
            cond = binop(BinOp.ULT, lhs, rhs)
        else:
            cond = binop(BinOp.ULE, lhs, rhs)
        return outcome, cond

    def step(self) -> bool:
        """Execute one instruction; False when the run has ended."""
        if not 0 <= self.pc < len(self.program.instrs):
            raise _Fault(f"execution fell outside the program at {self.pc}")
        ins = self.program.instrs[self.pc]
        self.trace.append(self.pc)
        self.stats.instructions += 1
        self.stats.blocks.add(self.program.block_of(self.pc))
        next_pc = self.pc + 1

        op = ins.op
        if op == "const":
            self.regs[ins.rd] = ins.imm  # type: ignore[index]
            self.rsym[ins.rd] = None  # type: ignore[index]
        elif op == "mov":
            self.regs[ins.rd] = self.regs[ins.rs]  # type: ignore[index]
            self.rsym[ins.rd] = self.rsym[ins.rs]  # type: ignore[index]
        elif op in ("add", "sub", "mul"):
            va, vb = self.regs[ins.rd], self.regs[ins.rs]  # type: ignore[index]
            sa, sb = self.rsym[ins.rd], self.rsym[ins.rs]  # type: ignore[index]
            if op == "add":
                self.regs[ins.rd] = (va + vb) & MASK64
                bop = BinOp.ADD
            elif op == "sub":
                self.regs[ins.rd] = (va - vb) & MASK64
                bop = BinOp.SUB
            else:
                self.regs[ins.rd] = (va * vb) & MASK64
                bop = BinOp.MUL
            if sa is None and sb is None:
                self.rsym[ins.rd] = None
            else:
                self.rsym[ins.rd] = binop(bop, self._sym_or_const(va, sa), self._sym_or_const(vb, sb))
        elif op == "input":
            if self.cursor >= len(self.input):
                raise _Fault("input exhausted")
            byte = self.input[self.cursor]
            self.regs[ins.rd] = byte  # type: ignore[index]
            self.rsym[ins.rd] = Var(f"{INPUT_VAR_PREFIX}{self.cursor}", 8).zext(WORD - 8)
            self.cursor += 1
        elif op == "load":
            self._do_load(ins)
        elif op == "store":
            self._do_store(ins)
        elif op == "cmp":
            self.cmp_state = (
                self.regs[ins.rd],  # type: ignore[index]
                self.regs[ins.rs],  # type: ignore[index]
                self.rsym[ins.rd],  # type: ignore[index]
                self.rsym[ins.rs],  # type: ignore[index]
            )
        elif op in _COND_OPS:
            outcome, cond = self._branch_cond(op)
            if cond is not None:
                self.constraints.append(BranchConstraint(cond, outcome, self.pc))
                self.stats.total_symbolic_branches += 1
                self.stats.unique_symbolic_sites.add(self.pc)
            if outcome:
                next_pc = ins.target  # type: ignore[assignment]
        elif op == "jmp":
            next_pc = ins.target  # type: ignore[assignment]
        elif op == "jtab":
            next_pc = self._do_jtab(ins)
        elif op == "abort":
            self.stats.status = RunStatus.ABORT
            return False
        elif op == "halt":
            self.stats.status = RunStatus.HALT
            return False
        else:  # pragma: no cover
            raise _Fault(f"unhandled op {op}")

        self.pc = next_pc
        return True

    def _do_jtab(self, ins: Instr) -> int:
        mem = ins.mem
        assert mem is not None and ins.count is not None
        if mem.index is None:
            raise _Fault("jtab needs an index register")
        if mem.base is not None and self.rsym[mem.base] is not None:
            raise _Fault("jtab table base must be concrete")
        base_val = self.regs[mem.base] if mem.base is not None else 0
        table_base = (base_val + mem.disp) & MASK64
        k = self.regs[mem.index]
        if k >= ins.count:
            raise _Fault(f"jump table index {k} out of range 0..{ins.count - 1}")
        entries = []
        for j in range(ins.count):
            a = (table_base + j * mem.scale) & MASK64
            self._check_range(a, 8)
            entries.append(int.from_bytes(self.mem[a : a + 8], "little"))
        target = entries[k]
        if not 0 <= target < len(self.program.instrs):
            raise _Fault(f"jump table entry {k} points outside the program")
        idx_sym = self.rsym[mem.index]
        if idx_sym is not None:
            self.constraints.append(
                BranchConstraint(binop(BinOp.EQ, idx_sym, Const(k, WORD)), True, self.pc)
            )
            self.stats.total_symbolic_branches += 1
            self.stats.unique_symbolic_sites.add(self.pc)
            self.stats.jtab_entries[self.pc] = tuple(entries)
        return target

    def run(self) -> None:
        try:
            steps = 0
            while True:
                steps += 1
                if steps > self.cfg.max_steps:
                    raise _Fault("step limit exceeded")
                if not self.step():
                    break
        except _Fault as f:
            self.stats.status = RunStatus.FAULT
            self.stats.fault_reason = f.reason
        finally:
            if self._session is not None:
                self._session.close()


def run_concolic(
    program: Program,
    input_bytes: bytes,
    cfg: RunConfig | None = None,
) -> tuple[list[int], PathPredicate, RunStats]:
    """One concrete run with symbolic tracking.

    Returns the instruction trace, the path predicate, and run statistics.
    The run's own input satisfies every recorded constraint.
    """
    if not input_bytes:
        raise ValueError("input must be non-empty")
    vm = _VM(program, input_bytes, cfg or RunConfig())
    vm.run()
    pp = PathPredicate(
        constraints=vm.constraints,
        input_len=len(input_bytes),
        status=vm.stats.status,
    )
    return vm.trace, pp, vm.stats


# ---------------------------------------------------------------------------
# Branch inversion, replay, exploration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratedInput:
    data: bytes
    site: int
    constraint_index: int
    optimistic: bool = False


class InvertStatus(Enum):
    SAT = "sat"
    UNSAT = "unsat"
    INCONCLUSIVE = "inconclusive"


@dataclass
class InvertResult:
    status: InvertStatus
    generated: GeneratedInput | None = None


def invert_branch(
    pp: PathPredicate,
    index: int,
    optimistic: bool,
    solver_cmd: str | Sequence[str],
    timeout: float | None,
    original_input: bytes,
    replacement: BitVecExpr | None = None,
) -> InvertResult:
    """Solve for an input flipping constraint ``index``.

    Normal mode keeps every constraint before the target; optimistic mode
    solves the flipped constraint alone. ``replacement`` substitutes the
    flipped condition (used to steer jump tables to a chosen entry). Bytes
    the model leaves unconstrained keep their original values.
    """
    c = pp.constraints[index]
    if not isinstance(c, BranchConstraint):
        raise ValueError(f"constraint {index} is not a branch")
    goal = replacement if replacement is not None else c.inverted()
    assertions = [goal] if optimistic else pp.held_exprs(upto=index) + [goal]
    script = Script.from_assertions(assertions, want_model=True)
    verdict = check(script, solver_cmd, timeout)
    if verdict.status is Status.UNSAT:
        return InvertResult(InvertStatus.UNSAT)
    if verdict.status is not Status.SAT:
        return InvertResult(InvertStatus.INCONCLUSIVE)
    data = bytearray(original_input)
    for name, value in (verdict.model or {}).items():
        if name.startswith(INPUT_VAR_PREFIX):
            k = int(name[len(INPUT_VAR_PREFIX) :])
            if 0 <= k < len(data):
                data[k] = value & 0xFF
    return InvertResult(
        InvertStatus.SAT,
        GeneratedInput(bytes(data), site=c.site, constraint_index=index, optimistic=optimistic),
    )


@dataclass
class ReplayResult:
    correct: bool
    diverged_site: int | None
    trace: list[int]
    predicate: PathPredicate
    stats: RunStats


def replay_check(
    program: Program,
    original_pp: PathPredicate,
    gi: GeneratedInput,
    cfg: RunConfig | None = None,
) -> ReplayResult:
    """Rerun on the generated input and verify the inversion.

    Correct means every branch before the inverted one matches the original
    trace (site and direction) and the target constraint flipped.
    """
    trace, new_pp, stats = run_concolic(program, gi.data, cfg)
    orig_branches = [
        (i, c) for i, c in enumerate(original_pp.constraints) if isinstance(c, BranchConstraint)
    ]
    prefix = [(i, c) for i, c in orig_branches if i < gi.constraint_index]
    target = original_pp.constraints[gi.constraint_index]
    assert isinstance(target, BranchConstraint)

    new_branches = [c for c in new_pp.constraints if isinstance(c, BranchConstraint)]
    for pos, (_, expected) in enumerate(prefix):
        if pos >= len(new_branches):
            return ReplayResult(False, expected.site, trace, new_pp, stats)
        got = new_branches[pos]
        if got.site != expected.site or got.taken != expected.taken:
            return ReplayResult(False, expected.site, trace, new_pp, stats)
    pos = len(prefix)
    if pos >= len(new_branches):
        return ReplayResult(False, target.site, trace, new_pp, stats)
    got = new_branches[pos]
    flipped = got.site == target.site and (
        got.taken != target.taken or got.expr != target.expr
    )
    if not flipped:
        return ReplayResult(False, target.site, trace, new_pp, stats)
    return ReplayResult(True, None, trace, new_pp, stats)


@dataclass
class ExploreConfig:
    run: RunConfig = field(default_factory=RunConfig)
    solver_cmd: str | Sequence[str] | None = None
    timeout: float = 90.0
    optimistic: bool = False
    static_cache: bool = True
    max_queries: int | None = None
    jobs: int = 1


@dataclass
class ExploreReport:
    generated: list[GeneratedInput]
    replays: list[ReplayResult]
    queries: int = 0
    sat: int = 0
    unsat: int = 0
    inconclusive: int = 0
    wall_time: float = 0.0
    seed_stats: RunStats | None = None
    blocks: set[int] = field(default_factory=set)

    @property
    def correct(self) -> int:
        return sum(1 for r in self.replays if r.correct)

    @property
    def accuracy_pct(self) -> float:
        return 100.0 * self.correct / len(self.replays) if self.replays else 0.0

    @property
    def queries_per_min(self) -> float:
        return self.queries / (self.wall_time / 60.0) if self.wall_time > 0 else 0.0

    def stats_lines(self) -> list[str]:
        return [
            f"status={self.seed_stats.status.value if self.seed_stats else 'unknown'}",
            f"total_branches={self.seed_stats.total_symbolic_branches if self.seed_stats else 0}",
            f"unique_branches={len(self.seed_stats.unique_symbolic_sites) if self.seed_stats else 0}",
            f"reads_modeled={self.seed_stats.reads_modeled if self.seed_stats else 0}",
            f"reads_concretized={self.seed_stats.reads_concretized if self.seed_stats else 0}",
            f"queries={self.queries}",
            f"sat={self.sat}",
            f"unsat={self.unsat}",
            f"inconclusive={self.inconclusive}",
            f"generated={len(self.generated)}",
            f"correct={self.correct}",
            f"accuracy_pct={self.accuracy_pct:.1f}",
            f"queries_per_min={self.queries_per_min:.1f}",
            f"blocks_covered={len(self.blocks)}",
        ]


def _inversion_tasks(
    pp: PathPredicate,
    stats: RunStats,
) -> list[tuple[int, int, BitVecExpr | None, object]]:
    """(constraint index, site, replacement, cache key) per query, in order."""
    tasks: list[tuple[int, int, BitVecExpr | None, object]] = []
    for i, c in enumerate(pp.constraints):
        if not isinstance(c, BranchConstraint):
            continue
        entries = stats.jtab_entries.get(c.site)
        if entries is not None:
            # one query per alternative jump target
            assert isinstance(c.expr, Binary) and c.expr.op is BinOp.EQ
            idx_expr = c.expr.a
            taken_k = c.expr.b
            assert isinstance(taken_k, Const)
            for k in range(len(entries)):
                if k == taken_k.value:
                    continue
                repl = binop(BinOp.EQ, idx_expr, Const(k, idx_expr.width))
                tasks.append((i, c.site, repl, (c.site, k)))
        else:
            tasks.append((i, c.site, None, c.site))
    return tasks


def explore(
    program: Program,
    seed_input: bytes,
    cfg: ExploreConfig,
    out_dir: str | Path | None = None,
) -> ExploreReport:
    """One concolic pass, then invert each symbolic branch in trace order.

    With the static cache on, a site (or jump-table entry) is queried at
    most once after a successful inversion. Per-query failures are recorded
    and never abort the sweep. Coverage unions the seed run with replays of
    every generated input. With ``out_dir`` set, corpus files are written as
    ``out-<site>-<n>.bin``.
    """
    if cfg.solver_cmd is None:
        raise SolverFailure("explore needs a solver command")
    start = time.monotonic()
    trace, pp, seed_stats = run_concolic(program, seed_input, cfg.run)
    report = ExploreReport(generated=[], replays=[], seed_stats=seed_stats)
    report.blocks |= seed_stats.blocks

    tasks = _inversion_tasks(pp, seed_stats)
    # Occurrences per cache key, in trace order. The cache drops a key after
    # a successful inversion; a failed key retries at its next occurrence.
    occurrences: dict[object, list[tuple[int, int, BitVecExpr | None, object]]] = {}
    key_order: list[object] = []
    for task in tasks:
        if task[3] not in occurrences:
            key_order.append(task[3])
        occurrences.setdefault(task[3], []).append(task)

    def solve(task: tuple[int, int, BitVecExpr | None, object]) -> InvertResult | None:
        index, _site, repl, _key = task
        try:
            res = invert_branch(
                pp, index, False, cfg.solver_cmd, cfg.timeout, seed_input, replacement=repl
            )
            if res.status is not InvertStatus.SAT and cfg.optimistic:
                opt = invert_branch(
                    pp, index, True, cfg.solver_cmd, cfg.timeout, seed_input, replacement=repl
                )
                if opt.status is InvertStatus.SAT:
                    return opt
            return res
        except SolverError:
            return None

    def record(res: InvertResult | None) -> GeneratedInput | None:
        report.queries += 1
        if res is None or res.status is InvertStatus.INCONCLUSIVE:
            report.inconclusive += 1
            return None
        if res.status is InvertStatus.UNSAT:
            report.unsat += 1
            return None
        report.sat += 1
        return res.generated

    per_site_counter: dict[int, int] = {}

    def emit(gi: GeneratedInput) -> None:
        report.generated.append(gi)
        replay = replay_check(program, pp, gi, cfg.run)
        report.replays.append(replay)
        report.blocks |= replay.stats.blocks
        if out_dir is not None:
            n = per_site_counter.get(gi.site, 0)
            per_site_counter[gi.site] = n + 1
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / f"out-{gi.site:04d}-{n}.bin").write_bytes(gi.data)

    attempt: dict[object, int] = {k: 0 for k in key_order}
    done: set[object] = set()
    budget = cfg.max_queries if cfg.max_queries is not None else len(tasks)
    while budget > 0:
        wave = []
        for key in key_order:
            if cfg.static_cache and key in done:
                continue
            occ = occurrences[key]
            if attempt[key] >= len(occ):
                continue
            wave.append(occ[attempt[key]])
            attempt[key] += 1
        wave = wave[:budget]
        if not wave:
            break
        budget -= len(wave)
        if cfg.jobs > 1 and len(wave) > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(solve, wave))
        else:
            results = [solve(t) for t in wave]
        for task, res in zip(wave, results):
            gi = record(res)
            if gi is not None:
                done.add(task[3])
                emit(gi)

    report.wall_time = time.monotonic() - start
    return report

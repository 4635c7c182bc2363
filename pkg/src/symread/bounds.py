"""Approximation of the address window a symbolic access can reach.

Three methods, combined by ``resolve_bounds``:

* AST analysis: the variable-free part of the address expression, decomposed
  into additive terms; the largest term is taken as the table base (lower
  bound only).
* Solver binary search: extremal satisfiable address values under the
  relevant path-predicate slice, clamped to a configured byte limit.
* Constant window: a fixed element count centered on the concrete address,
  used when everything else fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Literal, Sequence

from .expr import (
    BitVecExpr,
    Const,
    additive_terms,
    eval_expr,
    split_concrete_symbolic,
    var_widths,
)
from .smtlib import Session, SolverFailure, Status

ACCESS_SIZES = (1, 2, 4, 8, 16, 32)


class BoundsMethod(Enum):
    AST_ANALYSIS = "ast"
    SOLVER_SEARCH = "solver"
    CONSTANT_WINDOW = "const"


@dataclass(frozen=True)
class MemoryBounds:
    """Resolved [lower, upper) byte window, with per-side provenance."""

    lower: int
    upper: int
    access_size: int
    method_lower: BoundsMethod
    method_upper: BoundsMethod

    def __post_init__(self) -> None:
        if self.access_size not in ACCESS_SIZES:
            raise ValueError(f"unsupported access size {self.access_size}")
        if self.lower < 0 or self.upper <= self.lower:
            raise ValueError(f"empty or negative window [{self.lower:#x}, {self.upper:#x})")
        if (self.upper - self.lower) % self.access_size:
            raise ValueError("window length must be a multiple of the access size")

    @property
    def element_count(self) -> int:
        return (self.upper - self.lower) // self.access_size

    def offsets(self) -> range:
        return range(0, self.upper - self.lower, self.access_size)


@dataclass(frozen=True)
class BoundsPolicy:
    use_solver: bool = False
    max_elements: int = 64
    solver_limit_bytes: int = 4096
    solver_timeout: float | None = None
    ast_enabled: bool = True  # off: force the constant window for the lower bound

    def __post_init__(self) -> None:
        if self.max_elements < 2:
            raise ValueError("max_elements must be at least 2")
        if self.solver_limit_bytes < 1:
            raise ValueError("solver_limit_bytes must be positive")


def constant_window(concrete_addr: int, access_size: int, n_elements: int) -> MemoryBounds:
    """Fixed-length window of n_elements accesses around the concrete address.

    Half the elements land on each side; the lower edge clamps at zero with
    the window length preserved.
    """
    if n_elements < 2:
        raise ValueError("n_elements must be at least 2")
    span = n_elements * access_size
    lower = max(concrete_addr - (n_elements // 2) * access_size, 0)
    return MemoryBounds(
        lower=lower,
        upper=lower + span,
        access_size=access_size,
        method_lower=BoundsMethod.CONSTANT_WINDOW,
        method_upper=BoundsMethod.CONSTANT_WINDOW,
    )


def infer_lower_bound_ast(
    addr_expr: BitVecExpr,
    concrete_addr: int,
    sanity_span: int = 4096,
) -> int | None:
    """Largest additive term of the concrete part, taken as the table base.

    Returns None when the expression has no concrete part, when the chosen
    base lies above the concrete address, or when the distance from base to
    concrete address exceeds ``sanity_span`` (a base that far away does not
    look like the start of the accessed table).
    """
    concrete_part, _ = split_concrete_symbolic(addr_expr)
    if concrete_part is None:
        return None
    base = max(eval_expr(term, {}) for term in additive_terms(concrete_part))
    if base > concrete_addr:
        return None
    if concrete_addr - base > sanity_span:
        return None
    return base


def _search_extremum(
    session: Session,
    constraints: Sequence[BitVecExpr],
    addr_expr: BitVecExpr,
    direction: Literal["min", "max"],
    concrete_addr: int,
    limit_bytes: int,
) -> int:
    width = addr_expr.width
    full = (1 << width) - 1

    def sat_with(cond: BitVecExpr) -> dict[str, int] | None:
        """One push/assert/check/pop query; a model if satisfiable."""
        session.push()
        try:
            session.add_assertion(cond)
            status = session.check_sat()
            if status is Status.SAT:
                names = sorted(session._declared)
                return session.get_values(names)
            if status is Status.UNSAT:
                return None
            raise SolverFailure(f"bound search query returned {status.value}")
        finally:
            session.pop()

    session.push()
    try:
        for c in constraints:
            session.add_assertion(c)
        session.declare(var_widths(addr_expr))

        if direction == "max":
            edge = min(concrete_addr + limit_bytes, full)
            if edge < full and sat_with(Const(edge, width).ult(addr_expr)) is not None:
                return edge
            # invariant: P(lo) holds, P(hi + 1) fails, P(v) = sat(addr >= v)
            lo, hi = concrete_addr, edge
            while lo < hi:
                mid = (lo + hi + 1) // 2
                model = sat_with(Const(mid, width).ule(addr_expr))
                if model is None:
                    hi = mid - 1
                else:
                    lo = max(mid, min(eval_expr(addr_expr, model), edge))
            return lo
        else:
            edge = max(concrete_addr - limit_bytes, 0)
            if edge > 0 and sat_with(addr_expr.ult(Const(edge, width))) is not None:
                return edge
            lo, hi = edge, concrete_addr
            while lo < hi:
                mid = (lo + hi) // 2
                model = sat_with(addr_expr.ule(Const(mid, width)))
                if model is None:
                    lo = mid + 1
                else:
                    hi = min(mid, max(eval_expr(addr_expr, model), edge))
            return hi
    finally:
        session.pop()


def solver_bound_search(
    path_slice: Sequence[BitVecExpr],
    addr_expr: BitVecExpr,
    direction: Literal["min", "max"],
    concrete_addr: int,
    limit_bytes: int,
    session: Session,
) -> int:
    """Binary search for the extremal satisfiable address value.

    Queries SAT of ``slice and (addr <=> pivot)`` against one incremental
    session; if the address can cross the window edge, the edge itself is
    reported. An overconstrained address comes back as the concrete value.
    Raises SolverFailure on unknown/timeout so callers can fall back.
    """
    if limit_bytes <= 0:
        raise ValueError("limit_bytes must be positive")
    return _search_extremum(
        session, path_slice, addr_expr, direction, concrete_addr, limit_bytes
    )


def resolve_bounds(
    addr_expr: BitVecExpr,
    concrete_addr: int,
    access_size: int,
    path_slice: Sequence[BitVecExpr],
    policy: BoundsPolicy,
    session: Session | None = None,
) -> MemoryBounds:
    """Combine the three methods into a usable window.

    Lower bound: AST analysis, then solver search (policy permitting), then
    the constant window. Upper bound: solver search or the constant element
    count above the lower bound. The result is clipped to at most
    ``policy.max_elements`` accesses and always contains the concrete
    address on the sampling grid anchored at the lower bound.
    """
    use_solver = policy.use_solver and session is not None

    lower: int | None = None
    method_lower: BoundsMethod | None = None
    if policy.ast_enabled:
        lower = infer_lower_bound_ast(
            addr_expr, concrete_addr, sanity_span=policy.solver_limit_bytes
        )
        method_lower = BoundsMethod.AST_ANALYSIS if lower is not None else None

    if lower is None and use_solver:
        try:
            lower = solver_bound_search(
                path_slice, addr_expr, "min", concrete_addr,
                policy.solver_limit_bytes, session,
            )
            method_lower = BoundsMethod.SOLVER_SEARCH
        except SolverFailure:
            lower = None
    if lower is None:
        lower = constant_window(concrete_addr, access_size, policy.max_elements).lower
        method_lower = BoundsMethod.CONSTANT_WINDOW

    upper: int | None = None
    method_upper: BoundsMethod | None = None
    if use_solver:
        try:
            raw_max = solver_bound_search(
                path_slice, addr_expr, "max", concrete_addr,
                policy.solver_limit_bytes, session,
            )
            upper = lower + ((raw_max - lower) // access_size + 1) * access_size
            method_upper = BoundsMethod.SOLVER_SEARCH
        except SolverFailure:
            upper = None
    if upper is None:
        upper = lower + policy.max_elements * access_size
        method_upper = BoundsMethod.CONSTANT_WINDOW

    # Keep the concrete address on the sampling grid anchored at lower. An
    # inferred base that disagrees with the access stride shifts up by the
    # remainder, so the current cell is one of the sampled cells.
    misalign = (concrete_addr - lower) % access_size
    if misalign:
        lower += misalign
        upper += misalign

    # The window must cover the access made on this path.
    if upper <= concrete_addr:
        upper = lower + ((concrete_addr - lower) // access_size + 1) * access_size

    # Clip to the element budget, sliding the window right if the concrete
    # address would fall off its end.
    max_span = policy.max_elements * access_size
    if upper - lower > max_span:
        if concrete_addr < lower + max_span:
            upper = lower + max_span
        else:
            cell = lower + ((concrete_addr - lower) // access_size) * access_size
            upper = cell + access_size
            lower = upper - max_span

    assert method_lower is not None and method_upper is not None
    return MemoryBounds(
        lower=lower,
        upper=upper,
        access_size=access_size,
        method_lower=method_lower,
        method_upper=method_upper,
    )

import random

import pytest
from hypothesis import given, settings, strategies as st

from symread.bounds import (
    BoundsMethod,
    BoundsPolicy,
    MemoryBounds,
    constant_window,
    infer_lower_bound_ast,
    resolve_bounds,
    solver_bound_search,
)
from symread.expr import bv, eval_expr, var
from symread.smtlib import Session


def brute_minmax(addr_expr, var_name, width):
    """Enumerate an 8-bit variable to find the address extremes."""
    values = [eval_expr(addr_expr, {var_name: x}) for x in range(1 << width)]
    return min(values), max(values)


def test_constant_window_halves():
    b = constant_window(0x5000, 4, 32)
    assert (b.lower, b.upper) == (0x4FC0, 0x5040)
    assert b.upper - b.lower == 32 * 4
    assert b.method_lower is BoundsMethod.CONSTANT_WINDOW


def test_constant_window_minimal():
    b = constant_window(0x10, 8, 2)
    assert (b.lower, b.upper) == (0x8, 0x18)


def test_constant_window_clamps_at_zero():
    b = constant_window(0x4, 8, 4)
    assert (b.lower, b.upper) == (0x0, 0x20)
    assert b.upper - b.lower == 4 * 8


def test_constant_window_rejects_tiny():
    with pytest.raises(ValueError):
        constant_window(0x100, 4, 1)


def test_bounds_invariants_enforced():
    with pytest.raises(ValueError):
        MemoryBounds(0x10, 0x10, 4, BoundsMethod.CONSTANT_WINDOW, BoundsMethod.CONSTANT_WINDOW)
    with pytest.raises(ValueError):
        MemoryBounds(0x10, 0x1B, 4, BoundsMethod.CONSTANT_WINDOW, BoundsMethod.CONSTANT_WINDOW)
    with pytest.raises(ValueError):
        MemoryBounds(0x10, 0x20, 3, BoundsMethod.CONSTANT_WINDOW, BoundsMethod.CONSTANT_WINDOW)


def test_policy_validation():
    with pytest.raises(ValueError):
        BoundsPolicy(max_elements=1)
    with pytest.raises(ValueError):
        BoundsPolicy(solver_limit_bytes=0)


# -- AST lower bound ----------------------------------------------------------

def test_ast_base_from_table_shape():
    addr = bv(0x201020, 64) + var("x", 8).zext(56) * 4
    assert infer_lower_bound_ast(addr, 0x201028) == 0x201020


def test_ast_base_largest_term():
    addr = (bv(0x201020, 64) + bv(0x100, 64)) + var("x", 8).zext(56)
    assert infer_lower_bound_ast(addr, 0x201125) == 0x201020


def test_ast_base_fully_symbolic():
    assert infer_lower_bound_ast(var("x", 64) + var("y", 64), 0x1000) is None


def test_ast_base_rejects_above_concrete():
    # base term larger than the concrete address cannot be the table start
    addr = bv(0x5000, 64) + var("x", 8).zext(56)
    assert infer_lower_bound_ast(addr, 0x4000) is None


def test_ast_base_sanity_span():
    addr = bv(0x1000, 64) + var("x", 16).zext(48)
    assert infer_lower_bound_ast(addr, 0x1000 + 10000, sanity_span=4096) is None
    assert infer_lower_bound_ast(addr, 0x1000 + 10000, sanity_span=65536) == 0x1000


# -- solver search -------------------------------------------------------------

@pytest.fixture(scope="module")
def session(solver_cmd_incremental):
    with Session(solver_cmd_incremental, timeout=60) as s:
        yield s


def test_solver_max_enumerable(session):
    addr = bv(0x1000, 64) + var("x", 8).zext(56)
    lo, hi = brute_minmax(addr, "x", 8)
    assert solver_bound_search([], addr, "max", 0x1005, 4096, session) == hi == 0x10FF
    assert solver_bound_search([], addr, "min", 0x1005, 4096, session) == lo == 0x1000


def test_solver_max_with_slice(session):
    addr = bv(0x1000, 64) + var("x", 8).zext(56)
    constraint = var("x", 8).eq(5)
    assert solver_bound_search([constraint], addr, "max", 0x1005, 4096, session) == 0x1005
    assert solver_bound_search([constraint], addr, "min", 0x1005, 4096, session) == 0x1005


def test_solver_limit_edge(session):
    addr = bv(0x1000, 64) + var("x", 32).zext(32)
    got = solver_bound_search([], addr, "max", 0x1000, 0x100, session)
    assert got == 0x1000 + 0x100


def test_resolve_solver_mode(session):
    addr = bv(0x1000, 64) + var("x", 8).zext(56)
    policy = BoundsPolicy(use_solver=True, max_elements=512)
    b = resolve_bounds(addr, 0x1005, 1, [], policy, session)
    assert (b.lower, b.upper) == (0x1000, 0x1100)
    assert b.method_lower is BoundsMethod.AST_ANALYSIS
    assert b.method_upper is BoundsMethod.SOLVER_SEARCH


def test_resolve_fallback_constant():
    b = resolve_bounds(var("x", 64) + var("y", 64), 0x5000, 4, [], BoundsPolicy())
    assert b.method_lower is BoundsMethod.CONSTANT_WINDOW
    assert b.method_upper is BoundsMethod.CONSTANT_WINDOW
    assert b.lower <= 0x5000 < b.upper
    assert b.element_count == 64


def test_resolve_ast_plus_constant_upper():
    # table-lookup shape with the solver off: AST lower, constant-length upper
    addr = bv(0x201020, 64) + var("x", 8).zext(56) * 4
    policy = BoundsPolicy(max_elements=16)
    b = resolve_bounds(addr, 0x201028, 4, [], policy)
    assert (b.lower, b.upper) == (0x201020, 0x201060)
    assert b.method_lower is BoundsMethod.AST_ANALYSIS


def test_resolve_realigns_unaligned_base():
    # inferred base 0x1001 does not sit on the 4-byte grid of the access
    addr = bv(0x1001, 64) + var("x", 8).zext(56) * 4
    b = resolve_bounds(addr, 0x1009, 4, [], BoundsPolicy(max_elements=8))
    assert (0x1009 - b.lower) % 4 == 0
    assert b.lower <= 0x1009 < b.upper


def test_resolve_slides_window_to_keep_concrete():
    # concrete address far above the inferred base with a small budget
    addr = bv(0x1000, 64) + var("x", 8).zext(56) * 4
    b = resolve_bounds(addr, 0x1000 + 250 * 4, 4, [], BoundsPolicy(max_elements=8))
    assert b.lower <= 0x1000 + 250 * 4 < b.upper
    assert b.element_count <= 8


def test_resolve_ast_disabled():
    addr = bv(0x201020, 64) + var("x", 8).zext(56) * 4
    b = resolve_bounds(addr, 0x201028, 4, [], BoundsPolicy(ast_enabled=False))
    assert b.method_lower is BoundsMethod.CONSTANT_WINDOW


@given(
    concrete=st.integers(min_value=0, max_value=1 << 40),
    size=st.sampled_from([1, 2, 4, 8]),
    max_elements=st.integers(min_value=2, max_value=128),
)
@settings(max_examples=200, deadline=None)
def test_resolve_fuzz_invariants(concrete, size, max_elements):
    addr = var("p", 64) + var("q", 64)
    b = resolve_bounds(addr, concrete, size, [], BoundsPolicy(max_elements=max_elements))
    assert b.lower <= concrete < b.upper
    assert (b.upper - b.lower) % size == 0
    assert (concrete - b.lower) % size == 0
    assert b.element_count <= max_elements


@given(data=st.data())
@settings(max_examples=60, deadline=None)
def test_shrinking_max_elements_keeps_concrete(data):
    base = data.draw(st.integers(0, 1 << 30))
    size = data.draw(st.sampled_from([1, 4, 8]))
    offset = data.draw(st.integers(0, 300))
    concrete = base + offset * size
    addr = bv(base, 64) + var("x", 16).zext(48) * size
    bigger = resolve_bounds(addr, concrete, size, [], BoundsPolicy(max_elements=128, solver_limit_bytes=1 << 16))
    smaller = resolve_bounds(addr, concrete, size, [], BoundsPolicy(max_elements=4, solver_limit_bytes=1 << 16))
    assert bigger.lower <= concrete < bigger.upper
    assert smaller.lower <= concrete < smaller.upper
    assert smaller.upper >= concrete + size

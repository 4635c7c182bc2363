from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
WRAPPER = REPO_ROOT / "tools" / "z3-smt2" / "z3smt2.cjs"


def _solver_argv(incremental: bool = False) -> list[str] | None:
    from symread.smtlib import find_default_solver

    argv = find_default_solver(incremental=incremental)
    if argv is not None:
        return argv
    node = shutil.which("node")
    if node and WRAPPER.is_file():
        base = [node, str(WRAPPER)]
        return base + ["-i"] if incremental else base
    return None


@pytest.fixture(scope="session")
def solver_cmd() -> list[str]:
    argv = _solver_argv()
    if argv is None:
        pytest.skip("no SMT solver available (install one or `npm install` in tools/z3-smt2)")
    return argv


@pytest.fixture(scope="session")
def solver_cmd_incremental() -> list[str]:
    argv = _solver_argv(incremental=True)
    if argv is None:
        pytest.skip("no SMT solver available (install one or `npm install` in tools/z3-smt2)")
    return argv


@pytest.fixture()
def sleepy_solver(tmp_path: Path) -> list[str]:
    """A fake solver that never answers; exercises timeout handling."""
    script = tmp_path / "sleepy.py"
    script.write_text("import time\ntime.sleep(600)\n")
    return [sys.executable, str(script)]

"""Bundled demo programs for the miniature concolic executor."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

SEED_INPUTS: dict[str, bytes] = {
    "demo01_table": bytes([2]),
    "demo02_xlat": bytes([0]),
    "demo03_chain": bytes([0]),
    "demo04_sum": bytes([0, 0]),
    "demo05_jtab": bytes([1, 0]),
    "demo06_range": bytes([5]),
    "demo07_store": bytes([0, 0]),
    "demo08_mixed": bytes([0, 0]),
    "demo09_loop": bytes([0, 0, 0]),
    "demo10_qword": bytes([0]),
}


def demo_names() -> list[str]:
    return sorted(SEED_INPUTS)


def demo_source(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.asm").read_text()


def demo_path(name: str) -> Path:
    return Path(str(resources.files(__package__).joinpath(f"{name}.asm")))


def seed_input(name: str) -> bytes:
    return SEED_INPUTS[name]

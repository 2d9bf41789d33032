"""Collects one verdict line per acceptance criterion for the pytest summary."""

from __future__ import annotations

import sys

LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    LINES.append(line)
    print(line, file=sys.stderr)

"""Collects one verdict line per acceptance criterion for the end-of-run summary."""

LINES = []


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}"
    print(line, flush=True)
    LINES.append(line)
    return passed

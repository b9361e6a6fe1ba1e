"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return ok

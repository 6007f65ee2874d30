"""Collects one pass/fail line per acceptance criterion for the summary."""

RESULTS: list[str] = []


def report(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    RESULTS.append(line)
    print(line, flush=True)

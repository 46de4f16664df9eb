"""Collects one PASS/FAIL line per acceptance criterion for the summary."""

LINES = []


def check(tag, claim, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {tag:<4} {claim}" + (f"  [{detail}]" if detail else "")
    LINES.append(line)
    print(line, flush=True)
    assert ok, line

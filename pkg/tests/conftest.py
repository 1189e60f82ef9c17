import re


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if getattr(rep, "when", "call") == "call" or outcome == "error":
                m = re.search(r"test_criterion_(\d+)_(\w+)", nodeid)
                if m:
                    num, name = int(m.group(1)), m.group(2)
                    # keep the worst outcome per criterion
                    prev = results.get(num)
                    if prev is None or outcome != "passed":
                        results[num] = (name, "PASS" if outcome == "passed" else "FAIL")
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num in sorted(results):
            name, status = results[num]
            terminalreporter.write_line(
                f"[criterion {num:02d}] {name.replace('_', ' ')}: {status}")

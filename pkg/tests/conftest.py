ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    """Remember one acceptance verdict; printed in the terminal summary."""
    line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

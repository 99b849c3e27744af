import checks


def pytest_terminal_summary(terminalreporter):
    if not checks.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(checks.RESULTS):
        title, ok, detail = checks.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")

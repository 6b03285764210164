"""Shared pytest hooks: acceptance verdicts are summarized at the end of the run."""

ACCEPTANCE_KEY = "acceptance_results"


def pytest_configure(config):
    setattr(config, ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        passed, detail = results[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {key}: {detail}")

"""Shared pytest wiring: acceptance criteria get a visible summary block."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    tr = terminalreporter
    lines = []
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in tr.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and "::" in nodeid:
                name = nodeid.split("::")[-1].replace("test_criterion_", "")
                lines.append((name, label))
    if lines:
        tr.write_sep("=", "acceptance criteria")
        for name, label in sorted(lines):
            tr.write_line(f"{label}  {name}")

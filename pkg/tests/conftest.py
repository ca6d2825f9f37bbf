import re

import pytest

CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_configure(config):
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = CRITERION.search(item.name)
    if not m or (report.when != "call" and report.passed):
        return
    key = int(m.group(1))
    name = m.group(2).replace("_", " ")
    measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    prev = item.config._criteria.get(key)
    ok = report.passed and (prev is None or prev[1])
    item.config._criteria[key] = (name, ok, measured or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter, config):
    results = config._criteria
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        name, ok, measured = results[key]
        line = f"criterion {key:2d} {'PASS' if ok else 'FAIL'}  {name}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)

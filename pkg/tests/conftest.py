import pytest


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is not None and call.when == "call":
        item.user_properties.append(("acceptance", marker.args))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(rep.user_properties)
            if "acceptance" not in props or rep.when != "call":
                continue
            number, title = props["acceptance"]
            detail = props.get("detail", "")
            lines.append((number, f"{'PASS' if outcome == 'passed' else 'FAIL'}  [{number}] {title}"
                                  + (f"  ({detail})" if detail else "")))
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement summary to the acceptance report."""
    def put(text):
        record_property("detail", text)
    return put

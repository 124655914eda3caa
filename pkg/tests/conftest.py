import json
import pathlib

import pytest

ORACLES = pathlib.Path(__file__).parent / "oracles" / "oracles.json"
_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def oracles():
    with open(ORACLES) as fh:
        return json.load(fh)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    # a criterion is decided by its call phase, or by a failing setup
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    item.config.stash.setdefault(_RESULTS, {})[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        line = f"criterion {number:>2}: {status}  {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)

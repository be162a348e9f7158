"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion at the end of the run."""
import pytest

CRITERIA = {
    1: "gradient oracle on 200 random MLPs",
    2: "regularizer analytic suite",
    3: "statistics oracle",
    4: "diagnostics oracle",
    5: "learning smoke tests (ReBRAC and IQL, 3/3 seeds >= 90)",
    6: "LayerNorm eliminates dead neurons",
    7: "regularization beats baseline on the high-dim task",
    8: "protocol conformance",
    9: "byte-identical reruns",
}

_outcomes: dict[int, list[str]] = {}
_details: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(n, []).append("skipped" if rep.skipped else "passed" if rep.passed else "failed")
        _details.setdefault(n, []).extend(v for k, v in rep.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            continue
        status = "FAIL" if "failed" in results else "PASS" if all(r == "passed" for r in results) else "NOT RUN"
        detail = "; ".join(_details.get(n, []))
        terminalreporter.write_line(f"criterion {n} {status}: {title}" + (f" [{detail}]" if detail else ""))

import pytest

from resalloc import builtin_scenario, load_model

MM1_TEXT = """
name: mm1
activities: [A]
resources: [r1]
eligibility: {A: [r1]}
service_means: {r1: {A: 1.0}}
routing:
  - {id: start, type: start, to: A}
  - {id: A, type: activity, to: end}
  - {id: end, type: end}
arrivals: {constant: 0.5}
"""


def mm1_model(lam: float = 0.5, mean: float = 1.0):
    text = MM1_TEXT.replace("constant: 0.5", f"constant: {lam}").replace("A: 1.0", f"A: {mean}")
    return load_model(text)


@pytest.fixture
def mm1():
    return mm1_model()


@pytest.fixture(scope="session")
def scenario():
    cache = {}

    def get(name, rate=0.5, arrivals="constant"):
        key = (name, rate, arrivals)
        if key not in cache:
            cache[key] = builtin_scenario(name, rate, arrivals)
        return cache[key]

    return get


# ---------------------------------------------------------------- acceptance report
_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): numbered acceptance criterion")
    config.addinivalue_line("markers", "slow: takes minutes")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria[n] = ("PASS" if rep.passed else "FAIL" if rep.failed else "SKIP", text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, text = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}: {text}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pshadow.temporal_graph import Dictionary, Snapshot, SparseVector, TemporalGraph

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sv(d):
    return SparseVector.from_dict(d)


def make_graph(steps, n_nodes=None, n_attrs=None, edges=None):
    """TemporalGraph from a list of {node: {attr: weight}} dicts (integer ids)."""
    if n_nodes is None:
        n_nodes = 1 + max((n for s in steps for n in s), default=0)
    if n_attrs is None:
        n_attrs = 1 + max((a for s in steps for v in s.values() for a in v), default=0)
    snaps = []
    for t, s in enumerate(steps):
        e = edges[t] if edges else {}
        snaps.append(Snapshot(t, {n: sv(v) for n, v in s.items()}, e))
    return TemporalGraph(Dictionary([f"n{i:03d}" for i in range(n_nodes)]),
                         Dictionary([f"a{i:03d}" for i in range(n_attrs)]), snaps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------

_CRITERIA: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
        _CRITERIA.append((mark.args[0], "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))

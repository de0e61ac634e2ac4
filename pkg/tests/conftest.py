"""Shared fixtures and the acceptance summary.

Acceptance tests carry ``@pytest.mark.criterion("name")`` and call the
``record`` fixture with their verdict.  At the end of the session one line
per criterion is printed:

    ACCEPTANCE PASS <criterion>: <detail>

A criterion test that raises before recording is reported as FAIL with the
error message, so every criterion always gets exactly one line.
"""

from __future__ import annotations

import os
import sys
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdik import bundled_model

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CRITERIA = (
    "Jacobian correctness",
    "CBF gradient correctness",
    "QP oracle equivalence",
    "Certificate soundness",
    "Basin-dependence demonstration",
    "Escape-probability law",
    "Ablation trend reproduction",
    "Real-time budget analog",
    "Filter conformance",
)

_verdicts: dict[str, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test decides one acceptance criterion")


def _criterion(item):
    marker = item.get_closest_marker("criterion")
    return marker.args[0] if marker else None


@pytest.fixture
def record(request):
    """``record(passed, detail)`` stores the verdict for the test's criterion."""
    name = _criterion(request.node)
    if name is None:
        raise RuntimeError("record fixture used by a test without a criterion marker")

    def _record(passed: bool, detail: str) -> None:
        _verdicts[name] = (bool(passed), detail)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = _criterion(item)
    if name is None or report.when != "call":
        return
    if report.failed and (name not in _verdicts or _verdicts[name][0]):
        message = str(call.excinfo.value).strip().splitlines()[0] if call.excinfo else "failed"
        _verdicts[name] = (False, f"test error: {message}")
    elif name not in _verdicts:
        _verdicts[name] = (False, "test finished without recording a verdict")


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name in CRITERIA:
        if name in _verdicts:
            ok, detail = _verdicts[name]
            terminalreporter.write_line(f"ACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
        else:
            terminalreporter.write_line(f"ACCEPTANCE FAIL {name}: not run")


# --------------------------------------------------------------------------
# models


@pytest.fixture(scope="session")
def planar():
    return bundled_model("planar_2r")


@pytest.fixture(scope="session")
def two_branch():
    return bundled_model("two_branch")


@pytest.fixture(scope="session")
def arm7():
    return bundled_model("arm7")


@pytest.fixture(scope="session")
def desk():
    return bundled_model("desk_dual_arm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# desk ablation, shared by the trend and certificate-soundness criteria

ABLATION_TRIALS = 100
ABLATION_VARIANTS = (
    "global_sqp:1",
    "monolithic:1",
    "distributed:1",
    "parallel_dist_cert:1:0.0005",
    "parallel_dist_cert:64:0.0005",
    "parallel_dist_cert:256:0.0005",
    "parallel_dist_cert:256:0.005",
)


@pytest.fixture(scope="session")
def desk_ablation(desk):
    """100 paired-seed near-boundary trials per variant; returns
    (rows keyed by variant label, all metrics, elapsed seconds)."""
    from pdik.bench import TrialConfig, Variant, run_ablation

    variants = [Variant.parse(v) for v in ABLATION_VARIANTS]
    t0 = time.perf_counter()
    rows, metrics = run_ablation(desk, ABLATION_TRIALS, variants, TrialConfig(target_generator="near_cbf_boundary"))
    elapsed = time.perf_counter() - t0
    return {v.label: r for v, r in zip(variants, rows)}, metrics, elapsed

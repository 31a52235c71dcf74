import numpy as np
import pytest

from spectral_sde.sde_sim import (
    SamplingScheme,
    draw_gaps,
    observe_at_gaps,
    benchmark_model,
    reflected_brownian_motion,
    simulate_path,
)


def simulate_observations(model, kind, N, seed, delta=0.25, step=0.001):
    path_ss, gap_ss = np.random.SeedSequence(seed).spawn(2)
    gaps = draw_gaps(SamplingScheme(kind, delta), N, gap_ss)
    path = simulate_path(model, float(gaps.sum()), step, path_ss)
    return observe_at_gaps(path, gaps)


@pytest.fixture(scope="session")
def rbm_obs():
    """Reflected Brownian motion seen every 0.25 time units, N = 20000."""
    return simulate_observations(reflected_brownian_motion(), "deterministic", 20000, seed=11)


@pytest.fixture(scope="session")
def model_obs():
    """Mean-reverting polynomial model, deterministic gaps, N = 20000."""
    return simulate_observations(benchmark_model(), "deterministic", 20000, seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


ACCEPTANCE = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line verdict for the acceptance summary."""
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    yield record
    number = getattr(request.node.function, "criterion", None)
    rep = getattr(request.node, "rep_call", None)
    if number is not None and number not in ACCEPTANCE and rep is not None:
        ACCEPTANCE[number] = (False, "did not complete")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

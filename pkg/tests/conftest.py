import numpy as np
import pytest
from hypothesis import settings

from roadsense.fleet import table_row
from roadsense.vehicle import PidGains, VehicleParams

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def row0():
    """Table row with j = 0 (the base vehicle)."""
    return VehicleParams(m_s=2.45, m_us=1.0, k_s=950.0, k_us=1250.0, c_s=7.5, c_us=5.0)


@pytest.fixture
def pid0():
    return PidGains(1500.0, 200.0, 500.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(rng, spread=0.3):
    base, _ = table_row(int(rng.integers(0, 91)))
    return base.scaled(rng.uniform(1 - spread, 1 + spread, 6))


def rk4_oracle(f, x0, t_end, h):
    """Classical fixed-step RK4; returns states at every step including t=0."""
    n = int(round(t_end / h))
    xs = np.empty((n + 1, len(x0)))
    x = np.array(x0, dtype=float)
    xs[0] = x
    for k in range(n):
        t = k * h
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    return xs


@pytest.fixture(scope="session")
def sine_runs():
    """Default 90-agent cascade on the sinusoidal road, with and without learning."""
    from roadsense.fleet import FleetConfig, build_fleet, run_cascade
    from roadsense.roads import RoadSpec, generate

    road = generate(RoadSpec(kind="sinusoid"))
    out = {}
    for learn in (True, False):
        cfg = FleetConfig(learning_enabled=learn)
        out[learn] = run_cascade(cfg, build_fleet(cfg), road)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

import numpy as np
import pytest

from fairisac.config import load_config
from fairisac.metrics import BeamformingState
from fairisac.scenario import (ChannelSet, Geometry, Scenario, SensingLinkGains, SystemParams,
                               build_scenario)

# (criterion, passed, detail) tuples filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_scenario(n_users=2, n_targets=1, n_tx=4, n_sc=2, n_sym=3, *, h=None, a_bar=None,
                  noise=1.0, delta_f=1.0, aod=None, rng=None) -> Scenario:
    """Hand-built scenario with explicit channels and reflection coefficients.

    Geometry is a placeholder; only ``aod`` (for the steering vectors) and the
    explicit ``h`` / ``a_bar`` enter the metrics.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    par = SystemParams(n_tx=n_tx, n_sc=n_sc, n_sym=n_sym, f_c=1e9, delta_f=delta_f,
                       t_sym=1.0 / delta_f, p_total=1.0,
                       noise_power=tuple(np.broadcast_to(noise, (n_users + 1,))))
    users = [(10.0 + 5 * k, 7.0) for k in range(n_users)]
    targets = [(20.0, -5.0 - 4 * q) for q in range(n_targets)]
    geo = Geometry((0.0, 0.0), users, targets, np.zeros(n_targets))
    if h is None:
        shape = (n_users, n_sc, n_tx)
        h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if a_bar is None:
        shape = (n_targets, n_users + 1)
        a_bar = 0.5 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    if aod is None:
        aod = rng.uniform(0.2, 2.9, n_targets)
    gains = SensingLinkGains(np.asarray(a_bar, dtype=complex), np.asarray(aod, dtype=float),
                             np.zeros((n_targets, n_users + 1)))
    return Scenario(par, geo, gains, ChannelSet(np.asarray(h, dtype=complex)), seed=None)


def random_beams(scenario: Scenario, rng, power=None) -> BeamformingState:
    par = scenario.params
    shape = (par.n_sc, scenario.n_users + 1, par.n_tx)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    p = par.p_total if power is None else power
    return BeamformingState(z * np.sqrt(p) / np.linalg.norm(z))


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config("desk")


@pytest.fixture(scope="session")
def desk(desk_cfg):
    return build_scenario(desk_cfg.scenario)

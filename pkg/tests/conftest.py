"""Shared solver fixtures.

The expensive artifacts (solved states, MCMC pools, detuning sweeps) are
session-scoped and shared between the unit tests and the acceptance
suite, so the full run solves each state exactly once.
"""

import numpy as np
import pytest

from twinbeam.model import (analysis_grid, default_device, default_pulse,
                            TimeGrid)
from twinbeam.moments import evolve_moments, two_time_correlators
from twinbeam.pump import solve_pump
from twinbeam.schmidt import decompose, jta

DEVICE = default_device()
GT = DEVICE.gamma_tot


def pump_grid(duration_ps: float, lead_ps: float = 100.0) -> TimeGrid:
    """Pump grid covering the pulse plus ten lifetimes of ring-down."""
    span = duration_ps + 10.0 / GT + lead_ps
    return TimeGrid(-lead_ps, 2.0, int(np.ceil(span / 2.0)) + 1)


def flux_grid(duration_ps: float) -> TimeGrid:
    """Single-time grid for per-pulse photon numbers (10 ps steps)."""
    n = int(np.ceil((duration_ps + 8.0 / GT) / 10.0)) + 1
    return TimeGrid(0.0, 10.0, n)


def solve_state(energy_pj: float, delta_p: float = 0.0,
                duration_ps: float = 800.0, grid: TimeGrid | None = None):
    """Pump + moments + two-time + Schmidt chain for one operating point."""
    params = DEVICE.replace_detuning(delta_p)
    pulse = default_pulse(energy_pj, duration_ps)
    traj = solve_pump(params, pulse, pump_grid(duration_ps))
    state = evolve_moments(traj, params, flux_grid(duration_ps))
    tt = two_time_correlators(traj, params,
                              grid if grid is not None else analysis_grid())
    dec = decompose(tt)
    return params, traj, state, tt, dec


@pytest.fixture(scope="session")
def state_low():
    """Low-gain reference state: 40 pJ, zero detuning, 800 ps."""
    return solve_state(40.0)


@pytest.fixture(scope="session")
def state_mid():
    """Moderate-gain state: 200 pJ, zero detuning, 800 ps."""
    return solve_state(200.0)


@pytest.fixture(scope="session")
def state_bright():
    """The multi-pair workhorse: 1650 pJ, zero detuning, 800 ps."""
    return solve_state(1650.0)


@pytest.fixture(scope="session")
def bright_amplitude(state_bright):
    _, _, _, _, dec = state_bright
    return dec, jta(dec)


@pytest.fixture(scope="session")
def mcmc_pools(bright_amplitude):
    """Joint pair-time sample pools for the bright state, orders 1..8.

    Built once and shared by every synthesis run; the pools are what make
    the ten-seed correction battery affordable.
    """
    from twinbeam.multiphoton import marginal_pn, MCMCConfig

    dec, amp = bright_amplitude
    pools = {}
    for k in range(1, 9):
        if k == 1:
            cfg = MCMCConfig(samples=60000, seed=100 + k)
        else:
            cfg = MCMCConfig(samples=20000, chains=500, seed=100 + k)
        pools[k] = marginal_pn(amp, k, cfg,
                               keep_samples=True).diagnostics["sample_pool"]
    return pools

"""Moment ODE dynamics and two-time regression."""

import numpy as np
import pytest

from twinbeam.errors import (CoverageError, DataFormatError,
                             GridMismatchError, ThresholdExceededError,
                             UndepletedPumpWarning)
from twinbeam.model import (ResonatorParams, TimeGrid, default_device,
                            default_pulse)
from twinbeam.moments import (MomentState, TwoTimeMoment, evolve_moments,
                              read_two_time_csv, two_time_correlators,
                              write_two_time_csv)
from twinbeam.pump import solve_pump

from conftest import flux_grid, pump_grid

DEV = default_device()
G = DEV.gamma_tot


def test_no_interaction_stays_vacuum():
    params = ResonatorParams(DEV.gamma_e, DEV.gamma_i, 0.0, 0.0, DEV.d_int,
                             DEV.fsr_count_m)
    traj = solve_pump(params, default_pulse(500.0, 800.0), pump_grid(800.0))
    state = evolve_moments(traj, params, flux_grid(800.0))
    assert np.all(state.n_s == 0.0)
    assert np.all(state.m_si == 0.0)
    tt = two_time_correlators(traj, params, TimeGrid(0.0, 160.0, 12))
    assert np.all(tt.m_matrix == 0.0)
    assert np.all(tt.c_matrix == 0.0)


def test_state_is_physical_and_symmetric(state_mid):
    _, _, state, _, _ = state_mid
    state.check_physical()
    assert state.n_i is state.n_s
    assert np.min(state.n_s) >= 0.0
    bound = state.n_s * (state.n_s + 1.0)
    assert np.all(np.abs(state.m_si) ** 2 <= bound * (1.0 + 1e-9) + 1e-30)


def test_moments_at_matches_grid_samples(state_mid):
    _, _, state, _, _ = state_mid
    n, m = state.moments_at(state.grid.times)
    assert np.allclose(n, state.n_s, rtol=1e-9, atol=1e-15)
    assert np.allclose(m, state.m_si, rtol=1e-9, atol=1e-15)
    n_out, _ = state.moments_at(np.array([state.grid.t_end + 1e4]))
    assert np.isnan(n_out[0])


def test_halving_dt_preserves_photon_number():
    params = default_device()
    traj = solve_pump(params, default_pulse(300.0, 800.0), pump_grid(800.0))
    coarse = evolve_moments(traj, params, TimeGrid(0.0, 20.0, 300))
    fine = evolve_moments(traj, params, TimeGrid(0.0, 10.0, 599))
    n_coarse = np.trapezoid(2.0 * params.gamma_e * coarse.n_s,
                            coarse.grid.times)
    n_fine = np.trapezoid(2.0 * params.gamma_e * fine.n_s, fine.grid.times)
    assert abs(n_coarse - n_fine) < 1e-3 * n_fine


def test_moment_grid_outside_pump_span_rejected():
    params = default_device()
    traj = solve_pump(params, default_pulse(100.0, 800.0), pump_grid(800.0))
    too_long = TimeGrid(0.0, 100.0, 200)
    with pytest.raises(CoverageError):
        evolve_moments(traj, params, too_long)
    with pytest.raises(CoverageError):
        two_time_correlators(traj, params, too_long)


def test_depletion_warning_when_gain_competes_with_pump():
    params = ResonatorParams(DEV.gamma_e, DEV.gamma_i, 1e-5, 0.75 * G, 0.0,
                             DEV.fsr_count_m)
    traj = solve_pump(params, default_pulse(2.2e-5, 3500.0), pump_grid(3500.0))
    with pytest.warns(UndepletedPumpWarning):
        evolve_moments(traj, params)


def test_threshold_blowup_reports_time():
    # dispersion offset tuned to 4 Lambda N so the pair drive stays phase
    # matched while 2|G| = 4 gamma: sustained above-threshold gain
    lam = 1e-4
    n_target = 4.0 * G / lam
    dint = 16.0 * G / (4.0 * np.pi * 25.0)
    params = ResonatorParams(DEV.gamma_e, DEV.gamma_i, lam, 0.0, dint,
                             DEV.fsr_count_m)
    duration = 6000.0
    pulse0 = default_pulse(1.0, duration)
    beta2 = n_target * ((G / 2.0) ** 2 + (4.0 * G) ** 2) / (2.0 * DEV.gamma_e)
    energy_pj = beta2 * pulse0.photon_energy * duration * 1e12
    traj = solve_pump(params, default_pulse(energy_pj, duration),
                      pump_grid(duration))
    with pytest.raises(ThresholdExceededError) as exc_info:
        evolve_moments(traj, params)
    assert 0.0 < exc_info.value.blow_up_time < duration


def test_two_time_diagonal_is_population(state_mid):
    _, _, state, tt, _ = state_mid
    diag = np.real(np.diag(tt.c_matrix))
    n, _ = state.moments_at(tt.grid.times)
    assert np.allclose(diag, n, rtol=1e-6, atol=1e-12)
    assert np.max(np.abs(np.imag(np.diag(tt.c_matrix)))) < 1e-12


def test_two_time_matrix_symmetries(state_mid):
    _, _, _, tt, _ = state_mid
    c = tt.c_matrix
    assert np.allclose(c, c.conj().T, rtol=1e-7, atol=1e-13)
    # the lower triangle of M comes from an independent regression pass,
    # so complex symmetry doubles as a solver cross-check
    m = tt.m_matrix
    scale = np.max(np.abs(m))
    assert np.max(np.abs(m - m.T)) < 1e-6 * scale


def test_two_time_shape_validation():
    grid = TimeGrid(0.0, 80.0, 5)
    with pytest.raises(GridMismatchError):
        TwoTimeMoment(params=DEV, grid=grid, m_matrix=np.zeros((4, 4)),
                      c_matrix=np.zeros((5, 5)))


def test_two_time_csv_round_trip(tmp_path, state_low):
    _, _, _, tt, _ = state_low
    path = tmp_path / "tt.csv"
    write_two_time_csv(tt, path)
    back = read_two_time_csv(path)
    assert back.grid == tt.grid
    assert back.params == tt.params
    assert np.allclose(back.m_matrix, tt.m_matrix, rtol=1e-10, atol=1e-18)
    assert np.allclose(back.c_matrix, tt.c_matrix, rtol=1e-10, atol=1e-18)


def test_two_time_csv_rejects_corruption(tmp_path, state_low):
    _, _, _, tt, _ = state_low
    path = tmp_path / "tt.csv"
    write_two_time_csv(tt, path)
    lines = path.read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-10]) + "\n")
    with pytest.raises(DataFormatError):
        read_two_time_csv(tmp_path / "short.csv")
    broken = lines[:]
    broken[5] = "0,1,not_a_number,0,0,0"
    (tmp_path / "bad.csv").write_text("\n".join(broken) + "\n")
    with pytest.raises(DataFormatError):
        read_two_time_csv(tmp_path / "bad.csv")

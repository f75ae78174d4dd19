"""Schmidt decomposition of the pair moment and derived squeezing metrics."""

import math

import numpy as np
import pytest

from twinbeam.errors import InvalidParameterError
from twinbeam.model import TimeGrid, default_device
from twinbeam.moments import TwoTimeMoment
from twinbeam.schmidt import (DB_PER_NEPER, decompose, jta,
                              max_output_squeezing, nepers_to_db,
                              output_squeezing, refinement_delta,
                              write_jta_csv, write_schmidt_csv)

DEVICE = default_device()


def synthetic_moment(m_matrix, dt=80.0):
    n = m_matrix.shape[0]
    grid = TimeGrid(0.0, dt, n)
    return TwoTimeMoment(params=DEVICE, grid=grid,
                         m_matrix=np.asarray(m_matrix, dtype=complex),
                         c_matrix=np.zeros((n, n), dtype=complex))


def rank_one_moment(d_val, n=12, dt=80.0, seed=3):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=n) + 1j * rng.normal(size=n)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    return synthetic_moment(d_val * np.outer(u, v.conj()), dt), u, v


def test_rank_one_single_mode():
    d_val = 4e-3
    tt, u, v = rank_one_moment(d_val)
    dec = decompose(tt)
    assert dec.xi[0] == pytest.approx(
        0.5 * math.asinh(2.0 * d_val * tt.grid.dt), rel=1e-12)
    assert np.all(dec.xi[1:] < 1e-12)
    assert dec.schmidt_number() == pytest.approx(1.0, abs=1e-10)
    assert dec.purity() == pytest.approx(1.0, abs=1e-10)
    # the mode functions span the same rank-1 subspace as the input
    assert abs(np.vdot(dec.p_s[:, 0], u)) == pytest.approx(1.0, abs=1e-10)
    assert abs(np.vdot(dec.p_i[:, 0], v)) == pytest.approx(1.0, abs=1e-10)


def test_zero_moment_has_no_modes():
    tt = synthetic_moment(np.zeros((10, 10)))
    dec = decompose(tt)
    assert np.all(dec.xi == 0.0)
    assert dec.mean_pair_number() == 0.0
    with pytest.raises(InvalidParameterError, match="no occupied modes"):
        dec.schmidt_number()


def test_nonfinite_moment_rejected():
    m = np.zeros((6, 6), dtype=complex)
    m[2, 3] = np.nan
    with pytest.raises(InvalidParameterError, match="non-finite"):
        decompose(synthetic_moment(m))


def test_singular_values_sorted_and_unitary(state_mid):
    _, _, _, tt, dec = state_mid
    assert np.all(np.diff(dec.d_vals) <= 1e-15)
    assert np.all(np.diff(dec.xi) <= 1e-15)
    n = dec.p_s.shape[0]
    assert np.max(np.abs(dec.p_s.conj().T @ dec.p_s - np.eye(n))) < 1e-8
    assert np.max(np.abs(dec.p_i.conj().T @ dec.p_i - np.eye(n))) < 1e-8
    # SVD round trip
    rebuilt = (dec.p_s * dec.d_vals) @ dec.p_i.conj().T
    scale = np.max(np.abs(tt.m_matrix))
    assert np.max(np.abs(rebuilt - tt.m_matrix)) < 1e-8 * scale


def test_schmidt_number_invariances(state_mid):
    _, _, _, tt, dec = state_mid
    k_ref = dec.schmidt_number()
    rotated = decompose(synthetic_moment(
        np.exp(0.37j) * tt.m_matrix, dt=tt.grid.dt))
    assert rotated.schmidt_number() == pytest.approx(k_ref, rel=1e-10)

    rng = np.random.default_rng(11)
    n = tt.m_matrix.shape[0]
    qs, _ = np.linalg.qr(rng.normal(size=(n, n))
                         + 1j * rng.normal(size=(n, n)))
    qi, _ = np.linalg.qr(rng.normal(size=(n, n))
                         + 1j * rng.normal(size=(n, n)))
    spun = decompose(synthetic_moment(qs @ tt.m_matrix @ qi.T,
                                      dt=tt.grid.dt))
    assert spun.schmidt_number() == pytest.approx(k_ref, rel=1e-9)


def test_small_gain_linear_map():
    # 2 D dt < 0.01 throughout
    rng = np.random.default_rng(5)
    m = 1e-5 * (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
    tt = synthetic_moment(m)
    dec = decompose(tt)
    lin = dec.d_vals * tt.grid.dt
    assert np.all(2.0 * dec.d_vals * tt.grid.dt < 0.01)
    assert np.max(np.abs(dec.xi - lin) / lin) < 1e-4


def test_pair_number_consistency(state_mid):
    # compare over the analysis window only; the flux grid runs longer
    # and picks up ring-down the decomposition never sees
    params, _, state, _, dec = state_mid
    t = state.grid.times
    mask = t <= dec.grid.times[-1] + 1e-9
    emitted = params.gamma_tot * np.trapezoid(state.n_s[mask], t[mask])
    assert dec.mean_pair_number() == pytest.approx(emitted, rel=0.01)


def test_jta_reconstruction_and_density(state_mid):
    _, _, _, _, dec = state_mid
    amp = jta(dec)
    keep = dec.active
    direct = np.zeros_like(amp.j_matrix)
    for r, us, vi in zip(dec.r_vals[keep], dec.p_s[:, keep].T,
                         dec.p_i[:, keep].T):
        direct += r * np.outer(us, vi.conj())
    assert np.max(np.abs(amp.j_matrix - direct)) < 1e-8 * np.max(np.abs(direct))
    dens = amp.density()
    assert np.all(dens >= 0.0)
    assert np.sum(dens) * amp.grid.dt ** 2 == pytest.approx(1.0, rel=1e-12)


def test_single_mode_jta_is_separable():
    tt, _, _ = rank_one_moment(4e-3)
    amp = jta(decompose(tt))
    s = np.linalg.svd(amp.jti, compute_uv=False)
    assert s[1] < 1e-10 * s[0]


def test_empty_amplitude_cannot_normalize():
    dec = decompose(synthetic_moment(np.zeros((6, 6))))
    with pytest.raises(InvalidParameterError, match="all-zero"):
        jta(dec).density()


def test_bright_state_purity_and_lobes(state_bright):
    _, _, _, _, dec = state_bright
    # strongly driven on resonance: a couple of comparable supermodes
    assert dec.purity() == pytest.approx(0.75, abs=0.05)
    assert 2.4 < dec.mean_pair_number() < 3.0
    dens = jta(dec).density()
    # pairs come out together, so the lobes sit on the t_s = t_i line
    diag = np.diagonal(dens)
    interior = diag[1:-1]
    rises = (interior > diag[:-2]) & (interior >= diag[2:])
    floor = 0.2 * np.max(diag)
    assert np.count_nonzero(rises & (interior > floor)) >= 2


def test_output_squeezing_map():
    assert output_squeezing(0.0, 0.75) == 0.0
    xi = np.linspace(0.0, 3.0, 40)
    out = output_squeezing(xi, 0.75)
    assert np.all(np.diff(out) > 0.0)
    assert np.all(out <= max_output_squeezing(0.75) + 1e-12)
    # saturation: 50 nepers of internal squeezing is "infinite"
    assert output_squeezing(50.0, 0.75) == pytest.approx(
        max_output_squeezing(0.75), abs=1e-9)
    assert nepers_to_db(max_output_squeezing(0.75)) == pytest.approx(
        6.02, abs=0.01)
    # the reference device escape efficiency puts the ceiling near 6.2 dB
    assert 6.0 < nepers_to_db(max_output_squeezing(
        DEVICE.escape_efficiency)) < 6.3


def test_output_squeezing_perfect_escape():
    xi = np.array([0.3, 1.7])
    assert np.array_equal(output_squeezing(xi, 1.0), xi)
    assert math.isinf(max_output_squeezing(1.0))
    assert output_squeezing(0.4, 1.0) == 0.4


@pytest.mark.parametrize("p_e", [0.0, -0.1, 1.2])
def test_output_squeezing_bad_escape(p_e):
    with pytest.raises(InvalidParameterError):
        output_squeezing(0.5, p_e)
    with pytest.raises(InvalidParameterError):
        max_output_squeezing(p_e)


def test_output_squeezing_negative_xi():
    with pytest.raises(InvalidParameterError, match="nonnegative"):
        output_squeezing(np.array([0.1, -0.2]), 0.75)


def test_nepers_to_db_scalar_and_array():
    assert nepers_to_db(1.0) == pytest.approx(DB_PER_NEPER)
    arr = nepers_to_db(np.array([0.0, 0.5]))
    assert arr.shape == (2,)
    assert arr[1] == pytest.approx(0.5 * DB_PER_NEPER)


def test_refinement_delta():
    tt, _, _ = rank_one_moment(4e-3)
    dec = decompose(tt)
    assert refinement_delta(dec, dec) == 0.0
    tt2, _, _ = rank_one_moment(8e-3)
    bigger = decompose(tt2)
    delta = refinement_delta(dec, bigger)
    assert delta == pytest.approx(
        abs(dec.mean_pair_number() - bigger.mean_pair_number())
        / bigger.mean_pair_number())
    empty = decompose(synthetic_moment(np.zeros((12, 12))))
    assert refinement_delta(dec, empty) == 0.0


def test_schmidt_csv_round_trip(tmp_path, state_mid):
    _, _, _, _, dec = state_mid
    bare = tmp_path / "modes.csv"
    write_schmidt_csv(dec, bare)
    lines = bare.read_text().splitlines()
    assert lines[0] == "mode,d_val,xi,xi_db"
    assert len(lines) == 1 + len(dec.xi)
    first = lines[1].split(",")
    assert float(first[1]) == pytest.approx(dec.d_vals[0])
    assert float(first[3]) == pytest.approx(nepers_to_db(dec.xi[0]))

    with_out = tmp_path / "modes_out.csv"
    write_schmidt_csv(dec, with_out, p_e=DEVICE.escape_efficiency)
    lines = with_out.read_text().splitlines()
    assert lines[0] == "mode,d_val,xi,xi_db,xi_out,xi_out_db"
    first = lines[1].split(",")
    assert float(first[4]) == pytest.approx(
        output_squeezing(dec.xi[0], DEVICE.escape_efficiency))


def test_jta_csv_dump(tmp_path):
    tt, _, _ = rank_one_moment(4e-3, n=5)
    amp = jta(decompose(tt))
    path = tmp_path / "jta.csv"
    write_jta_csv(amp, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# t_start_ps=0.0 dt_ps=80.0 n_points=5")
    assert lines[1] == "q,p,re_j,im_j"
    assert len(lines) == 2 + 25
    q, p, re, im = lines[2].split(",")
    assert (int(q), int(p)) == (0, 0)
    assert complex(float(re), float(im)) == pytest.approx(amp.j_matrix[0, 0])

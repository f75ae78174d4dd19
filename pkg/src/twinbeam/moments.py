"""Gaussian moment dynamics of the signal/idler pair.

With a classical pump, the pair Hamiltonian is quadratic and the hierarchy
of normally-ordered moments closes exactly at second order:

    dn/dt  = -gamma_tot n + 2 Im(G* m),
    dm/dt  = -(gamma_tot - 2 i Delta_XPM) m + i G (1 + 2 n),

where n = <c_s^dag c_s> = <c_i^dag c_i>, m = <c_s c_i> and
G(t) = lambda_nl <c_p>^2 e^{i delta_omega_d t}.  Two-time correlators follow
from the quantum regression theorem applied to the same linear system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (CoverageError, IntegrationError, ThresholdExceededError,
                     UndepletedPumpWarning)
from .model import ResonatorParams, TimeGrid
from .pump import PumpTrajectory

#: Population at which the evolution is declared divergent (threshold hit).
BLOWUP_POPULATION = 1e12

#: Signal population fraction of the pump above which the classical-pump
#: (undepleted) approximation is flagged.
DEPLETION_FRACTION = 0.01


@dataclass(frozen=True)
class MomentState:
    """Single-time second moments sampled on a grid."""

    params: ResonatorParams
    grid: TimeGrid
    n_s: np.ndarray
    m_si: np.ndarray
    _dense: object = field(repr=False, compare=False, default=None)

    @property
    def n_i(self) -> np.ndarray:
        # Pair generation populates both modes symmetrically from vacuum.
        return self.n_s

    def moments_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Dense (n, m) evaluation; zero before the drive turn-on."""
        t = np.asarray(t, dtype=float)
        n = np.zeros(t.shape)
        m = np.zeros(t.shape, dtype=complex)
        lo, hi, sol = self._dense
        inside = (t >= lo) & (t <= hi)
        if np.any(inside):
            y = sol(t[inside])
            n[inside] = y[0].real
            m[inside] = y[1] + 1j * y[2]
        n[t > hi] = np.nan
        m[t > hi] = np.nan
        return n, m

    def check_physical(self, tol: float = 1e-9) -> None:
        """Raise if n < 0 or |m|^2 > n (n + 1) beyond tolerance."""
        scale = max(float(np.max(self.n_s)), 1.0)
        if np.min(self.n_s) < -tol * scale:
            raise AssertionError("negative population")
        bound = self.n_s * (self.n_s + 1.0)
        excess = np.abs(self.m_si) ** 2 - bound
        if np.max(excess) > tol * max(float(np.max(bound)), 1.0):
            raise AssertionError("pair coherence exceeds the physical bound")


@dataclass(frozen=True)
class TwoTimeMoment:
    """Two-time correlators on an N x N analysis grid.

    `m_matrix[q, p]` is the pre-loss pair correlator
    M(t_q, t_p) = (gamma_e / p_e) <c_s(t_q) c_i(t_p)>  (units 1/ps), the
    two-time amplitude of the emitted field before any collection loss; it
    is complex symmetric.  `c_matrix[q, p]` is the intracavity coherence
    <c_s^dag(t_q) c_s(t_p)> (dimensionless), so its diagonal is n_s(t_q).
    """

    params: ResonatorParams
    grid: TimeGrid
    m_matrix: np.ndarray
    c_matrix: np.ndarray

    def __post_init__(self):
        nq = self.grid.n_points
        if self.m_matrix.shape != (nq, nq) or self.c_matrix.shape != (nq, nq):
            from .errors import GridMismatchError
            raise GridMismatchError("matrix shapes do not match the grid")


def _moment_rhs_factory(traj: PumpTrajectory, params: ResonatorParams):
    gamma = params.gamma_tot

    def rhs(t, y):
        n = y[0]
        m = y[1] + 1j * y[2]
        g = traj.coupling_at(t)[()]
        dx = traj.xpm_at(t)[()]
        dn = -gamma * n + 2.0 * (np.conj(g) * m).imag
        dm = (-gamma + 2j * dx) * m + 1j * g * (1.0 + 2.0 * n)
        return [dn, dm.real, dm.imag]

    return rhs


def evolve_moments(traj: PumpTrajectory, params: ResonatorParams | None = None,
                   grid: TimeGrid | None = None, rtol: float = 1e-10,
                   atol: float = 1e-12) -> MomentState:
    """Evolve (n, m) from vacuum over the trajectory's span.

    Raises `ThresholdExceededError` (with the blow-up time) if the population
    diverges, and warns if the signal population grows beyond
    `DEPLETION_FRACTION` of the pump population, where the classical
    undepleted-pump treatment starts to lose validity.
    """
    if params is None:
        params = traj.params
    if grid is None:
        grid = traj.grid
    if (grid.t_start < traj.grid.t_start - 1e-9
            or grid.t_end > traj.grid.t_end + 1e-9):
        raise CoverageError("moment grid exceeds the pump trajectory span")

    t0 = max(grid.t_start, 0.0)
    t1 = grid.t_end
    rhs = _moment_rhs_factory(traj, params)

    def blowup(t, y):
        return y[0] - BLOWUP_POPULATION
    blowup.terminal = True
    blowup.direction = 1.0

    sol = solve_ivp(rhs, (t0, t1), [0.0, 0.0, 0.0], method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True, events=blowup)
    if sol.status == 1:
        raise ThresholdExceededError(float(sol.t_events[0][0]))
    if not sol.success:
        raise IntegrationError(f"moment integration failed: {sol.message}")

    times = grid.times
    n = np.zeros(grid.n_points)
    m = np.zeros(grid.n_points, dtype=complex)
    inside = times >= t0
    y = sol.sol(times[inside])
    n[inside] = y[0].real
    m[inside] = y[1] + 1j * y[2]
    # Roundoff guard: vacuum start keeps n nonnegative up to solver tolerance.
    n = np.where(np.abs(n) < atol * 10.0, np.maximum(n, 0.0), n)

    state = MomentState(params=params, grid=grid, n_s=n, m_si=m,
                        _dense=(t0, t1, sol.sol))

    peak_pump = float(np.max(np.abs(traj.cp) ** 2))
    if peak_pump > 0 and float(np.max(n)) > DEPLETION_FRACTION * peak_pump:
        warnings.warn(
            "signal population exceeds %.0f%% of the pump population; the "
            "undepleted-pump approximation is strained" % (100 * DEPLETION_FRACTION),
            UndepletedPumpWarning, stacklevel=2)
    return state


def _regress_rows(traj, params, times, seeds, rtol, atol):
    """Propagate 2-vectors under the regression generator.

    For each start index q, integrates d/dt' (a, b) = L(t') (a, b) from
    times[q] with seed seeds[q], sampling at times[q:].  Returns a list of
    arrays (one per row).  L is the adjoint one-operator generator

        L = [[ i Dx - g/2,  i G ], [ -i G*, -i Dx - g/2 ]].
    """
    gamma = params.gamma_tot

    def rhs(t, y):
        a, b = y
        g = traj.coupling_at(t)[()]
        dx = traj.xpm_at(t)[()]
        da = (1j * dx - gamma / 2.0) * a + 1j * g * b
        db = -1j * np.conj(g) * a + (-1j * dx - gamma / 2.0) * b
        return [da, db]

    out = []
    n = len(times)
    for q in range(n):
        seed = np.asarray(seeds[q], dtype=complex)
        if q == n - 1:
            out.append(seed[None, :].copy())
            continue
        sol = solve_ivp(rhs, (times[q], times[-1]), seed, method="DOP853",
                        rtol=rtol, atol=atol, t_eval=times[q:],
                        dense_output=False)
        if not sol.success:
            raise IntegrationError(
                f"two-time regression failed from t = {times[q]}: {sol.message}")
        out.append(sol.y.T.copy())
    return out


def two_time_correlators(traj: PumpTrajectory, params: ResonatorParams | None = None,
                         grid: TimeGrid | None = None, rtol: float = 1e-9,
                         atol: float = 1e-13) -> TwoTimeMoment:
    """Build the full M and C matrices on an analysis grid.

    The upper triangle of M (t' >= t) regresses the later idler operator,
    the lower triangle regresses with the roles of the operator pair
    exchanged.  With identical signal and idler parameters the two passes
    produce a complex-symmetric matrix; both are still integrated, so the
    symmetry of the result doubles as a solver self-check.  C is Hermitian
    and only its upper triangle is integrated.  Rows are independent solves
    with seeds taken from a single dense single-time solution, so the
    assembly order is deterministic.
    """
    if params is None:
        params = traj.params
    if grid is None:
        from .model import analysis_grid
        grid = analysis_grid()
    if (grid.t_start < traj.grid.t_start - 1e-9
            or grid.t_end > traj.grid.t_end + 1e-9):
        raise CoverageError("analysis grid exceeds the pump trajectory span")

    state = evolve_moments(traj, params, grid, rtol=max(rtol * 0.1, 1e-12))
    times = grid.times
    n_t, m_t = state.n_s, state.m_si
    nq = grid.n_points

    # Upper triangle of M: pair (<c_s(t_q) c_i(t')>, companion), seeded at
    # t' = t_q with (m, n).  The companion seed is the normally ordered n,
    # not the cavity-ordered n + 1: M describes the emitted field, and for
    # normally ordered emission correlators the vacuum term of the cavity
    # commutator cancels against the input-noise cross terms.  Seeding with
    # n + 1 instead inflates the kernel by a gain-independent vacuum
    # artefact (about one spurious pair per pulse) and breaks the pair
    # number consistency of the decomposition at low gain.
    seeds_m_upper = [(m_t[q], n_t[q]) for q in range(nq)]
    rows_m_upper = _regress_rows(traj, params, times, seeds_m_upper, rtol, atol)

    # Upper triangle of C: pair (<c_s^dag(t_q) c_s(t')>, <c_s^dag(t_q) c_i^dag(t')>),
    # seeded with (n, m*).
    seeds_c_upper = [(n_t[q], np.conj(m_t[q])) for q in range(nq)]
    rows_c_upper = _regress_rows(traj, params, times, seeds_c_upper, rtol, atol)

    # Lower triangle of M: roles exchanged; evolve the signal operator's time
    # t >= t_p against fixed c_i(t_p): pair (<c_s(t) c_i(t_p)>, <c_i^dag(t) c_i(t_p)>),
    # seeded with (m, n).
    seeds_m_lower = [(m_t[p], n_t[p]) for p in range(nq)]
    cols_m_lower = _regress_rows(traj, params, times, seeds_m_lower, rtol, atol)

    # gamma_e / p_e = gamma_tot is the total energy decay rate, and
    # gamma_tot * n_s is the pre-loss pair emission rate (the 660 ps loaded
    # lifetime fixes gamma_tot as an energy rate, so the photon outflux is
    # gamma_tot * n, not 2 gamma_tot * n).  This prefactor is the unique one
    # for which the singular values of M reproduce the emitted pair number.
    pre_loss = params.gamma_e / params.escape_efficiency
    mm = np.zeros((nq, nq), dtype=complex)
    cc = np.zeros((nq, nq), dtype=complex)
    for q in range(nq):
        mm[q, q:] = rows_m_upper[q][:, 0]
        cc[q, q:] = rows_c_upper[q][:, 0]
    for p in range(nq):
        # cols_m_lower[p][k] corresponds to t = times[p + k].
        mm[p:, p] = cols_m_lower[p][:, 0]
    iu = np.triu_indices(nq, 1)
    cc[(iu[1], iu[0])] = np.conj(cc[iu])
    mm *= pre_loss

    return TwoTimeMoment(params=params, grid=grid, m_matrix=mm, c_matrix=cc)


def write_two_time_csv(tt: TwoTimeMoment, path) -> None:
    """Dump M and C with the grid in the header."""
    g = tt.grid
    p = tt.params
    with open(path, "w") as f:
        f.write("# twinbeam two-time dump\n")
        f.write(f"# t_start_ps={g.t_start!r} dt_ps={g.dt!r} n_points={g.n_points}\n")
        f.write(f"# gamma_e={p.gamma_e!r} gamma_i={p.gamma_i!r} "
                f"lambda_nl={p.lambda_nl!r} delta_p={p.delta_p!r} "
                f"d_int={p.d_int!r} fsr_count_m={p.fsr_count_m}\n")
        f.write("q,p,re_m,im_m,re_c,im_c\n")
        for q in range(g.n_points):
            for c in range(g.n_points):
                f.write(f"{q},{c},{tt.m_matrix[q, c].real:.12e},"
                        f"{tt.m_matrix[q, c].imag:.12e},"
                        f"{tt.c_matrix[q, c].real:.12e},"
                        f"{tt.c_matrix[q, c].imag:.12e}\n")


def read_two_time_csv(path) -> TwoTimeMoment:
    """Inverse of `write_two_time_csv`."""
    from .errors import DataFormatError

    meta = {}
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            if line.startswith("q,"):
                continue
            rows.append(line.split(","))
    try:
        grid = TimeGrid(float(meta["t_start_ps"]), float(meta["dt_ps"]),
                        int(meta["n_points"]))
        params = ResonatorParams(
            gamma_e=float(meta["gamma_e"]), gamma_i=float(meta["gamma_i"]),
            lambda_nl=float(meta["lambda_nl"]), delta_p=float(meta["delta_p"]),
            d_int=float(meta["d_int"]), fsr_count_m=int(meta["fsr_count_m"]))
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"bad two-time dump header: {exc}") from exc
    n = grid.n_points
    if len(rows) != n * n:
        raise DataFormatError("two-time dump row count does not match grid")
    mm = np.zeros((n, n), dtype=complex)
    cc = np.zeros((n, n), dtype=complex)
    try:
        for r in rows:
            q, p = int(r[0]), int(r[1])
            mm[q, p] = float(r[2]) + 1j * float(r[3])
            cc[q, p] = float(r[4]) + 1j * float(r[5])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"bad two-time dump row: {exc}") from exc
    return TwoTimeMoment(params=params, grid=grid, m_matrix=mm, c_matrix=cc)

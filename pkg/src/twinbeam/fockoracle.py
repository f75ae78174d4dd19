"""Brute-force Lindblad evolution on a truncated two-mode Fock space.

This is the ground-truth oracle for the Gaussian moment closure: it
integrates the full density matrix of the signal/idler pair under the
same time-dependent pair coupling and XPM shift that drive `moments`,
with symmetric single-photon loss at the total cavity rate.  It is only
usable at low gain (the Fock cutoff explodes otherwise), which is
exactly the regime where an independent check is worth having.

Conventions match `moments`: the coupling G(t) enters the Hamiltonian as
``-(G c_s^dag c_i^dag + h.c.) - Delta_XPM (n_s + n_i)`` so that both
solvers describe the same physics and disagreement means a bug, not a
convention mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InvalidParameterError, IntegrationError, TruncationError
from .model import ResonatorParams, TimeGrid

#: Default photons-per-mode cap; low-gain validation runs stay far below it.
DEFAULT_CUTOFF = 6

#: Top-shell population beyond which the truncation is deemed unsafe.
SATURATION_LIMIT = 1e-4


def _destroy(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1.0, cutoff + 1)), k=1)


def _joint_ops(cutoff: int):
    """Annihilation operators on the joint (cutoff+1)^2 space."""
    a = _destroy(cutoff)
    eye = np.eye(cutoff + 1)
    a_s = np.kron(a, eye)
    a_i = np.kron(eye, a)
    return a_s, a_i


@dataclass(frozen=True)
class FockState:
    """Joint signal/idler density matrix on the truncated Fock basis."""

    cutoff: int
    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        dim = (self.cutoff + 1) ** 2
        if self.rho.shape != (dim, dim):
            raise InvalidParameterError(
                f"rho must be {dim}x{dim} for cutoff {self.cutoff}"
            )

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def _number_marginal(self, axis: int) -> np.ndarray:
        d = self.cutoff + 1
        pops = np.real(np.diag(self.rho)).reshape(d, d)
        return pops.sum(axis=1 - axis)

    def mean_photons(self) -> tuple[float, float]:
        """(signal, idler) mean occupation."""
        n = np.arange(self.cutoff + 1)
        return (
            float(self._number_marginal(0) @ n),
            float(self._number_marginal(1) @ n),
        )

    def pair_moment(self) -> complex:
        """<c_s c_i> on the truncated space."""
        a_s, a_i = _joint_ops(self.cutoff)
        return complex(np.trace(a_s @ a_i @ self.rho))

    def g2_signal(self) -> float:
        """Unheralded second-order correlation of the signal marginal."""
        n = np.arange(self.cutoff + 1)
        p = self._number_marginal(0)
        mean = p @ n
        if mean <= 0:
            raise InvalidParameterError("g2 undefined for an empty marginal")
        return float((p @ (n * (n - 1))) / mean**2)

    def top_shell_population(self) -> float:
        """Probability mass with either mode at the cutoff level."""
        d = self.cutoff + 1
        pops = np.real(np.diag(self.rho)).reshape(d, d)
        return float(pops[-1, :].sum() + pops[:, -1].sum() - pops[-1, -1])


@dataclass(frozen=True)
class FockEvolution:
    """Density-matrix trajectory sampled on a time grid."""

    params: ResonatorParams
    grid: TimeGrid
    cutoff: int
    rhos: np.ndarray = field(repr=False)  # (n_points, dim, dim)

    def state_at(self, index: int) -> FockState:
        return FockState(self.cutoff, self.rhos[index])

    @property
    def final(self) -> FockState:
        return self.state_at(len(self.grid.times) - 1)

    @property
    def n_s(self) -> np.ndarray:
        return np.array([self.state_at(k).mean_photons()[0]
                         for k in range(self.rhos.shape[0])])

    @property
    def n_i(self) -> np.ndarray:
        return np.array([self.state_at(k).mean_photons()[1]
                         for k in range(self.rhos.shape[0])])

    @property
    def m_si(self) -> np.ndarray:
        a_s, a_i = _joint_ops(self.cutoff)
        pair = a_s @ a_i
        return np.einsum("ij,kji->k", pair, self.rhos)


def _liouvillian_factory(traj, params: ResonatorParams, cutoff: int):
    """RHS closure: drho/dt with time-dependent G(t) and XPM shift."""
    a_s, a_i = _joint_ops(cutoff)
    pair = a_s @ a_i                       # c_s c_i
    pair_dag = pair.conj().T
    n_tot = a_s.conj().T @ a_s + a_i.conj().T @ a_i
    gamma = params.gamma_tot
    dim = (cutoff + 1) ** 2

    def rhs(t, y):
        rho = y.view(np.complex128).reshape(dim, dim)
        g = traj.coupling_at(t)
        dx = traj.xpm_at(t)
        h = -(g * pair_dag + np.conj(g) * pair) - dx * n_tot
        comm = h @ rho - rho @ h
        ls = a_s @ rho @ a_s.conj().T + a_i @ rho @ a_i.conj().T
        anti = n_tot @ rho + rho @ n_tot
        drho = -1j * comm + gamma * (ls - 0.5 * anti)
        return drho.reshape(-1).view(np.float64)

    return rhs


def evolve_fock(traj, params: ResonatorParams | None = None,
                grid: TimeGrid | None = None, cutoff: int = DEFAULT_CUTOFF,
                rtol: float = 1e-9, atol: float = 1e-12) -> FockEvolution:
    """Integrate the two-mode master equation from joint vacuum.

    traj supplies the pair coupling and XPM shift (anything exposing
    coupling_at / xpm_at / grid works; normally a PumpTrajectory).
    Raises TruncationError if the top Fock shell ever carries more than
    SATURATION_LIMIT of the population.
    """
    if cutoff < 2:
        raise InvalidParameterError("cutoff must be at least 2")
    params = traj.params if params is None else params
    grid = traj.grid if grid is None else grid
    times = grid.times

    dim = (cutoff + 1) ** 2
    rho0 = np.zeros((dim, dim), dtype=np.complex128)
    rho0[0, 0] = 1.0

    sol = solve_ivp(
        _liouvillian_factory(traj, params, cutoff),
        (times[0], times[-1]),
        rho0.reshape(-1).view(np.float64),
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise IntegrationError(f"Fock-space integration failed: {sol.message}")

    rhos = np.ascontiguousarray(
        sol.y.T.copy().view(np.complex128).reshape(len(times), dim, dim)
    )
    evo = FockEvolution(params=params, grid=grid, cutoff=cutoff, rhos=rhos)

    worst = max(evo.state_at(k).top_shell_population()
                for k in range(len(times)))
    if worst > SATURATION_LIMIT:
        raise TruncationError(
            f"top Fock shell reached population {worst:.2e} "
            f"(limit {SATURATION_LIMIT:g}); raise the cutoff above {cutoff}"
        )
    return evo


def pair_number_distribution(state: FockState) -> np.ndarray:
    """Probability of n signal photons, n = 0..cutoff.

    For the loss-free pair state this is the pair-number distribution;
    with symmetric loss the signal marginal is still the natural proxy
    (the idler marginal is identical by construction).
    """
    return state._number_marginal(0)


def two_time_fock(traj, params: ResonatorParams | None = None,
                  grid: TimeGrid | None = None, cutoff: int = DEFAULT_CUTOFF,
                  rtol: float = 1e-8, atol: float = 1e-11):
    """Two-time correlators by quantum regression on the Fock space.

    Returns (m_matrix, c_matrix) on grid x grid, in the same units as
    moments.two_time_correlators: M = gamma_tot <c_i(t_later) c_s(t_earlier)>
    with the earlier annihilation operator acting first (the normally
    ordered emission correlator: the regression seed then carries n rather
    than the cavity-ordered n + 1), C = <c_s^dag(t_q) c_s(t_p)>.  Small
    grids only; this is O(N) full density-operator evolutions and exists
    for validation.
    """
    params = traj.params if params is None else params
    grid = traj.grid if grid is None else grid
    times = grid.times
    n_t = len(times)

    t0 = min(traj.grid.t_start, times[0])
    n_base = max(2, int(np.ceil((times[-1] - t0) / 2.0)) + 1)
    base = evolve_fock(traj, params,
                       TimeGrid(t_start=t0, dt=2.0, n_points=n_base),
                       cutoff=cutoff, rtol=rtol, atol=atol)
    # dense rho(t) lookup by nearest sample of the fine base grid
    base_times = base.grid.times

    def rho_at(t):
        k = int(np.argmin(np.abs(base_times - t)))
        return base.rhos[k]

    a_s, a_i = _joint_ops(cutoff)
    dim = (cutoff + 1) ** 2
    liou = _liouvillian_factory(traj, params, cutoff)

    def propagate(sigma0, t_from, t_targets):
        if len(t_targets) == 0:
            return np.zeros((0, dim, dim), dtype=np.complex128)
        out = np.empty((len(t_targets), dim, dim), dtype=np.complex128)
        rest = slice(0, len(t_targets))
        if t_targets[0] == t_from:
            out[0] = sigma0
            rest = slice(1, len(t_targets))
        tail = t_targets[rest]
        if len(tail):
            sol = solve_ivp(liou, (t_from, tail[-1]),
                            sigma0.reshape(-1).view(np.float64),
                            method="DOP853", t_eval=tail,
                            rtol=rtol, atol=atol)
            if not sol.success:
                raise IntegrationError(f"regression failed: {sol.message}")
            out[rest] = sol.y.T.copy().view(np.complex128).reshape(len(tail), dim, dim)
        return out

    scale = params.gamma_tot
    m = np.zeros((n_t, n_t), dtype=np.complex128)
    c = np.zeros((n_t, n_t), dtype=np.complex128)
    for q in range(n_t):
        rho_q = rho_at(times[q])
        # upper triangle rows: sigma = c_s rho(t_q) evolved to t_p >= t_q;
        # the earlier operator multiplies from the left so the propagated
        # object represents the normally ordered product <c_i(t_p) c_s(t_q)>
        sig_m = propagate(a_s @ rho_q, times[q], times[q:])
        sig_c = propagate(rho_q @ a_s.conj().T, times[q], times[q:])
        for j, p in enumerate(range(q, n_t)):
            m[q, p] = scale * np.trace(a_i @ sig_m[j])
            c[q, p] = np.trace(a_s @ sig_c[j])
        # lower triangle columns: sigma = c_i rho(t_q) evolved to t_p > t_q
        sig_l = propagate(a_i @ rho_q, times[q], times[q + 1:])
        for j, p in enumerate(range(q + 1, n_t)):
            m[p, q] = scale * np.trace(a_s @ sig_l[j])
            c[p, q] = np.conj(c[q, p])
    return m, c

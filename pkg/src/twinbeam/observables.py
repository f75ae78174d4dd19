"""Measured quantities at the output waveguide.

Everything here is post-processing of solver products: the photon flux
and per-pulse photon number from single-time moments, the unheralded
second-order correlation from the squeezing spectrum, the phase-
insensitive first-order coherence profile, and the single-photon
spectrum from the two-time coherence matrix.  The detuning optimizer is
the one exception; it re-runs the pump and moment solvers inside a
bracketed one-dimensional search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketError, InvalidParameterError, NumericsError
from .model import PumpPulse, ResonatorParams, TimeGrid
from .moments import MomentState, TwoTimeMoment, evolve_moments
from .pump import solve_pump
from .schmidt import SchmidtDecomposition

#: Inverse golden ratio, the interval contraction factor of the search.
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

#: Default half-width of the spectrum grid in units of gamma_tot.
SPECTRUM_SPAN_LINEWIDTHS = 25.0

#: Relative tolerance for negative spectral dust before clipping.
SPECTRUM_NEGATIVE_TOL = 1e-9


def output_flux(state: MomentState, params: ResonatorParams | None = None) -> np.ndarray:
    """Photon flux into the bus waveguide, photons/ps.

    Vacuum input is assumed, so the flux is 2 gamma_e n_s(t) on the state's
    grid.  This is the reported-flux normalization; the emitted-pair
    bookkeeping of the Schmidt layer uses the total energy-decay rate
    instead (see the two-time module).
    """
    if params is None:
        params = state.params
    return 2.0 * params.gamma_e * state.n_s


def n_per_pulse(state: MomentState, params: ResonatorParams | None = None) -> float:
    """Per-pulse photon number: the flux integrated over the state grid."""
    return float(np.trapezoid(output_flux(state, params), state.grid.times))


def _flux_objective_factory(params: ResonatorParams, pulse: PumpPulse):
    """Build delta_p -> per-pulse photon number for the detuning search."""
    gamma = params.gamma_tot
    t_end = pulse.duration + 5.5 / gamma
    pump_grid = TimeGrid(t_start=-pulse.duration / 8.0, dt=2.0,
                         n_points=int(np.ceil((t_end + pulse.duration / 8.0) / 2.0)) + 2)
    flux_grid = TimeGrid(t_start=0.0, dt=20.0,
                         n_points=int(t_end / 20.0) + 1)

    def objective(delta_p: float) -> float:
        p = params.replace_detuning(delta_p)
        traj = solve_pump(p, pulse, pump_grid)
        state = evolve_moments(traj, p, flux_grid)
        return n_per_pulse(state, p)

    return objective


def optimal_detuning(params: ResonatorParams, pulse: PumpPulse,
                     search_range: tuple[float, float],
                     coarse_points: int = 13, tol: float | None = None) -> float:
    """Pump detuning maximizing the per-pulse photon number.

    A coarse grid over `search_range` brackets the maximum, then a
    golden-section refinement shrinks the bracket below `tol` (default
    gamma_tot / 100).  Detunings are in rad/ps.

    Raises BracketError when the coarse maximum sits on either range
    edge, since the bracket then fails to contain the optimum.
    """
    lo, hi = float(search_range[0]), float(search_range[1])
    if not hi > lo:
        raise InvalidParameterError("empty detuning search range")
    if coarse_points < 3:
        raise InvalidParameterError("coarse grid needs at least 3 points")
    if tol is None:
        tol = params.gamma_tot / 100.0

    objective = _flux_objective_factory(params, pulse)
    xs = np.linspace(lo, hi, coarse_points)
    ys = np.array([objective(x) for x in xs])
    k = int(np.argmax(ys))
    if k == 0 or k == coarse_points - 1:
        raise BracketError(
            f"generation maximum at the edge of the search range "
            f"[{lo:.6g}, {hi:.6g}] rad/ps; widen the range")

    a, b = xs[k - 1], xs[k + 1]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = objective(c), objective(d)
    while (b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = objective(d)
    return float(0.5 * (a + b))


def g2_from_schmidt(decomp: SchmidtDecomposition) -> float:
    """Unheralded same-beam g2 of the multimode squeezed state.

    Equals 1 + 1/K with K the Schmidt number: each temporal mode is
    thermal (g2 = 2) and incoherent mode mixing dilutes the bunching.
    """
    try:
        k = decomp.schmidt_number()
    except InvalidParameterError as exc:
        raise InvalidParameterError(
            "g2 is undefined for a vacuum decomposition (all xi zero)") from exc
    return 1.0 + 1.0 / k


@dataclass(frozen=True)
class CoherenceProfile:
    """Phase-insensitive first-order coherence G~(tau).

    `values[j]` is sum_t |C(t, t + tau_ps[j])| dt in photons; the lag axis
    runs over every off-diagonal of the sampled C matrix, so tau_ps is
    symmetric about zero with the grid step as spacing.
    """

    tau_ps: np.ndarray
    values: np.ndarray

    def peak_to_pedestal(self, pedestal_lag_ps: float) -> float:
        """G~(0) over the mean of |G~| at lags beyond `pedestal_lag_ps`."""
        wing = np.abs(self.tau_ps) >= pedestal_lag_ps
        if not np.any(wing):
            raise InvalidParameterError("pedestal lag beyond the profile span")
        denom = float(np.mean(self.values[wing]))
        if denom == 0.0:
            return math.inf
        return float(self.values[self.tau_ps == 0.0][0]) / denom


def g1_tilde(two_time: TwoTimeMoment) -> CoherenceProfile:
    """Lag profile of the modulus of the coherence matrix.

    Phase-insensitive on purpose: taking |C| before the time integral
    discards the nonstationary phase rotation that would otherwise wash
    out the profile, so pedestal structure survives.
    """
    c = two_time.c_matrix
    dt = two_time.grid.dt
    nq = two_time.grid.n_points
    vals = np.empty(2 * nq - 1)
    for k in range(nq):
        s = float(np.sum(np.abs(np.diagonal(c, offset=k)))) * dt
        vals[nq - 1 + k] = s
        vals[nq - 1 - k] = s
    tau = np.arange(-(nq - 1), nq) * dt
    return CoherenceProfile(tau_ps=tau, values=vals)


@dataclass(frozen=True)
class Spectrum:
    """Single-photon spectrum on an angular-frequency grid (rad/ps).

    `values` is normalized to unit peak; `peak_value` restores the raw
    scale (photons * ps per rad/ps), so the raw spectral weight is
    trapezoid(values * peak_value, omega).
    """

    omega: np.ndarray
    values: np.ndarray
    peak_value: float

    def weight(self) -> float:
        """Raw integral over the grid, proportional to the photon number."""
        return float(np.trapezoid(self.values, self.omega)) * self.peak_value


def single_photon_spectrum(two_time: TwoTimeMoment,
                           omega: np.ndarray | None = None,
                           n_omega: int = 601) -> Spectrum:
    """Diagonal double Fourier transform of the coherence matrix.

    S(omega) = dt^2 sum_{q,p} e^{-i omega t_q} C(t_q, t_p) e^{+i omega t_p},
    real and nonnegative because C is positive semidefinite.  No window
    function is applied; the analysis grid is expected to cover the full
    ring-down (short grids leak spectral ringing, which is left visible
    rather than masked).
    """
    params = two_time.params
    times = two_time.grid.times
    dt = two_time.grid.dt
    if omega is None:
        half = SPECTRUM_SPAN_LINEWIDTHS * params.gamma_tot
        omega = np.linspace(-half, half, n_omega)
    else:
        omega = np.asarray(omega, dtype=float)

    phases = np.exp(-1j * np.outer(omega, times))
    tmp = phases @ two_time.c_matrix
    s = np.einsum("wp,wp->w", tmp, np.conj(phases)).real * dt * dt

    floor = -SPECTRUM_NEGATIVE_TOL * max(float(np.max(s)), 0.0)
    if np.min(s) < floor:
        raise NumericsError(
            "spectrum has significant negative weight; C matrix is not "
            "positive semidefinite at solver tolerance")
    s = np.maximum(s, 0.0)
    peak = float(np.max(s))
    if peak <= 0.0:
        raise InvalidParameterError("spectrum undefined: no photons in C")
    return Spectrum(omega=omega, values=s / peak, peak_value=peak)


def signal_fourth_moment(two_time: TwoTimeMoment) -> np.ndarray:
    """Wick fourth moment <a+(t1) a+(t2) a(t2) a(t1)> of one beam.

    Each beam alone is Gaussian with zero same-beam pair amplitude, so
    the expansion closes on populations and the coherence matrix:
    n(t1) n(t2) + |C(t1, t2)|^2.
    """
    n = np.real(np.diag(two_time.c_matrix))
    return np.outer(n, n) + np.abs(two_time.c_matrix) ** 2


def coherence_from_fourth(fourth: np.ndarray, populations: np.ndarray) -> np.ndarray:
    """Intensity-correlation estimator of |C(t1, t2)|.

    Inverts the Wick expansion: |C| = sqrt(G2 - n1 n2), with the
    difference floored at zero so estimator noise cannot turn into NaN.
    """
    excess = fourth - np.outer(populations, populations)
    return np.sqrt(np.maximum(excess, 0.0))


@dataclass(frozen=True)
class ObservableSet:
    """Bundle of the derived quantities for one operating point."""

    times: np.ndarray
    flux: np.ndarray
    n_per_pulse: float
    g2: float
    g1: CoherenceProfile
    spectrum: Spectrum

    def __post_init__(self):
        if not (1.0 - 1e-12 <= self.g2 <= 2.0 + 1e-12):
            raise InvalidParameterError(f"g2 = {self.g2} outside [1, 2]")
        if np.min(self.spectrum.values) < 0.0:
            raise InvalidParameterError("negative spectral weight")


def collect_observables(state: MomentState, two_time: TwoTimeMoment,
                        decomp: SchmidtDecomposition,
                        params: ResonatorParams | None = None) -> ObservableSet:
    """Assemble the full observable bundle for one operating point."""
    if params is None:
        params = state.params
    return ObservableSet(
        times=state.grid.times,
        flux=output_flux(state, params),
        n_per_pulse=n_per_pulse(state, params),
        g2=g2_from_schmidt(decomp),
        g1=g1_tilde(two_time),
        spectrum=single_photon_spectrum(two_time),
    )


def write_flux_csv(state: MomentState, path,
                   params: ResonatorParams | None = None) -> None:
    """Time-resolved flux curve, one row per grid point."""
    flux = output_flux(state, params)
    with open(path, "w") as f:
        f.write("t_ps,flux_per_ps,n_s\n")
        for t, fl, n in zip(state.grid.times, flux, state.n_s):
            f.write(f"{t:.6f},{fl:.9e},{n:.9e}\n")


def write_sweep_csv(path, columns: list[str], rows, meta: dict | None = None) -> None:
    """Generic sweep table (energy scans, detuning scans, g2 scans)."""
    with open(path, "w") as f:
        if meta:
            for key, val in meta.items():
                f.write(f"# {key}={val!r}\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise InvalidParameterError("sweep row width != header width")
            f.write(",".join(f"{v:.9e}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def write_g1_csv(profile: CoherenceProfile, path) -> None:
    """Coherence lag profile, one row per lag."""
    with open(path, "w") as f:
        f.write("tau_ps,g1_tilde\n")
        for tau, v in zip(profile.tau_ps, profile.values):
            f.write(f"{tau:.6f},{v:.9e}\n")


def write_spectrum_csv(spectrum: Spectrum, path) -> None:
    """Normalized spectrum with the raw peak recorded in the header."""
    with open(path, "w") as f:
        f.write(f"# peak_value={spectrum.peak_value!r}\n")
        f.write("omega_rad_per_ps,s_normalized\n")
        for w, v in zip(spectrum.omega, spectrum.values):
            f.write(f"{w:.9e},{v:.9e}\n")

"""Temporal Schmidt machinery for the sampled pair moment.

The two-time pair moment M sampled on an N-point grid factorizes by SVD
into discrete temporal supermodes.  Each singular value maps to a
per-mode squeezing parameter; the collection fixes every derived metric
used here: mean pair number, Schmidt number / spectral purity, the
joint temporal amplitude, and the squeezing available at the output
waveguide after escape-efficiency loss.

The singular-value map is ``xi = arcsinh(2 D dt) / 2``.  The factor of
one half is fixed in-repo by the pair-number consistency requirement:
the sum of sinh^2 xi over modes must equal the emitted pair number
integral(gamma_tot * n_s dt), the time integral of the total cavity
photon outflux.  See the adjacent unit tests, which pin that invariant
against both the moment solver and the Fock oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, IllConditionedError
from .model import TimeGrid

#: Modes with xi below this are numerical noise and are excluded from sums.
XI_FLOOR = 1e-6

#: Variance suppression in dB per neper of squeezing parameter.
DB_PER_NEPER = 20.0 / math.log(10.0)


@dataclass(frozen=True)
class SchmidtDecomposition:
    """SVD of the sampled pair moment with derived squeezing spectrum.

    Columns of p_s / p_i are the discretized signal / idler temporal
    mode functions, orthonormal under the grid inner product without the
    dt weight (plain unitary matrices).
    """

    d_vals: np.ndarray
    xi: np.ndarray
    p_s: np.ndarray = field(repr=False)
    p_i: np.ndarray = field(repr=False)
    dt: float
    grid: TimeGrid

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of modes kept in downstream sums."""
        return self.xi > XI_FLOOR

    @property
    def r_vals(self) -> np.ndarray:
        """Gain weights R_lambda = xi_lambda / (2 dt), 1/ps."""
        return self.xi / (2.0 * self.dt)

    def mean_pair_number(self) -> float:
        """Total emitted pairs per pulse before any loss."""
        s = np.sinh(self.xi[self.active])
        return float(np.sum(s * s))

    def schmidt_number(self) -> float:
        """Effective mode count K >= 1."""
        s2 = np.sinh(self.xi[self.active]) ** 2
        total = s2.sum()
        if total <= 0:
            raise InvalidParameterError(
                "Schmidt number undefined: no occupied modes")
        return float(total * total / np.sum(s2 * s2))

    def purity(self) -> float:
        """Spectral purity 1/K of either marginal beam."""
        return 1.0 / self.schmidt_number()


@dataclass(frozen=True)
class JointTemporalAmplitude:
    """Discretized pair emission amplitude on the analysis grid."""

    j_matrix: np.ndarray = field(repr=False)
    grid: TimeGrid

    @property
    def jti(self) -> np.ndarray:
        """Joint temporal intensity |J|^2 (unnormalized)."""
        return np.abs(self.j_matrix) ** 2

    def density(self) -> np.ndarray:
        """|J|^2 normalized to a probability density on the grid."""
        j2 = self.jti
        norm = j2.sum() * self.grid.dt**2
        if norm <= 0:
            raise InvalidParameterError("cannot normalize an all-zero amplitude")
        return j2 / norm


def decompose(two_time) -> SchmidtDecomposition:
    """Schmidt-decompose a TwoTimeMoment.

    Singular values are returned in descending order; the squeezing
    parameters inherit that order.
    """
    m = np.asarray(two_time.m_matrix)
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError("pair moment contains non-finite entries")
    try:
        u, d, vh = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(
            f"SVD failed on the pair moment (norm {np.linalg.norm(m):.3e}): {exc}"
        ) from exc
    dt = two_time.grid.dt
    xi = 0.5 * np.arcsinh(2.0 * d * dt)
    return SchmidtDecomposition(
        d_vals=d,
        xi=xi,
        p_s=u,
        p_i=vh.conj().T,
        dt=dt,
        grid=two_time.grid,
    )


def jta(decomp: SchmidtDecomposition) -> JointTemporalAmplitude:
    """Assemble the joint temporal amplitude from the active modes.

    J_qp = sum_lambda R_lambda P^(s)_q,lambda conj(P^(i)_p,lambda).
    """
    keep = decomp.active
    r = decomp.r_vals[keep]
    us = decomp.p_s[:, keep]
    vi = decomp.p_i[:, keep]
    j = (us * r) @ vi.conj().T
    return JointTemporalAmplitude(j_matrix=j, grid=decomp.grid)


def output_squeezing(xi, p_e: float):
    """Squeezing parameter surviving at the output waveguide, nepers.

    Applies the escape-efficiency beamsplitter to each internal value:
    xi_out = -ln(1 - p_e + p_e exp(-2 xi)) / 2, which saturates at
    -ln(1 - p_e)/2 however strong the internal squeezing.
    """
    if not 0.0 < p_e <= 1.0:
        raise InvalidParameterError("escape efficiency must be in (0, 1]")
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0):
        raise InvalidParameterError("squeezing parameters must be nonnegative")
    if p_e == 1.0:
        return xi_arr if xi_arr.shape else float(xi_arr)
    out = -0.5 * np.log(1.0 - p_e + p_e * np.exp(-2.0 * xi_arr))
    return out if out.shape else float(out)


def max_output_squeezing(p_e: float) -> float:
    """Escape-efficiency bound -ln(1-p_e)/2 in nepers (inf at p_e = 1)."""
    if not 0.0 < p_e <= 1.0:
        raise InvalidParameterError("escape efficiency must be in (0, 1]")
    if p_e == 1.0:
        return math.inf
    return -0.5 * math.log(1.0 - p_e)


def nepers_to_db(xi) -> np.ndarray | float:
    """Quadrature-variance suppression in dB for a squeezing parameter."""
    arr = np.asarray(xi, dtype=float) * DB_PER_NEPER
    return arr if arr.shape else float(arr)


def refinement_delta(coarse: SchmidtDecomposition,
                     fine: SchmidtDecomposition) -> float:
    """Relative change of the mean pair number between two grids.

    Meant for convergence checks: above ~2% the coarse grid is aliasing
    and results should not be trusted.
    """
    ref = fine.mean_pair_number()
    if ref == 0:
        return 0.0
    return abs(coarse.mean_pair_number() - ref) / ref


def write_schmidt_csv(decomp: SchmidtDecomposition, path, p_e: float | None = None) -> None:
    """Per-mode spectrum dump: index, singular value, xi, optional xi_out."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if p_e is None:
            fh.write("mode,d_val,xi,xi_db\n")
            for k, (d, x) in enumerate(zip(decomp.d_vals, decomp.xi)):
                fh.write(f"{k},{float(d)!r},{float(x)!r},"
                         f"{nepers_to_db(x)!r}\n")
        else:
            fh.write("mode,d_val,xi,xi_db,xi_out,xi_out_db\n")
            xo = output_squeezing(decomp.xi, p_e)
            for k, (d, x, o) in enumerate(zip(decomp.d_vals, decomp.xi, xo)):
                fh.write(f"{k},{float(d)!r},{float(x)!r},"
                         f"{nepers_to_db(x)!r},"
                         f"{float(o)!r},{nepers_to_db(o)!r}\n")


def write_jta_csv(amplitude: JointTemporalAmplitude, path) -> None:
    """Matrix dump of J with grid metadata, rows q,p,re_j,im_j."""
    g = amplitude.grid
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# t_start_ps={g.t_start!r} dt_ps={g.dt!r} n_points={g.n_points}\n")
        fh.write("q,p,re_j,im_j\n")
        for q in range(g.n_points):
            for p in range(g.n_points):
                z = amplitude.j_matrix[q, p]
                fh.write(f"{q},{p},{float(z.real)!r},{float(z.imag)!r}\n")

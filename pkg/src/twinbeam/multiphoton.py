"""Multi-pair time statistics, detection combinatorics and coincidence
correction.

The chain implemented here: the joint temporal amplitude defines, for
every pair count n, a 2n-coordinate emission-time distribution whose
weight is a squared matrix permanent.  A Metropolis sampler reduces it
to the two-coordinate marginal P_n on the analysis grid; threshold-
detector combinatorics turn pair-number probabilities into click
probabilities; and the correction stage subtracts the multi-pair
contamination from a measured two-fold histogram to recover the
single-pair distribution and a spectral-purity bound.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .errors import (ChainMixingWarning, GridMismatchError,
                     IllConditionedError, InvalidParameterError,
                     TailMassWarning)
from .model import DetectionModel, TimeGrid
from .schmidt import JointTemporalAmplitude, SchmidtDecomposition
from .stats import fidelity

#: Hard size cap for permanent evaluation; 2^n work grows past usefulness.
PERMANENT_CAP = 20

#: Subset block size for the chunked scalar permanent (memory bound).
_PERMANENT_CHUNK = 1 << 16

#: Acceptance-rate band outside which a chain is flagged as poorly mixing.
ACCEPTANCE_BAND = (0.05, 0.7)

#: Relative truncation tail above which the coincidence model warns.
TAIL_WARN_FRACTION = 0.01

#: Condition number above which the six-fold inversion refuses to run.
CONDITION_LIMIT = 1e6


# ---------------------------------------------------------------------------
# permanents

def _subset_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All nonempty subsets of range(n) as a 0/1 matrix plus Ryser signs."""
    count = (1 << n) - 1
    idx = np.arange(1, count + 1, dtype=np.uint32)
    masks = ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(float)
    sizes = masks.sum(axis=1)
    signs = np.where((n - sizes) % 2 == 0, 1.0, -1.0)
    return masks, signs


_MASK_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _cached_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _MASK_CACHE:
        _MASK_CACHE[n] = _subset_masks(n)
    return _MASK_CACHE[n]


def permanent(a: np.ndarray) -> complex:
    """Permanent of a square matrix by Ryser's inclusion-exclusion.

    Exact up to floating point; O(2^n n) time.  Subsets are processed in
    blocks so the n = 20 cap stays within a few hundred MB of scratch.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameterError("permanent needs a square matrix")
    n = a.shape[0]
    if n == 0:
        return complex(1.0)
    if n > PERMANENT_CAP:
        raise InvalidParameterError(
            f"matrix order {n} exceeds the permanent cap {PERMANENT_CAP}")
    total = 0.0 + 0.0j
    count = (1 << n) - 1
    cols = np.arange(n, dtype=np.uint32)
    for start in range(1, count + 1, _PERMANENT_CHUNK):
        idx = np.arange(start, min(start + _PERMANENT_CHUNK, count + 1),
                        dtype=np.uint32)
        masks = ((idx[:, None] >> cols) & 1).astype(float)
        sizes = masks.sum(axis=1)
        signs = np.where((n - sizes) % 2 == 0, 1.0, -1.0)
        total += np.dot(signs, np.prod(masks @ a, axis=1))
    return complex(total)


def permanent_naive(a: np.ndarray) -> complex:
    """Leibniz-sum permanent, O(n! n): the cross-check reference.

    Kept deliberately independent of the Ryser path; capped at n = 9
    where factorial growth ends its usefulness.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameterError("permanent needs a square matrix")
    n = a.shape[0]
    if n == 0:
        return complex(1.0)
    if n > 9:
        raise InvalidParameterError("naive permanent capped at n = 9")
    rows = range(n)
    return complex(sum(
        math.prod(a[i, sigma[i]] for i in rows)
        for sigma in itertools.permutations(rows)))


def _permanent_batch(mats: np.ndarray) -> np.ndarray:
    """Permanents of a (batch, n, n) stack.

    Ryser with Gray-code subset ordering: consecutive row subsets differ
    by one element, so the running column-sum block is updated with a
    single batched add instead of a fresh matmul.  Same inclusion-
    exclusion sum as `permanent`, O(2^n n) per matrix.
    """
    mats = np.asarray(mats)
    batch, n = mats.shape[0], mats.shape[-1]
    dtype = np.result_type(mats.dtype, float)
    if n == 0:
        return np.ones(batch, dtype=dtype)
    rows = np.ascontiguousarray(mats.transpose(1, 0, 2))
    total = np.zeros(batch, dtype=dtype)
    sums = np.zeros((batch, n), dtype=dtype)
    gray = 0
    size = 0
    for k in range(1, 1 << n):
        g = k ^ (k >> 1)
        bit = g ^ gray
        j = bit.bit_length() - 1
        if g & bit:
            sums += rows[j]
            size += 1
        else:
            sums -= rows[j]
            size -= 1
        gray = g
        prod = sums.prod(axis=1)
        if (n - size) % 2 == 0:
            total += prod
        else:
            total -= prod
    return total


# ---------------------------------------------------------------------------
# pair-time distributions

@dataclass(frozen=True)
class MCMCConfig:
    """Sampler settings for the permanent-weighted time distribution.

    `samples` counts retained draws pooled over all chains; each retained
    draw costs `thinning` raw steps after `burn_in` raw steps per chain.
    All chains advance in one vectorized batch, so more chains means
    fewer sequential steps for the same pool.
    """

    samples: int = 80000
    burn_in: int = 1000
    thinning: int = 200
    chains: int = 400
    seed: int = 0

    def __post_init__(self):
        if min(self.samples, self.burn_in, self.thinning, self.chains) < 1:
            raise InvalidParameterError("MCMC settings must be positive")

    @property
    def per_chain(self) -> int:
        return int(np.ceil(self.samples / self.chains))


@dataclass(frozen=True)
class PairTimeDistribution:
    """Two-coordinate marginal P_n(t_s, t_i) on the analysis grid.

    `p` is a density: sum(p) * dt^2 = 1.  `mc_stderr` is the per-bin
    standard error estimated from the spread across independent chains
    (zero for the exact n = 1 case).  `diagnostics` carries acceptance
    rate, pool sizes and, when requested, the retained index samples.
    """

    n_pairs: int
    grid: TimeGrid
    p: np.ndarray
    mc_stderr: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if np.min(self.p) < 0.0:
            raise InvalidParameterError("negative probability bin")
        mass = float(np.sum(self.p)) * self.grid.dt ** 2
        err = 3.0 * float(np.sum(self.mc_stderr)) * self.grid.dt ** 2
        if abs(mass - 1.0) > max(err, 1e-9):
            raise InvalidParameterError(
                f"P_{self.n_pairs} mass {mass} inconsistent with 1")

    def fidelity_to(self, other: np.ndarray) -> float:
        """Cosine fidelity between this density and another on the grid."""
        q = np.asarray(other, dtype=float)
        if q.shape != self.p.shape:
            raise GridMismatchError("distribution shapes differ")
        return fidelity(self.p, q)

    def marginal_product(self) -> np.ndarray:
        """Outer product of the signal and idler marginals, as a density."""
        ps = np.sum(self.p, axis=1) * self.grid.dt
        pi = np.sum(self.p, axis=0) * self.grid.dt
        return np.outer(ps, pi)


def _exact_p1(jta: JointTemporalAmplitude,
              mcmc: MCMCConfig | None = None,
              keep_samples: bool = False) -> PairTimeDistribution:
    dens = np.abs(jta.j_matrix) ** 2
    norm = float(np.sum(dens)) * jta.grid.dt ** 2
    if norm <= 0.0:
        raise InvalidParameterError("empty joint amplitude")
    diagnostics = {"exact": True, "acceptance_rate": 1.0}
    if keep_samples:
        # exact inverse-CDF draws so single-pair pools exist alongside
        # the sampled higher orders
        cfg = mcmc if mcmc is not None else MCMCConfig()
        rng = np.random.default_rng(cfg.seed)
        flat = rng.choice(dens.size, size=cfg.samples,
                          p=(dens / np.sum(dens)).ravel())
        diagnostics["sample_pool"] = np.column_stack(
            [flat // dens.shape[1], flat % dens.shape[1]])
    return PairTimeDistribution(
        n_pairs=1, grid=jta.grid, p=dens / norm,
        mc_stderr=np.zeros_like(dens),
        diagnostics=diagnostics)


def marginal_pn(jta: JointTemporalAmplitude, n: int,
                mcmc: MCMCConfig | None = None,
                keep_samples: bool = False) -> PairTimeDistribution:
    """Marginal pair-time distribution for an n-pair emission event.

    n = 1 is exact (the squared amplitude itself).  For n >= 2 a
    Metropolis walk over the 2n time indices targets the squared
    permanent of the corresponding amplitude submatrix; the (signal,
    idler) marginal is accumulated over all n^2 index pairs of each
    retained draw (the target is symmetric under same-species index
    permutations, so every pair is an equivalent marginal draw).
    Deterministic for a fixed `mcmc.seed`.
    """
    if n < 1:
        raise InvalidParameterError("pair count must be >= 1")
    if n == 1:
        return _exact_p1(jta, mcmc, keep_samples)
    if mcmc is None:
        mcmc = MCMCConfig()
    jm = jta.j_matrix
    ngrid = jm.shape[0]
    rng = np.random.default_rng(mcmc.seed)
    chains = mcmc.chains
    per_chain = mcmc.per_chain

    # independent-marginal start states keep the initial weight nonzero
    w_s = np.sum(np.abs(jm) ** 2, axis=1)
    w_i = np.sum(np.abs(jm) ** 2, axis=0)
    idx = np.empty((chains, 2 * n), dtype=np.intp)
    idx[:, :n] = rng.choice(ngrid, size=(chains, n), p=w_s / w_s.sum())
    idx[:, n:] = rng.choice(ngrid, size=(chains, n), p=w_i / w_i.sum())

    def weights(state):
        sub = jm[state[:, :n, None], state[:, None, n:]]
        return np.abs(_permanent_batch(sub)) ** 2

    w = weights(idx)
    hist = np.zeros((chains, ngrid, ngrid))
    chain_ids = np.repeat(np.arange(chains), n * n)
    pool = (np.empty((per_chain, chains, 2 * n), dtype=np.intp)
            if keep_samples else None)
    retained = 0
    accepted = 0
    total_steps = mcmc.burn_in + per_chain * mcmc.thinning
    for step in range(total_steps):
        slot = rng.integers(0, 2 * n, size=chains)
        new_val = rng.integers(0, ngrid, size=chains)
        prop = idx.copy()
        prop[np.arange(chains), slot] = new_val
        w_prop = weights(prop)
        take = rng.random(chains) * w < w_prop
        idx[take] = prop[take]
        w[take] = w_prop[take]
        accepted += int(np.count_nonzero(take))
        past_burn = step - mcmc.burn_in
        if past_burn >= 0 and (past_burn + 1) % mcmc.thinning == 0:
            qs = np.repeat(idx[:, :n], n, axis=1).ravel()
            ps = np.tile(idx[:, n:], (1, n)).ravel()
            np.add.at(hist, (chain_ids, qs, ps), 1.0)
            if pool is not None:
                pool[retained] = idx
            retained += 1

    rate = accepted / (total_steps * chains)
    mass = hist / (per_chain * n * n)
    p_mean = mass.mean(axis=0) / jta.grid.dt ** 2
    stderr = (mass.std(axis=0, ddof=1) / math.sqrt(chains)) / jta.grid.dt ** 2
    diagnostics = {
        "acceptance_rate": float(rate),
        "chains": chains,
        "retained": per_chain * chains,
    }
    if pool is not None:
        diagnostics["sample_pool"] = pool.reshape(-1, 2 * n)
    if not (ACCEPTANCE_BAND[0] <= rate <= ACCEPTANCE_BAND[1]):
        warnings.warn(
            f"P_{n} chain acceptance rate {rate:.3f} outside "
            f"{ACCEPTANCE_BAND}; treat the estimate with suspicion",
            ChainMixingWarning)
        diagnostics["mixing_warning"] = True
    return PairTimeDistribution(n_pairs=n, grid=jta.grid, p=p_mean,
                                mc_stderr=stderr, diagnostics=diagnostics)


def exhaustive_pn(jta: JointTemporalAmplitude, n: int) -> np.ndarray:
    """Brute-force P_n marginal by full enumeration; tiny grids only.

    O(ngrid^(2n)) permanent evaluations: the validation oracle for the
    sampler, usable for n = 2 on grids of a dozen points.
    """
    jm = jta.j_matrix
    ngrid = jm.shape[0]
    if ngrid ** (2 * n) > 20_000_000:
        raise InvalidParameterError("enumeration grid too large")
    dens = np.zeros((ngrid, ngrid))
    for qs in itertools.product(range(ngrid), repeat=n):
        for ps in itertools.product(range(ngrid), repeat=n):
            w = abs(permanent(jm[np.ix_(qs, ps)])) ** 2
            for a in qs:
                for b in ps:
                    dens[a, b] += w
    dens /= np.sum(dens) * jta.grid.dt ** 2
    return dens


# ---------------------------------------------------------------------------
# pair-number statistics

@dataclass(frozen=True)
class PairNumberModel:
    """Pair-count probabilities r_n with the truncation tail.

    `r[n]` is the probability of exactly n generated pairs per pulse;
    `tail` is the mass beyond the truncation order (exact remainder of
    the mode-wise geometric convolution).
    """

    r: np.ndarray
    tail: float

    def __post_init__(self):
        if np.min(self.r) < -1e-15:
            raise InvalidParameterError("negative pair probability")
        if self.tail < -1e-12:
            raise InvalidParameterError("negative tail")

    @property
    def n_max(self) -> int:
        return len(self.r) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.r)), self.r))

    def sample(self, rng: np.random.Generator, size: int,
               tail_as: int | None = None) -> np.ndarray:
        """Draw pair counts; tail mass maps to `tail_as` (default n_max)."""
        probs = np.append(self.r, max(self.tail, 0.0))
        probs = probs / probs.sum()
        draws = rng.choice(len(probs), size=size, p=probs)
        overflow = draws == len(self.r)
        draws[overflow] = self.n_max if tail_as is None else tail_as
        return draws


def rn_from_schmidt(decomp: SchmidtDecomposition, n_max: int) -> PairNumberModel:
    """Pair-count distribution of the multimode squeezed state.

    Each Schmidt mode contributes a geometric pair-number law with ratio
    tanh^2 xi; the total count is their independent sum, built by
    truncated convolution with the lost mass reported as the tail.
    """
    if n_max < 0:
        raise InvalidParameterError("n_max must be >= 0")
    dist = np.zeros(n_max + 1)
    dist[0] = 1.0
    for xi in decomp.xi[decomp.active]:
        x = math.tanh(xi) ** 2
        geo = (1.0 - x) * x ** np.arange(n_max + 1)
        dist = np.convolve(dist, geo)[:n_max + 1]
    return PairNumberModel(r=dist, tail=max(1.0 - float(np.sum(dist)), 0.0))


# ---------------------------------------------------------------------------
# detection combinatorics

@dataclass(frozen=True)
class DetectionProbabilities:
    """Click probabilities h_n^(m) for n pairs and m-fold coincidences.

    `h1[n]` is the probability that at least one signal and one idler
    photon of an n-pair event are detected; `h2[n]` and `h3[n]` require
    at least two (three) distinct clicked ports on each side.  Index 0
    is the n = 0 entry (all zero).
    """

    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    model: DetectionModel

    def __post_init__(self):
        tol = 1e-12
        for name, arr in (("h1", self.h1), ("h2", self.h2), ("h3", self.h3)):
            if np.min(arr) < -tol or np.max(arr) > 1.0 + tol:
                raise InvalidParameterError(f"{name} outside [0, 1]")
            if np.any(np.diff(arr) < -tol):
                raise InvalidParameterError(f"{name} not nondecreasing in n")
        if np.any(self.h2 > self.h1 + tol) or np.any(self.h3 > self.h2 + tol):
            raise InvalidParameterError("ordering h3 <= h2 <= h1 violated")
        for m, arr in ((1, self.h1), (2, self.h2), (3, self.h3)):
            if np.any(np.abs(arr[:m]) > tol):
                raise InvalidParameterError(f"h_n^({m}) nonzero for n < {m}")


def _side_at_least(etas: tuple[float, ...], n: int, m: int) -> float:
    """P(at least m distinct ports click) for n photons on one side.

    Inclusion-exclusion over clicked-port sets: a photon reaches port j
    with probability eta_j or is lost with 1 - sum(eta).
    """
    ports = len(etas)
    if m > min(ports, n):
        return 0.0
    total = sum(etas)
    p_few = 0.0
    for size in range(m):
        for subset in itertools.combinations(range(ports), size):
            inner = 0.0
            for k in range(size + 1):
                for sub2 in itertools.combinations(subset, k):
                    e_b = sum(etas[j] for j in sub2)
                    inner += (-1.0) ** (size - k) * (1.0 - total + e_b) ** n
            p_few += inner
    return 1.0 - p_few


def detection_probs(model: DetectionModel, n_max: int) -> DetectionProbabilities:
    """h_n^(m) tables for n = 0..n_max, m = 1, 2, 3.

    h_n^(1) is evaluated as the literal double binomial sum over the
    per-side detected-photon counts; the multi-fold entries come from
    the threshold-port inclusion-exclusion, independently per side.
    """
    if n_max < 1 or n_max > 30:
        raise InvalidParameterError("n_max must be in [1, 30]")
    es, ei = model.total_eta
    h1 = np.zeros(n_max + 1)
    h2 = np.zeros(n_max + 1)
    h3 = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        acc = 0.0
        for j in range(1, n + 1):
            pj = math.comb(n, j) * es ** j * (1.0 - es) ** (n - j)
            for k in range(1, n + 1):
                pk = math.comb(n, k) * ei ** k * (1.0 - ei) ** (n - k)
                acc += pj * pk
        h1[n] = acc
        h2[n] = (_side_at_least(model.eta_s, n, 2)
                 * _side_at_least(model.eta_i, n, 2))
        h3[n] = (_side_at_least(model.eta_s, n, 3)
                 * _side_at_least(model.eta_i, n, 3))
    return DetectionProbabilities(h1=h1, h2=h2, h3=h3, model=model)


def mc_detection_probability(model: DetectionModel, n: int, m: int,
                             trials: int, seed: int = 0) -> float:
    """Monte-Carlo estimate of h_n^(m) by direct thinning simulation.

    The sampling oracle for `detection_probs`: each photon routes to a
    port or the loss bin, sides threshold independently.
    """
    rng = np.random.default_rng(seed)
    out = np.ones(trials, dtype=bool)
    for etas in (model.eta_s, model.eta_i):
        probs = np.array(list(etas) + [1.0 - sum(etas)])
        counts = rng.multinomial(n, probs, size=trials)[:, :-1]
        out &= np.count_nonzero(counts, axis=1) >= m
    return float(np.mean(out))


def fit_effective_detection(singles_s: float, singles_i: float,
                            rn: PairNumberModel,
                            n_ports: tuple[int, int] = (2, 2)) -> DetectionModel:
    """Per-side efficiencies from measured singles fractions.

    Inverts singles = sum_n r_n (1 - (1 - eta)^n) for each side by
    bracketed root finding; the result is split evenly over the ports
    (the right layout for balanced splitters, the only one the singles
    rate can identify).
    """
    etas = []
    for singles, label in ((singles_s, "signal"), (singles_i, "idler")):
        ceiling = float(np.sum(rn.r[1:]))
        if not 0.0 < singles < ceiling:
            raise InvalidParameterError(
                f"{label} singles fraction {singles} outside (0, {ceiling:.4f})")

        def excess(eta):
            n = np.arange(len(rn.r))
            return float(np.dot(rn.r, 1.0 - (1.0 - eta) ** n)) - singles

        etas.append(brentq(excess, 1e-12, 1.0, xtol=1e-12))
    return DetectionModel(
        eta_s=tuple(etas[0] / n_ports[0] for _ in range(n_ports[0])),
        eta_i=tuple(etas[1] / n_ports[1] for _ in range(n_ports[1])))


# ---------------------------------------------------------------------------
# coincidence model and correction

@dataclass(frozen=True)
class CoincidencePrediction:
    """Model two-fold coincidence density and its ingredients."""

    p: np.ndarray
    weights: np.ndarray
    tail_bound: float
    distributions: dict


def pairing_weights(model: DetectionModel, n_max: int,
                    order: int) -> np.ndarray:
    """Expected m-fold ordered selection count per pulse, by pair count.

    Under independent capture with side efficiencies summing to eta_s,
    eta_i, a pulse with n pairs contributes on average
    [m C(n,m)]^2 (eta_s eta_i)^m counts to the m-fold marginalized
    accumulator (all click selections counted, each spread over its m^2
    bin combinations).  These are the weights consistent with the
    all-pairings histogram convention; the threshold tables in
    `DetectionProbabilities` are the per-event probabilities instead.
    """
    if order < 1:
        raise InvalidParameterError("selection order must be >= 1")
    eta_s, eta_i = model.total_eta
    n = np.arange(n_max + 1)
    per_side = order * special.comb(n, order)
    return per_side ** 2 * (eta_s * eta_i) ** order


def coincidence_model(jta: JointTemporalAmplitude,
                      decomp: SchmidtDecomposition,
                      model: DetectionModel, n_max: int,
                      mcmc: MCMCConfig | None = None,
                      distributions: dict[int, PairTimeDistribution] | None = None,
                      convention: str = "threshold") -> CoincidencePrediction:
    """Predicted two-fold coincidence density on the analysis grid.

    p_qp = sum_n w_n r_n P_n(q, p): each pair count contributes its
    normalized time distribution weighted by the event probability and
    a detection weight.  `convention` picks the weight: "threshold"
    uses h_n^(1) (one count per pulse with a click on each side, the
    lab convention with one detector per side), "pairing" uses the
    expected click-pair count (the convention of the histogrammer in
    this package, which counts every signal-idler click pairing).
    Precomputed distributions can be injected to share MCMC pools;
    missing orders are sampled here.
    """
    rn = rn_from_schmidt(decomp, n_max)
    if convention == "threshold":
        w = detection_probs(model, n_max).h1
    elif convention == "pairing":
        w = pairing_weights(model, n_max, 1)
    else:
        raise InvalidParameterError(f"unknown convention {convention!r}")
    dists = dict(distributions or {})
    out = np.zeros_like(np.abs(jta.j_matrix), dtype=float)
    weights = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        if rn.r[n] <= 0.0:
            continue
        if n not in dists:
            cfg = mcmc if mcmc is not None else MCMCConfig()
            dists[n] = marginal_pn(jta, n, cfg)
        if dists[n].p.shape != out.shape:
            raise GridMismatchError(f"P_{n} grid differs from the amplitude grid")
        weights[n] = w[n] * rn.r[n]
        out = out + weights[n] * dists[n].p
    total = float(np.sum(weights))
    if total <= 0.0:
        raise InvalidParameterError("no detectable pair order in the model")
    if rn.tail / (total + rn.tail) > TAIL_WARN_FRACTION:
        warnings.warn(
            f"truncation tail r(>{n_max}) = {rn.tail:.4g} exceeds "
            f"{TAIL_WARN_FRACTION:.0%} of the coincidence weight",
            TailMassWarning)
    return CoincidencePrediction(p=out, weights=weights, tail_bound=rn.tail,
                                 distributions=dists)


def purity_bound_from_grid(p_grid: np.ndarray) -> float:
    """Spectral-purity bound from a coincidence or P_1 grid.

    Takes sqrt of the (clipped) grid as a phase-less amplitude and reads
    the purity of its singular spectrum.  Discarded phases can only
    raise the apparent purity, hence a bound.
    """
    amp = np.sqrt(np.maximum(np.asarray(p_grid, dtype=float), 0.0))
    if not np.any(amp > 0.0):
        raise InvalidParameterError("empty grid has no purity bound")
    s = np.linalg.svd(amp, compute_uv=False)
    w = s ** 2
    return float(np.sum(w ** 2) / np.sum(w) ** 2)


@dataclass(frozen=True)
class CorrectionResult:
    """Output of the multi-pair coincidence correction."""

    alpha_opt: float
    beta_opt: float | None
    p1_estimate: np.ndarray
    purity_bound: float
    clipping_fraction: float
    condition_number: float | None
    residual_weight: float


def correct_p1(hist2: np.ndarray, hist4_marginal: np.ndarray,
               probs: DetectionProbabilities, rn: PairNumberModel,
               order: str = "four_fold",
               hist6_marginal: np.ndarray | None = None,
               convention: str = "pairing") -> CorrectionResult:
    """Recover the single-pair time distribution from contaminated clicks.

    The four-fold order adds the pair-marginalized four-fold histogram
    scaled by the (negative) weight alpha_opt chosen to cancel, summed
    over the n >= 2 orders, the multi-pair content of the two-fold
    histogram.  The six-fold order additionally uses the six-fold
    marginal and solves for (alpha, beta) cancelling n = 2 and n = 3
    exactly; the inversion is refused when its condition number passes
    the documented limit.  Negative bins produced by the subtraction
    are floored afterwards and the clipped mass is reported.

    `convention` selects the per-order detection weights and must match
    how the histograms were accumulated: "pairing" for the all-pairings
    counters built by this package (expected selection counts),
    "threshold" for one-count-per-pulse data from single threshold
    detector pairs (the h_n^(m) probability tables).
    """
    hist2 = np.asarray(hist2, dtype=float)
    hist4 = np.asarray(hist4_marginal, dtype=float)
    if hist2.shape != hist4.shape:
        raise GridMismatchError("two-fold and four-fold grids differ")
    limit = min(len(rn.r), len(probs.h1))
    if convention == "pairing":
        t1 = pairing_weights(probs.model, limit - 1, 1)
        t2 = pairing_weights(probs.model, limit - 1, 2)
        t3 = pairing_weights(probs.model, limit - 1, 3)
    elif convention == "threshold":
        t1, t2, t3 = probs.h1[:limit], probs.h2[:limit], probs.h3[:limit]
    else:
        raise InvalidParameterError(f"unknown convention {convention!r}")
    r = rn.r[:limit]
    w1 = float(np.dot(t1[2:], r[2:]))
    w2 = float(np.dot(t2[2:], r[2:]))
    cond = None
    beta = None
    if order == "four_fold":
        if w2 <= 0.0:
            raise InvalidParameterError(
                "no multi-pair four-fold weight: correction unnecessary "
                "(or the detection model cannot resolve it)")
        alpha = -w1 / w2
        est = (hist2 + alpha * hist4) / t1[1]
        residual = float(np.sum(np.abs(t1[2:] + alpha * t2[2:]) * r[2:]))
    elif order == "six_fold":
        if hist6_marginal is None:
            raise InvalidParameterError("six_fold order needs hist6_marginal")
        hist6 = np.asarray(hist6_marginal, dtype=float)
        if hist6.shape != hist2.shape:
            raise GridMismatchError("six-fold grid differs")
        if limit < 4:
            raise InvalidParameterError("need detection weights up to n = 3")
        a_mat = np.array([[t2[2], t3[2]],
                          [t2[3], t3[3]]])
        cond = float(np.linalg.cond(a_mat))
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise IllConditionedError(
                f"six-fold system condition {cond:.3g} beyond "
                f"{CONDITION_LIMIT:.0e}; the correction would amplify noise")
        alpha, beta = np.linalg.solve(a_mat, [-t1[2], -t1[3]])
        alpha, beta = float(alpha), float(beta)
        est = (hist2 + alpha * hist4 + beta * hist6) / t1[1]
        residual = float(np.sum(np.abs(t1[4:] + alpha * t2[4:]
                                       + beta * t3[4:]) * r[4:]))
    else:
        raise InvalidParameterError(f"unknown correction order {order!r}")

    negative = -float(np.sum(est[est < 0.0]))
    positive = float(np.sum(est[est > 0.0]))
    clipping = negative / positive if positive > 0.0 else 0.0
    clipped = np.maximum(est, 0.0)
    return CorrectionResult(
        alpha_opt=float(alpha), beta_opt=beta, p1_estimate=clipped,
        purity_bound=purity_bound_from_grid(clipped),
        clipping_fraction=clipping, condition_number=cond,
        residual_weight=residual)


def write_pn_csv(dist: PairTimeDistribution, path) -> None:
    """Dump a pair-time distribution with its MC error."""
    g = dist.grid
    with open(path, "w") as f:
        f.write(f"# n_pairs={dist.n_pairs} t_start_ps={g.t_start!r} "
                f"dt_ps={g.dt!r} n_points={g.n_points}\n")
        acc = dist.diagnostics.get("acceptance_rate")
        if acc is not None:
            f.write(f"# acceptance_rate={acc!r}\n")
        f.write("q,p,density,stderr\n")
        for q in range(g.n_points):
            for c in range(g.n_points):
                f.write(f"{q},{c},{dist.p[q, c]:.9e},{dist.mc_stderr[q, c]:.9e}\n")

"""Time-tagged click streams and coincidence histograms.

Forward path: draw per-pulse pair counts, draw arrival-time tuples from
the joint pair-time law, thin every photon through the per-port
detection model, and collapse to threshold-detector clicks.  Reverse
path: ingest `pulse,channel,time_ps` CSV files and accumulate the
two-fold, marginalized four-fold and six-fold coincidence histograms
that the multi-pair correction consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import (ConfigError, DataFormatError, GridMismatchError,
                     InvalidParameterError)
from .model import DetectionModel, TimeGrid
from .multiphoton import MCMCConfig, marginal_pn, rn_from_schmidt
from .schmidt import JointTemporalAmplitude, SchmidtDecomposition

# r_n truncation: grow n_max until the unsimulated tail is below this
TAIL_TARGET = 1e-4
# largest pair count drawn from the joint sampler; higher orders are
# composed from this pool (their pair-time law is marginal-product-like
# to well under a percent by then)
JOINT_CAP = 8
MALFORMED_BUDGET = 1e-3

_HEADER = "pulse,channel,time_ps"


@dataclass(frozen=True)
class TimeTagStream:
    """Column store of click records plus the pulse/port bookkeeping.

    `pulse` is nondecreasing in record order; `channels` is the declared
    port set (clicks may cover only part of it); `n_pulses` counts all
    triggers including clickless ones, which the histogram normalization
    needs.
    """

    pulse: np.ndarray
    channel: np.ndarray
    time_ps: np.ndarray
    n_pulses: int
    channels: tuple[str, ...]
    malformed_lines: int = 0

    def __post_init__(self):
        if not (len(self.pulse) == len(self.channel) == len(self.time_ps)):
            raise InvalidParameterError("record columns differ in length")
        if len(self.pulse):
            if np.any(np.diff(self.pulse) < 0):
                raise InvalidParameterError("pulse indices must not decrease")
            if self.pulse[0] < 0 or self.pulse[-1] >= self.n_pulses:
                raise InvalidParameterError("pulse index outside [0, n_pulses)")
            if np.min(self.time_ps) < 0:
                raise InvalidParameterError("negative arrival time")
            if not np.all(np.isin(self.channel, self.channels)):
                raise InvalidParameterError("click on undeclared channel")
        if self.n_pulses < 0:
            raise InvalidParameterError("negative pulse count")

    def __len__(self) -> int:
        return len(self.pulse)


def concat_streams(first: TimeTagStream, second: TimeTagStream) -> TimeTagStream:
    """Append `second` after `first`, shifting its pulse indices."""
    channels = tuple(first.channels) + tuple(
        c for c in second.channels if c not in first.channels)
    return TimeTagStream(
        pulse=np.concatenate([first.pulse, second.pulse + first.n_pulses]),
        channel=np.concatenate([first.channel, second.channel]),
        time_ps=np.concatenate([first.time_ps, second.time_ps]),
        n_pulses=first.n_pulses + second.n_pulses,
        channels=channels,
        malformed_lines=first.malformed_lines + second.malformed_lines)


def default_port_map(model: DetectionModel) -> dict[str, tuple[str, int]]:
    """Channel names s0..s{k-1}, i0.. mapped to (species, detector index)."""
    ns, ni = model.n_ports
    ports = {f"s{k}": ("signal", k) for k in range(ns)}
    ports.update({f"i{k}": ("idler", k) for k in range(ni)})
    return ports


def _pair_time_pool(amplitude: JointTemporalAmplitude, n: int,
                    mcmc: MCMCConfig | None, seed: int,
                    draws: int) -> np.ndarray:
    # pools are resampled with replacement, so they only need to be a
    # small multiple of the draw count; n = 1 is exact and cheap while
    # each sampled order costs thinning-many Metropolis steps per row
    if mcmc is not None:
        cfg = mcmc
    elif n == 1:
        cfg = MCMCConfig(samples=max(50000, 3 * draws), seed=seed)
    else:
        cfg = MCMCConfig(samples=min(20000, max(2000, 2 * draws)),
                         chains=500, seed=seed)
    dist = marginal_pn(amplitude, n, mcmc=cfg, keep_samples=True)
    return dist.diagnostics["sample_pool"]


def synthesize(decomp: SchmidtDecomposition,
               amplitude: JointTemporalAmplitude,
               model: DetectionModel, n_pulses: int, seed: int = 0,
               n_max: int | None = None, joint_cap: int = JOINT_CAP,
               mcmc: MCMCConfig | None = None,
               pools: dict[int, np.ndarray] | None = None) -> TimeTagStream:
    """Simulate a click stream for `n_pulses` triggers of a known state.

    Per pulse the pair count follows the mode-summed geometric law; the
    2n arrival times come from the joint pair-time sampler (resampled
    rows of its retained pool), each photon survives to one detector
    port or the loss channel by an independent multinomial draw, and
    multiple survivors in the same (port, time bin) collapse to a single
    click.  Callers running many seeds over one state should precompute
    `pools` (pair count -> sample pool) once and share it.
    """
    if n_pulses < 0:
        raise InvalidParameterError("n_pulses must be >= 0")
    if joint_cap < 1:
        raise InvalidParameterError("joint_cap must be >= 1")
    rng = np.random.default_rng(seed)
    grid = amplitude.grid

    if n_max is None:
        n_max = 16
        while rn_from_schmidt(decomp, n_max).tail >= TAIL_TARGET:
            n_max *= 2
            if n_max > 512:
                raise InvalidParameterError(
                    "pair-number tail will not truncate; state too bright")
    pair_model = rn_from_schmidt(decomp, n_max)
    if pair_model.tail >= TAIL_TARGET:
        raise InvalidParameterError(
            f"pair-number tail {pair_model.tail:.2e} above {TAIL_TARGET:.0e} "
            f"at n_max={n_max}")
    counts = pair_model.sample(rng, n_pulses)

    pools = dict(pools) if pools else {}
    needed = sorted({int(n) for n in np.unique(counts) if 0 < n})
    demand: dict[int, int] = {}
    for n in needed:
        key = min(n, joint_cap)
        mult = 1 if n <= joint_cap else math.ceil(n / key)
        demand[key] = demand.get(key, 0) + mult * int(np.sum(counts == n))
    for key in sorted(demand):
        if key not in pools:
            pools[key] = _pair_time_pool(amplitude, key, mcmc, seed + 7 * key,
                                         demand[key])

    # per-photon flat arrays: owning pulse, species (0 signal / 1 idler),
    # grid bin
    photon_pulse, photon_species, photon_bin = [], [], []
    for n in needed:
        pulses_n = np.nonzero(counts == n)[0]
        key = min(n, joint_cap)
        pool = pools[key]
        if n <= joint_cap:
            rows = pool[rng.integers(0, pool.shape[0], size=len(pulses_n))]
            sig, idl = rows[:, :n], rows[:, n:]
        else:
            draws = math.ceil(n / key)
            rows = pool[rng.integers(0, pool.shape[0],
                                     size=(len(pulses_n), draws))]
            sig = rows[:, :, :key].reshape(len(pulses_n), draws * key)[:, :n]
            idl = rows[:, :, key:].reshape(len(pulses_n), draws * key)[:, :n]
        for species, half in ((0, sig), (1, idl)):
            photon_pulse.append(np.repeat(pulses_n, n))
            photon_species.append(np.full(len(pulses_n) * n, species))
            photon_bin.append(half.ravel())

    ns, ni = model.n_ports
    channels = tuple(default_port_map(model))
    if not photon_pulse:
        empty = np.array([], dtype=np.int64)
        return TimeTagStream(empty, np.array([], dtype="U8"), empty.copy(),
                             n_pulses, channels)
    ppulse = np.concatenate(photon_pulse)
    pspecies = np.concatenate(photon_species)
    pbin = np.concatenate(photon_bin)

    # multinomial port thinning; the last interval of each cumulative
    # table is the loss channel
    cum_s = np.cumsum(np.append(model.eta_s, 1.0 - sum(model.eta_s)))
    cum_i = np.cumsum(np.append(model.eta_i, 1.0 - sum(model.eta_i)))
    u = rng.random(len(ppulse))
    port = np.where(pspecies == 0,
                    np.searchsorted(cum_s, u, side="right"),
                    np.searchsorted(cum_i, u, side="right"))
    kept = (pspecies == 0) & (port < ns) | (pspecies == 1) & (port < ni)

    ppulse, pspecies, pbin, port = (a[kept] for a in
                                    (ppulse, pspecies, pbin, port))
    # channel code: signal ports first, then idler ports
    code = np.where(pspecies == 0, port, ns + port)
    # threshold collapse: one click per (pulse, channel, bin)
    key = (ppulse * (ns + ni) + code) * grid.n_points + pbin
    key = np.unique(key)
    pbin = key % grid.n_points
    code = (key // grid.n_points) % (ns + ni)
    ppulse = key // (grid.n_points * (ns + ni))

    names = np.array(channels)
    times = np.rint(grid.times).astype(np.int64)
    return TimeTagStream(ppulse.astype(np.int64), names[code],
                         times[pbin], n_pulses, channels)


def write_stream(stream: TimeTagStream, path) -> None:
    """Headered CSV, one click per line, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_HEADER + "\n")
        for p, c, t in zip(stream.pulse, stream.channel, stream.time_ps):
            fh.write(f"{p},{c},{t}\n")


def ingest(path, n_pulses: int | None = None,
           channels: tuple[str, ...] | None = None) -> TimeTagStream:
    """Parse a click CSV into a validated stream.

    Malformed data lines are skipped and counted; beyond 0.1% of the
    file they become a hard error.  Pulse indices must never decrease.
    When `n_pulses` is not given it is inferred as last index + 1, which
    undercounts if the run ended with clickless pulses.
    """
    pulses, chans, times = [], [], []
    malformed = 0
    total = 0
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header and header.strip() != _HEADER:
            raise DataFormatError(f"expected header {_HEADER!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            total += 1
            parts = line.split(",")
            if len(parts) != 3:
                malformed += 1
                continue
            try:
                p, t = int(parts[0]), int(parts[2])
            except ValueError:
                malformed += 1
                continue
            c = parts[1].strip()
            if p < 0 or t < 0 or not c:
                malformed += 1
                continue
            pulses.append(p)
            chans.append(c)
            times.append(t)
    if total and malformed / total > MALFORMED_BUDGET:
        raise DataFormatError(
            f"{malformed} of {total} lines malformed "
            f"(budget {MALFORMED_BUDGET:.1%})")
    pulse = np.array(pulses, dtype=np.int64)
    if len(pulse) and np.any(np.diff(pulse) < 0):
        raise DataFormatError("pulse indices decrease within the file")
    if n_pulses is None:
        n_pulses = int(pulse[-1]) + 1 if len(pulse) else 0
    chan = np.array(chans, dtype="U8") if chans else np.array([], dtype="U8")
    if channels is None:
        seen = {}
        for c in chans:
            seen.setdefault(c, None)
        channels = tuple(seen)
    else:
        unknown = set(chans) - set(channels)
        if unknown:
            raise DataFormatError(f"undeclared channels {sorted(unknown)}")
    return TimeTagStream(pulse, chan, np.array(times, dtype=np.int64),
                         n_pulses, tuple(channels), malformed)


@dataclass(frozen=True)
class CoincidenceHistograms:
    """Accumulated coincidence counts on one analysis grid.

    `h2[q, p]` counts distinct signal-click/idler-click pairings; `h4m`
    is the pair-marginalized four-fold accumulator (every unordered
    2+2 click selection adds one count at each of its four (signal,
    idler) bin combinations) and `h6m` the 3+3 analogue.  Divide by
    `n_pulses` for per-pulse probabilities.
    """

    h2: np.ndarray
    h4m: np.ndarray
    h6m: np.ndarray | None
    n_pulses: int
    singles: dict[str, np.ndarray]
    grid: TimeGrid
    #: pulses with at least one click per species; the threshold singles
    #: fraction that efficiency fitting inverts (bin collapse never hides
    #: a captured photon, so this equals the capture fraction exactly)
    side_clicks: dict[str, int] | None = None

    def __post_init__(self):
        for name, arr in (("h2", self.h2), ("h4m", self.h4m),
                          ("h6m", self.h6m)):
            if arr is not None and np.min(arr) < 0:
                raise InvalidParameterError(f"negative counts in {name}")
        if self.n_pulses < 0:
            raise InvalidParameterError("negative pulse count")
        if self.side_clicks is not None:
            for species, count in self.side_clicks.items():
                if not 0 <= count <= self.n_pulses:
                    raise InvalidParameterError(
                        f"{species} click-pulse count {count} outside "
                        f"[0, {self.n_pulses}]")

    def __add__(self, other: "CoincidenceHistograms") -> "CoincidenceHistograms":
        if not isinstance(other, CoincidenceHistograms):
            return NotImplemented
        if self.grid != other.grid:
            raise GridMismatchError("histogram grids differ")
        if (self.h6m is None) != (other.h6m is None):
            raise InvalidParameterError("six-fold present on only one side")
        singles = {c: self.singles[c].copy() for c in self.singles}
        for c, arr in other.singles.items():
            singles[c] = singles.get(c, 0) + arr
        side = None
        if self.side_clicks is not None and other.side_clicks is not None:
            side = {s: self.side_clicks.get(s, 0) + other.side_clicks.get(s, 0)
                    for s in set(self.side_clicks) | set(other.side_clicks)}
        return CoincidenceHistograms(
            h2=self.h2 + other.h2, h4m=self.h4m + other.h4m,
            h6m=None if self.h6m is None else self.h6m + other.h6m,
            n_pulses=self.n_pulses + other.n_pulses,
            singles=singles, grid=self.grid, side_clicks=side)

    def p2(self) -> np.ndarray:
        return self.h2 / self.n_pulses

    def p4m(self) -> np.ndarray:
        return self.h4m / self.n_pulses

    def p6m(self) -> np.ndarray | None:
        return None if self.h6m is None else self.h6m / self.n_pulses


def histogram(stream: TimeTagStream, grid: TimeGrid,
              ports: dict[str, tuple[str, int]]) -> CoincidenceHistograms:
    """Bin a stream into the coincidence structures.

    All pairings are counted: a pulse with ks signal and ki idler clicks
    adds ks*ki counts to h2.  The four-fold marginal accumulates, per
    unordered 2+2 selection, one count at each of the four bin pairs;
    with per-pulse bin-count vectors cs, ci this whole accumulation is
    outer(cs*(ks-1), ci*(ki-1)) summed over pulses, computed here as one
    sparse matrix product (the scale factor vanishes for ks < 2, which
    enforces the selection condition).  Clicks outside the grid span are
    dropped.
    """
    for c in stream.channels:
        if c not in ports:
            raise ConfigError(f"channel {c!r} missing from the port map")
    for c, (species, _) in ports.items():
        if species not in ("signal", "idler"):
            raise ConfigError(f"channel {c!r} mapped to {species!r}")

    nb = grid.n_points
    bins = np.floor((stream.time_ps - grid.t_start) / grid.dt).astype(np.int64)
    keep = (bins >= 0) & (bins < nb)
    pulse, chan, bins = stream.pulse[keep], stream.channel[keep], bins[keep]
    is_signal = np.array([ports[c][0] == "signal" for c in chan], dtype=bool) \
        if len(chan) else np.array([], dtype=bool)

    n_pulses = max(stream.n_pulses, 1)

    def count_matrix(mask):
        return sparse.csr_matrix(
            (np.ones(int(np.count_nonzero(mask))),
             (pulse[mask], bins[mask])),
            shape=(n_pulses, nb))

    cs = count_matrix(is_signal)
    ci = count_matrix(~is_signal)
    ks = np.asarray(cs.sum(axis=1)).ravel()
    ki = np.asarray(ci.sum(axis=1)).ravel()

    h2 = np.asarray((cs.T @ ci).todense())
    h4m = np.asarray(((sparse.diags(ks - 1.0) @ cs).T
                      @ (sparse.diags(ki - 1.0) @ ci)).todense())
    h6m = np.asarray(((sparse.diags((ks - 1.0) * (ks - 2.0) / 2.0) @ cs).T
                      @ (sparse.diags((ki - 1.0) * (ki - 2.0) / 2.0) @ ci))
                     .todense())

    singles = {}
    for c in stream.channels:
        singles[c] = np.bincount(bins[chan == c], minlength=nb).astype(float)
    side_clicks = {"signal": int(np.unique(pulse[is_signal]).size),
                   "idler": int(np.unique(pulse[~is_signal]).size)}
    return CoincidenceHistograms(h2=h2, h4m=h4m, h6m=h6m,
                                 n_pulses=stream.n_pulses,
                                 singles=singles, grid=grid,
                                 side_clicks=side_clicks)


def _read_matrix_csv(path, n_points: int) -> np.ndarray:
    mat = np.zeros((n_points, n_points))
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "q,p,count":
            raise DataFormatError(f"{path}: expected 'q,p,count' header")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            try:
                q, p, v = int(parts[0]), int(parts[1]), float(parts[2])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad row") from exc
            if not (0 <= q < n_points and 0 <= p < n_points):
                raise DataFormatError(f"{path}:{lineno}: index off the grid")
            mat[q, p] = v
    return mat


def read_histograms(directory) -> CoincidenceHistograms:
    """Load a histogram directory written by `write_histograms`."""
    import os
    meta_path = os.path.join(directory, "histograms.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read {meta_path}: {exc}") from exc
    try:
        g = meta["grid"]
        grid = TimeGrid(g["t_start_ps"], g["dt_ps"], g["n_points"])
        n_pulses = int(meta["n_pulses"])
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{meta_path}: missing fields: {exc}") from exc
    nb = grid.n_points
    h2 = _read_matrix_csv(os.path.join(directory, "h2.csv"), nb)
    h4m = _read_matrix_csv(os.path.join(directory, "h4m.csv"), nb)
    h6_path = os.path.join(directory, "h6m.csv")
    h6m = _read_matrix_csv(h6_path, nb) if os.path.exists(h6_path) else None
    singles = {}
    with open(os.path.join(directory, "singles.csv"), "r",
              encoding="utf-8") as fh:
        names = fh.readline().strip().split(",")[1:]
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if len(rows) != nb:
        raise DataFormatError("singles.csv row count does not match the grid")
    try:
        for k, name in enumerate(names):
            singles[name] = np.array([float(r[k + 1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataFormatError("singles.csv: bad row") from exc
    side = meta.get("side_clicks")
    if side is not None:
        side = {str(k): int(v) for k, v in side.items()}
    return CoincidenceHistograms(h2=h2, h4m=h4m, h6m=h6m, n_pulses=n_pulses,
                                 singles=singles, grid=grid, side_clicks=side)


def write_histograms(hists: CoincidenceHistograms, directory,
                     ports: dict[str, tuple[str, int]] | None = None) -> None:
    """CSV matrices plus a JSON sidecar with grid and pulse metadata."""
    import os
    mats = {"h2": hists.h2, "h4m": hists.h4m}
    if hists.h6m is not None:
        mats["h6m"] = hists.h6m
    for name, mat in mats.items():
        with open(os.path.join(directory, f"{name}.csv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write("q,p,count\n")
            for q in range(mat.shape[0]):
                for p in range(mat.shape[1]):
                    fh.write(f"{q},{p},{float(mat[q, p])!r}\n")
    with open(os.path.join(directory, "singles.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        chans = sorted(hists.singles)
        fh.write("bin," + ",".join(chans) + "\n")
        for q in range(hists.grid.n_points):
            row = ",".join(repr(float(hists.singles[c][q])) for c in chans)
            fh.write(f"{q},{row}\n")
    meta = {
        "grid": {"t_start_ps": hists.grid.t_start, "dt_ps": hists.grid.dt,
                 "n_points": hists.grid.n_points},
        "n_pulses": hists.n_pulses,
        "ports": {c: list(v) for c, v in ports.items()} if ports else None,
        "side_clicks": hists.side_clicks,
    }
    with open(os.path.join(directory, "histograms.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")

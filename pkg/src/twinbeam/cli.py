"""Command line front end.

Subcommands cover the full pipeline: `simulate` sweeps operating points
and writes observable tables, `decompose` dumps the temporal-mode
structure of one point, `synth` generates a synthetic click stream with
its histograms, `correct` runs the multi-pair correction on histogram
files, `stats` compares two sample files, and `report` audits a run
directory against its manifest.  Every run writes a `manifest.json`
naming all outputs; all randomness flows from `--seed`.

Exit codes: 0 success, 2 configuration problem, 3 numerical failure,
4 data-format problem.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, load_config, resolve_config
from .errors import (ConfigError, DataFormatError, InvalidParameterError,
                     NumericsError, ThresholdExceededError)
from .events import (default_port_map, histogram, ingest, read_histograms,
                     synthesize, write_histograms, write_stream)
from .model import TimeGrid
from .moments import evolve_moments, two_time_correlators, write_two_time_csv
from .multiphoton import (correct_p1, detection_probs,
                          fit_effective_detection, purity_bound_from_grid,
                          rn_from_schmidt)
from .observables import (collect_observables, optimal_detuning,
                          write_flux_csv, write_g1_csv, write_spectrum_csv,
                          write_sweep_csv)
from .pump import solve_pump
from .schmidt import decompose, jta, nepers_to_db, output_squeezing, \
    write_jta_csv, write_schmidt_csv
from .stats import permutation_test, read_samples_csv, write_test_json

OUTPUT_DIR_ENV = "TWINBEAM_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_DATA = 4

PUMP_DT_PS = 2.0
RN_ORDERS = 30


def _atomic_write(path, writer) -> None:
    # temp-then-rename so a crashed run never leaves half a file
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)


def _pump_grid(params, pulse, analysis: TimeGrid) -> TimeGrid:
    """Grid covering drive, ring-down and the analysis span."""
    t_end = max(pulse.duration + 5.5 / params.gamma_tot,
                analysis.t_end + analysis.dt)
    t_start = min(-100.0, analysis.t_start)
    n = int(math.ceil((t_end - t_start) / PUMP_DT_PS)) + 2
    return TimeGrid(t_start, PUMP_DT_PS, n)


def _detuning_range(params, energy_pj: float) -> tuple[float, float]:
    # the optimum grows about linearly with pulse energy; bracket with a
    # factor-two margin plus a floor for the low-energy end
    upper = params.gamma_tot * max(2.0, 0.012 * energy_pj)
    return (0.0, upper)


def _resolve_point(cfg: RunConfig, energy_pj: float, mode: str,
                   duration_ps: float | None = None):
    """(params, pulse) for one operating point; mode zero|opt|<rad/s>."""
    point = cfg.replace_energy(energy_pj)
    pulse = point.pulse
    if duration_ps is not None and duration_ps != pulse.duration:
        from .model import PumpPulse
        pulse = PumpPulse(avg_power=pulse.avg_power, rep_rate=pulse.rep_rate,
                          duration=duration_ps,
                          carrier_omega=pulse.carrier_omega)
    params = cfg.params
    if mode == "zero":
        params = params.replace_detuning(0.0)
    elif mode == "opt":
        delta = optimal_detuning(params, pulse,
                                 _detuning_range(params, energy_pj))
        params = params.replace_detuning(delta)
    else:
        try:
            params = params.replace_detuning(float(mode) * 1e-12)
        except ValueError:
            raise ConfigError(
                f"detuning must be 'zero', 'opt' or a rad/s value, "
                f"got {mode!r}")
    return params, pulse


def _solve_state(params, pulse, grid: TimeGrid):
    traj = solve_pump(params, pulse, _pump_grid(params, pulse, grid))
    state = evolve_moments(traj, params, grid)
    tt = two_time_correlators(traj, params, grid)
    dec = decompose(tt)
    return state, tt, dec


class _Run:
    """Output directory, stage clock and manifest for one invocation."""

    def __init__(self, command: str, args):
        out = getattr(args, "output_dir", None) \
            or os.environ.get(OUTPUT_DIR_ENV) or "twinbeam-out"
        self.dir = out
        os.makedirs(out, exist_ok=True)
        self.outputs: list[str] = []
        self.stages: dict[str, float] = {}
        self.notes: list[str] = []
        self.command = command
        self.seed = getattr(args, "seed", 0)
        self.config_snapshot: dict = {}

    def path(self, rel: str) -> str:
        full = os.path.join(self.dir, rel)
        os.makedirs(os.path.dirname(full) or ".", exist_ok=True)
        return full

    def write(self, rel: str, writer) -> str:
        full = self.path(rel)
        _atomic_write(full, writer)
        self.outputs.append(rel)
        return full

    def stage(self, name: str):
        run = self

        class _Clock:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = run.stages.get(name, 0.0) \
                    + time.perf_counter() - self.t0

        return _Clock()

    def finish(self) -> int:
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "config": self.config_snapshot,
            "versions": {
                "twinbeam": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": sys.version.split()[0],
            },
            "outputs": sorted(self.outputs),
            "stage_seconds": {k: round(v, 3)
                              for k, v in self.stages.items()},
            "notes": self.notes,
        }
        _atomic_write(self.path("manifest.json"),
                      lambda p: _dump_json(manifest, p))
        return EXIT_OK


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_cfg(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return resolve_config({})


def _float_list(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers: {text!r}")
    if not vals:
        raise ConfigError(f"{flag} is empty")
    return vals


# --------------------------------------------------------------------------
# simulate

def _simulate_point(raw_cfg: dict, duration_ps: float, energy_pj: float,
                    mode: str, outdir: str) -> dict:
    """One sweep point; returns its summary row.  Top level for pickling."""
    cfg = resolve_config(raw_cfg)
    params, pulse = _resolve_point(cfg, energy_pj, mode, duration_ps)
    state, tt, dec = _solve_state(params, pulse, cfg.grid)
    obs = collect_observables(state, tt, dec, params)
    os.makedirs(outdir, exist_ok=True)
    _atomic_write(os.path.join(outdir, "flux.csv"),
                  lambda p: write_flux_csv(state, p, params))
    _atomic_write(os.path.join(outdir, "g1.csv"),
                  lambda p: write_g1_csv(obs.g1, p))
    _atomic_write(os.path.join(outdir, "spectrum.csv"),
                  lambda p: write_spectrum_csv(obs.spectrum, p))
    _atomic_write(os.path.join(outdir, "schmidt.csv"),
                  lambda p: write_schmidt_csv(dec, p,
                                              params.escape_efficiency))
    xi_out = output_squeezing(dec.xi, params.escape_efficiency)
    return {
        "row": (duration_ps, energy_pj, mode, params.delta_p,
                obs.n_per_pulse, obs.g2, dec.schmidt_number(), dec.purity(),
                float(nepers_to_db(np.max(dec.xi))) if len(dec.xi) else 0.0,
                float(nepers_to_db(np.max(xi_out))) if len(dec.xi) else 0.0),
        "delta": params.delta_p,
    }


SWEEP_COLUMNS = ["duration_ps", "energy_pj", "mode", "delta_rad_per_ps",
                 "n_per_pulse", "g2", "schmidt_number", "purity",
                 "xi_max_db", "xi_out_max_db"]


def cmd_simulate(args) -> int:
    run = _Run("simulate", args)
    cfg = _load_cfg(args)
    run.config_snapshot = dict(cfg.raw)
    energies = sorted(_float_list(args.energies, "--energies"))
    modes = [m.strip() for m in args.detunings.split(",") if m.strip()]
    durations = (_float_list(args.durations, "--durations")
                 if args.durations else [cfg.pulse.duration])
    points = [(d, e, m) for d in durations for m in modes for e in energies]

    rows = []
    truncated = []
    with run.stage("sweep"):
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                futs = {
                    pool.submit(_simulate_point, cfg.raw, d, e, m,
                                run.path(_point_label(d, e, m))): (d, e, m)
                    for d, e, m in points}
                for fut, key in futs.items():
                    try:
                        rows.append(fut.result()["row"])
                        _record_point(run, *key)
                    except ThresholdExceededError as exc:
                        truncated.append(key)
                        run.notes.append(f"threshold at {key}: {exc}")
        else:
            stop_series = set()
            for d, e, m in points:
                if (d, m) in stop_series:
                    truncated.append((d, e, m))
                    continue
                try:
                    out = _simulate_point(cfg.raw, d, e, m,
                                          run.path(_point_label(d, e, m)))
                    rows.append(out["row"])
                    _record_point(run, d, e, m)
                except ThresholdExceededError as exc:
                    # energies are ascending: everything above diverges too
                    truncated.append((d, e, m))
                    stop_series.add((d, m))
                    run.notes.append(f"threshold at {(d, e, m)}: {exc}")

    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    meta = {"manifest": "manifest.json"}
    if truncated:
        meta["truncated_points"] = ";".join(
            f"{d:g}ps/{e:g}pJ/{m}" for d, e, m in truncated)
    run.write("sweep.csv",
              lambda p: write_sweep_csv(p, SWEEP_COLUMNS, rows, meta))
    opt_rows = [(r[0], r[1], r[3]) for r in rows if r[2] == "opt"]
    if opt_rows:
        run.write("detuning.csv", lambda p: write_sweep_csv(
            p, ["duration_ps", "energy_pj", "delta_opt_rad_per_ps"],
            opt_rows, meta))
    return run.finish()


def _point_label(duration_ps: float, energy_pj: float, mode: str) -> str:
    return f"point_{mode}_T{duration_ps:g}_E{energy_pj:g}"


def _record_point(run: _Run, d: float, e: float, m: str) -> None:
    label = _point_label(d, e, m)
    for name in ("flux.csv", "g1.csv", "spectrum.csv", "schmidt.csv"):
        run.outputs.append(os.path.join(label, name))


# --------------------------------------------------------------------------
# decompose

def cmd_decompose(args) -> int:
    run = _Run("decompose", args)
    cfg = _load_cfg(args)
    run.config_snapshot = dict(cfg.raw)
    with run.stage("solve"):
        params, pulse = _resolve_point(cfg, args.energy, args.detuning)
        state, tt, dec = _solve_state(params, pulse, cfg.grid)
        amp = jta(dec)
    with run.stage("write"):
        run.write("two_time.csv", lambda p: write_two_time_csv(tt, p))
        run.write("schmidt.csv", lambda p: write_schmidt_csv(
            dec, p, params.escape_efficiency))
        run.write("jta.csv", lambda p: write_jta_csv(amp, p))
    run.notes.append(
        f"pairs={dec.mean_pair_number():.6g} K={dec.schmidt_number():.6g} "
        f"delta={params.delta_p:.6g}/ps")
    return run.finish()


# --------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    run = _Run("synth", args)
    cfg = _load_cfg(args)
    run.config_snapshot = dict(cfg.raw)
    with run.stage("solve"):
        params, pulse = _resolve_point(cfg, args.energy, args.detuning)
        state, tt, dec = _solve_state(params, pulse, cfg.grid)
        amp = jta(dec)
    with run.stage("synthesize"):
        stream = synthesize(dec, amp, cfg.detection, args.pulses,
                            seed=args.seed)
    with run.stage("histogram"):
        ports = default_port_map(cfg.detection)
        hists = histogram(stream, cfg.grid, ports)
    with run.stage("write"):
        run.write("stream.csv", lambda p: write_stream(stream, p))
        run.write("jta.csv", lambda p: write_jta_csv(amp, p))
        run.write("schmidt.csv", lambda p: write_schmidt_csv(
            dec, p, params.escape_efficiency))
        hist_dir = run.path("histograms")
        os.makedirs(hist_dir, exist_ok=True)
        write_histograms(hists, hist_dir, ports)
        for name in ("h2.csv", "h4m.csv", "h6m.csv", "singles.csv",
                     "histograms.json"):
            if os.path.exists(os.path.join(hist_dir, name)):
                run.outputs.append(os.path.join("histograms", name))
    run.notes.append(f"clicks={len(stream)} pulses={stream.n_pulses}")
    return run.finish()


# --------------------------------------------------------------------------
# correct

def cmd_correct(args) -> int:
    run = _Run("correct", args)
    cfg = _load_cfg(args)
    run.config_snapshot = dict(cfg.raw)
    with run.stage("read"):
        hists = read_histograms(args.histograms)
    with run.stage("solve"):
        params, pulse = _resolve_point(cfg, args.energy, args.detuning)
        state, tt, dec = _solve_state(params, pulse, hists.grid)
        rn = rn_from_schmidt(dec, RN_ORDERS)
    with run.stage("correct"):
        if args.fit_eta:
            if hists.side_clicks is None:
                raise ConfigError(
                    "histograms carry no per-side click-pulse counts; "
                    "rebuild them with this package or drop --fit-eta")
            singles_s = hists.side_clicks.get("signal", 0) / hists.n_pulses
            singles_i = hists.side_clicks.get("idler", 0) / hists.n_pulses
            # channel roles by name prefix: s* signal, i* idler
            n_s = sum(1 for c in hists.singles if c.startswith("s"))
            n_i = sum(1 for c in hists.singles if c.startswith("i"))
            model = fit_effective_detection(singles_s, singles_i, rn,
                                            n_ports=(max(n_s, 1),
                                                     max(n_i, 1)))
        else:
            model = cfg.detection
        probs = detection_probs(model, RN_ORDERS)
        raw_bound = purity_bound_from_grid(hists.p2())
        result = correct_p1(hists.p2(), hists.p4m(), probs, rn,
                            order=args.order, hist6_marginal=hists.p6m())
    with run.stage("write"):
        est = result.p1_estimate

        def _write_p1(path):
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("q,p,p1\n")
                for q in range(est.shape[0]):
                    for p in range(est.shape[1]):
                        fh.write(f"{q},{p},{float(est[q, p])!r}\n")

        run.write("corrected_p1.csv", _write_p1)
        report = {
            "order": args.order,
            "alpha_opt": result.alpha_opt,
            "beta_opt": result.beta_opt,
            "purity_bound_raw": raw_bound,
            "purity_bound_corrected": result.purity_bound,
            "clipping_fraction": result.clipping_fraction,
            "condition_number": result.condition_number,
            "residual_weight": result.residual_weight,
            "eta_s": list(model.eta_s),
            "eta_i": list(model.eta_i),
            "eta_fitted": bool(args.fit_eta),
        }
        run.write("correction.json", lambda p: _dump_json(report, p))
    return run.finish()


# --------------------------------------------------------------------------
# stats

def cmd_stats(args) -> int:
    run = _Run("stats", args)
    with run.stage("test"):
        x = read_samples_csv(args.samples_x)
        y = read_samples_csv(args.samples_y)
        result = permutation_test(x, y, n_perm=args.permutations,
                                  seed=args.seed)
    run.write("energy_test.json", lambda p: write_test_json(result, p))
    print(f"d2={result.d2:.6g} p={result.p_value:.4g} "
          f"sizes={result.sample_sizes}")
    return run.finish()


# --------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    out = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "twinbeam-out"
    manifest_path = os.path.join(out, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read {manifest_path}: {exc}") from exc
    lines = [f"run: {manifest.get('command')} "
             f"(twinbeam {manifest.get('versions', {}).get('twinbeam')}, "
             f"seed {manifest.get('seed')})"]
    missing = 0
    for rel in manifest.get("outputs", []):
        full = os.path.join(out, rel)
        if os.path.exists(full):
            lines.append(f"  ok      {rel}  ({os.path.getsize(full)} bytes)")
        else:
            lines.append(f"  MISSING {rel}")
            missing += 1
    for note in manifest.get("notes", []):
        lines.append(f"  note: {note}")
    total = len(manifest.get("outputs", []))
    lines.append(f"{total - missing}/{total} outputs present")
    text = "\n".join(lines) + "\n"
    _atomic_write(os.path.join(out, "report.txt"),
                  lambda p: open(p, "w", encoding="utf-8").write(text))
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinbeam",
        description="Simulate and analyze pulsed twin-beam squeezing.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--output-dir",
                        help=f"run directory (default ${OUTPUT_DIR_ENV} "
                             f"or ./twinbeam-out)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for all randomness (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="sweep operating points, write observables")
    p.add_argument("--energies", default="50,100,200,400,800",
                   help="pulse energies in pJ, comma-separated")
    p.add_argument("--detunings", default="zero,opt",
                   help="comma list of zero|opt|<rad/s>")
    p.add_argument("--durations", default=None,
                   help="pulse durations in ps, comma-separated")
    p.add_argument("--workers", type=int, default=1,
                   help="sweep-point worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", parents=[common],
                       help="temporal-mode structure of one point")
    p.add_argument("--energy", type=float, required=True,
                   help="pulse energy in pJ")
    p.add_argument("--detuning", default="zero", help="zero|opt|<rad/s>")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", parents=[common],
                       help="synthesize a click stream and histograms")
    p.add_argument("--energy", type=float, required=True)
    p.add_argument("--detuning", default="zero")
    p.add_argument("--pulses", type=int, default=100000,
                   help="number of pump triggers")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("correct", parents=[common],
                       help="multi-pair correction of coincidence histograms")
    p.add_argument("--histograms", required=True,
                   help="directory holding h2/h4m[/h6m]/singles CSVs")
    p.add_argument("--energy", type=float, required=True)
    p.add_argument("--detuning", default="zero")
    p.add_argument("--order", default="four_fold",
                   choices=["four_fold", "six_fold"])
    p.add_argument("--fit-eta", action="store_true",
                   help="fit per-side efficiencies from singles rates")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("stats", parents=[common],
                       help="two-sample energy-distance permutation test")
    p.add_argument("--samples-x", required=True, help="x,y CSV file")
    p.add_argument("--samples-y", required=True, help="x,y CSV file")
    p.add_argument("--permutations", type=int, default=1000)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", parents=[common],
                       help="audit a run directory against its manifest")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())

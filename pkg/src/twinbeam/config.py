"""Flat key=value configuration files.

All quantities are given in SI units and converted to the internal
picosecond system at this boundary.  Recognized keys:

=================  =======================================  ==================
key                meaning                                  unit
=================  =======================================  ==================
gamma_e            bus-waveguide coupling rate              1/s
gamma_i            intrinsic loss rate                      1/s
lambda_nl          nonlinear rate quote                     rad/s (datasheet
                                                            "Hz" convention)
delta_p            pump detuning from cold resonance        rad/s
d_int              integrated dispersion at the pair modes  1/s
fsr_m              FSR count from pump to signal/idler      integer
power              average pump power                       W
rep_rate           pulse repetition rate                    Hz
duration           top-hat pulse duration                   s
wavelength_pump    pump vacuum wavelength                   m
grid.dt            analysis grid step                       s
grid.n             analysis grid point count                integer
eta_s              signal port transmissions                comma-separated
eta_i              idler port transmissions                 comma-separated
=================  =======================================  ==================

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Any key outside this table is a hard error, as is a malformed line or an
unparsable value.  Missing keys fall back to the bundled reference device.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import model
from .errors import ConfigError

_FLOAT_KEYS = frozenset({
    "gamma_e", "gamma_i", "lambda_nl", "delta_p", "d_int",
    "power", "rep_rate", "duration", "wavelength_pump", "grid.dt",
})
_INT_KEYS = frozenset({"fsr_m", "grid.n"})
_LIST_KEYS = frozenset({"eta_s", "eta_i"})
KNOWN_KEYS = frozenset(_FLOAT_KEYS | _INT_KEYS | _LIST_KEYS)

_S_TO_PS = 1e12


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration resolved against the reference defaults."""

    params: model.ResonatorParams
    pulse: model.PumpPulse
    grid: model.TimeGrid
    detection: model.DetectionModel
    raw: dict

    def replace_energy(self, energy_pj: float) -> "RunConfig":
        """Same configuration with the pulse energy swapped out."""
        pulse = model.PumpPulse(
            avg_power=energy_pj * 1e-12 * self.pulse.rep_rate,
            rep_rate=self.pulse.rep_rate,
            duration=self.pulse.duration,
            carrier_omega=self.pulse.carrier_omega,
        )
        return RunConfig(self.params, pulse, self.grid, self.detection, self.raw)


def parse_config(text: str) -> dict:
    """Parse config text into a {key: parsed value} dict.

    Raises ConfigError on unknown keys, duplicate keys, malformed lines
    or values that do not parse as the declared type.
    """
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _FLOAT_KEYS:
                out[key] = float(value)
            elif key in _INT_KEYS:
                out[key] = int(value)
            else:
                out[key] = tuple(float(v) for v in value.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return out


def load_config(path) -> RunConfig:
    """Read a config file and resolve it into simulation objects."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(parse_config(text))


def resolve_config(cfg: dict) -> RunConfig:
    """Build (params, pulse, grid, detection) from a parsed dict.

    Missing keys default to the bundled reference device driven by a
    1000 pJ, 800 ps pulse on the standard 50 x 80 ps analysis grid with
    one lossless port per species.
    """
    ref = model.default_device()
    wavelength = cfg.get("wavelength_pump", model.REFERENCE_WAVELENGTH_M)
    omega_p = model.omega_from_wavelength(wavelength)

    gamma_e = cfg.get("gamma_e")
    gamma_i = cfg.get("gamma_i")
    gamma_e = ref.gamma_e if gamma_e is None else gamma_e / _S_TO_PS
    gamma_i = ref.gamma_i if gamma_i is None else gamma_i / _S_TO_PS

    lam = cfg.get("lambda_nl")
    lam = ref.lambda_nl if lam is None else lam * model.LAMBDA_QUOTE_TO_RAD_PER_PS
    d_int = cfg.get("d_int")
    d_int = ref.d_int if d_int is None else d_int / _S_TO_PS
    delta_p = cfg.get("delta_p", 0.0) / _S_TO_PS

    try:
        params = model.ResonatorParams(
            gamma_e=gamma_e,
            gamma_i=gamma_i,
            lambda_nl=lam,
            delta_p=delta_p,
            d_int=d_int,
            fsr_count_m=cfg.get("fsr_m", ref.fsr_count_m),
        )
        pulse = model.PumpPulse(
            avg_power=cfg.get("power", 1e-4),
            rep_rate=cfg.get("rep_rate", model.REFERENCE_REP_RATE_HZ),
            duration=cfg.get("duration", 800e-12) * _S_TO_PS,
            carrier_omega=omega_p,
        )
        grid = model.TimeGrid(
            t_start=0.0,
            dt=cfg.get("grid.dt", 80e-12) * _S_TO_PS,
            n_points=cfg.get("grid.n", 50),
        )
        detection = model.DetectionModel(
            eta_s=cfg.get("eta_s", (1.0,)),
            eta_i=cfg.get("eta_i", (1.0,)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return RunConfig(params, pulse, grid, detection, dict(cfg))

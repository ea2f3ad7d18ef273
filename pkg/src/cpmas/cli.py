"""Command-line surface for simulating, comparing and fitting CP curves.

Commands:
    simulate   single-orientation analytic transfer curve -> CSV (t_us, eta)
    powder     powder-averaged curve (efficiency, or magnetization when
               relaxation parameters are given) -> CSV
    oracle     density-matrix propagation -> CSV (t_us, sy, iy, dq_y)
    compare    analytic vs. propagator on identical parameters -> report +
               CSV (t_us, eta_analytic, sy_oracle); exit 2 above threshold
    fit        least-squares fit of measured build-up data -> report +
               overlay CSV (time_us, magnetization, model, residual)

User-facing units are kHz for all frequencies (as nu = omega/2pi, so the
coupling flag --d-khz takes d/2pi), microseconds and milliseconds for
times, and degrees for angles; everything is converted to rad/s, s, rad at
parse time.  A plain-text key-value config file can supply any flag
(--config); explicit flags override file values.

Exit codes: 0 success, 1 usage/config error, 2 comparison threshold
exceeded, 3 data error, 4 fit non-convergence or fit failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytic, fitting, oracle, powder
from .core import (CouplingParams, Orientation, RfScheme, SpinningParams,
                   TimeGrid, effective_field, scaled_coupling)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_THRESHOLD = 2
EXIT_DATA = 3
EXIT_FIT = 4

KHZ = 2.0 * math.pi * 1e3   # kHz -> rad/s
US = 1e-6                   # microseconds -> s
MS = 1e-3                   # milliseconds -> s
DEG = math.pi / 180.0


class ConfigError(Exception):
    """Invalid command line, config file, or parameter combination."""


@dataclass(frozen=True)
class Opt:
    """One CLI option: flag name, value parser, default (None = required)."""

    flag: str
    type: type
    help: str
    default: object = None
    required: bool = False

    @property
    def dest(self) -> str:
        return self.flag.replace("-", "_")


_RF_OPTS = [
    Opt("b1i-khz", float, "I spin-lock amplitude, kHz"),
    Opt("b1s-khz", float, "S spin-lock amplitude, kHz"),
    Opt("offset-i-khz", float, "I resonance offset, kHz", default=0.0),
    Opt("offset-s-khz", float, "S resonance offset, kHz", default=0.0),
]
_COUPLING_OPT = Opt("d-khz", float, "dipolar coupling d/2pi, kHz", required=True)
_MAS_OPT = Opt("mas-khz", float, "spinning rate, kHz", required=True)
_ANGLE_OPTS = [
    Opt("beta-deg", float, "orientation angle beta, degrees", required=True),
    Opt("gamma-deg", float, "orientation angle gamma, degrees", required=True),
]
_GRID_OPTS = [
    Opt("tmax-us", float, "last sample time, microseconds", required=True),
    Opt("dt-us", float, "sample spacing, microseconds", required=True),
]
_RELAX_OPTS = [
    Opt("r-inv-us", float, "spin-diffusion time 1/R, microseconds"),
    Opt("r1-inv-us", float, "oscillation-damping time 1/R1, microseconds"),
    Opt("t1rho-ms", float, "rotating-frame relaxation time, milliseconds"),
    Opt("m0", float, "equilibrium amplitude", default=1.0),
]
_COMMON_OPTS = [
    Opt("out", str, "output CSV path", required=True),
    Opt("config", str, "key-value config file; flags override it"),
    Opt("seed", int, "random seed recorded for reproducibility", default=0),
]

COMMAND_OPTS = {
    "simulate": [_COUPLING_OPT, _MAS_OPT, *_ANGLE_OPTS, *_GRID_OPTS,
                 *_RF_OPTS, *_COMMON_OPTS],
    "powder": [_COUPLING_OPT, _MAS_OPT, *_GRID_OPTS, *_RF_OPTS,
               Opt("orient-set", str, "orientation set, grid:NxM or zcw:L",
                   default="zcw:8"),
               *_RELAX_OPTS, *_COMMON_OPTS],
    "oracle": [_COUPLING_OPT, _MAS_OPT, *_ANGLE_OPTS, *_GRID_OPTS,
               Opt("b1i-khz", float, "I spin-lock amplitude, kHz", required=True),
               Opt("b1s-khz", float, "S spin-lock amplitude, kHz", required=True),
               Opt("offset-i-khz", float, "I resonance offset, kHz", default=0.0),
               Opt("offset-s-khz", float, "S resonance offset, kHz", default=0.0),
               Opt("substeps", int, "propagation substeps per grid interval"),
               *_COMMON_OPTS],
    "compare": [_COUPLING_OPT, _MAS_OPT, *_ANGLE_OPTS, *_GRID_OPTS,
                Opt("b1i-khz", float, "I spin-lock amplitude, kHz", required=True),
                Opt("b1s-khz", float, "S spin-lock amplitude, kHz", required=True),
                Opt("offset-i-khz", float, "I resonance offset, kHz", default=0.0),
                Opt("offset-s-khz", float, "S resonance offset, kHz", default=0.0),
                Opt("substeps", int, "propagation substeps per grid interval"),
                Opt("threshold", float, "max allowed |analytic - oracle|",
                    default=0.02),
                *_COMMON_OPTS],
    "fit": [Opt("data", str, "build-up CSV (time_us,magnetization[,sigma])",
                required=True),
            Opt("d-khz", float, "dipolar coupling d/2pi, kHz"),
            Opt("distance-angstrom", float,
                "internuclear distance; alternative to --d-khz"),
            Opt("isotopes", str, "isotope pair for the distance conversion",
                default="1H,13C"),
            _MAS_OPT, *_RF_OPTS,
            Opt("orient-set", str, "orientation set, grid:NxM or zcw:L",
                default=f"zcw:{powder.DEFAULT_FIT_LEVEL}"),
            Opt("free", str, "comma list of free parameters out of "
                "d,r,r1,t1rho,m0", default="r,r1,t1rho,m0"),
            *_RELAX_OPTS,
            Opt("report", str, "also write the fit report to this path"),
            *_COMMON_OPTS],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpmas", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command)
        for opt in opts:
            p.add_argument(f"--{opt.flag}", dest=opt.dest, type=opt.type,
                           default=None, help=opt.help)
    return parser


def _load_config_file(path: str) -> dict[str, str]:
    cfg = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _resolve(args, opts: list[Opt]) -> dict:
    """Merge flag values, config-file values and defaults (flags win)."""
    cfg = _load_config_file(args.config) if args.config is not None else {}
    known = {o.dest for o in opts}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for opt in opts:
        value = getattr(args, opt.dest)
        if value is None and opt.dest in cfg:
            try:
                value = opt.type(cfg[opt.dest])
            except ValueError as exc:
                raise ConfigError(f"config key {opt.dest}: {exc}") from exc
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise ConfigError(f"missing required option --{opt.flag}")
        resolved[opt.dest] = value
    return resolved


# flags that choose where files live, not what is computed; left out of
# the config echo so the output bytes depend only on the physics inputs
_LOCATION_KEYS = {"config", "out", "report"}


def _echo_lines(command: str, resolved: dict) -> list[str]:
    lines = [f"# cpmas {command}"]
    for key in sorted(resolved):
        if key in _LOCATION_KEYS or resolved[key] is None:
            continue
        lines.append(f"# {key.replace('_', '-')} = {resolved[key]!r}")
    return lines


def write_curve_csv(path, header: list[str], columns: list[np.ndarray],
                    echo: list[str]) -> None:
    """Write comment echo lines, a header row, then repr-formatted columns."""
    lines = list(echo)
    lines.append(",".join(header))
    for row in zip(*columns):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curve_csv(path) -> dict[str, np.ndarray]:
    """Read a CSV written by `write_curve_csv` back into named columns."""
    names = None
    columns = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if names is None:
            names = fields
            columns = [[] for _ in names]
            continue
        for col, value in zip(columns, fields):
            col.append(float(value))
    if names is None:
        raise ValueError(f"{path}: no data")
    return {name: np.array(col) for name, col in zip(names, columns)}


def _grid_from(resolved) -> TimeGrid:
    tmax, dt = resolved["tmax_us"], resolved["dt_us"]
    if tmax <= 0.0:
        raise ConfigError(f"tmax-us must be > 0, got {tmax}")
    if dt <= 0.0:
        raise ConfigError(f"dt-us must be > 0, got {dt}")
    n = int(math.floor(tmax / dt + 1e-9)) + 1
    if n < 2:
        raise ConfigError("grid must contain at least 2 points "
                          f"(tmax-us={tmax}, dt-us={dt})")
    return TimeGrid(dt=dt * US, n_points=n)


def _orientation_from(resolved) -> Orientation:
    try:
        return Orientation(beta=resolved["beta_deg"] * DEG,
                           gamma=resolved["gamma_deg"] * DEG % (2.0 * math.pi))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _rf_from(resolved, required: bool) -> RfScheme | None:
    b1i, b1s = resolved.get("b1i_khz"), resolved.get("b1s_khz")
    off_i = resolved.get("offset_i_khz", 0.0)
    off_s = resolved.get("offset_s_khz", 0.0)
    if b1i is None and b1s is None and not required:
        if off_i or off_s:
            raise ConfigError("offsets need --b1i-khz and --b1s-khz for the "
                              "effective-field geometry")
        return None
    if b1i is None or b1s is None:
        raise ConfigError("both --b1i-khz and --b1s-khz are required here")
    try:
        return RfScheme(omega1_i=b1i * KHZ, omega1_s=b1s * KHZ,
                        offset_i=off_i * KHZ, offset_s=off_s * KHZ)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _coupling_from(resolved, rf: RfScheme | None) -> CouplingParams:
    coupling = CouplingParams(d=resolved["d_khz"] * KHZ)
    if rf is not None:
        coupling = scaled_coupling(coupling, effective_field(rf))
    return coupling


def _spin_from(resolved) -> SpinningParams:
    mas = resolved["mas_khz"]
    if mas < 0.0:
        raise ConfigError(f"mas-khz must be >= 0, got {mas}")
    return SpinningParams(omega_r=mas * KHZ)


def _orientation_set(text: str) -> powder.OrientationSet:
    kind, _, arg = text.partition(":")
    try:
        if kind == "grid":
            nb, _, ng = arg.partition("x")
            return powder.grid_orientation_set(int(nb), int(ng))
        if kind == "zcw":
            return powder.zcw_orientation_set(int(arg))
    except ValueError as exc:
        raise ConfigError(f"bad orientation set '{text}': {exc}") from exc
    raise ConfigError(f"bad orientation set '{text}' (use grid:NxM or zcw:L)")


def _relaxation_from(resolved) -> tuple[analytic.RelaxationParams, bool]:
    """RelaxationParams plus whether any damping flag was given."""
    given = any(resolved.get(k) is not None
                for k in ("r_inv_us", "r1_inv_us", "t1rho_ms"))
    try:
        relax = analytic.RelaxationParams(
            m0=resolved.get("m0", 1.0),
            r=1.0 / (resolved["r_inv_us"] * US)
            if resolved.get("r_inv_us") is not None else 0.0,
            r1=1.0 / (resolved["r1_inv_us"] * US)
            if resolved.get("r1_inv_us") is not None else 0.0,
            t1rho=resolved["t1rho_ms"] * MS
            if resolved.get("t1rho_ms") is not None else math.inf,
        )
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad relaxation parameters: {exc}") from exc
    return relax, given


def run_simulate(resolved) -> int:
    grid = _grid_from(resolved)
    orient = _orientation_from(resolved)
    rf = _rf_from(resolved, required=False)
    coupling = _coupling_from(resolved, rf)
    spin = _spin_from(resolved)
    curve = analytic.efficiency_curve(coupling, orient, spin, grid)
    t_us = np.arange(grid.n_points) * resolved["dt_us"]
    write_curve_csv(resolved["out"], ["t_us", "eta"], [t_us, curve.values],
                    _echo_lines("simulate", resolved))
    return EXIT_OK


def run_powder(resolved) -> int:
    grid = _grid_from(resolved)
    rf = _rf_from(resolved, required=False)
    coupling = _coupling_from(resolved, rf)
    spin = _spin_from(resolved)
    oset = _orientation_set(resolved["orient_set"])
    relax, damped = _relaxation_from(resolved)
    curve = powder.powder_average(
        lambda orient: analytic.efficiency_curve(coupling, orient, spin, grid),
        oset)
    name = "eta"
    if damped:
        curve = analytic.magnetization(curve, relax)
        name = "m"
    t_us = np.arange(grid.n_points) * resolved["dt_us"]
    write_curve_csv(resolved["out"], ["t_us", name], [t_us, curve.values],
                    _echo_lines("powder", resolved))
    return EXIT_OK


def _propagate_tilted(rf, coupling, orient, spin, grid, substeps):
    """Propagation with state/observables along the effective-field axes.

    On resonance these reduce to I_y and S_y exactly.
    """
    eff = effective_field(rf)
    i_e, s_e = oracle.tilted_spin_operators(eff)
    try:
        out = oracle.propagate_expectations(
            i_e, (s_e, i_e, oracle.DQ_Y), rf, coupling, orient, spin, grid,
            substeps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return out


def run_oracle(resolved) -> int:
    grid = _grid_from(resolved)
    orient = _orientation_from(resolved)
    rf = _rf_from(resolved, required=True)
    coupling = CouplingParams(d=resolved["d_khz"] * KHZ)
    spin = _spin_from(resolved)
    out = _propagate_tilted(rf, coupling, orient, spin, grid,
                            resolved.get("substeps"))
    t_us = np.arange(grid.n_points) * resolved["dt_us"]
    write_curve_csv(resolved["out"], ["t_us", "sy", "iy", "dq_y"],
                    [t_us, out[0], out[1], out[2]],
                    _echo_lines("oracle", resolved))
    return EXIT_OK


def run_compare(resolved) -> int:
    grid = _grid_from(resolved)
    orient = _orientation_from(resolved)
    rf = _rf_from(resolved, required=True)
    spin = _spin_from(resolved)
    coupling_scaled = _coupling_from(resolved, rf)
    eta = analytic.efficiency_curve(coupling_scaled, orient, spin, grid).values
    out = _propagate_tilted(rf, CouplingParams(d=resolved["d_khz"] * KHZ),
                            orient, spin, grid, resolved.get("substeps"))
    sy = out[0]
    max_dev = float(np.max(np.abs(eta - sy)))
    rms_dev = float(np.sqrt(np.mean((eta - sy) ** 2)))
    t_us = np.arange(grid.n_points) * resolved["dt_us"]
    write_curve_csv(resolved["out"], ["t_us", "eta_analytic", "sy_oracle"],
                    [t_us, eta, sy], _echo_lines("compare", resolved))
    print(f"max_deviation = {max_dev!r}")
    print(f"rms_deviation = {rms_dev!r}")
    threshold = resolved["threshold"]
    print(f"threshold = {threshold!r}")
    return EXIT_OK if max_dev <= threshold else EXIT_THRESHOLD


def _fit_spec_from(resolved) -> fitting.FitSpec:
    if (resolved.get("d_khz") is None) == (resolved.get("distance_angstrom") is None):
        raise ConfigError("give exactly one of --d-khz or --distance-angstrom")
    if resolved.get("distance_angstrom") is not None:
        pair = [s.strip() for s in resolved["isotopes"].split(",")]
        if len(pair) != 2:
            raise ConfigError("--isotopes must be two comma-separated names")
        try:
            d = fitting.coupling_from_distance(resolved["distance_angstrom"],
                                               *pair)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        d = resolved["d_khz"] * KHZ
    free = [s.strip() for s in resolved["free"].split(",") if s.strip()]
    unknown = set(free) - set(fitting.PARAMETER_NAMES)
    if unknown:
        raise ConfigError(f"unknown free parameters: {', '.join(sorted(unknown))}")
    relax, _ = _relaxation_from(resolved)
    initial = {"d": d, "r": relax.r, "r1": relax.r1, "t1rho": relax.t1rho,
               "m0": relax.m0}
    parameters = {}
    for name in fitting.PARAMETER_NAMES:
        value = initial[name]
        if name in free:
            if not math.isfinite(value) or value == 0.0:
                raise ConfigError(
                    f"free parameter '{name}' needs a finite nonzero initial "
                    f"guess (set the matching flag)")
            lo, hi = sorted((value / 1000.0, value * 1000.0))
            parameters[name] = fitting.FitParameter(value=value, free=True,
                                                    lower=lo, upper=hi)
        else:
            parameters[name] = fitting.FitParameter(value=value, free=False)
    rf = _rf_from(resolved, required=False)
    if rf is None:
        # Fields only rescale d through the tilt angles; on resonance any
        # matched pair is equivalent, so supply a nominal matched lock.
        rf = RfScheme(omega1_i=KHZ * 80.0, omega1_s=KHZ * 80.0)
    try:
        return fitting.FitSpec(parameters=parameters,
                               orientations=_orientation_set(resolved["orient_set"]),
                               spin=_spin_from(resolved), rf=rf)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fit_report(resolved, data, spec, result) -> list[str]:
    lines = ["command = fit"]
    for key in sorted(resolved):
        if key in _LOCATION_KEYS or resolved[key] is None:
            continue
        lines.append(f"{key} = {resolved[key]!r}")
    lines += [
        f"n_points = {len(data)}",
        f"free_parameters = {','.join(spec.free_names)}",
        f"converged = {str(result.converged).lower()}",
        f"iterations = {result.iterations}",
        f"rss = {result.rss!r}",
    ]
    v = result.values
    lines.append(f"d_rad_per_s = {v['d']!r}")
    lines.append(f"d_khz = {v['d'] / KHZ!r}")
    lines.append(f"r_per_s = {v['r']!r}")
    if v["r"] > 0.0:
        lines.append(f"r_inv_us = {1.0 / v['r'] / US!r}")
    lines.append(f"r1_per_s = {v['r1']!r}")
    if v["r1"] > 0.0:
        lines.append(f"r1_inv_us = {1.0 / v['r1'] / US!r}")
    lines.append(f"t1rho_ms = {v['t1rho'] / MS!r}")
    lines.append(f"m0 = {v['m0']!r}")
    for name in spec.free_names:
        lines.append(f"stderr_{name} = {result.stderr[name]!r}")
    return lines


def run_fit(resolved) -> int:
    data = fitting.load_buildup(resolved["data"])
    spec = _fit_spec_from(resolved)
    result = fitting.fit_buildup(data, spec)
    model = fitting.model_curve(
        fitting._model_from_values(result.values, spec), data.times)
    residual = model - data.magnetizations
    write_curve_csv(resolved["out"],
                    ["time_us", "magnetization", "model", "residual"],
                    [data.times_us(), data.magnetizations, model, residual],
                    _echo_lines("fit", resolved))
    report = _fit_report(resolved, data, spec, result)
    print("\n".join(report))
    if resolved.get("report"):
        Path(resolved["report"]).write_text("\n".join(report) + "\n",
                                            encoding="utf-8")
    return EXIT_OK if result.converged else EXIT_FIT


def main(argv=None) -> int:
    """Parse arguments and dispatch; returns the process exit code."""
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        resolved = _resolve(args, COMMAND_OPTS[args.command])
        runner = {"simulate": run_simulate, "powder": run_powder,
                  "oracle": run_oracle, "compare": run_compare,
                  "fit": run_fit}[args.command]
        return runner(resolved)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except fitting.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except fitting.FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


def entry_point() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry_point()

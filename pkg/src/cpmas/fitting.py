"""Build-up curve ingestion, model evaluation, and nonlinear least squares.

The measured quantity is S-spin magnetization versus contact time.  The
model is the powder-averaged transfer efficiency pushed through the
spin-diffusion / T1rho envelope; its parameters are the pair coupling d,
the rates r and r1, t1rho and the amplitude m0.  Remote protons are
absorbed into r and r1, so d is a single effective pair coupling that
converts to an internuclear distance through the point-dipole inverse-cube
law.

Fitting uses a damped least-squares (Levenberg-Marquardt) loop with a
forward-difference Jacobian, damping scaled x10 on a rejected step and
/10 on an accepted one, and box bounds enforced by projection.  Accepted
steps never increase the weighted residual sum, and the returned result
always satisfies rss <= rss(initial guess).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import RelaxationParams, damped_magnetization
from .core import CouplingParams, RfScheme, SpinningParams, effective_field, scaled_coupling
from .powder import OrientationSet, averaged_efficiency

PARAMETER_NAMES = ("d", "r", "r1", "t1rho", "m0")

MAX_ITERATIONS = 500
RSS_RELATIVE_TOL = 1e-10
STEP_NORM_TOL = 1e-12
DAMPING_INITIAL = 1e-3
DAMPING_FACTOR = 10.0

# Point-dipole conversion constants (SI).
HBAR = 1.0545718e-34          # J*s
MU0_OVER_4PI = 1e-7           # T*m/A
ANGSTROM = 1e-10

# Gyromagnetic ratios in rad s^-1 T^-1 (standard tabulated values; signs
# retained for the isotopes with negative moments).
GYROMAGNETIC_RATIOS = {
    "1H": 267.522187e6,
    "13C": 67.2828e6,
    "15N": -27.126e6,
    "19F": 251.8148e6,
    "29Si": -53.1903e6,
    "31P": 108.394e6,
}


class DataError(ValueError):
    """Malformed or inconsistent build-up data (message carries the line number)."""


class FitError(RuntimeError):
    """The fit cannot proceed (e.g., a degenerate Jacobian)."""


@dataclass(frozen=True)
class BuildUpData:
    """Measured magnetization build-up: times in seconds, strictly increasing.

    ``source_times_us`` keeps the microsecond values exactly as read from a
    CSV so that re-exporting the data is byte-exact; it is absent for
    programmatically built datasets.
    """

    times: np.ndarray
    magnetizations: np.ndarray
    sigmas: np.ndarray | None = None
    source_times_us: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        mags = np.asarray(self.magnetizations, dtype=float)
        if times.ndim != 1 or times.shape != mags.shape:
            raise DataError("times and magnetizations must be 1-d and equal length")
        if len(times) < 2:
            raise DataError(f"need at least 2 points, got {len(times)}")
        if times[0] < 0.0:
            raise DataError("times must be >= 0")
        if np.any(np.diff(times) <= 0.0):
            raise DataError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "magnetizations", mags)
        if self.sigmas is not None:
            sig = np.asarray(self.sigmas, dtype=float)
            if sig.shape != times.shape:
                raise DataError("sigma column must match the data length")
            if np.any(sig <= 0.0):
                raise DataError("sigma values must be > 0")
            object.__setattr__(self, "sigmas", sig)
        if self.source_times_us is not None:
            us = np.asarray(self.source_times_us, dtype=float)
            if us.shape != times.shape:
                raise DataError("source_times_us must match the data length")
            object.__setattr__(self, "source_times_us", us)

    def __len__(self) -> int:
        return len(self.times)

    def times_us(self) -> np.ndarray:
        """Times in microseconds (wire values when file-originated)."""
        if self.source_times_us is not None:
            return self.source_times_us
        return self.times * 1e6


def load_buildup(source) -> BuildUpData:
    """Parse build-up data from a CSV path or open text/byte stream.

    Format: header ``time_us,magnetization`` with an optional third
    ``sigma`` column; lines starting with ``#`` are ignored; times are
    microseconds (converted to seconds here at the boundary).

    Raises:
        DataError: on a malformed header or row, a duplicate or decreasing
            time, or fewer than 2 data points; messages name the line.
    """
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                return _parse_buildup_lines(fh, str(source))
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc}") from exc
    if isinstance(source, (bytes, bytearray)):
        return _parse_buildup_lines(io.StringIO(source.decode("utf-8")), "<bytes>")
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return _parse_buildup_lines(io.StringIO(data), "<stream>")


def _parse_buildup_lines(lines, name: str) -> BuildUpData:
    header = None
    times, times_us, mags, sigs = [], [], [], []
    row_lines = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            header = [f.lower() for f in fields]
            if header not in (["time_us", "magnetization"],
                              ["time_us", "magnetization", "sigma"]):
                raise DataError(
                    f"{name}:{lineno}: expected header "
                    f"'time_us,magnetization[,sigma]', got '{line}'")
            continue
        if len(fields) != len(header):
            raise DataError(f"{name}:{lineno}: expected {len(header)} columns, "
                            f"got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"{name}:{lineno}: non-numeric value ({exc})") from exc
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{name}:{lineno}: non-finite value")
        t_s = values[0] * 1e-6
        if times:
            if t_s == times[-1]:
                raise DataError(f"{name}:{lineno}: duplicate time {values[0]} us")
            if t_s < times[-1]:
                raise DataError(f"{name}:{lineno}: time {values[0]} us is not "
                                "increasing")
        times.append(t_s)
        times_us.append(values[0])
        mags.append(values[1])
        if len(header) == 3:
            if values[2] <= 0.0:
                raise DataError(f"{name}:{lineno}: sigma must be > 0")
            sigs.append(values[2])
        row_lines.append(lineno)
    if header is None:
        raise DataError(f"{name}: empty file (header required)")
    if len(times) < 2:
        raise DataError(f"{name}: need at least 2 data points, got {len(times)}")
    if times[0] < 0.0:
        raise DataError(f"{name}:{row_lines[0]}: negative time")
    return BuildUpData(times=np.array(times), magnetizations=np.array(mags),
                       sigmas=np.array(sigs) if sigs else None,
                       source_times_us=np.array(times_us))


def save_buildup(data: BuildUpData, path) -> None:
    """Write build-up data in the same CSV schema `load_buildup` reads.

    File-originated data re-export their original microsecond values, so a
    load/save cycle is byte-exact.
    """
    t_us = data.times_us()
    lines = ["time_us,magnetization,sigma" if data.sigmas is not None
             else "time_us,magnetization"]
    for i in range(len(data)):
        row = [repr(float(t_us[i])), repr(float(data.magnetizations[i]))]
        if data.sigmas is not None:
            row.append(repr(float(data.sigmas[i])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the powder build-up model."""

    coupling: CouplingParams
    spin: SpinningParams
    rf: RfScheme
    relax: RelaxationParams
    orientations: OrientationSet


def model_curve(params: ModelParams, times) -> np.ndarray:
    """Predicted magnetization at the requested times.

    Powder-averaged transfer efficiency (coupling rescaled for any
    off-resonance tilt of the locks) pushed through the relaxation
    envelope.
    """
    d_eff = scaled_coupling(params.coupling, effective_field(params.rf))
    eta = averaged_efficiency(d_eff, params.spin, times, params.orientations)
    return damped_magnetization(times, eta, params.relax)


@dataclass(frozen=True)
class FitParameter:
    """One model parameter: its value (initial guess if free) and box bounds."""

    value: float
    free: bool = False
    lower: float = math.nan
    upper: float = math.nan

    def __post_init__(self):
        if not math.isfinite(self.value):
            if not (self.value == math.inf and not self.free):
                raise ValueError("parameter value must be finite "
                                 "(inf allowed only for a fixed t1rho)")
        if self.free:
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise ValueError("free parameters need finite bounds")
            if not self.lower < self.upper:
                raise ValueError(f"bounds must be ordered, got "
                                 f"[{self.lower}, {self.upper}]")
            if not self.lower <= self.value <= self.upper:
                raise ValueError(f"initial guess {self.value} outside bounds "
                                 f"[{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class FitSpec:
    """What to fit: per-parameter settings plus the fixed experiment geometry.

    ``parameters`` must contain exactly the keys in PARAMETER_NAMES.  With
    ``use_inverse_rates`` the optimizer works on 1/r and 1/r1 (their
    characteristic times) instead of the rates themselves; results are
    reported as rates either way.
    """

    parameters: dict[str, FitParameter]
    orientations: OrientationSet
    spin: SpinningParams
    rf: RfScheme
    use_inverse_rates: bool = False

    def __post_init__(self):
        if set(self.parameters) != set(PARAMETER_NAMES):
            raise ValueError(f"parameters must have exactly the keys "
                             f"{PARAMETER_NAMES}")
        for name in ("r", "r1"):
            p = self.parameters[name]
            if p.free and p.lower < 0.0:
                raise ValueError(f"{name} lower bound must be >= 0")
            if self.use_inverse_rates and p.free and p.lower <= 0.0:
                raise ValueError(f"{name} lower bound must be > 0 when "
                                 "fitting inverse rates")
        for name in ("t1rho", "m0"):
            p = self.parameters[name]
            if p.free and p.lower <= 0.0:
                raise ValueError(f"{name} lower bound must be > 0")

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in PARAMETER_NAMES if self.parameters[n].free)


@dataclass(frozen=True)
class FitResult:
    """Optimum of a build-up fit.

    ``values`` holds all five parameters (fitted or fixed); ``stderr`` has
    an entry per free parameter, derived from the Jacobian at the optimum.
    A non-converged fit (iteration cap hit) is returned flagged, with the
    best point found.
    """

    values: dict[str, float]
    rss: float
    stderr: dict[str, float] = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0


def _model_from_values(values: dict[str, float], spec: FitSpec) -> ModelParams:
    params = ModelParams(
        coupling=CouplingParams(d=values["d"]),
        spin=spec.spin,
        rf=spec.rf,
        relax=RelaxationParams(m0=values["m0"], r=values["r"], r1=values["r1"],
                               t1rho=values["t1rho"]),
        orientations=spec.orientations,
    )
    return params


def _to_internal(name: str, value: float, spec: FitSpec) -> float:
    if spec.use_inverse_rates and name in ("r", "r1"):
        return 1.0 / value
    return value


def _to_external(name: str, value: float, spec: FitSpec) -> float:
    if spec.use_inverse_rates and name in ("r", "r1"):
        return 1.0 / value
    return value


def fit_buildup(data: BuildUpData, spec: FitSpec) -> FitResult:
    """Levenberg-Marquardt fit of the powder build-up model to measured data.

    Minimizes sum of ((model(t_i) - M_i)/sigma_i)^2 (sigma_i = 1 without an
    uncertainty column).  Stops when the relative residual change drops
    below 1e-10, the step norm drops below 1e-12, or after 500 iterations
    (then flagged non-converged).

    Raises:
        DataError: if the data under-determine the requested free set.
        FitError: if the Jacobian at the initial guess is rank deficient
            (the message suggests which parameter to fix).
    """
    free = spec.free_names
    n_pts = len(data)
    if n_pts <= len(free):
        raise DataError(f"under-determined fit: {n_pts} points for "
                        f"{len(free)} free parameters")
    if len(free) >= 2 and n_pts < 6:
        raise DataError(f"under-determined fit: need >= 6 points for "
                        f"{len(free)} free parameters, got {n_pts}")

    weights = (1.0 / data.sigmas) if data.sigmas is not None else None
    values = {n: spec.parameters[n].value for n in PARAMETER_NAMES}

    def residuals(x: np.ndarray) -> np.ndarray:
        trial = dict(values)
        for name, xi in zip(free, x):
            trial[name] = _to_external(name, float(xi), spec)
        model = model_curve(_model_from_values(trial, spec), data.times)
        res = model - data.magnetizations
        return res * weights if weights is not None else res

    if not free:
        res = residuals(np.empty(0))
        return FitResult(values=values, rss=float(res @ res), stderr={},
                         converged=True, iterations=0)

    x = np.array([_to_internal(n, spec.parameters[n].value, spec) for n in free])
    lo = np.empty(len(free))
    hi = np.empty(len(free))
    for j, name in enumerate(free):
        b = sorted((_to_internal(name, spec.parameters[name].lower, spec),
                    _to_internal(name, spec.parameters[name].upper, spec)))
        lo[j], hi[j] = b

    res = residuals(x)
    rss = float(res @ res)
    rss_initial = rss
    jac = _forward_jacobian(residuals, x, res)
    _check_jacobian(jac, free)

    mu = DAMPING_INITIAL
    iterations = 0
    converged = False
    need_jacobian = False
    while iterations < MAX_ITERATIONS:
        iterations += 1
        if need_jacobian:
            jac = _forward_jacobian(residuals, x, res)
            need_jacobian = False
        a = jac.T @ jac
        g = jac.T @ res
        diag = np.diag(a).copy()
        diag[diag <= 0.0] = max(diag.max(initial=0.0), 1.0) * 1e-30
        try:
            delta = np.linalg.solve(a + mu * np.diag(diag), -g)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular normal equations; consider fixing a "
                           "parameter") from exc
        x_trial = np.clip(x + delta, lo, hi)
        step = x_trial - x
        step_norm = float(np.linalg.norm(step))
        if step_norm < STEP_NORM_TOL:
            converged = True
            break
        res_trial = residuals(x_trial)
        rss_trial = float(res_trial @ res_trial)
        if rss_trial <= rss:
            rel_change = (rss - rss_trial) / max(rss, np.finfo(float).tiny)
            x, res, rss = x_trial, res_trial, rss_trial
            mu = max(mu / DAMPING_FACTOR, 1e-14)
            need_jacobian = True
            if rel_change < RSS_RELATIVE_TOL:
                converged = True
                break
        else:
            mu *= DAMPING_FACTOR

    for name, xi in zip(free, x):
        values[name] = _to_external(name, float(xi), spec)
    stderr = _standard_errors(residuals, x, res, rss, free, spec)
    assert rss <= rss_initial
    return FitResult(values=values, rss=rss, stderr=stderr,
                     converged=converged, iterations=iterations)


def _forward_jacobian(residuals, x: np.ndarray, res0: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobian of the residual vector."""
    eps = math.sqrt(np.finfo(float).eps)
    jac = np.empty((len(res0), len(x)))
    for j in range(len(x)):
        h = eps * max(abs(x[j]), 1e-30)
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (residuals(xp) - res0) / h
    return jac


def _check_jacobian(jac: np.ndarray, free) -> None:
    # rank threshold sits above the forward-difference noise floor
    # (~sqrt(eps)), well below the conditioning of healthy problems
    rank_tol = 1e-6
    if not np.all(np.isfinite(jac)):
        raise FitError("non-finite Jacobian at the initial guess")
    col_norms = np.linalg.norm(jac, axis=0)
    scale = col_norms.max(initial=0.0)
    weak = int(np.argmin(col_norms))
    if scale == 0.0 or col_norms[weak] < 1e-12 * scale:
        raise FitError(f"degenerate Jacobian: parameter '{free[weak]}' has no "
                       f"effect on the model; consider fixing it")
    normalized = jac / col_norms
    _, s, vt = np.linalg.svd(normalized)
    if s[-1] < rank_tol * s[0]:
        culprit = int(np.argmax(np.abs(vt[-1])))
        raise FitError(f"degenerate Jacobian (rank deficient); consider "
                       f"fixing parameter '{free[culprit]}'")


def _standard_errors(residuals, x, res, rss, free, spec) -> dict[str, float]:
    dof = len(res) - len(x)
    if dof <= 0:
        return {name: math.nan for name in free}
    jac = _forward_jacobian(residuals, x, res)
    try:
        cov = np.linalg.inv(jac.T @ jac) * (rss / dof)
    except np.linalg.LinAlgError:
        return {name: math.nan for name in free}
    err = {}
    for j, name in enumerate(free):
        var = cov[j, j]
        se = math.sqrt(var) if var >= 0.0 else math.nan
        if spec.use_inverse_rates and name in ("r", "r1"):
            se = se / (x[j] * x[j])
        err[name] = se
    return err


def _gamma(isotope: str) -> float:
    try:
        return GYROMAGNETIC_RATIOS[isotope]
    except KeyError:
        supported = ", ".join(sorted(GYROMAGNETIC_RATIOS))
        raise ValueError(f"unsupported isotope '{isotope}'; supported: "
                         f"{supported}") from None


def coupling_from_distance(r_angstrom: float, isotope_i: str = "1H",
                           isotope_s: str = "13C") -> float:
    """Point-dipole coupling d = (mu0/4pi)*gamma_i*gamma_s*hbar/r^3 in rad/s.

    The sign follows the product of the gyromagnetic ratios; downstream
    transfer curves are even in d.
    """
    if r_angstrom <= 0.0:
        raise ValueError(f"distance must be > 0, got {r_angstrom}")
    r = r_angstrom * ANGSTROM
    return MU0_OVER_4PI * _gamma(isotope_i) * _gamma(isotope_s) * HBAR / r**3


def distance_from_coupling(d: float, isotope_i: str = "1H",
                           isotope_s: str = "13C") -> float:
    """Internuclear distance in Angstrom from the point-dipole law.

    Raises:
        ValueError: for an unsupported isotope or d = 0.
    """
    if d == 0.0:
        raise ValueError("coupling must be nonzero")
    pref = abs(MU0_OVER_4PI * _gamma(isotope_i) * _gamma(isotope_s) * HBAR)
    return float(np.cbrt(pref / abs(d))) / ANGSTROM

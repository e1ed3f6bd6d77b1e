"""Run-level fits of cantilever against bath (MFFT) temperature.

Two models: plain proportionality T_cant = c T_MFFT above a cutoff, and
saturation T_cant = (T_MFFT^n + T0^n)^(1/n).  Errors on T_MFFT enter
through an effective variance when they are given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dsp import MAX_ITERATIONS, STEP_TOLERANCE
from .physmodel import Conversion, ResonatorParams

DEFAULT_MIN_TMFFT = 8e-3  # K
MIN_SATURATION_POINTS = 4
EFFECTIVE_VARIANCE_PASSES = 3
N_RANGE = (0.05, 100.0)  # the exponent is kept inside this box
T0_RANGE = (1e-6, 1e3)  # relative to the observed cantilever range


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Paired bath and cantilever temperatures of one run (K).

    Uncertainties may be NaN where they were not measured.
    """

    label: str
    t_mfft: np.ndarray
    sigma_mfft: np.ndarray
    t_cant: np.ndarray
    sigma_cant: np.ndarray
    resonator: ResonatorParams | None = None
    kappa: Conversion | None = None

    def __post_init__(self):
        arrays = {}
        for name in ("t_mfft", "sigma_mfft", "t_cant", "sigma_cant"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arrays[name])
        if len({len(a) for a in arrays.values()}) != 1:
            raise AnalysisError("paired arrays must have equal length")
        for name in ("t_mfft", "t_cant"):
            if np.any(~(arrays[name] > 0)):
                raise AnalysisError(f"{name} must be positive")
        for name in ("sigma_mfft", "sigma_cant"):
            a = arrays[name]
            if np.any(a[np.isfinite(a)] < 0):
                raise AnalysisError(f"{name} must be non-negative")

    def __len__(self):
        return len(self.t_mfft)


@dataclass(frozen=True)
class ProportionalityFit:
    c: float
    c_err: float
    n_points: int
    min_tmfft: float
    reduced_chi2: float


@dataclass(frozen=True, eq=False)
class SaturationFit:
    t0: float  # K
    n: float
    t0_err: float
    n_err: float
    c: float = 1.0  # fixed prefactor of the model
    converged: bool = True
    degenerate: bool = False
    reduced_chi2: float = math.nan
    note: str = ""
    covariance: np.ndarray = field(default=None, repr=False)

    def __call__(self, t_mfft):
        return saturation_model(t_mfft, self.t0, self.n, self.c)


def saturation_model(t_mfft, t0: float, n: float, c: float = 1.0):
    """c (T^n + T0^n)^(1/n), evaluated through logs to avoid overflow."""
    t = np.asarray(t_mfft, dtype=float)
    return c * np.exp(np.logaddexp(n * np.log(t), n * math.log(t0)) / n)


def _sigma_or_zero(a: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(a), a, 0.0)


def fit_proportionality(run: RunRecord, min_tmfft: float = DEFAULT_MIN_TMFFT,
                        use_x_errors: bool = True) -> ProportionalityFit:
    """Error-weighted fit of T_cant = c T_MFFT over points with T_MFFT > min_tmfft.

    Weights are 1/(sigma_cant^2 + c^2 sigma_mfft^2), iterated on c; without
    T_MFFT errors they reduce to 1/sigma_cant^2.  The error on c follows
    from the weights directly (not rescaled by chi-square).
    """
    sel = run.t_mfft > min_tmfft
    if np.count_nonzero(sel) < 2:
        raise AnalysisError(f"need at least 2 points above {min_tmfft} K")
    x, y = run.t_mfft[sel], run.t_cant[sel]
    sy = _sigma_or_zero(run.sigma_cant[sel])
    sx = _sigma_or_zero(run.sigma_mfft[sel]) if use_x_errors else np.zeros_like(x)
    if np.all(sy == 0) and np.all(sx == 0):
        c = float(np.sum(x * y) / np.sum(x * x))
        resid = y - c * x
        dof = len(x) - 1
        s2 = float(np.sum(resid**2) / dof) if dof > 0 else 0.0
        return ProportionalityFit(c, math.sqrt(s2 / np.sum(x * x)), len(x), min_tmfft, math.nan)
    if np.any(sy == 0):
        raise AnalysisError("cantilever uncertainties must be positive when any are given")
    c = float(np.sum(x * y) / np.sum(x * x))
    for _ in range(EFFECTIVE_VARIANCE_PASSES):
        w = 1.0 / (sy**2 + (c * sx) ** 2)
        c = float(np.sum(w * x * y) / np.sum(w * x * x))
    w = 1.0 / (sy**2 + (c * sx) ** 2)
    c_err = float(1.0 / math.sqrt(np.sum(w * x * x)))
    dof = len(x) - 1
    chi2 = float(np.sum(w * (y - c * x) ** 2))
    return ProportionalityFit(c, c_err, len(x), min_tmfft, chi2 / dof if dof else math.nan)


def fit_saturation(run: RunRecord, fix_n: float | None = None, t0_init: float | None = None,
                   n_init: float = 2.0, use_x_errors: bool = True) -> SaturationFit:
    """Weighted Levenberg-Marquardt fit of (T0, n), or of T0 alone with ``fix_n``.

    The fit runs in mK on log-parameters, which keeps T0 and n positive.
    The result is flagged degenerate when a parameter is not determined
    (relative error above one), which happens when every point lies far
    above T0.
    """
    if len(run) < (2 if fix_n is not None else MIN_SATURATION_POINTS):
        raise AnalysisError(f"need at least {MIN_SATURATION_POINTS} points")
    x = run.t_mfft * 1e3
    y = run.t_cant * 1e3
    sy = _sigma_or_zero(run.sigma_cant) * 1e3
    sx = _sigma_or_zero(run.sigma_mfft) * 1e3 if use_x_errors else np.zeros_like(x)
    if np.all(sy == 0):
        sy = np.ones_like(y)
    elif np.any(sy == 0):
        raise AnalysisError("cantilever uncertainties must be positive when any are given")
    t0 = float(np.min(y)) if t0_init is None else t0_init * 1e3
    n = float(fix_n if fix_n is not None else n_init)

    lo = np.log([T0_RANGE[0] * float(np.min(y)), N_RANGE[0]])
    hi = np.log([T0_RANGE[1] * float(np.max(y)), N_RANGE[1]])

    def unpack(qq):
        qq = np.clip(qq, lo[:len(qq)], hi[:len(qq)])
        return math.exp(qq[0]), (fix_n if fix_n is not None else math.exp(qq[1]))

    def model(qq):
        return saturation_model(x, *unpack(qq))

    def jac_natural(t0_, n_):
        f = saturation_model(x, t0_, n_)
        ls = np.log(f) * n_  # ln S
        d_t0 = np.exp((1 - n_) * np.log(f) + (n_ - 1) * math.log(t0_))
        xn = np.exp(n_ * np.log(x) - ls)  # x^n / S
        tn = np.exp(n_ * math.log(t0_) - ls)
        d_n = f * (-ls / n_**2 + (xn * np.log(x) + tn * math.log(t0_)) / n_)
        d_x = np.exp((n_ - 1) * (np.log(x) - np.log(f)))
        return d_t0, d_n, d_x

    q = np.array([math.log(t0)] if fix_n is not None else [math.log(t0), math.log(n)])
    sigma = sy.copy()
    result = None
    for _ in range(EFFECTIVE_VARIANCE_PASSES):
        def residuals(qq, s=sigma):
            return (model(qq) - y) / s

        def jacobian(qq, s=sigma):
            t0_, n_ = unpack(qq)
            d_t0, d_n, _ = jac_natural(t0_, n_)
            cols = [d_t0 * t0_] if fix_n is not None else [d_t0 * t0_, d_n * n_]
            return np.column_stack(cols) / s[:, None]

        result = optimize.least_squares(residuals, q, jac=jacobian, method="lm",
                                        max_nfev=MAX_ITERATIONS * (len(q) + 1),
                                        xtol=STEP_TOLERANCE)
        q = np.clip(result.x, lo[:len(q)], hi[:len(q)])
        t0_, n_ = unpack(q)
        _, _, d_x = jac_natural(t0_, n_)
        sigma = np.sqrt(sy**2 + (d_x * sx) ** 2)

    t0_, n_ = unpack(q)
    at_bound = bool(np.any(np.isclose(q, lo[:len(q)], rtol=0, atol=1e-9)
                        | np.isclose(q, hi[:len(q)], rtol=0, atol=1e-9)))
    d_t0, d_n, _ = jac_natural(t0_, n_)
    cols = [d_t0] if fix_n is not None else [d_t0, d_n]
    jac = np.column_stack(cols) / sigma[:, None]
    dof = len(x) - len(q)
    chi2 = float(np.sum(((saturation_model(x, t0_, n_) - y) / sigma) ** 2))
    try:
        cov = np.linalg.inv(jac.T @ jac)
        errs = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        cov = np.full((len(q), len(q)), np.inf)
        errs = np.full(len(q), np.inf)
    t0_err = float(errs[0]) * 1e-3
    n_err = 0.0 if fix_n is not None else float(errs[1])
    converged = bool(result.success) and np.all(np.isfinite(errs))
    degenerate = (not converged or at_bound or t0_err > t0_ * 1e-3
                  or (fix_n is None and n_err > n_))
    note = ""
    if degenerate:
        note = "parameters not determined by the data (saturation regime not sampled)"
    elif not converged:
        note = "fit did not converge"
    if fix_n is not None:
        note = (note + "; " if note else "") + f"n fixed at {fix_n:g}"
    scale = np.diag([1e-3] + ([1.0] if fix_n is None else []))
    return SaturationFit(t0_ * 1e-3, float(n_), t0_err, n_err, 1.0, converged, bool(degenerate),
                         chi2 / dof if dof > 0 else math.nan, note, scale @ cov @ scale)


@dataclass(frozen=True)
class RunFits:
    label: str
    proportionality: ProportionalityFit | None
    saturation: SaturationFit | None
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class Report:
    directory: object
    files: tuple
    fits: tuple[RunFits, ...]
    warnings: tuple[str, ...]


def fit_run(run: RunRecord, min_tmfft: float = DEFAULT_MIN_TMFFT,
            fix_n: float | None = None) -> RunFits:
    """Both fits where the data allow them; reasons for skipped fits become warnings."""
    warnings = []
    prop = sat = None
    if len(run) < 2:
        warnings.append(f"run {run.label}: single point, no fit")
        return RunFits(run.label, None, None, tuple(warnings))
    try:
        prop = fit_proportionality(run, min_tmfft)
    except AnalysisError as exc:
        warnings.append(f"run {run.label}: proportionality fit skipped ({exc})")
    try:
        sat = fit_saturation(run, fix_n=fix_n)
        if sat.degenerate:
            warnings.append(f"run {run.label}: saturation fit degenerate")
    except AnalysisError as exc:
        warnings.append(f"run {run.label}: saturation fit skipped ({exc})")
    return RunFits(run.label, prop, sat, tuple(warnings))


def run_report(runs, out_dir, min_tmfft: float = DEFAULT_MIN_TMFFT,
               fix_n: float | None = None) -> Report:
    """Write runs.csv, fits.csv, report.svg and summary.txt into ``out_dir``.

    Missing values are written as NA.  The figure shows every run with its
    fitted c line and the dashed identity line c = 1.
    """
    from pathlib import Path

    from .fileio import write_csv, write_kv
    from .svg import COLORS, Figure

    runs = list(runs)
    if not runs:
        raise AnalysisError("report needs at least one run")
    out = Path(out_dir)
    fits = [fit_run(r, min_tmfft, fix_n) for r in runs]
    warnings = [w for f in fits for w in f.warnings]

    labels = np.concatenate([[r.label] * len(r) for r in runs]).astype(object)
    cols = {"label": labels}
    for name in ("t_mfft", "sigma_mfft", "t_cant", "sigma_cant"):
        cols[name] = np.concatenate([getattr(r, name) for r in runs])
    files = [write_csv(out / "runs.csv", cols, {"units": "K"})]

    nan = math.nan

    def get(obj, attr):
        return getattr(obj, attr) if obj is not None else nan

    fit_cols = {
        "label": np.array([f.label for f in fits], dtype=object),
        "n_points": np.array([len(r) for r in runs]),
        "c": np.array([get(f.proportionality, "c") for f in fits]),
        "c_err": np.array([get(f.proportionality, "c_err") for f in fits]),
        "c_points": np.array([get(f.proportionality, "n_points") for f in fits], dtype=float),
        "c_reduced_chi2": np.array([get(f.proportionality, "reduced_chi2") for f in fits]),
        "t0": np.array([get(f.saturation, "t0") for f in fits]),
        "t0_err": np.array([get(f.saturation, "t0_err") for f in fits]),
        "n": np.array([get(f.saturation, "n") for f in fits]),
        "n_err": np.array([get(f.saturation, "n_err") for f in fits]),
        "saturation_degenerate": np.array(
            [f.saturation.degenerate if f.saturation else "NA" for f in fits], dtype=object),
    }
    files.append(write_csv(out / "fits.csv", fit_cols, {"min_tmfft_K": float(min_tmfft)}))

    fig = Figure("Cantilever vs bath temperature", "T_MFFT (mK)", "T_cantilever (mK)")
    t_all = np.concatenate([r.t_mfft for r in runs]) * 1e3
    grid = np.linspace(0.0, float(t_all.max()) * 1.05, 50)
    fig.line(grid, grid, color="#000000", dash="6,4", label="c = 1", css_class="identity")
    for i, (r, f) in enumerate(zip(runs, fits)):
        color = COLORS[i % len(COLORS)]
        fig.scatter(r.t_mfft * 1e3, r.t_cant * 1e3, color=color, label=f"run {r.label}",
                    xerr=r.sigma_mfft * 1e3, yerr=r.sigma_cant * 1e3)
        if f.proportionality is not None:
            fig.line(grid, f.proportionality.c * grid, color=color,
                     label=f"run {r.label}: c = {f.proportionality.c:.3f}",
                     css_class=f"c-line run-{r.label}")
    files.append(fig.save(out / "report.svg"))

    summary = {"n_runs": len(runs), "min_tmfft_K": float(min_tmfft)}
    for f in fits:
        p, s = f.proportionality, f.saturation
        summary[f"{f.label}.c"] = p.c if p else nan
        summary[f"{f.label}.c_err"] = p.c_err if p else nan
        summary[f"{f.label}.t0_K"] = s.t0 if s else nan
        summary[f"{f.label}.t0_err_K"] = s.t0_err if s else nan
        summary[f"{f.label}.n"] = s.n if s else nan
        summary[f"{f.label}.n_err"] = s.n_err if s else nan
        summary[f"{f.label}.saturation_degenerate"] = s.degenerate if s else "NA"
    for i, w in enumerate(warnings):
        summary[f"warning.{i}"] = w
    files.append(write_kv(out / "summary.txt", summary, "run report"))
    return Report(out, tuple(files), tuple(fits), tuple(warnings))


def read_runs(path) -> list[RunRecord]:
    """Runs from a CSV with columns label, t_mfft, t_cant and optional sigmas (K)."""
    from .fileio import FormatError, read_csv

    _, cols = read_csv(path)
    for name in ("t_mfft", "t_cant"):
        if name not in cols or cols[name].dtype == object:
            raise FormatError(f"{path}: need a numeric column {name!r}")
    n = len(cols["t_mfft"])
    labels = cols.get("label", np.array(["run"] * n, dtype=object)).astype(str)
    sig = {k: cols.get(k, np.full(n, math.nan)) for k in ("sigma_mfft", "sigma_cant")}
    runs = []
    for label in dict.fromkeys(labels):
        sel = labels == label
        runs.append(RunRecord(str(label), cols["t_mfft"][sel], sig["sigma_mfft"][sel],
                              cols["t_cant"][sel], sig["sigma_cant"][sel]))
    return runs

"""Branching-ratio runs, sweeps over the asymmetry parameter, and polynomial laws."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .descriptors import DEFAULT_LD_STEP, DEFAULT_TAU, SectionSpec, compute_field, load_field, save_field
from .dynamics import DEFAULT_STEP, DEFAULT_T_MAX, classify_fate
from .manifolds import DEFAULT_QUANTILE, extract_manifolds, identify_lobes
from .potential import (
    ConvergenceError,
    SystemParams,
    bottom_domain,
    continue_critical_points,
    depth,
    eval_potential,
    flatness,
    top_domain,
)

log = logging.getLogger(__name__)

IC_LINE_X = -0.005
CRITICAL_C_WIDTH = 0.005
QUARTIC_C_MAX = 0.375

QUANTITIES = (
    "depth-top",
    "depth-bottom",
    "flatness-top",
    "flatness-bottom",
    "lobe-area-top",
    "lobe-area-bottom",
    "ratio-top",
    "ratio-bottom",
)

# Reference fits, highest degree first.  The top-well flatness law is the one
# with positive linear term (see README on the domain assignment).
REFERENCE_FITS = {
    "depth-bottom": (1, (1.042, 1.943)),
    "flatness-top": (2, (0.2749, 0.04992, 3.241)),
    "flatness-bottom": (2, (0.2207, -0.04926, 3.24)),
    "lobe-area-bottom": (1, (0.2629, 0.2993)),
    "ratio-bottom": (4, (72.96, -40.89, 7.854, 0.2581, 0.504)),
}
LAW_DEGREE = {
    "depth-top": 1,
    "depth-bottom": 1,
    "flatness-top": 2,
    "flatness-bottom": 2,
    "lobe-area-top": 1,
    "lobe-area-bottom": 1,
    "lobe-area-difference": 1,
    "ratio-top": 4,
    "ratio-bottom": 4,
}
REFERENCE_CRITICAL_C = 0.375


@dataclass
class BranchingResult:
    c: float
    n_total: int
    n_top: int
    n_bottom: int
    n_unresolved: int
    ratio_top: float
    ratio_bottom: float
    labels: list[str] = field(default_factory=list, repr=False)
    ys: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        assert self.n_top + self.n_bottom + self.n_unresolved == self.n_total


@dataclass
class FitResult:
    model: str
    coefficients: tuple[float, ...]  # highest degree first
    residual_rms: float
    domain: tuple[float, float]

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x):
        return np.polyval(self.coefficients, x)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "coefficients": list(self.coefficients),
            "residual_rms": self.residual_rms,
            "domain": list(self.domain),
        }


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


_MODEL = {1: "linear", 2: "quadratic", 3: "cubic", 4: "quartic"}


def fit_polynomial(xs: Sequence[float], ys: Sequence[float], degree: int) -> FitResult:
    """Least-squares polynomial via QR of the Vandermonde matrix."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and of equal length")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if len(x) < degree + 1:
        raise ValueError(f"degree {degree} needs at least {degree + 1} points, got {len(x)}")
    A = np.vander(x, degree + 1)
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        distinct = len(np.unique(x))
        raise RankDeficiencyError(
            f"design matrix is rank deficient for degree {degree}: "
            f"{distinct} distinct abscissae for {degree + 1} coefficients"
        )
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - A @ coef
    return FitResult(
        model=_MODEL.get(degree, f"degree-{degree}"),
        coefficients=tuple(float(v) for v in coef),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        domain=(float(x.min()), float(x.max())),
    )


def ic_line(params: SystemParams, n: int, x0: float = IC_LINE_X) -> tuple[np.ndarray, np.ndarray]:
    """``n`` equally spaced initial conditions on x = x0 with p_y = 0.

    The y-interval is the connected accessible range around y = 0 where
    H0 - V(x0, y) > 0; its endpoints (p_x = 0) are excluded.
    Returns (ys, states) with states rows (x, y, p_x, p_y).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    slack = lambda y: params.H0 - float(eval_potential((x0, y), params))  # noqa: E731
    if slack(0.0) <= 0:
        raise ValueError(f"line x={x0} is energetically inaccessible at H0={params.H0}")
    bounds = []
    for sign in (-1.0, 1.0):
        y = 0.0
        step = 0.05
        while slack(y + sign * step) > 0:
            y += sign * step
            if abs(y) > 10:
                raise ValueError("accessible interval on the initial-condition line is unbounded")
        bounds.append(brentq(slack, y, y + sign * step, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    lo, hi = sorted(bounds)
    ys = np.linspace(lo, hi, n + 2)[1:-1]
    px = np.sqrt(2.0 * params.m_x * (params.H0 - eval_potential((x0, ys), params)))
    states = np.column_stack([np.full(n, x0), ys, px, np.zeros(n)])
    return ys, states


def branching_run(
    params: SystemParams,
    n: int = 1000,
    ic_line_x: float = IC_LINE_X,
    t_max: float = DEFAULT_T_MAX,
    h: float = DEFAULT_STEP,
    threads: int = 1,
) -> BranchingResult:
    """Fraction of reacting trajectories entering each well (crossing y = +-0.5)."""
    ys, states = ic_line(params, n, ic_line_x)

    def fate(row):
        return classify_fate(row, params, t_max=t_max, h=h)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labels = list(pool.map(fate, states))
    else:
        labels = [fate(s) for s in states]
    n_top = labels.count("entered-top")
    n_bottom = labels.count("entered-bottom")
    resolved = n_top + n_bottom
    return BranchingResult(
        c=params.c,
        n_total=n,
        n_top=n_top,
        n_bottom=n_bottom,
        n_unresolved=n - resolved,
        ratio_top=n_top / resolved if resolved else math.nan,
        ratio_bottom=n_bottom / resolved if resolved else math.nan,
        labels=labels,
        ys=ys,
    )


def estimate_critical_c(
    params: SystemParams,
    c_values: Sequence[float],
    ratio_top: Sequence[float],
    width: float = CRITICAL_C_WIDTH,
    **run_kw,
) -> dict:
    """Smallest sampled c with no top-well trajectories, refined by bisection."""
    order = np.argsort(c_values)
    cs = np.asarray(c_values, dtype=float)[order]
    rt = np.asarray(ratio_top, dtype=float)[order]
    zero = np.flatnonzero(rt == 0)
    if zero.size == 0:
        return {"critical_c": None, "bracket": None, "reference": REFERENCE_CRITICAL_C}
    k = zero[0]
    if k == 0:
        return {"critical_c": float(cs[0]), "bracket": [float(cs[0]), float(cs[0])], "reference": REFERENCE_CRITICAL_C}
    lo, hi = float(cs[k - 1]), float(cs[k])
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if branching_run(params.with_c(mid), **run_kw).ratio_top == 0:
            hi = mid
        else:
            lo = mid
    return {"critical_c": 0.5 * (lo + hi), "bracket": [lo, hi], "reference": REFERENCE_CRITICAL_C}


@dataclass
class LobeAreas:
    c: float
    top: float
    bottom: float
    top_error: float | None = None
    bottom_error: float | None = None
    diagnostics: list[str] = field(default_factory=list)


def lobe_areas(
    params: SystemParams,
    section: SectionSpec | None = None,
    tau: float = DEFAULT_TAU,
    quantile: float = DEFAULT_QUANTILE,
    step: float = DEFAULT_LD_STEP,
    threads: int = 1,
    cache_dir: str | Path | None = None,
    error_bars: bool = False,
) -> LobeAreas:
    """Top/bottom lobe areas from the LD field at ``params``.

    With ``error_bars`` the field is recomputed on a grid refined by two and
    the absolute area differences are reported as uncertainties.
    """
    section = section or SectionSpec(H0=params.H0)

    def areas_at(sec):
        ld = _field(sec, params, tau, step, threads, cache_dir)
        curves = extract_manifolds(ld, quantile)
        top, bottom = identify_lobes(
            [cv for cv in curves if cv.kind == "stable"],
            [cv for cv in curves if cv.kind == "unstable"],
            ld,
        )
        return top, bottom

    top, bottom = areas_at(section)
    out = LobeAreas(params.c, top.area, bottom.area)
    out.diagnostics = [d for d in (top.diagnostic, bottom.diagnostic) if d]
    if error_bars:
        top2, bottom2 = areas_at(section.refined(2))
        out.top_error = abs(top2.area - top.area)
        out.bottom_error = abs(bottom2.area - bottom.area)
    return out


def _field(section, params, tau, step, threads, cache_dir):
    if cache_dir is None:
        return compute_field(section, params, tau=tau, step=step, threads=threads)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    stem = cache_dir / (
        f"ld_c{params.c!r}_H{params.H0!r}_m{params.m_x!r}x{params.m_y!r}_tau{tau!r}_h{step!r}"
        f"_n{section.n_y}x{section.n_p}_y{section.y_range[0]!r}:{section.y_range[1]!r}"
        f"_p{section.p_y_range[0]!r}:{section.p_y_range[1]!r}_x{section.x_section!r}"
    )
    if (stem.parent / (stem.name + ".bin")).exists():
        return load_field(stem)
    ld = compute_field(section, params, tau=tau, step=step, threads=threads)
    save_field(ld, stem)
    return ld


@dataclass
class SweepTable:
    c_values: list[float]
    quantities: list[str]
    rows: dict[float, dict[str, float]]
    failures: dict[float, dict[str, str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(c, values) for the cells of ``name`` that were computed."""
        cs, vs = [], []
        for c in self.c_values:
            v = self.rows.get(c, {}).get(name)
            if v is not None and math.isfinite(v):
                cs.append(c)
                vs.append(v)
        return np.array(cs), np.array(vs)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["c", *self.quantities])
            for c in self.c_values:
                row = self.rows.get(c, {})
                w.writerow([repr(float(c))] + [_cell(row.get(q)) for q in self.quantities])
        return path

    @classmethod
    def read_csv(cls, path) -> "SweepTable":
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            if not header or header[0] != "c":
                raise ValueError(f"{path}: first column must be 'c'")
            quantities = header[1:]
            rows, cs = {}, []
            for line in r:
                c = float(line[0])
                cs.append(c)
                rows[c] = {q: float(v) for q, v in zip(quantities, line[1:]) if v not in ("", "nan")}
        return cls(cs, quantities, rows)


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def default_c_grid(step: float = 0.025, c_max: float = 0.5) -> list[float]:
    n = int(round(c_max / step))
    return [round(k * step, 10) for k in range(n + 1)]


def sweep(
    template: SystemParams,
    c_values: Iterable[float],
    quantities: Iterable[str] = QUANTITIES,
    n_traj: int = 1000,
    t_max: float = DEFAULT_T_MAX,
    h: float = DEFAULT_STEP,
    section: SectionSpec | None = None,
    tau: float = DEFAULT_TAU,
    quantile: float = DEFAULT_QUANTILE,
    flatness_n: int = 101,
    threads: int = 1,
    cache_dir: str | Path | None = None,
) -> SweepTable:
    """Evaluate each requested quantity at each c.  Cell failures are recorded, not raised."""
    c_values = [float(c) for c in c_values]
    if not c_values:
        raise ValueError("c_values must be nonempty")
    quantities = list(quantities)
    unknown = set(quantities) - set(QUANTITIES)
    if unknown:
        raise ValueError(f"unknown quantities {sorted(unknown)}")

    table = SweepTable(sorted(c_values), quantities, {c: {} for c in c_values})
    table.meta = {
        "H0": template.H0,
        "m_x": template.m_x,
        "m_y": template.m_y,
        "n_traj": n_traj,
        "t_max": t_max,
        "step": h,
        "tau": tau,
        "quantile": quantile,
        "flatness_grid": [flatness_n, flatness_n],
        "ic_line_x": IC_LINE_X,
    }

    def fail(c, q, exc):
        log.warning("sweep cell c=%s %s failed: %s", c, q, exc)
        table.failures.setdefault(c, {})[q] = f"{type(exc).__name__}: {exc}"

    if any(q.startswith("depth") for q in quantities):
        try:
            cps = continue_critical_points(template, table.c_values)
        except ConvergenceError as exc:
            cps = {}
            for c in table.c_values:
                fail(c, "depth", exc)
        for c, pts in cps.items():
            for which in ("top", "bottom"):
                q = f"depth-{which}"
                if q in quantities:
                    try:
                        table.rows[c][q] = depth(template.with_c(c), which, points=pts)
                    except ConvergenceError as exc:
                        fail(c, q, exc)

    for c in table.c_values:
        params = template.with_c(c)
        if "flatness-top" in quantities:
            table.rows[c]["flatness-top"] = flatness(params, top_domain(flatness_n))
        if "flatness-bottom" in quantities:
            table.rows[c]["flatness-bottom"] = flatness(params, bottom_domain(flatness_n))
        if "ratio-top" in quantities or "ratio-bottom" in quantities:
            try:
                br = branching_run(params, n_traj, t_max=t_max, h=h, threads=threads)
                table.rows[c]["ratio-top"] = br.ratio_top
                table.rows[c]["ratio-bottom"] = br.ratio_bottom
                table.rows[c]["_n_unresolved"] = br.n_unresolved
            except Exception as exc:  # recorded per cell
                fail(c, "ratio", exc)
        if "lobe-area-top" in quantities or "lobe-area-bottom" in quantities:
            try:
                la = lobe_areas(
                    params, section or SectionSpec(H0=params.H0), tau, quantile, threads=threads,
                    cache_dir=cache_dir,
                )
                table.rows[c]["lobe-area-top"] = la.top
                table.rows[c]["lobe-area-bottom"] = la.bottom
                if la.diagnostics:
                    table.failures.setdefault(c, {})["lobes"] = "; ".join(la.diagnostics)
            except Exception as exc:
                fail(c, "lobe-area", exc)
    for row in table.rows.values():
        for k in [k for k in row if k not in quantities]:
            del row[k]
    return table


def ratio_law(fit: FitResult, c, which: str = "bottom", c_crit: float = QUARTIC_C_MAX):
    """Quartic branching law below ``c_crit``; the converged value (1 bottom, 0 top) beyond."""
    c = np.asarray(c, dtype=float)
    limit = 1.0 if which == "bottom" else 0.0
    return np.where(c <= c_crit, np.clip(fit(c), 0.0, 1.0), limit)


def fit_reference_laws(table: SweepTable) -> dict:
    """Fit each available column with its law and compare with the reference coefficients."""
    report = {}
    columns = dict((q, table.column(q)) for q in table.quantities)
    if "lobe-area-top" in columns and "lobe-area-bottom" in columns:
        ct, vt = columns["lobe-area-top"]
        cb, vb = columns["lobe-area-bottom"]
        common = np.intersect1d(ct, cb)
        diff = np.array([vb[list(cb).index(c)] - vt[list(ct).index(c)] for c in common])
        columns["lobe-area-difference"] = (common, diff)
    for name, (cs, vs) in columns.items():
        degree = LAW_DEGREE.get(name)
        if degree is None:
            continue
        if name.startswith("ratio"):
            keep = cs <= QUARTIC_C_MAX + 1e-12
            cs, vs = cs[keep], vs[keep]
        try:
            fit = fit_polynomial(cs, vs, degree)
        except (ValueError, np.linalg.LinAlgError) as exc:
            report[name] = {"skipped": f"{type(exc).__name__}: {exc}"}
            continue
        entry = fit.to_dict()
        entry["n_points"] = int(len(cs))
        if name in REFERENCE_FITS:
            ref = REFERENCE_FITS[name][1]
            entry["reference_coefficients"] = list(ref)
            entry["relative_deviation"] = [
                (f - p) / abs(p) if p else math.nan for f, p in zip(fit.coefficients, ref)
            ]
        report[name] = entry
    return report

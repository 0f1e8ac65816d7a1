"""Asymmetric valley-ridge-inflection potential.

    V(x, y) = 8/3 x^3 - 4 x^2 + y^2/2 + x (y^4 - 2 y^2) + c x y

The origin is an index-1 saddle for every ``c`` (the "upper" saddle); a
second index-1 saddle near (1, 0) separates the top (y > 0) and bottom
(y < 0) wells.  Functions accept scalars or broadcastable arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Critical points of the symmetric surface, used as Newton seeds.
DEFAULT_SEEDS: tuple[tuple[float, float], ...] = (
    (0.0, 0.0),
    (1.0, 0.0),
    (1.1071, 0.8799),
    (1.1071, -0.8799),
)

TOP_DOMAIN = (0.6, 1.5, 0.0, 1.5)
BOTTOM_DOMAIN = (0.6, 1.5, -1.5, 0.0)

DEDUP_RADIUS = 1e-6
EIG_ZERO = 1e-10


class ConvergenceError(RuntimeError):
    """Raised when Newton iteration fails for one or more seeds.

    ``points`` holds whatever did converge, ``failed`` the offending seeds.
    """

    def __init__(self, message: str, points=None, failed=None):
        super().__init__(message)
        self.points = list(points or [])
        self.failed = list(failed or [])


class DegenerateCriticalPointWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SystemParams:
    c: float = 0.0
    m_x: float = 1.0
    m_y: float = 1.0
    H0: float = 0.1

    def __post_init__(self):
        if not (self.m_x > 0 and self.m_y > 0):
            raise ValueError(f"masses must be positive, got m_x={self.m_x}, m_y={self.m_y}")
        for name in ("c", "m_x", "m_y", "H0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def with_c(self, c: float) -> "SystemParams":
        return SystemParams(c=float(c), m_x=self.m_x, m_y=self.m_y, H0=self.H0)


@dataclass(frozen=True)
class DomainRect:
    """Rectangle in configuration space sampled on an ``n_x`` by ``n_y`` grid."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    n_x: int = 101
    n_y: int = 101

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if not self.y_min < self.y_max:
            raise ValueError("y_min must be < y_max")
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("grid counts must be >= 2")

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.linspace(self.x_min, self.x_max, self.n_x)
        ys = np.linspace(self.y_min, self.y_max, self.n_y)
        return np.meshgrid(xs, ys, indexing="xy")

    def mirrored(self) -> "DomainRect":
        """Reflection y -> -y."""
        return DomainRect(self.x_min, self.x_max, -self.y_max, -self.y_min, self.n_x, self.n_y)


@dataclass(frozen=True)
class CriticalPoint:
    position: tuple[float, float]
    energy: float
    kind: str  # index1-saddle-upper | index1-saddle-lower | well-top | well-bottom
    stability: str  # "saddle x center" | "center"
    eigenvalues: tuple[float, float] = field(default=(math.nan, math.nan), compare=False)

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]


def eval_potential(q, params: SystemParams):
    x, y = q
    c = params.c
    return 8.0 / 3.0 * x**3 - 4.0 * x**2 + 0.5 * y**2 + x * (y**4 - 2.0 * y**2) + c * x * y


def eval_gradient(q, params: SystemParams):
    """Return (dV/dx, dV/dy)."""
    x, y = q
    c = params.c
    dvdx = 8.0 * x**2 - 8.0 * x + y**4 - 2.0 * y**2 + c * y
    dvdy = y + 4.0 * x * y**3 - 4.0 * x * y + c * x
    return dvdx, dvdy


def eval_hessian(q, params: SystemParams) -> np.ndarray:
    x, y = (float(v) for v in q)
    vxx = 16.0 * x - 8.0
    vxy = 4.0 * y**3 - 4.0 * y + params.c
    vyy = 1.0 + 12.0 * x * y**2 - 4.0 * x
    return np.array([[vxx, vxy], [vxy, vyy]])


def _newton(seed, params: SystemParams, tol: float, max_iter: int):
    q = np.array(seed, dtype=float)
    for _ in range(max_iter + 1):
        g = np.array(eval_gradient(q, params))
        if np.linalg.norm(g) < tol:
            return q
        try:
            step = np.linalg.solve(eval_hessian(q, params), g)
        except np.linalg.LinAlgError:
            return None
        q = q - step
        if not np.all(np.isfinite(q)):
            return None
    return None


def classify(q, params: SystemParams) -> tuple[str, tuple[float, float]]:
    """Stability label and Hessian eigenvalues at ``q``."""
    eig = np.linalg.eigvalsh(eval_hessian(q, params))
    if np.any(np.abs(eig) < EIG_ZERO):
        warnings.warn(
            f"near-zero Hessian eigenvalue {eig} at {tuple(q)} (c={params.c})",
            DegenerateCriticalPointWarning,
            stacklevel=3,
        )
    n_neg = int(np.sum(eig < -EIG_ZERO))
    if n_neg == 1:
        label = "saddle x center"
    elif n_neg == 0:
        label = "center"
    else:
        label = "maximum"
    return label, (float(eig[0]), float(eig[1]))


def find_critical_points(
    params: SystemParams,
    seeds: Sequence[tuple[float, float]] | None = None,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> list[CriticalPoint]:
    """Locate and classify critical points by Newton iteration from ``seeds``.

    Converged points closer than 1e-6 are merged.  Saddles are labelled
    upper/lower by energy and wells top/bottom by ``y``.  Any seed that does
    not converge within ``max_iter`` iterations raises
    :class:`ConvergenceError` carrying the partial result.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    seeds = list(DEFAULT_SEEDS if seeds is None else seeds)
    if not seeds:
        raise ValueError("seeds must be nonempty")

    found: list[np.ndarray] = []
    failed = []
    for seed in seeds:
        q = _newton(seed, params, tol, max_iter)
        if q is None:
            failed.append(tuple(seed))
            continue
        if all(np.linalg.norm(q - p) >= DEDUP_RADIUS for p in found):
            found.append(q)

    saddles, wells, other = [], [], []
    for q in found:
        stability, eig = classify(q, params)
        entry = (q, stability, eig, float(eval_potential(q, params)))
        if stability == "saddle x center":
            saddles.append(entry)
        elif stability == "center":
            wells.append(entry)
        else:
            other.append(entry)

    points = []
    saddles.sort(key=lambda e: -e[3])
    for i, (q, stab, eig, v) in enumerate(saddles):
        kind = "index1-saddle-upper" if i == 0 else "index1-saddle-lower"
        points.append(CriticalPoint((float(q[0]), float(q[1])), v, kind, stab, eig))
    wells.sort(key=lambda e: -e[0][1])
    for i, (q, stab, eig, v) in enumerate(wells):
        kind = "well-top" if i == 0 else "well-bottom"
        points.append(CriticalPoint((float(q[0]), float(q[1])), v, kind, stab, eig))
    for q, stab, eig, v in other:
        points.append(CriticalPoint((float(q[0]), float(q[1])), v, "other", stab, eig))

    if failed:
        raise ConvergenceError(
            f"Newton failed to converge from seeds {failed} at c={params.c}",
            points=points,
            failed=failed,
        )
    return points


def critical_point_map(points: Iterable[CriticalPoint]) -> dict[str, CriticalPoint]:
    return {p.kind: p for p in points}


def continue_critical_points(
    params: SystemParams, c_values: Sequence[float], seeds=None
) -> dict[float, list[CriticalPoint]]:
    """Track the critical points along ``c_values``, seeding each step with the last."""
    out = {}
    current = list(DEFAULT_SEEDS if seeds is None else seeds)
    for c in c_values:
        pts = find_critical_points(params.with_c(c), current)
        out[float(c)] = pts
        by_kind = critical_point_map(pts)
        current = [
            by_kind[k].position
            for k in ("index1-saddle-upper", "index1-saddle-lower", "well-top", "well-bottom")
            if k in by_kind
        ]
    return out


def depth(params: SystemParams, which: str = "bottom", points=None) -> float:
    """V(upper saddle) - V(well) for ``which`` in {"top", "bottom"}."""
    if which not in ("top", "bottom"):
        raise ValueError(f"which must be 'top' or 'bottom', got {which!r}")
    by_kind = critical_point_map(points if points is not None else find_critical_points(params))
    try:
        saddle = by_kind["index1-saddle-upper"]
        well = by_kind[f"well-{which}"]
    except KeyError as exc:
        raise ConvergenceError(f"missing critical point {exc} at c={params.c}") from exc
    return saddle.energy - well.energy


def flatness(params: SystemParams, domain: DomainRect) -> float:
    """Mean Euclidean norm of the gradient over the domain grid (boundary included)."""
    X, Y = domain.grid()
    gx, gy = eval_gradient((X, Y), params)
    norms = np.ascontiguousarray(np.hypot(gx, gy)).ravel()
    # np.add.reduce on a contiguous 1-D array is pairwise; order is fixed by the grid
    return float(np.add.reduce(norms) / norms.size)


def top_domain(n: int = 101) -> DomainRect:
    return DomainRect(*TOP_DOMAIN, n_x=n, n_y=n)


def bottom_domain(n: int = 101) -> DomainRect:
    return DomainRect(*BOTTOM_DOMAIN, n_x=n, n_y=n)

"""p-norm Lagrangian descriptors on the Poincare section x = 0.05, p_x > 0.

The section at energy H0 is coordinatised by (y, p_y); p_x is recovered
from the energy.  Arrays are laid out ``[i_p, i_y]`` (rows follow p_y),
so ``imshow(values, origin="lower")`` shows y horizontally.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .dynamics import ESCAPE_RADIUS, SECTION_X, PhaseState
from .potential import SystemParams, eval_potential

DEFAULT_TAU = 8.0
DEFAULT_P = 0.5
DEFAULT_LD_STEP = 1e-3

FIELD_CSV_HEADER = ("y", "p_y", "forward", "backward", "total", "mask")


@dataclass(frozen=True)
class SectionSpec:
    x_section: float = SECTION_X
    H0: float = 0.1
    y_range: tuple[float, float] = (-1.2, 1.2)
    p_y_range: tuple[float, float] = (-0.7, 0.7)
    n_y: int = 600
    n_p: int = 600

    def __post_init__(self):
        if self.n_y < 2 or self.n_p < 2:
            raise ValueError("grid counts must be >= 2")
        if not (self.y_range[0] < self.y_range[1] and self.p_y_range[0] < self.p_y_range[1]):
            raise ValueError("section ranges must be increasing intervals")

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_range[0], self.y_range[1], self.n_y)

    @property
    def p_ys(self) -> np.ndarray:
        return np.linspace(self.p_y_range[0], self.p_y_range[1], self.n_p)

    @property
    def dy(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / (self.n_y - 1)

    @property
    def dp(self) -> float:
        return (self.p_y_range[1] - self.p_y_range[0]) / (self.n_p - 1)

    def refined(self, factor: int = 2) -> "SectionSpec":
        """Same bounds with every existing node kept and ``factor - 1`` added between."""
        return SectionSpec(
            self.x_section,
            self.H0,
            self.y_range,
            self.p_y_range,
            (self.n_y - 1) * factor + 1,
            (self.n_p - 1) * factor + 1,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["y_range"] = list(self.y_range)
        d["p_y_range"] = list(self.p_y_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SectionSpec":
        d = dict(d)
        d["y_range"] = tuple(d["y_range"])
        d["p_y_range"] = tuple(d["p_y_range"])
        return cls(**d)


@dataclass
class LDField:
    section: SectionSpec
    params: SystemParams
    tau: float
    p_exponent: float
    values_forward: np.ndarray
    values_backward: np.ndarray
    values_total: np.ndarray
    mask: np.ndarray
    truncated_forward: np.ndarray
    truncated_backward: np.ndarray
    step: float = DEFAULT_LD_STEP
    meta: dict = field(default_factory=dict)

    def part(self, name: str) -> np.ndarray:
        try:
            return {
                "forward": self.values_forward,
                "backward": self.values_backward,
                "total": self.values_total,
            }[name]
        except KeyError:
            raise ValueError(f"unknown field part {name!r}") from None

    def header(self) -> dict:
        return {
            "section": self.section.to_dict(),
            "c": self.params.c,
            "m_x": self.params.m_x,
            "m_y": self.params.m_y,
            "H0": self.params.H0,
            "tau": self.tau,
            "p_exponent": self.p_exponent,
            "step": self.step,
            "escape_radius": ESCAPE_RADIUS,
            "shape": [self.section.n_p, self.section.n_y],
            "layout": ["forward:f8", "backward:f8", "total:f8", "mask:u1",
                       "truncated_forward:u1", "truncated_backward:u1"],
            "byte_order": "little",
            **self.meta,
        }


def lift_to_phase_space(y: float, p_y: float, section: SectionSpec, params: SystemParams):
    """Phase-space point on the section, or ``None`` where p_x would not be real and positive."""
    rad = 2.0 * params.m_x * (
        section.H0 - eval_potential((section.x_section, y), params) - p_y**2 / (2.0 * params.m_y)
    )
    if not rad > 0:
        return None
    return PhaseState(section.x_section, float(y), math.sqrt(rad), float(p_y))


def _lift_grid(section: SectionSpec, params: SystemParams):
    Y, P = np.meshgrid(section.ys, section.p_ys, indexing="xy")
    rad = 2.0 * params.m_x * (
        section.H0 - eval_potential((section.x_section, Y), params) - P**2 / (2.0 * params.m_y)
    )
    mask = rad > 0
    px = np.sqrt(np.where(mask, rad, 0.0))
    return Y, P, px, mask


def ld_point(
    state,
    params: SystemParams,
    tau: float = DEFAULT_TAU,
    p_exponent: float = DEFAULT_P,
    step: float = DEFAULT_LD_STEP,
    t0: float = 0.0,
):
    """(forward, backward, total) descriptor values at ``state``.

    The vector field is autonomous, so ``t0`` shifts nothing; it is accepted
    for symmetry with the general time-dependent definition.  Returns the
    truncation flags as a fourth element: (forward_truncated, backward_truncated).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not 0 < p_exponent <= 1:
        raise ValueError("p_exponent must lie in (0, 1]")
    x, y, px, py = (float(v) for v in state)
    args = (params.c, params.m_x, params.m_y, float(step), float(tau), float(p_exponent), ESCAPE_RADIUS)
    fwd, tf = K.ld_integral(x, y, px, py, *args)
    bwd, tb = K.ld_integral(x, y, -px, -py, *args)
    return fwd, bwd, fwd + bwd, (bool(tf), bool(tb))


def compute_field(
    section: SectionSpec,
    params: SystemParams,
    tau: float = DEFAULT_TAU,
    p_exponent: float = DEFAULT_P,
    step: float = DEFAULT_LD_STEP,
    threads: int = 1,
    chunk: int = 2048,
) -> LDField:
    """Evaluate the descriptor at every accessible node of the section grid.

    Node values depend only on node coordinates, so the result is identical
    for any ``threads``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not 0 < p_exponent <= 1:
        raise ValueError("p_exponent must lie in (0, 1]")
    Y, P, px, mask = _lift_grid(section, params)
    idx = np.flatnonzero(mask.ravel())
    states = np.column_stack(
        [np.full(idx.size, section.x_section), Y.ravel()[idx], px.ravel()[idx], P.ravel()[idx]]
    )
    n = idx.size
    out_f = np.zeros(n)
    out_b = np.zeros(n)
    tr_f = np.zeros(n, dtype=np.bool_)
    tr_b = np.zeros(n, dtype=np.bool_)
    args = (params.c, params.m_x, params.m_y, float(step), float(tau), float(p_exponent), ESCAPE_RADIUS)

    def work(lo):
        hi = min(lo + chunk, n)
        K.ld_nodes(states[lo:hi], *args, out_f[lo:hi], out_b[lo:hi], tr_f[lo:hi], tr_b[lo:hi])

    starts = range(0, n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)

    shape = mask.shape

    def scatter(vals, fill):
        a = np.full(shape[0] * shape[1], fill, dtype=vals.dtype)
        a[idx] = vals
        return a.reshape(shape)

    fwd = scatter(out_f, np.nan)
    bwd = scatter(out_b, np.nan)
    return LDField(
        section=section,
        params=params,
        tau=float(tau),
        p_exponent=float(p_exponent),
        values_forward=fwd,
        values_backward=bwd,
        values_total=fwd + bwd,
        mask=mask,
        truncated_forward=scatter(tr_f, False),
        truncated_backward=scatter(tr_b, False),
        step=float(step),
    )


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    return stem.parent / (stem.name + ".bin"), stem.parent / (stem.name + ".json")


def save_field(ld: LDField, stem) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (raw little-endian arrays) and ``<stem>.json`` header."""
    bin_path, hdr_path = _paths(stem)
    with open(bin_path, "wb") as fh:
        for arr in (ld.values_forward, ld.values_backward, ld.values_total):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for arr in (ld.mask, ld.truncated_forward, ld.truncated_backward):
            fh.write(np.ascontiguousarray(arr, dtype="u1").tobytes())
    hdr_path.write_text(json.dumps(ld.header(), indent=2, sort_keys=True) + "\n")
    return bin_path, hdr_path


def load_field(stem) -> LDField:
    bin_path, hdr_path = _paths(stem)
    hdr = json.loads(hdr_path.read_text())
    section = SectionSpec.from_dict(hdr["section"])
    shape = (section.n_p, section.n_y)
    n = shape[0] * shape[1]
    raw = bin_path.read_bytes()
    if len(raw) != n * (3 * 8 + 3):
        raise ValueError(f"{bin_path} has {len(raw)} bytes, expected {n * 27}")
    f8 = np.frombuffer(raw, dtype="<f8", count=3 * n).reshape(3, *shape).astype(float)
    u1 = np.frombuffer(raw, dtype="u1", offset=24 * n).reshape(3, *shape).astype(bool)
    params = SystemParams(c=hdr["c"], m_x=hdr["m_x"], m_y=hdr["m_y"], H0=hdr["H0"])
    known = {"section", "c", "m_x", "m_y", "H0", "tau", "p_exponent", "step",
             "escape_radius", "shape", "layout", "byte_order"}
    return LDField(
        section=section,
        params=params,
        tau=hdr["tau"],
        p_exponent=hdr["p_exponent"],
        values_forward=f8[0],
        values_backward=f8[1],
        values_total=f8[2],
        mask=u1[0],
        truncated_forward=u1[1],
        truncated_backward=u1[2],
        step=hdr["step"],
        meta={k: v for k, v in hdr.items() if k not in known},
    )


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_field_csv(ld: LDField, path) -> Path:
    path = Path(path)
    ys, ps = ld.section.ys, ld.section.p_ys
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_CSV_HEADER)
        for j, p in enumerate(ps):
            for i, y in enumerate(ys):
                w.writerow(
                    (
                        _fmt(y),
                        _fmt(p),
                        _fmt(ld.values_forward[j, i]),
                        _fmt(ld.values_backward[j, i]),
                        _fmt(ld.values_total[j, i]),
                        int(ld.mask[j, i]),
                    )
                )
    return path

"""Hamilton's equations for the VRI model: RK4 trajectories with event detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as K
from .potential import SystemParams, eval_gradient, eval_potential

DEFAULT_STEP = 1e-3
DEFAULT_T_MAX = 100.0
ESCAPE_RADIUS = 10.0
SECTION_X = 0.05

TERMINATIONS = ("entered-top", "entered-bottom", "time-limit", "left-domain")


class NumericalError(FloatingPointError):
    """Integration produced a non-finite state."""


class PhaseState(NamedTuple):
    x: float
    y: float
    p_x: float
    p_y: float

    def mirrored(self) -> "PhaseState":
        """Image under (y, p_y) -> (-y, -p_y)."""
        return PhaseState(self.x, -self.y, self.p_x, -self.p_y)

    def reversed(self) -> "PhaseState":
        return PhaseState(self.x, self.y, -self.p_x, -self.p_y)


@dataclass(frozen=True)
class EventSpec:
    """A zero-crossing condition on the trajectory.

    ``kind`` is "line-crossing-y" (y = threshold) or "section-crossing-x"
    (x = threshold).  ``momentum_sign_constraint`` optionally requires
    p_x > 0 (+1) or p_x < 0 (-1) at the crossing.  Terminal events stop the
    integration and name the termination via ``label``.
    """

    kind: str
    threshold: float
    direction: str = "either"
    momentum_sign_constraint: int | None = None
    label: str = ""
    terminal: bool = True

    def __post_init__(self):
        if self.kind not in ("line-crossing-y", "section-crossing-x"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.direction not in ("rising", "falling", "either"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("event threshold must be finite")
        if self.momentum_sign_constraint not in (None, 1, -1):
            raise ValueError("momentum_sign_constraint must be None, +1 or -1")


WELL_ENTRY_EVENTS = (
    EventSpec("line-crossing-y", 0.5, "rising", label="entered-top"),
    EventSpec("line-crossing-y", -0.5, "falling", label="entered-bottom"),
)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 4)
    termination: str
    termination_time: float
    max_energy_error: float
    valid: bool = True
    invalid_time: float | None = None
    crossings: list = field(default_factory=list)

    @property
    def final(self) -> PhaseState:
        return PhaseState(*self.states[-1])


def hamiltonian(state, params: SystemParams):
    x, y, px, py = state
    return px**2 / (2 * params.m_x) + py**2 / (2 * params.m_y) + eval_potential((x, y), params)


def vector_field(state, params: SystemParams):
    x, y, px, py = state
    c = params.c
    return (
        px / params.m_x,
        py / params.m_y,
        8 * x * (1 - x) + y**2 * (2 - y**2) - c * y,
        y * (4 * x * (1 - y**2) - 1) - c * x,
    )


def vector_field_from_gradient(state, params: SystemParams):
    """(p/m, -grad V) composed from the potential module."""
    x, y, px, py = state
    gx, gy = eval_gradient((x, y), params)
    return (px / params.m_x, py / params.m_y, -gx, -gy)


def rk4_step(state, params: SystemParams, h: float) -> PhaseState:
    return PhaseState(*K.rk4(*map(float, state), params.c, params.m_x, params.m_y, h))


_DIRECTION = {"rising": 1, "falling": -1, "either": 0}
_KIND = {"line-crossing-y": K.EVENT_Y_LINE, "section-crossing-x": K.EVENT_X_SECTION}


def _pack_events(events: Sequence[EventSpec]):
    n = len(events)
    kind = np.array([_KIND[e.kind] for e in events], dtype=np.int64).reshape(n)
    thr = np.array([e.threshold for e in events], dtype=float).reshape(n)
    direction = np.array([_DIRECTION[e.direction] for e in events], dtype=np.int64).reshape(n)
    psign = np.array([e.momentum_sign_constraint or 0 for e in events], dtype=np.int64).reshape(n)
    terminal = np.array([e.terminal for e in events], dtype=np.bool_).reshape(n)
    return kind, thr, direction, psign, terminal


def _run(initial, params, t_max, events, energy_tol, h, record_every, max_crossings):
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if not energy_tol > 0:
        raise ValueError("energy_tol must be positive")
    if not h > 0:
        raise ValueError("step must be positive")
    s0 = np.array(initial, dtype=float)
    if s0.shape != (4,) or not np.all(np.isfinite(s0)):
        raise ValueError(f"initial state must be 4 finite numbers, got {initial!r}")
    out = K.run_trajectory(
        s0,
        float(params.c),
        float(params.m_x),
        float(params.m_y),
        float(h),
        float(t_max),
        *_pack_events(events),
        float(energy_tol),
        int(record_every),
        int(max_crossings),
        ESCAPE_RADIUS,
    )
    status = out[0]
    if status == K.NAN_STATE:
        raise NumericalError(
            f"non-finite state after t={out[2]:.6g} from initial {tuple(float(v) for v in s0)} (c={params.c})"
        )
    return out


def integrate(
    initial,
    params: SystemParams,
    t_max: float = DEFAULT_T_MAX,
    events: Sequence[EventSpec] = WELL_ENTRY_EVENTS,
    energy_tol: float = 1e-8,
    h: float = DEFAULT_STEP,
    record_every: int = 1,
) -> Trajectory:
    """Fixed-step RK4 from ``initial`` until the first terminal event or ``t_max``.

    Event times are bisected to 1e-10.  Exceeding ``energy_tol`` does not
    stop the run; the trajectory is returned with ``valid=False`` and the
    first offending time.
    """
    status, ev, t_end, samples, ns, cross, nc, max_de, t_bad = _run(
        initial, params, t_max, events, energy_tol, h, record_every, 0
    )
    if status == K.EVENT:
        termination = events[ev].label or f"event-{ev}"
    elif status == K.LEFT_DOMAIN:
        termination = "left-domain"
    else:
        termination = "time-limit"
    return Trajectory(
        times=samples[:ns, 0].copy(),
        states=samples[:ns, 1:].copy(),
        termination=termination,
        termination_time=float(t_end),
        max_energy_error=float(max_de),
        valid=t_bad < 0,
        invalid_time=None if t_bad < 0 else float(t_bad),
    )


def classify_fate(initial, params: SystemParams, t_max=DEFAULT_T_MAX, h=DEFAULT_STEP) -> str:
    """Termination label only, without storing samples."""
    status, ev, *_ = _run(initial, params, t_max, WELL_ENTRY_EVENTS, math.inf, h, 0, 0)
    if status == K.EVENT:
        return WELL_ENTRY_EVENTS[ev].label
    return "left-domain" if status == K.LEFT_DOMAIN else "time-limit"


def section_crossings(
    initial,
    params: SystemParams,
    t_max: float = DEFAULT_T_MAX,
    n_max: int = 100,
    h: float = DEFAULT_STEP,
    x_section: float = SECTION_X,
) -> list[tuple[float, float]]:
    """Successive crossings of x = x_section with p_x > 0, as (y, p_y) pairs.

    A start point lying on the section is not itself recorded.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    ev = EventSpec("section-crossing-x", x_section, "rising", 1, label="section", terminal=False)
    status, _, _, _, _, cross, nc, _, _ = _run(initial, params, t_max, (ev,), math.inf, h, 0, n_max)
    return [(float(cross[i, 3]), float(cross[i, 5])) for i in range(nc)]

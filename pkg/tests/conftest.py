"""Shared fixtures: golden critical-point tables and cached expensive computations.

Full-resolution descriptor fields (600 x 600) take one to two minutes each.
They are stored in pytest's cache directory and reused by later runs; use
``pytest --cache-clear`` to force recomputation.
"""

from __future__ import annotations

import numpy as np
import pytest

from vri.descriptors import SectionSpec, compute_field, load_field, save_field
from vri.experiments import branching_run, default_c_grid
from vri.potential import SystemParams

# (kind, x, y, energy, stability) per c, reference values
CRITICAL_TABLES = {
    0.0: [
        ("index1-saddle-upper", 0.0, 0.0, 0.0, "saddle x center"),
        ("index1-saddle-lower", 1.0, 0.0, -4.0 / 3.0, "saddle x center"),
        ("well-top", 1.1071, 0.8799, -1.9477, "center"),
        ("well-bottom", 1.1071, -0.8799, -1.9477, "center"),
    ],
    0.2: [
        ("index1-saddle-upper", 0.0, 0.0, 0.0, "saddle x center"),
        ("index1-saddle-lower", 0.9994, 0.0671, -1.3266, "saddle x center"),
        ("well-top", 1.0845, 0.8427, -1.7587, "center"),
        ("well-bottom", 1.1303, -0.9130, -2.1481, "center"),
    ],
    0.4: [
        ("index1-saddle-upper", 0.0, 0.0, 0.0, "saddle x center"),
        ("index1-saddle-lower", 0.9978, 0.1368, -1.3064, "saddle x center"),
        ("well-top", 1.0624, 0.7998, -1.5819, "center"),
        ("well-bottom", 1.1541, -0.9431, -2.3592, "center"),
    ],
}

LOBE_C_VALUES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@pytest.fixture(scope="session")
def full_field(pytestconfig):
    """``full_field(c)`` -> default 600 x 600 field at c, computed once and cached on disk.

    ``full_field(c, refine=2)`` gives the same section on the grid refined by
    two (1199 x 1199), used for discretization error bars.
    """
    cache_dir = pytestconfig.cache.mkdir("vri-ld-fields")
    memo = {}

    def get(c: float, refine: int = 1):
        key = (float(c), refine)
        if key not in memo:
            name = f"field_c{key[0]!r}" + (f"_r{refine}" if refine > 1 else "")
            if (cache_dir / f"{name}.bin").exists():
                memo[key] = load_field(cache_dir / name)
            else:
                ld = compute_field(SectionSpec().refined(refine), SystemParams(c=key[0]))
                save_field(ld, cache_dir / name)
                memo[key] = ld
        return memo[key]

    return get


@pytest.fixture(scope="session")
def branching_grid():
    """1000-trajectory branching runs on c = 0, 0.025, ..., 0.5."""
    return {c: branching_run(SystemParams(c=c), 1000) for c in default_c_grid(0.025, 0.5)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

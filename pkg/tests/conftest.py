import numpy as np
from hypothesis import settings, strategies as st

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False, allow_subnormal=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_quaternions(draw):
    g = np.array(draw(st.tuples(*[st.floats(-1.0, 1.0) for _ in range(4)])))
    n = np.linalg.norm(g)
    if n < 1e-3:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return g / n


@st.composite
def rotation_vectors(draw, max_angle=3.0):
    v = np.array(draw(st.tuples(*[st.floats(-1.0, 1.0) for _ in range(3)])))
    return v * (max_angle / np.sqrt(3.0))


# -- shared scenario sweeps ---------------------------------------------------

import dataclasses
from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SWEEP_SEEDS = 20


@dataclasses.dataclass(frozen=True)
class SeedRun:
    seed: int
    stats: object
    est_speed: float
    aborted: bool
    reason: str


@pytest.fixture(scope="session")
def scenario_sweep():
    """``get(kind)`` runs the shipped config over 20 seeds once per session."""
    from uwbfusion.config import load_config
    from uwbfusion.metrics import compute_stats, mean_speed
    from uwbfusion.simulation import run_closed_loop

    cache = {}

    def get(kind):
        if kind not in cache:
            base = load_config(CONFIGS / f"{kind}.ini")
            runs = []
            for seed in range(SWEEP_SEEDS):
                r = run_closed_loop(dataclasses.replace(base, seed=seed))
                runs.append(SeedRun(seed, compute_stats(r.trace), mean_speed(r.trace), r.aborted, r.reason))
            cache[kind] = runs
        return cache[kind]

    return get

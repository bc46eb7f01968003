import os
import sys

import numpy as np
import pytest

# Allow running the suite from a plain checkout without installation.
_SRC = os.path.join(os.path.dirname(__file__), "..", "src")
if os.path.isdir(_SRC):
    sys.path.insert(0, os.path.abspath(_SRC))

import dramforge as df  # noqa: E402


@pytest.fixture
def mvn4():
    return df.TargetDensity(4, lambda x: -0.5 * float(x @ x))


@pytest.fixture
def prefix(tmp_path):
    def make(name="run"):
        return str(tmp_path / name)

    return make


def random_chain(rng: np.random.Generator, ndim: int, n_rows: int) -> df.CompactChain:
    """A randomized but structurally valid compact chain for IO tests."""
    states = rng.normal(0, 1, (n_rows, ndim))
    states[0] += 1e-6  # ensure adjacent rows are distinct
    logf = rng.normal(-5, 2, n_rows)
    # Mix in extreme magnitudes to stress the 17-digit round-trip.
    if n_rows > 2:
        states[1, 0] = 1e300 * rng.uniform(0.5, 1.0)
        states[2, 0] = 5e-324
    return df.CompactChain(
        ndim,
        rng.integers(1, 9, n_rows),
        rng.integers(0, 3, n_rows),
        rng.uniform(0, 1, n_rows),
        rng.uniform(0, 1, n_rows),
        rng.integers(0, max(n_rows, 1), n_rows),
        rng.integers(1, 6, n_rows),
        logf,
        states,
    )

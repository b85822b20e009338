from __future__ import annotations

import numpy as np
import pytest

from stbinom.model import Dataset, HyperParams, ModelSpec, Region
from stbinom.spatial import lattice_adjacency, lattice_coords


def lattice_dataset(nrow=3, ncol=3, T=4, P=1, Q=0, seed=0, n_range=(5, 20), drop=()):
    """Small fully (or partly) observed lattice data set with random counts."""
    rng = np.random.default_rng(seed)
    coords = lattice_coords(nrow, ncol)
    regions = [Region(f"g{i}", tuple(map(float, c))) for i, c in enumerate(coords)]
    S = nrow * ncol
    cells = [(s, t) for s in range(S) for t in range(1, T + 1) if (s, t) not in set(drop)]
    s = np.array([c[0] for c in cells])
    t = np.array([c[1] for c in cells])
    n = rng.integers(n_range[0], n_range[1] + 1, size=len(cells))
    y = rng.binomial(n, 0.4)
    z = rng.normal(size=(len(cells), Q))
    x = np.column_stack([t / T] + [rng.normal(size=len(cells)) for _ in range(P - 1)])[:, :P]
    return Dataset.from_arrays(regions, T, s, t, y, n, z=z, x=x,
                               adjacency=lattice_adjacency(nrow, ncol, queen=True))


@pytest.fixture
def small_data():
    return lattice_dataset()


@pytest.fixture
def small_spec():
    return ModelSpec(num_global=0, num_varying=1, knots_per_surface=(4,), priors=HyperParams())

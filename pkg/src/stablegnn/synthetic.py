"""Small random graphs and signal batches for tests, gradient checks and demos."""
from __future__ import annotations

import numpy as np

from .graph import Gso, SignalBatch, gso_from_matrix


def random_gso(n: int, rng: np.random.Generator, density: float = 0.5,
               normalize: bool = True) -> Gso:
    """Symmetric non-negative weights on a random edge set, zero diagonal."""
    w = rng.uniform(0.0, 1.0, (n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    w = w + w.T
    if not np.any(w):
        w[0, 1] = w[1, 0] = 1.0
    if normalize:
        w = w / np.abs(np.linalg.eigvalsh(w)).max()
    return gso_from_matrix(w)


def random_batch(n: int, size: int, rng: np.random.Generator,
                 mask_fraction: float = 0.5) -> SignalBatch:
    x = rng.standard_normal((size, n))
    y = rng.standard_normal((size, n))
    mask = rng.random((size, n)) < mask_fraction
    mask[np.arange(size), rng.integers(0, n, size)] = True
    return SignalBatch(x, y, mask)


def micro_problem(seed: int = 0, n: int = 10, samples: int = 40, noise: float = 0.05):
    """Regression task on a 10-node graph whose targets depend on the graph.

    Targets are a fixed three-tap filter of the input plus Gaussian noise,
    observed at every node.  Returns ``(gso, batch)``.
    """
    rng = np.random.default_rng(seed)
    g = random_gso(n, rng, density=0.6)
    x = rng.standard_normal((samples, n))
    sx = x @ g.s
    y = 0.5 * x + 1.5 * sx + 1.0 * (sx @ g.s) + noise * rng.standard_normal((samples, n))
    return g, SignalBatch(x, y, np.ones((samples, n), dtype=bool))

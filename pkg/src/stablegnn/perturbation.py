"""Bounded-norm perturbations of a graph shift operator.

Two models are supported:

* additive: ``S_hat = S + E``
* relative: ``S_hat = S + E S + S E``

with ``E`` symmetric and ``||E|| <= epsilon`` in operator 2-norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graph import DimensionMismatch, Gso, gso_from_matrix, spectral_norm
from .model import forward

KINDS = ("additive", "relative")
MODES = ("scaled_uniform", "exact_boundary")


@dataclass(frozen=True)
class PerturbationModel:
    kind: str = "relative"
    epsilon: float = 0.2
    mode: str = "scaled_uniform"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"perturbation kind must be one of {KINDS}, got {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"perturbation mode must be one of {MODES}, got {self.mode!r}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")

    def with_epsilon(self, epsilon: float, mode: str | None = None) -> "PerturbationModel":
        return PerturbationModel(self.kind, float(epsilon), mode or self.mode)


class PerturbedGso(NamedTuple):
    gso: Gso
    error_norm: float


def _draw(n, epsilon, mode, rng, size):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    shape = (n, n) if size is None else (size, n, n)
    if epsilon == 0:
        return np.zeros(shape), (0.0 if size is None else np.zeros(size))
    a = rng.standard_normal(shape)
    e = (a + np.swapaxes(a, -1, -2)) / 2
    # power iteration under-estimates the norm of a random symmetric matrix,
    # whose extreme eigenvalues are nearly equal in magnitude
    sigma = spectral_norm(e, method="eigh")
    if mode == "scaled_uniform":
        t = 1.0 - rng.random(size)  # (0, 1]
    else:
        t = 1.0 if size is None else np.ones(size)
    radius = t * epsilon
    scale = radius / sigma
    if size is None:
        return e * scale, float(radius)
    return e * scale[:, None, None], radius


def sample_error_matrix(n: int, epsilon: float, mode: str, rng: np.random.Generator,
                        size: int | None = None) -> np.ndarray:
    """Draw a symmetric ``n x n`` matrix with spectral norm at most ``epsilon``.

    The direction is a symmetrized standard Gaussian matrix.  Its norm is set
    to ``t * epsilon`` with ``t ~ U(0, 1]`` (``scaled_uniform``) or ``t = 1``
    (``exact_boundary``).  With ``size`` a stack of shape ``(size, n, n)`` is
    returned.
    """
    return _draw(n, epsilon, mode, rng, size)[0]


def apply_error(s: np.ndarray, e: np.ndarray, kind: str) -> np.ndarray:
    """Return the perturbed matrix for error ``e`` (broadcasts over stacks of ``e``)."""
    if kind == "additive":
        return s + e
    if kind == "relative":
        return s + e @ s + s @ e
    raise ValueError(f"unknown perturbation kind {kind!r}")


def perturb(g: Gso, model: PerturbationModel, rng: np.random.Generator) -> PerturbedGso:
    if model.epsilon == 0:
        return PerturbedGso(g, 0.0)
    e, radius = _draw(g.n, model.epsilon, model.mode, rng, None)
    s_hat = apply_error(g.s, e, model.kind)
    # e@s + s@e is symmetric only up to rounding
    return PerturbedGso(gso_from_matrix(s_hat), radius)


def perturb_many(g: Gso, model: PerturbationModel, rng: np.random.Generator,
                 count: int) -> list[Gso]:
    return [perturb(g, model, rng).gso for _ in range(count)]


@dataclass(frozen=True)
class StabilityStats:
    mean: float
    max: float
    epsilon: float
    draws: int
    samples: int

    @property
    def c_estimate(self) -> float | None:
        """Empirical stability constant: worst observed deviation over epsilon."""
        return self.max / self.epsilon if self.epsilon > 0 else None


def measure_stability(params, g: Gso, pert: PerturbationModel, batch, num_draws: int,
                      rng: np.random.Generator) -> StabilityStats:
    """Sample output deviations ``||phi(x, S) - phi(x, S_hat)||_2`` over a batch and draws."""
    if num_draws < 1:
        raise ValueError("num_draws must be >= 1")
    x = batch.inputs
    if x.shape[-1] != g.n:
        raise DimensionMismatch(f"signals have {x.shape[-1]} nodes, graph has {g.n}")
    y0, _ = forward(g, x, params)
    devs = []
    for _ in range(num_draws):
        g_hat = perturb(g, pert, rng).gso
        y1, _ = forward(g_hat, x, params)
        devs.append(np.linalg.norm(y1 - y0, axis=-1))
    devs = np.concatenate(devs)
    return StabilityStats(float(devs.mean()), float(devs.max()), pert.epsilon,
                          num_draws, x.shape[0])

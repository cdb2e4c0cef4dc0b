"""Central finite-difference checks of the analytic GNN gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Gso, SignalBatch
from .model import GnnConfig, GnnParams, backward, forward, init_params, loss_smooth_l1
from .synthetic import random_batch, random_gso

REL_ERR_FLOOR = 1e-7


@dataclass(frozen=True)
class GradCheckResult:
    config: GnnConfig
    max_rel_err: float
    coords: int
    skipped: int


def relative_error(a, b, floor: float = REL_ERR_FLOOR):
    """``|a - b| / max(|a|, |b|, floor)`` elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _relu_pattern(tape):
    return [rec.pre > 0 for rec in tape.layers[:-1]]


def check_gradients(params: GnnParams, g: Gso, batch: SignalBatch, h: float = 1e-5,
                    beta: float = 1.0) -> GradCheckResult:
    """Compare ``backward`` against central differences of forward + smooth-L1.

    Coordinates whose +/-h probes flip a ReLU on/off straddle a kink where the
    loss is not differentiable; they are counted in ``skipped`` and excluded.
    """
    y_hat, tape = forward(g, batch.inputs, params)
    _, dy = loss_smooth_l1(y_hat, batch.targets, batch.masks, beta)
    analytic = backward(tape, dy, g, params).flat()
    base_pattern = _relu_pattern(tape)
    theta = params.flat()
    worst, skipped = 0.0, 0
    for i in range(theta.size):
        vals, flipped = [], False
        for sign in (1.0, -1.0):
            t = theta.copy()
            t[i] += sign * h
            p = params.with_flat(t)
            yh, tp = forward(g, batch.inputs, p)
            vals.append(loss_smooth_l1(yh, batch.targets, batch.masks, beta)[0])
            flipped |= any(np.any(a != b) for a, b in zip(_relu_pattern(tp), base_pattern))
        if flipped:
            skipped += 1
            continue
        numeric = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, float(relative_error(analytic[i], numeric)))
    return GradCheckResult(params.config, worst, theta.size, skipped)


def gradcheck_suite(seed: int = 0, n: int = 8, batch_size: int = 3, widths=(2, 4),
                    taps=(1, 2, 5), h: float = 1e-5) -> list[GradCheckResult]:
    """Reduced-width versions of the ``[1, F, 1]`` and ``[1, F, F/2, 1]`` ReLU GNNs."""
    rng = np.random.default_rng(seed)
    g = random_gso(n, rng)
    batch = random_batch(n, batch_size, rng)
    results = []
    for w in widths:
        for hidden in ((w,), (w, max(1, w // 2))):
            for k in taps:
                cfg = GnnConfig.from_hidden(hidden, taps=k)
                results.append(check_gradients(init_params(cfg, rng), g, batch, h))
    return results

"""Polynomial graph filters, a multi-layer GNN and its hand-written backward pass.

A layer maps ``X`` of shape ``(batch, n, F_in)`` to
``rho(sum_k S^k X H_k)`` with taps ``H_k`` of shape ``(F_in, F_out)``.
Every bank but the last uses the configured nonlinearity; the last is a
linear readout to one output feature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DimensionMismatch, Gso

ACTIVATIONS = ("relu", "identity")


class NonFiniteActivation(FloatingPointError):
    pass


class StaleTape(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


class EmptyMask(ValueError):
    pass


@dataclass(frozen=True)
class GnnConfig:
    """Architecture description.

    ``features`` lists the widths ``[1, F_1, ..., 1]`` of every signal between
    filter banks, so ``len(features) - 1`` banks are applied.  ``readout_taps``
    overrides the tap count of the final (linear) bank.
    """

    features: tuple[int, ...] = (1, 64, 1)
    taps: int = 5
    activation: str = "relu"
    readout_taps: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        f = self.features
        if len(f) < 2 or f[0] != 1 or f[-1] != 1:
            raise ValueError(f"features must start and end with 1, got {list(f)}")
        if any(v < 1 for v in f):
            raise ValueError("feature widths must be >= 1")
        if self.taps < 1 or (self.readout_taps is not None and self.readout_taps < 1):
            raise ValueError("taps must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @classmethod
    def from_hidden(cls, hidden, taps=5, activation="relu", readout_taps=None) -> "GnnConfig":
        return cls((1, *hidden, 1), taps, activation, readout_taps)

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.features[1:-1]

    @property
    def num_banks(self) -> int:
        return len(self.features) - 1

    def bank_taps(self, l: int) -> int:
        if l == self.num_banks - 1 and self.readout_taps is not None:
            return self.readout_taps
        return self.taps

    def bank_shapes(self) -> list[tuple[int, int, int]]:
        return [(self.bank_taps(l), self.features[l], self.features[l + 1])
                for l in range(self.num_banks)]

    def bank_activation(self, l: int) -> str:
        return "identity" if l == self.num_banks - 1 else self.activation


@dataclass
class GnnParams:
    """Filter taps; ``h[l][k]`` is the ``F_l x F_{l+1}`` matrix of tap ``k`` in bank ``l``."""

    config: GnnConfig
    h: list[np.ndarray]

    def __post_init__(self):
        shapes = self.config.bank_shapes()
        if len(self.h) != len(shapes):
            raise ShapeMismatch(f"expected {len(shapes)} filter banks, got {len(self.h)}")
        for l, (arr, shp) in enumerate(zip(self.h, shapes)):
            if arr.shape != shp:
                raise ShapeMismatch(f"bank {l}: expected taps of shape {shp}, got {arr.shape}")

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.h)

    def copy(self) -> "GnnParams":
        return GnnParams(self.config, [a.copy() for a in self.h])

    def zeros_like(self) -> "GnnParams":
        return GnnParams(self.config, [np.zeros_like(a) for a in self.h])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.h])

    def with_flat(self, v: np.ndarray) -> "GnnParams":
        out, i = [], 0
        for a in self.h:
            out.append(np.asarray(v[i:i + a.size], dtype=np.float64).reshape(a.shape))
            i += a.size
        return GnnParams(self.config, out)

    def scaled_add(self, other: "GnnParams", w: float) -> "GnnParams":
        return GnnParams(self.config, [a + w * b for a, b in zip(self.h, other.h)])

    def __eq__(self, other):
        return (isinstance(other, GnnParams) and self.config == other.config
                and all(np.array_equal(a, b) for a, b in zip(self.h, other.h)))


def init_params(config: GnnConfig, rng: np.random.Generator) -> GnnParams:
    """I.i.d. uniform taps on ``[-1/sqrt(F_in K), 1/sqrt(F_in K)]``."""
    h = []
    for k, fin, fout in config.bank_shapes():
        bound = 1.0 / np.sqrt(fin * k)
        h.append(rng.uniform(-bound, bound, size=(k, fin, fout)))
    return GnnParams(config, h)


def zero_params(config: GnnConfig) -> GnnParams:
    return GnnParams(config, [np.zeros(s) for s in config.bank_shapes()])


def _shift(s: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``S @ z[b]`` for every batch entry of ``z`` with shape ``(batch, n, F)``."""
    b, n, f = z.shape
    out = s @ z.transpose(1, 0, 2).reshape(n, b * f)
    return out.reshape(n, b, f).transpose(1, 0, 2)


def _shift_stack(s, z, k):
    zs = [z]
    for _ in range(k - 1):
        zs.append(_shift(s, zs[-1]))
    return zs


def filter_apply(g: Gso, x: np.ndarray, taps) -> np.ndarray:
    """Graph convolution ``sum_k S^k X H_k``.

    ``x`` is ``(n, F_in)`` or ``(batch, n, F_in)``; ``taps`` is a sequence of
    ``K`` matrices of shape ``(F_in, F_out)``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    z = x[None] if squeeze else x
    if z.shape[1] != g.n:
        raise DimensionMismatch(f"signal has {z.shape[1]} nodes, graph has {g.n}")
    taps = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in taps]
    if any(t.shape[0] != z.shape[2] for t in taps):
        raise DimensionMismatch("tap input width does not match signal features")
    y = z @ taps[0]
    for hk in taps[1:]:
        z = _shift(g.s, z)
        y = y + z @ hk
    return y[0] if squeeze else y


@dataclass
class _LayerRecord:
    x: np.ndarray                  # layer input (batch, n, F_in)
    zs: list | None                # S^k x stack when F_in <= F_out
    pre: np.ndarray                # pre-activation (batch, n, F_out)


@dataclass
class ForwardTape:
    gso: Gso
    params: GnnParams
    squeeze: bool
    layers: list = field(default_factory=list)


def forward(g: Gso, x: np.ndarray, params: GnnParams, config: GnnConfig | None = None):
    """Run the GNN on a signal ``(n,)`` or a stack ``(batch, n)``.

    Returns ``(y_hat, tape)`` with ``y_hat`` shaped like ``x``.  Each bank is
    evaluated on whichever side (input or output) has fewer features, so the
    graph shifts always act on ``min(F_in, F_out)`` columns.
    """
    if config is not None and config != params.config:
        raise ShapeMismatch("params were built for a different GnnConfig")
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != g.n:
        raise DimensionMismatch(f"signal shape {x.shape} does not match {g.n} nodes")
    tape = ForwardTape(g, params, squeeze)
    z = x[:, :, None]
    s = g.s
    # divergence is reported below, not as floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for l, h in enumerate(params.h):
            k, fin, fout = h.shape
            if fin <= fout:
                zs = _shift_stack(s, z, k)
                pre = sum(zk @ h[i] for i, zk in enumerate(zs))
            else:
                zs = None
                pre = z @ h[k - 1]
                for i in range(k - 2, -1, -1):
                    pre = _shift(s, pre) + z @ h[i]
            tape.layers.append(_LayerRecord(z, zs, pre))
            z = np.maximum(pre, 0.0) if cfg.bank_activation(l) == "relu" else pre
            if not np.all(np.isfinite(z)):
                raise NonFiniteActivation(f"non-finite activation in bank {l}")
    y = z[:, :, 0]
    return (y[0] if squeeze else y), tape


def backward(tape: ForwardTape, grad_y: np.ndarray, g: Gso, params: GnnParams,
             config: GnnConfig | None = None) -> GnnParams:
    """Gradient of a scalar loss with respect to every filter tap.

    ``grad_y`` is the loss gradient with respect to the forward output and has
    the same shape.  Contributions are summed over the batch.
    """
    if tape.gso is not g or tape.params is not params:
        raise StaleTape("tape was recorded with a different graph or parameter set")
    if config is not None and config != params.config:
        raise ShapeMismatch("params were built for a different GnnConfig")
    cfg = params.config
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if tape.squeeze:
        grad_y = grad_y[None]
    if grad_y.shape != tape.layers[-1].pre.shape[:2]:
        raise DimensionMismatch("gradient shape does not match the forward output")
    s = g.s
    delta = grad_y[:, :, None]
    grads = [None] * len(params.h)
    for l in range(len(params.h) - 1, -1, -1):
        rec, h = tape.layers[l], params.h[l]
        k = h.shape[0]
        if cfg.bank_activation(l) == "relu":
            delta = delta * (rec.pre > 0)
        if rec.zs is not None:
            grads[l] = np.stack([np.tensordot(zk, delta, axes=([0, 1], [0, 1])) for zk in rec.zs])
            if l:
                dx = delta @ h[k - 1].T
                for i in range(k - 2, -1, -1):
                    dx = _shift(s, dx) + delta @ h[i].T
        else:
            ds = _shift_stack(s, delta, k)
            grads[l] = np.stack([np.tensordot(rec.x, dk, axes=([0, 1], [0, 1])) for dk in ds])
            if l:
                dx = sum(dk @ h[i].T for i, dk in enumerate(ds))
        if l:
            delta = dx
    return GnnParams(cfg, grads)


def smooth_l1_per_sample(y_hat, y, mask, beta: float = 1.0):
    """Per-sample masked mean of the smooth-L1 loss and its elementwise derivative."""
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if y_hat.shape != y.shape or y.shape != mask.shape:
        raise DimensionMismatch(f"shapes differ: {y_hat.shape}, {y.shape}, {mask.shape}")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise EmptyMask("loss mask selects no nodes")
    d = y_hat - y
    ad = np.abs(d)
    elem = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    delem = np.clip(d / beta, -1.0, 1.0)
    values = (elem * mask).sum(axis=1) / counts
    dvalues = delem * mask / counts[:, None]
    return values, dvalues


def loss_smooth_l1(y_hat, y, mask, beta: float = 1.0):
    """Smooth-L1 loss averaged over masked nodes and then over the batch.

    Returns ``(value, grad)`` with ``grad`` shaped like ``y_hat``.
    """
    single = np.ndim(y_hat) == 1
    values, dvalues = smooth_l1_per_sample(y_hat, y, mask, beta)
    grad = dvalues / values.size
    return float(values.mean()), (grad[0] if single else grad)

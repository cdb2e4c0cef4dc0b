"""Primal-dual training of a GNN under a stability constraint.

The constrained problem is

    min_H  E[l(phi(x, S; H), y)]
    s.t.   E[l(phi(x, S_hat; H), y) - l(phi(x, S; H), y)] <= C * eps

and is attacked through the Lagrangian

    L(H, lam) = (1 - lam) E[l(phi(x, S))] + lam (E[l(phi(x, S_hat))] - C eps)

with Adam steps on ``H`` every batch and one projected ascent step on ``lam``
per epoch.  ``mode="unconstrained"`` drops the perturbed term entirely.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Gso, SignalBatch
from .model import GnnConfig, GnnParams, backward, forward, init_params, loss_smooth_l1, \
    smooth_l1_per_sample
from .optim import AdamState, adam_step
from .perturbation import PerturbationModel, perturb

log = logging.getLogger(__name__)

MODES = ("constrained", "unconstrained")


class ConfigError(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 20
    batch_size: int = 5
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eta_d: float = 0.05
    stability_c: float = 0.25
    epsilon: float = 0.2
    m_perturbations: int = 3
    slack_eval_fraction: float = 0.2
    seed: int = 0
    mode: str = "constrained"
    lambda_max: float | None = None
    loss_beta: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("trainer.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("trainer.batch_size must be >= 1")
        if self.m_perturbations < 1:
            raise ConfigError("trainer.m_perturbations must be >= 1")
        if not 0 < self.slack_eval_fraction <= 1:
            raise ConfigError("trainer.slack_eval_fraction must be in (0, 1]")
        if self.eta_d <= 0 or self.stability_c <= 0:
            raise ConfigError("trainer.eta_d and trainer.stability_c must be > 0")
        if self.epsilon < 0:
            raise ConfigError("trainer.epsilon must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"trainer.mode must be one of {MODES}")
        if self.lambda_max is not None and self.lambda_max < 0:
            raise ConfigError("trainer.lambda_max must be >= 0")

    @property
    def c_eps(self) -> float:
        return self.stability_c * self.epsilon


@dataclass
class TrainState:
    params: GnnParams
    adam: AdamState
    lam: float = 0.0
    epoch: int = 0
    batch: int = 0
    data_rng: np.random.Generator | None = None
    pert_rng: np.random.Generator | None = None
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class DualRecord:
    nominal: float
    perturbed: float
    slack: float
    lambda_before: float
    lambda_after: float


def lagrangian_value(lam: float, nominal_losses, perturbed_losses, c_eps: float) -> float:
    nominal_losses = np.asarray(nominal_losses, dtype=np.float64)
    perturbed_losses = np.asarray(perturbed_losses, dtype=np.float64)
    if nominal_losses.size == 0 or perturbed_losses.size == 0:
        raise EmptyBatch("loss lists must be non-empty")
    return (1.0 - lam) * nominal_losses.mean() + lam * (perturbed_losses.mean() - c_eps)


def sample_losses(g: Gso, params: GnnParams, batch: SignalBatch, beta: float = 1.0):
    y_hat, _ = forward(g, batch.inputs, params)
    values, _ = smooth_l1_per_sample(y_hat, batch.targets, batch.masks, beta)
    return values


def _loss_and_grad(g, params, batch, beta):
    y_hat, tape = forward(g, batch.inputs, params)
    value, dy = loss_smooth_l1(y_hat, batch.targets, batch.masks, beta)
    return value, backward(tape, dy, g, params)


def primal_gradient(batch: SignalBatch, g: Gso, perturbed_gsos, params: GnnParams,
                    lam: float, beta: float = 1.0):
    """Stochastic gradient of the Lagrangian in the parameters.

    Nominal samples carry weight ``(1 - lam) / N`` and each perturbed
    evaluation ``lam / (N M)``; the same ``M`` perturbed operators are used for
    every sample of the batch.  With no perturbed operators this is the plain
    minibatch gradient.  Returns ``(gradient, nominal mean loss)``.
    """
    if len(batch) == 0:
        raise EmptyBatch("empty minibatch")
    value, grad = _loss_and_grad(g, params, batch, beta)
    if not perturbed_gsos:
        return grad, value
    out = [(1.0 - lam) * a for a in grad.h]
    w = lam / len(perturbed_gsos)
    for g_hat in perturbed_gsos:
        _, gp = _loss_and_grad(g_hat, params, batch, beta)
        for acc, a in zip(out, gp.h):
            acc += w * a
    return GnnParams(params.config, out), value


def dual_step(state: TrainState, slack_batch: SignalBatch, g: Gso,
              pert_model: PerturbationModel, cfg: TrainerConfig) -> DualRecord:
    """Projected ascent on the dual variable using fresh perturbation draws."""
    if len(slack_batch) == 0:
        raise EmptyBatch("slack-evaluation set is empty")
    nominal = sample_losses(g, state.params, slack_batch, cfg.loss_beta).mean()
    perturbed = np.mean([
        sample_losses(perturb(g, pert_model, state.pert_rng).gso, state.params, slack_batch,
                      cfg.loss_beta).mean()
        for _ in range(cfg.m_perturbations)])
    slack = float(perturbed - nominal - cfg.c_eps)
    before = state.lam
    lam = max(0.0, before + cfg.eta_d * slack)
    if cfg.lambda_max is not None:
        lam = min(lam, cfg.lambda_max)
    state.lam = lam
    return DualRecord(float(nominal), float(perturbed), slack, before, lam)


def new_state(model_cfg: GnnConfig, cfg: TrainerConfig, params: GnnParams | None = None) -> TrainState:
    init_ss, data_ss, pert_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    if params is None:
        params = init_params(model_cfg, np.random.default_rng(init_ss))
    elif params.config != model_cfg:
        raise ConfigError("initial params do not match the model config")
    adam = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    return TrainState(params, adam, 0.0, data_rng=np.random.default_rng(data_ss),
                      pert_rng=np.random.default_rng(pert_ss))


def _validate(train_batch, slack_batch, g, cfg, pert_model):
    if len(train_batch) == 0:
        raise ConfigError("training set is empty")
    if train_batch.n != g.n:
        raise ConfigError(f"training signals have {train_batch.n} nodes, graph has {g.n}")
    if cfg.mode == "constrained":
        if slack_batch is None or len(slack_batch) == 0:
            raise ConfigError("constrained training needs a non-empty slack-evaluation set")
        if slack_batch.n != g.n:
            raise ConfigError("slack signals do not match the graph size")
        if pert_model is None:
            raise ConfigError("constrained training needs a perturbation model")


def train(train_batch: SignalBatch, slack_batch: SignalBatch | None, g: Gso,
          model_cfg: GnnConfig, cfg: TrainerConfig,
          pert_model: PerturbationModel | None = None, params: GnnParams | None = None,
          log_file=None, on_step=None):
    """Run the graph-stability training loop.

    Per batch: Adam step on the Lagrangian gradient with ``M`` perturbed
    operators.  Per epoch: one dual update on the slack-evaluation set.
    ``on_step(state)`` is called after every primal step; ``log_file`` (an open
    text handle) receives one JSON line per epoch.

    Returns ``(state, history)``.
    """
    _validate(train_batch, slack_batch, g, cfg, pert_model)
    state = new_state(model_cfg, cfg, params)
    constrained = cfg.mode == "constrained"
    seen = []  # (nominal objective, slack) per epoch, for the weak-duality monitor
    n = len(train_batch)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = state.data_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = train_batch.subset(order[start:start + cfg.batch_size])
            # a zero multiplier removes the perturbed term exactly, so skip sampling it
            gsos = []
            if constrained and state.lam != 0.0:
                gsos = [perturb(g, pert_model, state.pert_rng).gso
                        for _ in range(cfg.m_perturbations)]
            grad, value = primal_gradient(batch, g, gsos, state.params, state.lam, cfg.loss_beta)
            state.params, state.adam = adam_step(state.params, grad, state.adam)
            state.batch += 1
            losses.append(value)
            if on_step is not None:
                on_step(state)
        state.epoch = epoch
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "slack": None,
               "lambda": state.lam}
        if constrained:
            d = dual_step(state, slack_batch, g, pert_model, cfg)
            seen.append((d.nominal, d.slack))
            lagr = d.nominal + d.lambda_before * d.slack
            feasible = [f for f, s in seen if s <= 0]
            rec.update({
                "slack": d.slack, "lambda": d.lambda_after, "lambda_before": d.lambda_before,
                "nominal": d.nominal, "perturbed": d.perturbed, "lagrangian": lagr,
                "dual_estimate": min(f + d.lambda_before * s for f, s in seen),
                "best_feasible": min(feasible) if feasible else None,
            })
        rec["seconds"] = time.perf_counter() - t0
        state.history.append(rec)
        log.debug("epoch %d %s", epoch, rec)
        if log_file is not None:
            log_file.write(json.dumps(rec) + "\n")
            log_file.flush()
    return state, state.history


def config_dict(cfg: TrainerConfig) -> dict:
    return asdict(cfg)

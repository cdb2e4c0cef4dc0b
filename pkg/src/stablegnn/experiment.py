"""RMSE evaluation and the perturbation sweep behind the RMSE-vs-magnitude table."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import DEFAULT_MAGNITUDES, Config
from .graph import Gso, SignalBatch
from .model import GnnParams, forward
from .movielens import RatingsTable, split_dataset
from .perturbation import PerturbationModel, perturb
from .trainer import ConfigError, EmptyBatch, train

log = logging.getLogger(__name__)

CSV_COLUMNS = ("mode", "layers", "magnitude", "mean_rmse", "std_rmse", "var_rmse", "n_eval")


class SweepAborted(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def evaluate_rmse(params: GnnParams, g_eval: Gso, batch: SignalBatch) -> float:
    """Root-mean-square error over every masked (sample, node) entry."""
    if len(batch) == 0:
        raise EmptyBatch("cannot evaluate on an empty batch")
    y_hat, _ = forward(g_eval, batch.inputs, params)
    d = (y_hat - batch.targets)[batch.masks]
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class SweepSpec:
    magnitudes: tuple[float, ...] = DEFAULT_MAGNITUDES
    draws_per_magnitude: int = 20
    splits: int = 10
    modes: tuple[str, ...] = ("unconstrained", "constrained")
    architectures: tuple[tuple[int, ...], ...] = ((64,), (64, 32))
    base_seed: int = 0

    def __post_init__(self):
        mags = tuple(float(m) for m in self.magnitudes)
        object.__setattr__(self, "magnitudes", mags)
        if not mags or any(m < 0 for m in mags) or list(mags) != sorted(mags):
            raise ConfigError("sweep magnitudes must be non-negative and sorted ascending")
        if self.draws_per_magnitude < 1 or self.splits < 1:
            raise ConfigError("sweep draws and splits must be >= 1")
        layer_counts = [len(a) for a in self.architectures]
        if len(set(layer_counts)) != len(layer_counts):
            raise ConfigError("architectures must differ in their number of hidden layers")
        for m in self.modes:
            if m not in ("unconstrained", "constrained"):
                raise ConfigError(f"unknown sweep mode {m!r}")

    @classmethod
    def from_config(cls, cfg: Config) -> "SweepSpec":
        return cls(cfg.magnitudes(), cfg["sweep.draws"], cfg["sweep.splits"], cfg.modes(),
                   cfg.architectures(), cfg["trainer.seed"])


@dataclass(frozen=True)
class SweepRow:
    mode: str
    layers: int
    magnitude: float
    mean_rmse: float
    std_rmse: float
    var_rmse: float
    n_eval: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    metadata: dict = field(default_factory=dict)
    evaluations: list = field(default_factory=list)

    def row(self, mode: str, layers: int, magnitude: float) -> SweepRow:
        for r in self.rows:
            if r.mode == mode and r.layers == layers and r.magnitude == magnitude:
                return r
        raise KeyError((mode, layers, magnitude))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.mode, r.layers, repr(r.magnitude), repr(r.mean_rmse),
                        repr(r.std_rmse), repr(r.var_rmse), r.n_eval])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "metadata": self.metadata,
                           "evaluations": self.evaluations}, indent=1)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(self.to_csv())
        (out / "sweep.json").write_text(self.to_json())


def parse_csv(text: str) -> list[SweepRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [SweepRow(r["mode"], int(r["layers"]), float(r["magnitude"]), float(r["mean_rmse"]),
                     float(r["std_rmse"]), float(r["var_rmse"]), int(r["n_eval"]))
            for r in reader]


def _aggregate(evaluations, spec: SweepSpec) -> list[SweepRow]:
    rows = []
    for mode in spec.modes:
        for arch in spec.architectures:
            for mag in spec.magnitudes:
                vals = np.array([e["rmse"] for e in evaluations
                                 if e["mode"] == mode and e["layers"] == len(arch)
                                 and e["magnitude"] == mag])
                if vals.size == 0:
                    continue
                std = float(vals.std())
                rows.append(SweepRow(mode, len(arch), mag, float(vals.mean()), std,
                                     float(vals.var()), int(vals.size)))
    return rows


def job_seed(base_seed: int, split: int, arch_index: int) -> int:
    """Trainer seed shared by both modes of one (split, architecture) job."""
    return int(np.random.SeedSequence([base_seed, split, arch_index]).generate_state(1)[0])


def eval_perturbations(g: Gso, magnitude: float, draws: int, base_seed: int, split: int,
                       kind: str = "relative"):
    """Evaluation operators at one magnitude; magnitude 0 yields the graph itself once."""
    if magnitude == 0:
        yield g
        return
    model = PerturbationModel(kind, magnitude, "exact_boundary")
    key = int(round(magnitude * 1e12))
    for d in range(draws):
        rng = np.random.default_rng([base_seed, split, key, d])
        yield perturb(g, model, rng).gso


def run_sweep(spec: SweepSpec, cfg: Config, table: RatingsTable, out_dir=None,
              progress=None) -> SweepReport:
    """Train every (split, architecture, mode) model and evaluate it across magnitudes.

    Every model of a split is evaluated on the same perturbed operators.
    RMSE statistics are pooled over splits and draws.
    """
    t_start = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    pert_train = cfg.perturbation_model()
    evaluations = []
    meta = {"config_hash": cfg.digest(), "version": __version__, "base_seed": spec.base_seed,
            "split_seeds": [spec.base_seed + s for s in range(spec.splits)],
            "magnitudes": list(spec.magnitudes), "draws_per_magnitude": spec.draws_per_magnitude,
            "top_movies": cfg["data.top_movies"], "partial": False}

    def report(partial=False):
        meta["partial"] = partial
        meta["wall_time"] = time.perf_counter() - t_start
        return SweepReport(_aggregate(evaluations, spec), dict(meta), list(evaluations))

    for split in range(spec.splits):
        split_seed = spec.base_seed + split
        data = split_dataset(table, cfg["data.split_fraction"], split_seed, cfg.target_movie(),
                             cfg["data.top_movies"], cfg["graph.min_common"],
                             cfg["graph.keep_negative"], cfg["graph.top_k"],
                             cfg["trainer.slack_eval_fraction"])
        meta.setdefault("nodes", data.graph.n)
        meta.setdefault("target_movie", data.target_movie)
        models = {}
        for ai, arch in enumerate(spec.architectures):
            model_cfg = cfg.model_config(arch)
            for mode in spec.modes:
                tcfg = cfg.trainer_config(mode=mode, seed=job_seed(spec.base_seed, split, ai))
                name = f"split{split}_L{len(arch)}_{mode}"
                t0 = time.perf_counter()
                try:
                    if out is not None:
                        with open(out / "logs" / f"{name}.jsonl", "w") as fh:
                            state, _ = train(data.train, data.slack, data.graph, model_cfg, tcfg,
                                             pert_train, log_file=fh)
                        save_checkpoint(out / "checkpoints" / f"{name}.ckpt", state.params,
                                        {"lambda": state.lam, "split_seed": split_seed,
                                         "mode": mode, "seed": tcfg.seed}, state.adam)
                    else:
                        state, _ = train(data.train, data.slack, data.graph, model_cfg, tcfg,
                                         pert_train)
                except Exception as exc:
                    rep = report(partial=True)
                    if out is not None:
                        rep.write(out)
                    raise SweepAborted(f"training {name} failed: {exc}", rep) from exc
                models[(mode, len(arch))] = state.params
                if progress:
                    progress(f"{name}: trained in {time.perf_counter() - t0:.1f}s, "
                             f"lambda={state.lam:.4g}")
        for mag in spec.magnitudes:
            for d, g_hat in enumerate(eval_perturbations(data.graph, mag,
                                                         spec.draws_per_magnitude,
                                                         spec.base_seed, split)):
                for (mode, layers), params in models.items():
                    evaluations.append({"mode": mode, "layers": layers, "split": split,
                                        "magnitude": mag, "draw": d,
                                        "rmse": evaluate_rmse(params, g_hat, data.test)})
        if progress:
            progress(f"split {split}: evaluated {len(spec.magnitudes)} magnitudes")
    rep = report()
    if out is not None:
        rep.write(out)
    return rep

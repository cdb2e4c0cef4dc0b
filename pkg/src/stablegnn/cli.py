"""Command-line entry point: ``stablegnn {train,evaluate,sweep,gradcheck,stability}``.

Exit status: 0 on success, 1 on usage/validation errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config
from .experiment import SweepAborted, SweepSpec, eval_perturbations, evaluate_rmse, run_sweep
from .gradcheck import gradcheck_suite
from .graph import GraphError, load_matrix, save_matrix
from .model import ShapeMismatch, init_params
from .movielens import DataError, load_ratings, split_dataset
from .perturbation import measure_stability
from .synthetic import micro_problem
from .trainer import ConfigError, train

log = logging.getLogger("stablegnn")

VALIDATION_ERRORS = (ConfigError, GraphError, DataError, ShapeMismatch, CheckpointError,
                     FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="base seed (overrides trainer.seed)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="MovieLens u.data path (overrides data.path)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="stablegnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--graph-in", help="use this matrix file instead of building the graph")
    p.add_argument("--graph-out", help="write the graph shift operator to this file")
    p.add_argument("--dump-graph", action="store_true",
                   help="write graph.txt and node_map.tsv into --out")

    p = sub.add_parser("evaluate", parents=[common], help="test RMSE of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--magnitude", type=float, default=0.0,
                   help="relative perturbation norm (exact boundary)")
    p.add_argument("--draws", type=int, help="perturbation draws (default perturbation.draws)")
    p.add_argument("--graph-in")

    sub.add_parser("sweep", parents=[common], help="full RMSE-vs-perturbation sweep")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("stability", parents=[common], help="empirical stability constant")
    p.add_argument("--checkpoint", help="trained model (default: fresh random model)")
    p.add_argument("--synthetic", action="store_true",
                   help="use the synthetic 10-node problem instead of MovieLens")
    p.add_argument("--draws", type=int)
    p.add_argument("--graph-in")
    return parser


def _config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    cfg.apply_overrides(args.set)
    if args.data:
        cfg.set("data.path", args.data)
    if args.seed is not None:
        cfg.set("trainer.seed", args.seed)
    return cfg


def _split(cfg: Config, graph_in=None):
    table = load_ratings(cfg["data.path"])
    data = split_dataset(table, cfg["data.split_fraction"], cfg["trainer.seed"],
                         cfg.target_movie(), cfg["data.top_movies"], cfg["graph.min_common"],
                         cfg["graph.keep_negative"], cfg["graph.top_k"],
                         cfg["trainer.slack_eval_fraction"])
    g = data.graph
    if graph_in:
        g = load_matrix(graph_in)
        if g.n != data.graph.n:
            raise GraphError(f"{graph_in} has {g.n} nodes, dataset needs {data.graph.n}")
    return data, g


def _out(args, default="runs") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args)
    model_cfg, tcfg, pert = cfg.model_config(), cfg.trainer_config(), cfg.perturbation_model()
    data, g = _split(cfg, args.graph_in)
    out = _out(args)
    (out / "config.txt").write_text(cfg.to_text())
    if args.graph_out:
        save_matrix(args.graph_out, g)
    if args.dump_graph:
        save_matrix(out / "graph.txt", g)
        with open(out / "node_map.tsv", "w") as fh:
            fh.write("movie_id\tnode\n")
            for movie, node in sorted(data.movie_index_map.items(), key=lambda kv: kv[1]):
                fh.write(f"{movie}\t{node}\n")
    with open(out / "train_log.jsonl", "w") as fh:
        state, history = train(data.train, data.slack, g, model_cfg, tcfg, pert, log_file=fh)
    save_checkpoint(out / "model.ckpt", state.params,
                    {"lambda": state.lam, "epoch": state.epoch, "split_seed": tcfg.seed,
                     "mode": tcfg.mode}, state.adam)
    rmse = evaluate_rmse(state.params, g, data.test)
    print(f"trained {tcfg.mode} model {list(model_cfg.features)} on {g.n} nodes "
          f"for {tcfg.epochs} epochs; lambda={state.lam:.6g}")
    print(f"test_rmse={rmse:.6f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ckpt = load_checkpoint(args.checkpoint, cfg.model_config())
    data, g = _split(cfg, args.graph_in)
    draws = args.draws or cfg["perturbation.draws"]
    if args.magnitude < 0:
        raise ConfigError("--magnitude must be >= 0")
    vals = [evaluate_rmse(ckpt.params, g_hat, data.test)
            for g_hat in eval_perturbations(g, args.magnitude, draws, cfg["trainer.seed"], 0,
                                            cfg["perturbation.kind"])]
    print(f"magnitude={args.magnitude!r} n_eval={len(vals)} "
          f"mean_rmse={np.mean(vals):.6f} std_rmse={np.std(vals):.6f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    spec = SweepSpec.from_config(cfg)
    table = load_ratings(cfg["data.path"])
    out = _out(args, "sweep_out")
    (out / "config.txt").write_text(cfg.to_text())
    try:
        report = run_sweep(spec, cfg, table, out, progress=lambda m: log.info(m))
    except SweepAborted as exc:
        print(f"sweep aborted: {exc}; partial report in {out}", file=sys.stderr)
        return 2
    print(report.to_csv(), end="")
    print(f"wrote {out / 'sweep.csv'} and {out / 'sweep.json'}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    results = gradcheck_suite(seed=cfg["trainer.seed"])
    worst = max(r.max_rel_err for r in results)
    for r in results:
        print(f"features={list(r.config.features)} taps={r.config.taps} "
              f"max_rel_err={r.max_rel_err:.3e} coords={r.coords} skipped={r.skipped}")
    print(f"max_rel_err={worst:.3e} tol={args.tol:g} {'PASS' if worst < args.tol else 'FAIL'}")
    return 0 if worst < args.tol else 2


def cmd_stability(args) -> int:
    cfg = _config(args)
    model_cfg, pert = cfg.model_config(), cfg.perturbation_model()
    if args.synthetic:
        g, batch = micro_problem(cfg["trainer.seed"])
    else:
        data, g = _split(cfg, args.graph_in)
        batch = data.test
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, model_cfg).params
    else:
        params = init_params(model_cfg, np.random.default_rng(cfg["trainer.seed"]))
    draws = args.draws or cfg["perturbation.draws"]
    stats = measure_stability(params, g, pert, batch, draws,
                              np.random.default_rng(cfg["trainer.seed"]))
    result = {"kind": pert.kind, "epsilon": pert.epsilon, "mode": pert.mode,
              "draws": draws, "samples": stats.samples, "mean_deviation": stats.mean,
              "max_deviation": stats.max, "c_estimate": stats.c_estimate}
    print(json.dumps(result))
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "stability": cmd_stability}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.exception("runtime failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()

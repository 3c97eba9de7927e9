"""
Command-line entry point: dataset generation, training, evaluation,
verification suites, attention export and the scaling benchmark.

Exit codes: 0 success, 1 verification failure, 2 usage/parse error,
3 numeric failure.
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence
import argparse
import csv
import logging
import sys

import numpy as np

from benchmark import linear_fit_ratio, run_bench, write_bench
from polynormer.attention import kernel_attention_scores
from polynormer.checkpoint import load_checkpoint, save_checkpoint
from polynormer.config import DEFAULT_SEED, LOG_LEVEL, VERIFY_WORKERS, Metric, Scheme, Stage, load_run_config
from polynormer.errors import DomainError, NumericalError, PolynormerError
from polynormer.graphstore import (Dataset, Graph, Split, gen_csl, gen_er, gen_sbm, graph_stats,
                                   parse_dataset, write_dataset)
from polynormer.model import PolynormerModel, forward_trace, init_model
from polynormer.training import EpochRecord, evaluate, train, write_log
from verification import SUITES, SuiteOrchestrator

logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                    stream=sys.stderr)
logger = logging.getLogger("polynormer")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def unlabeled(graph: Graph) -> Dataset:
    """Topology-only dataset: a constant feature, no labels, no splits"""
    n = graph.n
    return Dataset(graph, np.ones((n, 1)), np.full(n, -1, dtype=np.int64),
                   np.full(n, Split.NONE.value, dtype="<U1"), 1)


def _print_stats(stats: Dict[str, object]) -> None:
    for key, value in stats.items():
        print(f"{key}={value}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    if args.kind == "er":
        dataset = unlabeled(gen_er(args.n, args.p, args.seed))
    elif args.kind == "sbm":
        dataset = gen_sbm(args.n, args.classes, args.p_in, args.p_out, args.dim, args.noise, args.seed)
    else:
        dataset = unlabeled(gen_csl(args.n, args.skip))

    if args.out:
        write_dataset(dataset, args.out)
        logger.info(f"Wrote {args.kind} dataset to {args.out}")
    _print_stats(graph_stats(dataset))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    dataset = parse_dataset(args.data)
    run = load_run_config(args.config)
    cfg = run.train_config(seed=args.seed)
    model = init_model(run.model_config_for(dataset.feature_dim, dataset.num_classes), cfg.seed)
    logger.info(f"Training with seed {cfg.seed}: {model.parameter_count} parameters")

    def on_epoch(record: EpochRecord) -> None:
        logger.debug(f"epoch {record.epoch} val={record.val_metric:.4f}")

    result = train(model, dataset, cfg, progress_callback=on_epoch)
    if args.out_checkpoint:
        save_checkpoint(result.model, args.out_checkpoint)
    if args.log:
        write_log(result.log, args.log)
        logger.info(f"Wrote {len(result.log)} epoch records to {args.log}")
    print(f"best_epoch={result.best_epoch}")
    print(f"best_stage={result.best_stage.value}")
    print(f"val_metric={result.val_metric!r}")
    print(f"test_metric={result.test_metric!r}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = parse_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    if model.config.num_classes != dataset.num_classes:
        raise DomainError(f"checkpoint predicts {model.config.num_classes} classes, "
                          f"dataset has {dataset.num_classes}")
    metrics = evaluate(model, dataset, dataset.mask(Split(args.split)), Metric(args.metric),
                       model.stage if args.stage is None else Stage(args.stage))
    print(f"metric={metrics.value(Metric(args.metric))!r}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    def on_progress(update: Dict[str, object]) -> None:
        logger.info(f"[{update['suite']}] {update['status']} {update['message']}".rstrip())

    orchestrator = SuiteOrchestrator(seed=args.seed, progress_callback=on_progress, workers=args.workers)
    report = orchestrator.run([args.suite])
    for check in report.checks:
        print(check.line())
    summary = report.summary
    print(f"{summary['passed']}/{summary['total_checks']} checks passed")
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def attention_inputs(model: PolynormerModel, dataset: Dataset):
    """Input and query/key projections of the last global attention layer"""
    config = model.config
    if config.global_layers == 0:
        raise UsageError("model has no global attention layer")
    trace = forward_trace(model, dataset, Stage.FULL)
    if config.scheme is Scheme.LOCAL_AND_GLOBAL:
        prefix = f"parallel.{config.local_layers + config.global_layers - 1}"
        x = trace.local_inputs[-1]
    else:
        prefix = f"global.{config.global_layers - 1}"
        x = trace.global_inputs[-1]
    return x, model.params[f"{prefix}.w_q"], model.params[f"{prefix}.w_k"]


def attention_heatmap(model: PolynormerModel, dataset: Dataset, k: int, seed: int):
    """Sampled k×k last-layer attention scores scaled so the maximum is 1"""
    if not 1 <= k <= dataset.n:
        raise DomainError(f"sample size must lie in [1, {dataset.n}], got {k}")
    x, w_q, w_k = attention_inputs(model, dataset)
    nodes = np.sort(np.random.default_rng(seed).choice(dataset.n, size=k, replace=False))
    scores = kernel_attention_scores(x, w_q, w_k, model.config.heads, rows=nodes, cols=nodes)
    return nodes, scores / scores.max()


def write_heatmap(nodes: np.ndarray, scores: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node"] + [str(int(v)) for v in nodes])
        for node, row in zip(nodes, scores):
            writer.writerow([str(int(node))] + [repr(float(s)) for s in row])


def cmd_attention(args: argparse.Namespace) -> int:
    dataset = parse_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    nodes, scores = attention_heatmap(model, dataset, args.nodes, args.seed)
    write_heatmap(nodes, scores, args.out)
    logger.info(f"Wrote {len(nodes)}x{len(nodes)} attention heatmap to {args.out}")
    print(f"nodes={len(nodes)}")
    return EXIT_OK


def _size_list(text: str) -> List[int]:
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None
    if not sizes:
        raise argparse.ArgumentTypeError("need at least one size")
    return sizes


def cmd_bench(args: argparse.Namespace) -> int:
    rows = run_bench(args.n_list, mean_degree=args.p_degree, dim=args.dim, epochs=args.epochs, seed=args.seed)
    if args.out:
        write_bench(rows, args.out)
    for row in rows:
        print(f"n={row.n} m={row.m} seconds_per_epoch={row.seconds_per_epoch!r} peak_bytes={row.peak_bytes}")
    if len(rows) > 1:
        print(f"peak_linear_fit_ratio={linear_fit_ratio(rows)!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polynormer", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(handler=handler)
        return p

    gen = add("gen", cmd_gen, "generate a synthetic PGRF dataset")
    gen.add_argument("kind", choices=["er", "sbm", "csl"])
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--p", type=float, default=0.05)
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--p-in", type=float, default=0.05)
    gen.add_argument("--p-out", type=float, default=0.005)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--skip", type=int, default=2)
    gen.add_argument("--out", type=Path)

    tr = add("train", cmd_train, "train a model from a run config")
    tr.add_argument("--data", type=Path, required=True)
    tr.add_argument("--config", type=Path, required=True)
    tr.add_argument("--out-checkpoint", type=Path)
    tr.add_argument("--log", type=Path)

    ev = add("eval", cmd_eval, "evaluate a checkpoint on one split")
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--split", choices=[Split.TRAIN.value, Split.VALID.value, Split.TEST.value],
                    default=Split.TEST.value)
    ev.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.ACCURACY.value)
    ev.add_argument("--stage", choices=[s.value for s in Stage], default=None,
                    help="Forward stage; defaults to the stage stored in the checkpoint")

    ve = add("verify", cmd_verify, "run property suites")
    ve.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    ve.add_argument("--workers", type=int, default=VERIFY_WORKERS)

    at = add("attention", cmd_attention, "export a sampled last-layer attention heatmap")
    at.add_argument("--data", type=Path, required=True)
    at.add_argument("--checkpoint", type=Path, required=True)
    at.add_argument("--nodes", type=int, default=100)
    at.add_argument("--out", type=Path, required=True)

    be = add("bench", cmd_bench, "time training epochs on growing ER graphs")
    be.add_argument("--n-list", type=_size_list, default=[1000, 2000, 4000, 8000])
    be.add_argument("--p-degree", type=float, default=5.0)
    be.add_argument("--dim", type=int, default=100)
    be.add_argument("--epochs", type=int, default=3)
    be.add_argument("--out", type=Path)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    # train takes its seed from the run config unless overridden
    if args.seed is None and args.command != "train":
        args.seed = DEFAULT_SEED

    try:
        return args.handler(args)
    except NumericalError as e:
        logger.error(f"Numerical failure: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PolynormerError, UsageError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

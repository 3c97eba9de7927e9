"""
Training loop with warm-up staging, NLL loss, Adam, accuracy / ROC AUC
metrics and random-partition mini-batching.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union
import csv
import logging

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import rankdata

from . import diffmath as dm
from .config import Metric, Stage, TrainConfig
from .diffmath import DiffValue, Tape
from .errors import DomainError, NumericalError, ShapeError
from .graphstore import Dataset, Split, induced_subgraph, random_partition
from .model import PolynormerModel, bind_parameters, forward, forward_graph

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "stage", "train_loss", "val_metric", "test_metric")


class Metrics(BaseModel):
    loss: float
    accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    auc: Optional[float] = Field(None, ge=0.0, le=1.0)
    epoch: Optional[int] = None
    stage: Optional[Stage] = None

    def value(self, metric: Metric) -> float:
        return self.auc if Metric(metric) is Metric.AUC else self.accuracy


class EpochRecord(BaseModel):
    epoch: int
    stage: Stage
    train_loss: float
    val_metric: float
    test_metric: float

    def row(self) -> List[str]:
        return [str(self.epoch), self.stage.value, repr(self.train_loss),
                repr(self.val_metric), repr(self.test_metric)]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class TrainResult:
    model: PolynormerModel
    log: List[EpochRecord]
    best_epoch: Optional[int]
    best_stage: Stage
    # metrics of the returned model
    val_metric: float
    test_metric: float


def _indices(mask: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if not len(idx):
        raise DomainError("mask selects no nodes")
    return idx


def nll_loss(log_probs: DiffValue, labels: np.ndarray, mask: np.ndarray) -> DiffValue:
    """Mean of -log p(label) over the masked nodes"""
    idx = _indices(mask)
    labels = np.asarray(labels)
    if labels.shape != (log_probs.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match {log_probs.shape[0]} rows")
    if np.any(labels[idx] < 0) or np.any(labels[idx] >= log_probs.shape[1]):
        raise DomainError("masked nodes must carry a label within the class range")
    return dm.scale(dm.mean_all(dm.pick(log_probs, idx, labels[idx])), -1.0)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam; returns new parameter and state objects"""
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"adam: gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of argmax matches; ties resolve to the lowest class index"""
    idx = _indices(mask)
    return float(np.mean(np.argmax(logits[idx], axis=1) == np.asarray(labels)[idx]))


def roc_auc(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mann-Whitney rank statistic with average ranks for ties"""
    idx = _indices(mask)
    s = np.asarray(scores, dtype=np.float64)[idx]
    y = np.asarray(labels)[idx]
    if not np.all(np.isin(y, (0, 1))):
        raise DomainError("roc_auc requires binary labels")
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("roc_auc requires both classes in the mask")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def score_metric(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray, metric: Metric) -> float:
    if Metric(metric) is Metric.AUC:
        if logits.shape[1] != 2:
            raise DomainError(f"auc requires a binary task, got {logits.shape[1]} classes")
        return roc_auc(logits[:, 1] - logits[:, 0], labels, mask)
    return accuracy(logits, labels, mask)


def evaluate(model: PolynormerModel, dataset: Dataset, mask: np.ndarray,
             metric: Metric = Metric.ACCURACY, stage: Stage = Stage.FULL) -> Metrics:
    """Full-batch forward with dropout off"""
    idx = _indices(mask)
    logits = forward(model, dataset, stage)
    loss = float(-np.mean(_log_softmax(logits)[idx, dataset.labels[idx]]))
    value = score_metric(logits, dataset.labels, mask, metric)
    if Metric(metric) is Metric.AUC:
        return Metrics(loss=loss, auc=value, stage=stage)
    return Metrics(loss=loss, accuracy=value, stage=stage)


def _batches(dataset: Dataset, parts: int,
             rng: np.random.Generator) -> List[Tuple[Dataset, np.ndarray]]:
    """Induced sub-datasets with the sorted full-graph indices of their nodes"""
    if parts == 1:
        return [(dataset, np.arange(dataset.n))]
    partition = random_partition(dataset.n, parts, int(rng.integers(2 ** 32)))
    batches = []
    for part in range(parts):
        nodes = partition.members(part)
        sub = induced_subgraph(dataset, nodes)
        if sub.mask(Split.TRAIN).any():
            batches.append((sub, nodes))
    return batches


def run_epoch(model: PolynormerModel, dataset: Dataset, stage: Stage, cfg: TrainConfig,
              state: AdamState, rng: np.random.Generator) -> Tuple[float, AdamState]:
    """One pass over the epoch's batches; updates model.params in place"""
    losses = []
    # v2 gates use slices of the full-graph carrier, never a per-part spectrum
    carrier = model.carrier_for(dataset.graph)
    for batch, nodes in _batches(dataset, cfg.batch_parts, rng):
        tape = Tape()
        leaves = bind_parameters(model, tape)
        logits = forward_graph(model, batch, leaves, stage, rng=rng, dropout=cfg.dropout,
                               carrier=None if carrier is None else carrier[nodes])
        loss = nll_loss(dm.log_softmax_rows(logits), batch.labels, batch.mask(Split.TRAIN))
        grads = dm.backward(loss)
        named = {name: grads[leaf.node] for name, leaf in leaves.items()}
        model.params, state = adam_step(model.params, named, state, cfg.learning_rate,
                                        cfg.beta1, cfg.beta2, cfg.adam_eps)
        losses.append(float(loss.value[0, 0]))
    return float(np.mean(losses)), state


def train(model: PolynormerModel, dataset: Dataset, cfg: TrainConfig,
          progress_callback: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """
    Warm-up epochs on X_local, then main epochs through the full model.

    The returned model is the one with the best validation metric over
    every logged epoch (earliest on ties), tagged with that epoch's stage.
    """
    train_mask = dataset.mask(Split.TRAIN)
    val_mask = dataset.mask(Split.VALID)
    test_mask = dataset.mask(Split.TEST)
    if not train_mask.any():
        raise DomainError("training requires at least one train node")
    if not val_mask.any():
        raise DomainError("training requires at least one validation node")
    has_test = bool(test_mask.any())

    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(model.params)
    schedule = [Stage.WARMUP] * cfg.warmup_epochs + [Stage.FULL] * cfg.main_epochs
    logger.info(f"Training {len(schedule)} epochs ({cfg.warmup_epochs} warm-up), seed {cfg.seed}, "
                f"{cfg.batch_parts} part(s) per epoch")

    log: List[EpochRecord] = []
    best: Optional[Tuple[float, int, Stage, Dict[str, np.ndarray], float]] = None
    for epoch, stage in enumerate(schedule):
        try:
            loss, state = run_epoch(model, dataset, stage, cfg, state, rng)
            if not np.isfinite(loss):
                raise NumericalError("training loss is not finite")
            val = evaluate(model, dataset, val_mask, cfg.metric, stage).value(cfg.metric)
            test = (evaluate(model, dataset, test_mask, cfg.metric, stage).value(cfg.metric)
                    if has_test else float("nan"))
        except NumericalError as exc:
            logger.error(f"Numerical failure at epoch {epoch}: {exc}")
            raise NumericalError(str(exc), epoch=epoch) from exc

        record = EpochRecord(epoch=epoch, stage=stage, train_loss=loss, val_metric=val, test_metric=test)
        log.append(record)
        if progress_callback:
            progress_callback(record)
        logger.debug(f"epoch {epoch} [{stage.value}] loss={loss:.4f} val={val:.4f} test={test:.4f}")

        if best is None or val > best[0]:
            best = (val, epoch, stage, {k: v.copy() for k, v in model.params.items()}, test)

    if best is None:
        logger.warning("No epochs were run; returning the initial model")
        val = evaluate(model, dataset, val_mask, cfg.metric, model.stage).value(cfg.metric)
        test = (evaluate(model, dataset, test_mask, cfg.metric, model.stage).value(cfg.metric)
                if has_test else float("nan"))
        return TrainResult(model, log, None, model.stage, val, test)

    val, best_epoch, best_stage, params, test = best
    model.params = params
    model.stage = best_stage
    logger.info(f"Best validation metric {val:.4f} at epoch {best_epoch} ({best_stage.value}); "
                f"test metric {test:.4f}")
    return TrainResult(model, log, best_epoch, best_stage, val, test)


def write_log(records: List[EpochRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for record in records:
            writer.writerow(record.row())

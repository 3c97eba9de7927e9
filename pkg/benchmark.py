"""
Scaling sweep: per-epoch training time and allocator high-water mark on
Erdős–Rényi graphs of growing size.
"""
from pathlib import Path
from typing import List, Sequence, Union
import csv
import logging
import time
import tracemalloc

import numpy as np
from pydantic import BaseModel, Field

from polynormer.config import ModelConfig, Stage, TrainConfig
from polynormer.errors import DomainError
from polynormer.graphstore import Dataset, Split, gen_er
from polynormer.model import init_model
from polynormer.training import AdamState, run_epoch

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ("n", "m", "seconds_per_epoch", "peak_bytes")


class BenchRow(BaseModel):
    n: int = Field(..., gt=0)
    m: int = Field(..., ge=0)
    seconds_per_epoch: float
    peak_bytes: int

    def row(self) -> List[str]:
        return [str(self.n), str(self.m), repr(self.seconds_per_epoch), str(self.peak_bytes)]


def er_dataset(n: int, mean_degree: float, dim: int, classes: int, seed: int) -> Dataset:
    """ER topology with average degree ≈ mean_degree, Gaussian features, every node in train"""
    if n < 2:
        raise DomainError(f"benchmark graphs need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    graph = gen_er(n, min(1.0, mean_degree / (n - 1)), seed)
    return Dataset(graph, rng.standard_normal((n, dim)), rng.integers(0, classes, n),
                   np.full(n, Split.TRAIN.value, dtype="<U1"), classes)


def bench_size(n: int, mean_degree: float, dim: int, epochs: int, seed: int,
               global_layers: int = 1) -> BenchRow:
    dataset = er_dataset(n, mean_degree, dim, 2, seed)
    config = ModelConfig(input_dim=dim, hidden_dim=dim, local_layers=1,
                         global_layers=global_layers, heads=1, num_classes=2)
    model = init_model(config, seed)
    cfg = TrainConfig(main_epochs=epochs, seed=seed)
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(seed)

    tracemalloc.start()
    try:
        started = time.perf_counter()
        for _ in range(epochs):
            _, state = run_epoch(model, dataset, Stage.FULL, cfg, state, rng)
        elapsed = time.perf_counter() - started
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    row = BenchRow(n=n, m=dataset.graph.num_edges, seconds_per_epoch=elapsed / max(epochs, 1),
                   peak_bytes=peak)
    logger.info(f"bench n={n} m={row.m}: {row.seconds_per_epoch:.4f}s/epoch, peak {peak} bytes")
    return row


def run_bench(sizes: Sequence[int], mean_degree: float = 5.0, dim: int = 100, epochs: int = 3,
              seed: int = 0) -> List[BenchRow]:
    if not sizes:
        raise DomainError("benchmark needs at least one size")
    if epochs < 1:
        raise DomainError(f"benchmark needs at least one epoch, got {epochs}")
    return [bench_size(n, mean_degree, dim, epochs, seed) for n in sizes]


def linear_fit_ratio(rows: Sequence[BenchRow]) -> float:
    """Largest ratio of measured peak bytes to a least-squares line through (n, peak)"""
    n = np.array([r.n for r in rows], dtype=np.float64)
    peak = np.array([r.peak_bytes for r in rows], dtype=np.float64)
    slope, intercept = np.polyfit(n, peak, 1)
    fitted = np.maximum(slope * n + intercept, 1.0)
    return float(np.max(peak / fitted))


def write_bench(rows: Sequence[BenchRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            writer.writerow(row.row())

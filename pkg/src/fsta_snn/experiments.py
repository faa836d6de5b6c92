"""Desk-scale experiments shared by the scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .analysis import FiringStats, ReductionReport, compare_runs
from .data import DataConfig, gen_synthetic
from .fsta import FstaConfig
from .model import build_network, insert_fsta, snn_tiny
from .train import TrainConfig, evaluate, fit


@dataclass
class ToyResult:
    seed: int
    fsta: bool
    accuracy: float
    firing: FiringStats
    seconds: float


@dataclass
class ToyComparison:
    results: list[ToyResult]
    report: ReductionReport
    seconds: float
    meta: dict = field(default_factory=dict)

    def mean_accuracy(self, fsta: bool) -> float:
        return float(np.mean([r.accuracy for r in self.results if r.fsta == fsta]))

    def mean_rate(self, fsta: bool) -> float:
        return float(np.mean([r.firing.network_rate for r in self.results if r.fsta == fsta]))


def toy_comparison(seeds=(0, 1, 2), epochs: int = 6, n_train: int = 512, n_test: int = 256,
                   image_size: int = 16, timesteps: int = 4, lr: float = 0.05, noise: float = 0.1,
                   placement=(0, 1), fsta_config: FstaConfig | None = None, log=None) -> ToyComparison:
    """Train snn-tiny with and without attention on the two-class blob task.

    Every seed trains both variants on the same data; firing statistics are
    summed over seeds before ``compare_runs`` so the report reflects all runs.
    """
    started = time.perf_counter()
    previous = nx.get_default_dtype()
    nx.set_default_dtype(np.float32)
    try:
        data = DataConfig(kind="synthetic_twoclass", n_train=n_train, n_test=n_test,
                          image_size=image_size, noise=noise, seed=0)
        train_set, test_set = gen_synthetic(data)
        results = []
        for seed in seeds:
            for with_fsta in (False, True):
                t0 = time.perf_counter()
                spec = snn_tiny(2, (1, image_size, image_size), timesteps)
                if with_fsta:
                    spec = insert_fsta(spec, placement, fsta_config)
                net = build_network(spec, seed)
                cfg = TrainConfig(epochs=epochs, lr=lr, seed=seed, timesteps=timesteps, dtype="float32")
                fit(net, train_set, None, cfg)
                ev = evaluate(net, test_set, timesteps, cfg.eval_batch_size, cfg.dtype)
                res = ToyResult(seed, with_fsta, ev.accuracy, ev.firing, time.perf_counter() - t0)
                results.append(res)
                if log is not None:
                    log(res)
    finally:
        nx.set_default_dtype(previous)
    merged = {}
    for flag in (False, True):
        stats = [r.firing for r in results if r.fsta == flag]
        total = stats[0]
        for s in stats[1:]:
            total = total.merge(s)
        merged[flag] = total
    report = compare_runs(merged[False], merged[True])
    return ToyComparison(results, report, time.perf_counter() - started,
                         {"epochs": epochs, "n_train": n_train, "n_test": n_test, "seeds": list(seeds)})

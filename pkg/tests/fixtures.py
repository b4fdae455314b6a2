#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import os
from pathlib import Path
import shutil
import struct
import tempfile
from typing import Callable, Dict, Sequence
import unittest

import numpy as np

from llcbench.experiment import RunConfig
from llcbench.nn import Batch, MlpArchitecture, MlpModel


__all__ = [
    "SLOW_TESTS",
    "TempDirTestCase",
    "central_difference",
    "idx_bytes",
    "random_batch",
    "random_model",
    "small_run_config",
    "tiny_architecture"
]


SLOW_TESTS: bool = os.environ.get("LLCBENCH_SLOW_TESTS") == "1"


def tiny_architecture(
        hidden: Sequence[int] = (5,),
        activation: str = "tanh",
        input_dim: int = 4,
        classes: int = 3
) -> MlpArchitecture:
    return MlpArchitecture(
        input_dim=input_dim,
        hidden_layers=list(hidden),
        output_classes=classes,
        activation=activation
    ).validate()


def random_batch(m: int, input_dim: int, classes: int, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(rng.standard_normal((m, input_dim)), rng.integers(0, classes, size=m))


def random_model(architecture: MlpArchitecture, seed: int = 0, scale: float = 0.5) -> MlpModel:
    rng = np.random.default_rng(seed + 1000)
    return MlpModel(architecture, scale * rng.standard_normal(architecture.param_count))


def central_difference(f: Callable[[np.ndarray], np.ndarray], w: np.ndarray, h: float) -> np.ndarray:
    """Coordinate-wise central differences of a scalar function."""
    out = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        out[j] = (f(w + e) - f(w - e)) / (2.0 * h)
    return out


def idx_bytes(magic: int, dims: Sequence[int], payload: bytes) -> bytes:
    return struct.pack(f">I{len(dims)}I", magic, *dims) + payload


def small_run_config(**overrides) -> RunConfig:
    """A run on 120 synthetic examples that trains and measures in well under a second per epoch."""
    base: Dict = {
        "architecture": {"hidden_layers": [6], "output_classes": 3, "activation": "tanh"},
        "optimizer": {"kind": "sgd", "learning_rate": 0.1, "batch_size": 16},
        "dataset": {
            "source": "synthetic",
            "synthetic_n": 120,
            "synthetic_input_dim": 4,
            "synthetic_classes": 3,
            "split": {"train_fraction": 0.75, "seed": 0, "subsample_to": None, "downsample_side": None},
        },
        "epochs": 2,
        "seed": 0,
        "sgld": {"num_chains": 2, "draws_per_chain": 60, "burn_in": 10, "batch_size": 16, "step_size": 1e-5},
        "hutchinson": {"num_samples": 20},
        "metric_batch_size": 32,
    }
    base.update(overrides)
    return RunConfig(**base).validate()


class TempDirTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = Path(tempfile.mkdtemp(prefix="llcbench-test-"))

    def tearDown(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)

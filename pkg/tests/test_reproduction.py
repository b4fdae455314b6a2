#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Desk-scale runs on the downsampled MNIST training files. They take minutes and need the IDX files, so they only run
with `LLCBENCH_SLOW_TESTS=1` and `LLCBENCH_DATA_DIR` pointing at a directory holding `mnist/`.
"""
import unittest

import numpy as np

from llcbench import experiment, utils
from llcbench.data import load_datasets
from llcbench.experiment import ForkSpec, RunConfig

from tests.fixtures import SLOW_TESTS


def mnist_config(**overrides) -> RunConfig:
    base = {
        "architecture": {"hidden_layers": [64], "output_classes": 10, "activation": "relu"},
        "optimizer": {"kind": "sgd", "learning_rate": 1e-2, "batch_size": 128},
        "dataset": {"source": "mnist"},
        "epochs": 10,
        "cadence": {"llc": 10, "wbic": 10, "hessian_trace": 10},
        "sgld": {"num_chains": 4, "draws_per_chain": 1000, "burn_in": 100},
        "hutchinson": {"num_samples": 1000},
    }
    base.update(overrides)
    return RunConfig(**base).validate()


NGD = {"kind": "ngd", "learning_rate": 1e-2, "batch_size": 128, "alpha": 1e-2, "epsilon_smooth": 1e-10}


@unittest.skipUnless(SLOW_TESTS and utils.data_dir() is not None, "slow MNIST runs are disabled")
class TestMnistDirections(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.datasets = load_datasets(mnist_config().dataset)

    def test_ngd_reaches_higher_llc(self):
        report = experiment.experiment_compare(
            mnist_config(), [0, 1, 2, 3, 4], candidate=NGD, jobs=2, datasets=self.datasets
        )
        row = report.rows[0]
        self.assertGreater(row["lambda_hat_means"]["candidate"], row["lambda_hat_means"]["baseline"])
        self.assertLess(row["lambda_hat_test"]["p_value"], 0.05)
        self.assertGreater(row["hessian_trace_means"]["candidate"], row["hessian_trace_means"]["baseline"])

    def test_larger_alpha_lowers_llc(self):
        report = experiment.experiment_smoothing_sweep(
            mnist_config(optimizer=NGD), [1e-3, 1e-2, 1e-1, 1.0, 10.0], [], [0, 1, 2], jobs=2,
            datasets=self.datasets
        )
        self.assertLess(report.correlations["alpha"]["rho"], 0.0)
        largest = max(report.points, key=lambda _: _["value"])
        low, high = report.baseline["lambda_band"]
        self.assertGreaterEqual(largest["lambda_mean"], low)
        self.assertLessEqual(largest["lambda_mean"], high)

    def test_fork_control(self):
        spec = ForkSpec(
            pretrain=mnist_config(cadence={"llc": 2, "wbic": None, "hessian_trace": None}),
            fork_epoch=10,
            branch_a={"kind": "sgd", "learning_rate": 1e-1, "batch_size": 128},
            branch_b=NGD,
            post_epochs=10
        )
        report = experiment.experiment_fork(spec, jobs=2, datasets=self.datasets)
        sgd, ngd = report.summary["branch_a"], report.summary["branch_b"]
        self.assertGreater(sgd["spike_ratio"], 2.0)
        slope = sgd["lambda_slope"]
        self.assertLessEqual(slope["slope"] - 2.0 * slope["stderr"], 0.0)
        self.assertGreater(ngd["lambda_slope"]["slope"], 0.0)

    def test_wbic_tracks_overfitting(self):
        cfg = mnist_config(
            dataset={"source": "mnist", "split": {"train_fraction": 0.5, "seed": 0, "subsample_to": 400,
                                                  "downsample_side": 8}},
            optimizer={"kind": "sgd", "learning_rate": 1e-1, "batch_size": 32},
            epochs=150,
            cadence={"llc": 10, "wbic": 10, "hessian_trace": 10},
            hutchinson={"num_samples": 200}
        )
        report = experiment.experiment_overfit(cfg, jobs=2, datasets=load_datasets(cfg.dataset))
        self.assertTrue(report.overfit)
        for key in ("wbic_vs_val_loss", "lambda_hat_vs_epoch", "hessian_trace_vs_epoch"):
            self.assertGreater(report.correlations[key]["rho"], 0.0, msg=key)

    def test_desk_scale_split(self):
        train, val = self.datasets
        self.assertEqual((train.n, val.n, train.input_dim), (2000, 500, 64))
        self.assertTrue(np.all((train.inputs >= 0.0) & (train.inputs <= 1.0)))


if __name__ == '__main__':
    unittest.main()

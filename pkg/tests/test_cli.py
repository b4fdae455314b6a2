#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import contextlib
import io
import json
import unittest

import numpy as np

from llcbench import cli
from llcbench.export import read_csv, save_checkpoint

from tests.fixtures import TempDirTestCase, small_run_config


class TestCli(TempDirTestCase):
    def setUp(self) -> None:
        super(TestCli, self).setUp()
        self.config = self.tmp / "run.json"
        small_run_config(epochs=1).dump(self.config)

    def run_cli(self, *argv: str):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            code = cli.main([str(_) for _ in argv])
        return code, stdout.getvalue()

    def test_train(self):
        out = self.tmp / "train"
        code, _ = self.run_cli("train", "--config", self.config, "--out-dir", out)
        self.assertEqual(code, 0)
        self.assertEqual(len(read_csv(out / "metrics.csv")), 2)
        self.assertTrue((out / "manifest.json").is_file())

    def test_train_to_stdout(self):
        code, text = self.run_cli("train", "--config", self.config, "--seed", "3")
        self.assertEqual(code, 0)
        records = json.loads(text)
        self.assertEqual([_["epoch"] for _ in records], [0, 1])

    def test_train_json_format(self):
        out = self.tmp / "train"
        code, _ = self.run_cli("train", "--config", self.config, "--out-dir", out, "--format", "json")
        self.assertEqual(code, 0)
        self.assertEqual(len(json.loads((out / "metrics.json").read_text())), 2)

    def test_llc_of_checkpoint(self):
        checkpoint = save_checkpoint(self.tmp / "w.npy", np.zeros(51))
        code, text = self.run_cli("llc", "--config", self.config, "--checkpoint", checkpoint, "--out-dir", self.tmp)
        self.assertEqual(code, 0)
        self.assertAlmostEqual(json.loads(text)["loss_at_w_star"], np.log(3))
        self.assertTrue((self.tmp / "llc.json").is_file())

    def test_trace(self):
        code, text = self.run_cli("trace", "--config", self.config)
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(text)["num_samples"], 20)

    def test_configuration_errors(self):
        code, _ = self.run_cli("train", "--config", self.tmp / "missing.json")
        self.assertEqual(code, 2)
        code, _ = self.run_cli("compare", "--config", self.config, "--seeds", "1")
        self.assertEqual(code, 2)
        checkpoint = save_checkpoint(self.tmp / "w.npy", np.zeros(7))
        code, _ = self.run_cli("llc", "--config", self.config, "--checkpoint", checkpoint)
        self.assertEqual(code, 2)

    def test_solver_failure(self):
        config = self.tmp / "failing.json"
        small_run_config(optimizer={"kind": "ngd", "batch_size": 16, "alpha": 1e-6, "cg_max_iters": 1,
                                    "cg_tol": 1e-14}).dump(config)
        code, _ = self.run_cli("train", "--config", config, "--out-dir", self.tmp / "failing")
        self.assertEqual(code, 3)
        self.assertTrue((self.tmp / "failing" / "checkpoint_last_good.npy").is_file())

    def test_architectures_option(self):
        self.assertEqual(cli._architectures("1x64,2x8"), [{"hidden_layers": [64]}, {"hidden_layers": [8, 8]}])
        with self.assertRaises(SystemExit), contextlib.redirect_stderr(io.StringIO()):
            cli.build_parser().parse_args(["compare", "--architectures", "wide"])


if __name__ == '__main__':
    unittest.main()

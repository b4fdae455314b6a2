#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import importlib
import json
import unittest

import numpy as np

# The package re-exports the ``export`` function, which shadows the submodule attribute.
export = importlib.import_module("llcbench.export")
from llcbench.exceptions import ConfigurationError, FormatError
from llcbench.export import MetricsRecord
from llcbench.hessian import HutchinsonConfig

from tests.fixtures import TempDirTestCase


RECORDS = [
    MetricsRecord(epoch=0, train_loss=1.0986122886681098, val_loss=1.1, lambda_hat=0.25, lambda_se=0.01,
                  wbic=12.5, hessian_trace=3.0, hessian_se=0.1),
    MetricsRecord(epoch=1, train_loss=0.5, val_loss=0.75, update_norm=0.125, kappa_mean=1e-7),
]


class TestMetricsRecord(unittest.TestCase):
    def test_defaults(self):
        record = MetricsRecord(epoch=3)
        self.assertEqual(set(record), set(MetricsRecord.fields()))
        self.assertIsNone(record.lambda_hat)
        self.assertEqual(record.update_norm, 0.0)


class TestCsv(TempDirTestCase):
    def test_header_only(self):
        self.assertEqual(export.records_to_csv([]), ",".join(export.CSV_HEADER) + "\n")

    def test_rows(self):
        lines = export.records_to_csv(RECORDS).splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[1].split(",")[:3], ["0", "1.0986122886681098", "1.1"])
        self.assertEqual(lines[2], "1,0.5,0.75,0.125,,,,,,1e-07")

    def test_round_trip(self):
        path = export.write_csv(RECORDS, self.tmp / "metrics.csv")
        records = export.read_csv(path)
        for original, parsed in zip(RECORDS, records):
            for key in export.CSV_HEADER:
                self.assertEqual(parsed[key], original[key], msg=key)

    def test_stable_bytes(self):
        a = export.write_csv(RECORDS, self.tmp / "a.csv").read_bytes()
        b = export.write_csv([MetricsRecord(**_) for _ in RECORDS], self.tmp / "b.csv").read_bytes()
        self.assertEqual(a, b)

    def test_bad_header(self):
        path = self.tmp / "other.csv"
        path.write_text("epoch,loss\n0,1.0\n")
        with self.assertRaises(FormatError):
            export.read_csv(path)

    def test_unwritable_path(self):
        (self.tmp / "file").write_text("")
        with self.assertRaises(OSError):
            export.write_csv(RECORDS, self.tmp / "file" / "metrics.csv")


class TestJsonAndManifest(TempDirTestCase):
    def test_json_round_trip(self):
        path = export.export(RECORDS, "json", self.tmp / "out")
        self.assertEqual(path.name, "metrics.json")
        self.assertEqual(export.read_json(path), RECORDS)

    def test_export_format_checked(self):
        with self.assertRaises(ConfigurationError):
            export.export(RECORDS, "parquet", self.tmp)
        self.assertEqual(export.export(RECORDS, "csv", self.tmp, stem="run").name, "run.csv")

    def test_manifest(self):
        path = export.write_manifest(self.tmp / "manifest.json", HutchinsonConfig(seed=4), 4, 1.5, note="x")
        manifest = json.loads(path.read_text())
        self.assertEqual(manifest["config"]["seed"], 4)
        self.assertEqual(manifest["seed"], 4)
        self.assertEqual(manifest["wall_time_seconds"], 1.5)
        self.assertEqual(manifest["note"], "x")
        self.assertTrue(manifest["version"])


class TestCheckpoints(TempDirTestCase):
    def test_round_trip(self):
        params = np.random.default_rng(0).standard_normal(17)
        path = export.save_checkpoint(self.tmp / "ckpt" / "w.npy", params)
        np.testing.assert_array_equal(export.load_checkpoint(path), params)

    def test_not_a_checkpoint(self):
        path = self.tmp / "w.npy"
        path.write_bytes(b"garbage")
        with self.assertRaises((FormatError, OSError)):
            export.load_checkpoint(path)


if __name__ == '__main__':
    unittest.main()

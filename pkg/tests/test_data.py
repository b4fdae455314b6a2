#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import gzip
import os
import unittest
from unittest import mock

import numpy as np

from llcbench import data, optimizers, utils
from llcbench.data import Dataset, DatasetSpec, SplitSpec
from llcbench.exceptions import ConfigurationError, ConsistencyError, FormatError, TruncatedFileError
from llcbench.nn import MlpModel

from tests.fixtures import TempDirTestCase, idx_bytes, tiny_architecture


# two 3x3 images and their labels
PIXELS = bytes(range(0, 18 * 10, 10))
LABELS = bytes([7, 2])


class TestIdx(TempDirTestCase):
    def write_pair(self, images: bytes, labels: bytes, suffix: str = ""):
        images_path = self.tmp / f"images{suffix}"
        labels_path = self.tmp / f"labels{suffix}"
        opener = gzip.open if suffix.endswith(".gz") else open
        with opener(images_path, "wb") as _:
            _.write(images)
        with opener(labels_path, "wb") as _:
            _.write(labels)
        return images_path, labels_path

    def test_load(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS), idx_bytes(0x801, (2,), LABELS))
        dataset = data.load_idx(*paths)
        self.assertEqual((dataset.n, dataset.input_dim, dataset.image_side), (2, 9, 3))
        np.testing.assert_array_equal(dataset.labels, [7, 2])
        np.testing.assert_allclose(dataset.inputs[1], np.arange(90, 180, 10) / 255.0)
        self.assertEqual(dataset.num_classes, 10)

    def test_load_gzip(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS), idx_bytes(0x801, (2,), LABELS), ".gz")
        dataset = data.load_idx(*paths)
        self.assertEqual(dataset.n, 2)
        self.assertAlmostEqual(dataset.inputs[0, 1], 10 / 255.0)

    def test_empty(self):
        paths = self.write_pair(idx_bytes(0x803, (0, 3, 3), b""), idx_bytes(0x801, (0,), b""))
        dataset = data.load_idx(*paths)
        self.assertEqual(dataset.n, 0)
        self.assertEqual(dataset.input_dim, 9)

    def test_wrong_magic(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS), idx_bytes(0x803, (2,), LABELS))
        with self.assertRaises(FormatError) as ctx:
            data.load_idx(*paths)
        self.assertIn("0x00000801", str(ctx.exception))

    def test_count_mismatch(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS), idx_bytes(0x801, (3,), LABELS + b"\x00"))
        with self.assertRaises(ConsistencyError):
            data.load_idx(*paths)

    def test_truncated(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS[:-1]), idx_bytes(0x801, (2,), LABELS))
        with self.assertRaises(TruncatedFileError):
            data.load_idx(*paths)
        paths = self.write_pair(b"\x00\x00", idx_bytes(0x801, (2,), LABELS))
        with self.assertRaises(OSError):
            data.load_idx(*paths)

    def test_write_round_trip(self):
        paths = self.write_pair(idx_bytes(0x803, (2, 3, 3), PIXELS), idx_bytes(0x801, (2,), LABELS))
        dataset = data.load_idx(*paths)
        data.write_idx(dataset, self.tmp / "copy-images.gz", self.tmp / "copy-labels.gz")
        copy = data.load_idx(self.tmp / "copy-images.gz", self.tmp / "copy-labels.gz")
        np.testing.assert_array_equal(copy.inputs, dataset.inputs)
        np.testing.assert_array_equal(copy.labels, dataset.labels)

    def test_write_checks(self):
        dataset = Dataset(np.full((2, 4), 2.0), [0, 1])
        with self.assertRaises(ConfigurationError):
            data.write_idx(dataset, self.tmp / "a", self.tmp / "b")
        with self.assertRaises(ConfigurationError):
            data.write_idx(Dataset(np.zeros((2, 4)), [0, 1]), self.tmp / "a", self.tmp / "b", side=3)


class TestDataset(unittest.TestCase):
    def test_checks(self):
        with self.assertRaises(ConsistencyError):
            Dataset(np.zeros((3, 2)), [0, 1])
        with self.assertRaises(ConfigurationError):
            Dataset(np.zeros(3), [0, 1, 2])
        with self.assertRaises(ConfigurationError):
            Dataset(np.zeros((2, 2)), [0, 2], num_classes=2)
        with self.assertRaises(ConfigurationError):
            Dataset(np.zeros((2, 5)), [0, 1], image_side=2)

    def test_immutable(self):
        inputs = np.zeros((2, 2))
        dataset = Dataset(inputs, [0, 1])
        inputs[0, 0] = 5.0
        self.assertEqual(dataset.inputs[0, 0], 0.0)
        with self.assertRaises(ValueError):
            dataset.inputs[0, 0] = 1.0

    def test_take(self):
        dataset = Dataset(np.arange(8.0).reshape(4, 2), [0, 1, 2, 3])
        part = dataset.take([3, 1], name="part")
        np.testing.assert_array_equal(part.labels, [3, 1])
        self.assertEqual((part.name, part.num_classes), ("part", 4))


class TestTransforms(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        self.images = Dataset(rng.uniform(size=(20, 16)), np.arange(20) % 3, image_side=4, name="images")

    def test_downsample(self):
        small = data.downsample(self.images, 2)
        self.assertEqual((small.input_dim, small.image_side), (4, 2))
        block = self.images.inputs[5].reshape(4, 4)[:2, 2:]
        self.assertAlmostEqual(small.inputs[5, 1], block.mean())
        self.assertEqual(data.downsample(self.images, 4).inputs.tolist(), self.images.inputs.tolist())
        with self.assertRaises(ConfigurationError):
            data.downsample(self.images, 3)
        with self.assertRaises(ConfigurationError):
            data.downsample(Dataset(np.zeros((2, 3)), [0, 1]), 1)

    def test_subsample(self):
        sample = data.subsample(self.images, 5, seed=1)
        self.assertEqual(sample.n, 5)
        rows = {tuple(_) for _ in self.images.inputs}
        self.assertTrue(all(tuple(_) in rows for _ in sample.inputs))
        self.assertEqual(len({tuple(_) for _ in sample.inputs}), 5)
        np.testing.assert_array_equal(sample.inputs, data.subsample(self.images, 5, seed=1).inputs)
        with self.assertRaises(ConfigurationError):
            data.subsample(self.images, 21, seed=1)

    def test_split(self):
        train, val = data.split(self.images, SplitSpec(train_fraction=0.75, seed=3))
        self.assertEqual((train.n, val.n), (15, 5))
        self.assertEqual((train.name, val.name), ("images:train", "images:val"))
        rows = {tuple(_) for _ in train.inputs} | {tuple(_) for _ in val.inputs}
        self.assertEqual(len(rows), 20)
        again, _ = data.split(self.images, {"train_fraction": 0.75, "seed": 3})
        np.testing.assert_array_equal(again.inputs, train.inputs)

    def test_split_with_reduction(self):
        train, val = data.split(self.images, SplitSpec(train_fraction=0.5, subsample_to=10, downsample_side=2))
        self.assertEqual((train.n, val.n, train.input_dim), (5, 5, 4))

    def test_split_fraction_checked(self):
        for fraction in (0.0, 1.0, 1.5, True):
            with self.assertRaises(ConfigurationError):
                data.split(self.images, {"train_fraction": fraction})

    def test_batches(self):
        dataset = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2)
        sizes = [len(_) for _ in data.batches(dataset, 4, seed=0, epoch=0)]
        self.assertEqual(sizes, [4, 4, 2])
        first = np.concatenate([_.labels for _ in data.batches(dataset, 4, seed=0, epoch=0)])
        again = np.concatenate([_.labels for _ in data.batches(dataset, 4, seed=0, epoch=0)])
        np.testing.assert_array_equal(first, again)
        seen = np.concatenate([_.inputs[:, 0] for _ in data.batches(dataset, 4, seed=0, epoch=1)])
        self.assertEqual(sorted(seen.tolist()), list(np.arange(0.0, 20.0, 2.0)))


class TestSynthetic(unittest.TestCase):
    def test_shape_and_range(self):
        dataset = data.synthetic_classification(300, 5, 4, seed=0)
        self.assertEqual((dataset.n, dataset.input_dim, dataset.num_classes), (300, 5, 4))
        self.assertGreaterEqual(dataset.inputs.min(), 0.0)
        self.assertLessEqual(dataset.inputs.max(), 1.0)
        self.assertEqual(set(dataset.labels.tolist()), {0, 1, 2, 3})

    def test_too_many_classes(self):
        with self.assertRaises(ConfigurationError):
            data.synthetic_classification(10, 2, 5, seed=0)

    def test_separable_blobs_are_learned(self):
        train = data.synthetic_classification(200, 4, 2, seed=1)
        model = MlpModel.initialize(tiny_architecture(hidden=(8,), classes=2), seed=0)
        cfg = optimizers.SgdConfig(learning_rate=1.0, batch_size=16)
        for epoch in range(50):
            for batch in data.batches(train, 16, seed=0, epoch=epoch):
                model = model.with_params(optimizers.sgd_step(model, batch, cfg).new_params)
        predictions = np.argmax(model.forward(train.as_batch()), axis=1)
        self.assertGreaterEqual(np.mean(predictions == train.labels), 0.98)


class TestLoadDatasets(TempDirTestCase):
    def test_synthetic(self):
        spec = DatasetSpec(source="synthetic", synthetic_n=50, split={"train_fraction": 0.8})
        train, val = data.load_datasets(spec)
        self.assertEqual((train.n, val.n), (40, 10))

    def test_synthetic_rejects_downsample(self):
        with self.assertRaises(ConfigurationError):
            data.load_datasets({"source": "synthetic", "split": {"downsample_side": 4}})

    def test_idx_needs_paths(self):
        with self.assertRaises(ConfigurationError):
            data.load_datasets({"source": "idx"})

    def test_mnist_without_data_dir(self):
        with mock.patch.dict(os.environ, clear=True), mock.patch.dict(utils.env_file, clear=True):
            with self.assertRaises(ConfigurationError):
                data.load_datasets({"source": "mnist"})

    def test_mnist_from_directory(self):
        directory = self.tmp / "mnist"
        directory.mkdir()
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=20 * 16, dtype=np.uint8).tobytes()
        labels = (np.arange(20) % 10).astype(np.uint8).tobytes()
        with gzip.open(directory / "train-images-idx3-ubyte.gz", "wb") as _:
            _.write(idx_bytes(0x803, (20, 4, 4), pixels))
        with open(directory / "train-labels-idx1-ubyte", "wb") as _:
            _.write(idx_bytes(0x801, (20,), labels))
        spec = {"source": "mnist", "data_dir": str(self.tmp),
                "split": {"train_fraction": 0.5, "subsample_to": 12, "downsample_side": 2}}
        train, val = data.load_datasets(spec)
        self.assertEqual((train.n, val.n, train.input_dim, train.num_classes), (6, 6, 4, 10))

    def test_missing_benchmark_file(self):
        (self.tmp / "fashion_mnist").mkdir()
        with self.assertRaises(ConfigurationError):
            data.load_datasets({"source": "fashion_mnist", "data_dir": str(self.tmp)})


if __name__ == '__main__':
    unittest.main()

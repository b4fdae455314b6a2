#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import gzip
import logging
from pathlib import Path
import struct
from typing import BinaryIO, Iterator, Sequence, Tuple, Union

import numpy as np

from . import utils
from .base import ConfigBase, Field
from .exceptions import ConfigurationError, ConsistencyError, FormatError, TruncatedFileError
from .nn import Batch


__all__ = [
    "Dataset",
    "SplitSpec",
    "DatasetSpec",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "load_idx",
    "write_idx",
    "downsample",
    "subsample",
    "split",
    "batches",
    "synthetic_classification",
    "load_datasets"
]

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC: int = 0x00000803
"""Magic number of an IDX file of unsigned-byte 3-tensors (images)."""
IDX_LABELS_MAGIC: int = 0x00000801
"""Magic number of an IDX file of unsigned-byte vectors (labels)."""

IMAGE_SOURCES = {
    "mnist": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "fashion_mnist": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
}
SOURCES = {"synthetic", "idx", *IMAGE_SOURCES}


class Dataset(object):
    """
    An immutable classification dataset: inputs (`n x input_dim`, reals) and labels (`n`, class indices).
    """

    def __init__(
            self,
            inputs: np.ndarray,
            labels: np.ndarray,
            *,
            name: str = "dataset",
            num_classes: int = None,
            image_side: int = None
    ) -> None:
        """

        Parameters
        ----------
        inputs : np.ndarray
            The `n x input_dim` input matrix.
        labels : np.ndarray
            The `n` class indices.
        name : str
            A label used in logs and manifests. Default `"dataset"`.
        num_classes : int
            The number of classes. Default `None`, i.e. `max(labels) + 1` (`0` when empty).
        image_side : int
            The side of the square images the rows flatten, `None` for non-image data.
        """
        inputs = np.array(inputs, dtype=np.float64, copy=True)
        if inputs.ndim != 2:
            raise ConfigurationError(f"Dataset {name!r} inputs must be a matrix, got shape {inputs.shape}.")
        labels = np.array(labels, dtype=np.int64, copy=True).ravel()
        if inputs.shape[0] != labels.shape[0]:
            raise ConsistencyError(f"Dataset {name!r} has {inputs.shape[0]} inputs but {labels.shape[0]} labels.")
        utils.check_finite(inputs, f"input of dataset {name!r}")
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ConfigurationError(f"Dataset {name!r} labels must lie in [0, {num_classes}).")
        if image_side is not None and image_side * image_side != inputs.shape[1]:
            raise ConfigurationError(
                f"Dataset {name!r} rows of width {inputs.shape[1]} are not {image_side}x{image_side} images."
            )
        inputs.setflags(write=False)
        labels.setflags(write=False)
        self.inputs = inputs
        self.labels = labels
        self.name = name
        self.num_classes = int(num_classes)
        self.image_side = image_side

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: {self.name} (n={self.n}, input_dim={self.input_dim})"

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    def as_batch(self) -> Batch:
        """
        Returns
        -------
        Batch : All examples in order.
        """
        return Batch(self.inputs, self.labels)

    def take(self, indices: Sequence[int], *, name: str = None) -> Dataset:
        """
        Parameters
        ----------
        indices : Sequence[int]
            Row indices.
        name : str
            The new dataset's name. Default: unchanged.

        Returns
        -------
        Dataset : The selected rows, in the given order.
        """
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.inputs[indices],
            self.labels[indices],
            name=name or self.name,
            num_classes=self.num_classes,
            image_side=self.image_side
        )


class SplitSpec(ConfigBase):
    """How a loaded dataset is reduced and divided into train and validation parts."""

    train_fraction = Field(0.8, doc="Share of the (sub)sample assigned to training, in (0, 1).")
    seed = Field(0)
    subsample_to = Field(None, doc="Draw this many examples first. `None` keeps the whole dataset.")
    downsample_side = Field(None, doc="Mean-pool images to this side first. `None` keeps the resolution.")

    def validate(self) -> SplitSpec:
        fraction = self.train_fraction
        if isinstance(fraction, bool) or not isinstance(fraction, (int, float)) or not 0.0 < fraction < 1.0:
            raise ConfigurationError(f"Field \"train_fraction\" must lie in (0, 1), got {fraction!r}.")
        utils.check_count(self.seed, "seed", minimum=0)
        if self.subsample_to is not None:
            utils.check_count(self.subsample_to, "subsample_to")
        if self.downsample_side is not None:
            utils.check_count(self.downsample_side, "downsample_side")
        return self


def _default_split() -> SplitSpec:
    return SplitSpec(
        train_fraction=utils.DEFAULT_TRAIN_SUBSAMPLE / (utils.DEFAULT_TRAIN_SUBSAMPLE + utils.DEFAULT_VAL_SUBSAMPLE),
        subsample_to=utils.DEFAULT_TRAIN_SUBSAMPLE + utils.DEFAULT_VAL_SUBSAMPLE,
        downsample_side=utils.DEFAULT_DOWNSAMPLE_SIDE
    )


class DatasetSpec(ConfigBase):
    """
    Where the data comes from. `mnist` and `fashion_mnist` read the standard training files (optionally gzipped) from
    `data_dir/<source>/`; `idx` reads an explicit file pair; `synthetic` draws Gaussian blobs.
    """

    source = Field("mnist")
    data_dir = Field(None, doc=f"Directory of the benchmark files. `None` reads `{utils.DATA_DIR_ENV_VAR}`.")
    images_path = Field(None, doc="IDX image file of the `idx` source.")
    labels_path = Field(None, doc="IDX label file of the `idx` source.")
    split = Field(factory=_default_split, nested=SplitSpec)
    synthetic_n = Field(1000)
    synthetic_input_dim = Field(16)
    synthetic_classes = Field(4)
    synthetic_noise = Field(0.1, doc="Standard deviation of the synthetic blobs.")

    def validate(self) -> DatasetSpec:
        utils.check_choice(self.source, "source", SOURCES)
        self.split.validate()
        if self.source == "idx" and (not self.images_path or not self.labels_path):
            raise ConfigurationError("The \"idx\" source needs both \"images_path\" and \"labels_path\".")
        if self.source == "synthetic":
            if self.split.downsample_side is not None:
                raise ConfigurationError("Field \"split.downsample_side\" applies to image sources only.")
            utils.check_count(self.synthetic_n, "synthetic_n", minimum=0)
            utils.check_count(self.synthetic_input_dim, "synthetic_input_dim")
            utils.check_count(self.synthetic_classes, "synthetic_classes")
            utils.check_positive(self.synthetic_noise, "synthetic_noise")
        return self


def _open(path: Union[str, Path], mode: str) -> BinaryIO:
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_idx(path: Union[str, Path], magic: int) -> np.ndarray:
    with _open(path, "rb") as _:
        raw = _.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"IDX file {path} ends inside its magic number.")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"IDX file {path} has magic 0x{found:08x}, expected 0x{magic:08x}.")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"IDX file {path} ends inside its header.")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise TruncatedFileError(f"IDX file {path} holds {len(raw) - header} data bytes, its header announces {size}.")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(
        images_path: Union[str, Path],
        labels_path: Union[str, Path],
        *,
        name: str = None,
        num_classes: int = 10
) -> Dataset:
    """
    Read an IDX image/label file pair (plain or gzip-compressed). Pixel bytes are scaled by `1/255`.

    Parameters
    ----------
    images_path : Union[str, Path]
        The image file (magic `0x00000803`).
    labels_path : Union[str, Path]
        The label file (magic `0x00000801`).
    name : str
        The dataset name. Default: the image file name.
    num_classes : int
        Default `10`.

    Returns
    -------
    Dataset

    Raises
    ------
    llcbench.exceptions.FormatError
        On a wrong magic number.
    llcbench.exceptions.ConsistencyError
        When the image and label counts differ.
    llcbench.exceptions.TruncatedFileError
        When a file is shorter than its header announces.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"IDX files {images_path} and {labels_path} hold {images.shape[0]} images but {labels.shape[0]} labels."
        )
    n, rows, cols = images.shape
    dataset = Dataset(
        images.reshape(n, rows * cols) / 255.0,
        labels,
        name=name or Path(images_path).name,
        num_classes=num_classes,
        image_side=rows if rows == cols else None
    )
    logger.info("Loaded %d %dx%d images from %s.", n, rows, cols, images_path)
    return dataset


def write_idx(
        dataset: Dataset,
        images_path: Union[str, Path],
        labels_path: Union[str, Path],
        side: int = None
) -> None:
    """
    Write a dataset as an IDX file pair; `*.gz` paths are gzip-compressed. Inputs are stored as `round(255 x)`, so
    datasets read by `load_idx` round-trip exactly.

    Parameters
    ----------
    dataset : Dataset
        Inputs in `[0, 1]`, labels in `[0, 255]`.
    images_path : Union[str, Path]
        The image file.
    labels_path : Union[str, Path]
        The label file.
    side : int
        The image side. Default: `dataset.image_side`, or one row of `input_dim` pixels for non-image data.

    Returns
    -------
    None
    """
    side = side or dataset.image_side
    rows, cols = (side, side) if side else (1, dataset.input_dim)
    if rows * cols != dataset.input_dim:
        raise ConfigurationError(f"Side {side} does not match input_dim {dataset.input_dim}.")
    if dataset.n and (dataset.inputs.min() < 0.0 or dataset.inputs.max() > 1.0):
        raise ConfigurationError("Only inputs in [0, 1] can be written as IDX bytes.")
    if dataset.n and dataset.labels.max() > 255:
        raise ConfigurationError("Only labels below 256 can be written as IDX bytes.")
    pixels = np.rint(dataset.inputs * 255.0).astype(np.uint8)
    with _open(images_path, "wb") as _:
        _.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.n, rows, cols))
        _.write(pixels.tobytes())
    with _open(labels_path, "wb") as _:
        _.write(struct.pack(">II", IDX_LABELS_MAGIC, dataset.n))
        _.write(dataset.labels.astype(np.uint8).tobytes())


def downsample(dataset: Dataset, side: int) -> Dataset:
    """
    Mean-pool square images to `side x side`.

    Parameters
    ----------
    dataset : Dataset
        Image data.
    side : int
        The target side; must divide the original side.

    Returns
    -------
    Dataset
    """
    utils.check_count(side, "side")
    original = dataset.image_side
    if original is None:
        raise ConfigurationError(f"Dataset {dataset.name!r} does not hold square images.")
    if original % side:
        raise ConfigurationError(f"Downsample side {side} does not divide the image side {original}.")
    factor = original // side
    pooled = dataset.inputs.reshape(dataset.n, side, factor, side, factor).mean(axis=(2, 4))
    return Dataset(
        pooled.reshape(dataset.n, side * side),
        dataset.labels,
        name=dataset.name,
        num_classes=dataset.num_classes,
        image_side=side
    )


def subsample(dataset: Dataset, k: int, seed: int) -> Dataset:
    """
    Draw `k` examples without replacement.

    Returns
    -------
    Dataset : The sample, in draw order.
    """
    utils.check_count(k, "k", minimum=0)
    if k > dataset.n:
        raise ConfigurationError(f"Cannot subsample {k} examples from {dataset.n}.")
    rng = utils.make_rng(seed)
    return dataset.take(rng.choice(dataset.n, size=k, replace=False))


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """
    Downsample and subsample as requested, then divide a seeded permutation into disjoint train and validation parts
    covering the (sub)sample.

    Parameters
    ----------
    dataset : Dataset
        The loaded data.
    spec : SplitSpec
        The split settings.

    Returns
    -------
    Tuple[Dataset, Dataset] : The train and validation parts.
    """
    spec = SplitSpec.coerce(spec).validate()
    if spec.downsample_side is not None:
        dataset = downsample(dataset, spec.downsample_side)
    if spec.subsample_to is not None:
        dataset = subsample(dataset, spec.subsample_to, utils.derive_seed(spec.seed, 0))
    order = utils.make_rng(spec.seed, 1).permutation(dataset.n)
    cut = int(round(spec.train_fraction * dataset.n))
    train = dataset.take(order[:cut], name=f"{dataset.name}:train")
    val = dataset.take(order[cut:], name=f"{dataset.name}:val")
    return train, val


def batches(dataset: Dataset, m: int, seed: int, epoch: int) -> Iterator[Batch]:
    """
    The mini-batches of one epoch: a permutation drawn from `(seed, epoch)` cut into batches of `m`, the last one
    possibly shorter.

    Parameters
    ----------
    dataset : Dataset
        The training data.
    m : int
        The batch size.
    seed : int
        The run seed.
    epoch : int
        The epoch index.

    Returns
    -------
    Iterator[Batch]
    """
    utils.check_count(m, "batch_size")
    order = utils.make_rng(seed, epoch).permutation(dataset.n)
    for start in range(0, dataset.n, m):
        index = order[start:start + m]
        yield Batch(dataset.inputs[index], dataset.labels[index])


def synthetic_classification(
        n: int,
        input_dim: int,
        classes: int,
        seed: int,
        *,
        noise: float = 0.1
) -> Dataset:
    """
    Gaussian blobs, one per class, centred on distinct vertices of the cube `[0.2, 0.8]^input_dim` (class `k` sits at
    the vertex spelled by the binary digits of `k`). Inputs are clipped to `[0, 1]`.

    Parameters
    ----------
    n : int
        Number of examples.
    input_dim : int
        The input width.
    classes : int
        Number of classes; at most `2 ** input_dim`.
    seed : int
        The RNG seed.
    noise : float
        Standard deviation of every blob. Default `0.1`.

    Returns
    -------
    Dataset
    """
    utils.check_count(n, "n", minimum=0)
    utils.check_count(input_dim, "input_dim")
    utils.check_count(classes, "classes")
    if input_dim < 63 and classes > 2 ** input_dim:
        raise ConfigurationError(f"Cannot place {classes} class means on the vertices of a {input_dim}-cube.")
    bits = (np.arange(classes)[:, None] >> np.arange(input_dim)[None, :]) & 1
    means = 0.2 + 0.6 * bits
    rng = utils.make_rng(seed)
    labels = rng.integers(0, classes, size=n)
    inputs = np.clip(means[labels] + noise * rng.standard_normal((n, input_dim)), 0.0, 1.0)
    return Dataset(inputs, labels, name=f"synthetic-{classes}x{input_dim}", num_classes=classes)


def _benchmark_file(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    raise ConfigurationError(f"Neither {stem} nor {stem}.gz found in {directory}.")


def load_datasets(spec: DatasetSpec) -> Tuple[Dataset, Dataset]:
    """
    Load the source named by a `DatasetSpec` and split it.

    Parameters
    ----------
    spec : DatasetSpec
        The data settings.

    Returns
    -------
    Tuple[Dataset, Dataset] : The train and validation sets.
    """
    spec = DatasetSpec.coerce(spec).validate()
    if spec.source == "synthetic":
        dataset = synthetic_classification(
            spec.synthetic_n,
            spec.synthetic_input_dim,
            spec.synthetic_classes,
            spec.split.seed,
            noise=spec.synthetic_noise
        )
    elif spec.source == "idx":
        dataset = load_idx(spec.images_path, spec.labels_path)
    else:
        root = utils.data_dir(spec.data_dir)
        if root is None:
            raise ConfigurationError(
                f"No data directory: set \"data_dir\" or the {utils.DATA_DIR_ENV_VAR} environment variable."
            )
        directory = Path(root) / spec.source
        images, labels = IMAGE_SOURCES[spec.source]
        dataset = load_idx(
            _benchmark_file(directory, images), _benchmark_file(directory, labels), name=spec.source
        )
    train, val = split(dataset, spec.split)
    logger.info("Dataset %s: %d train / %d validation examples, input_dim %d.",
                dataset.name, train.n, val.n, train.input_dim)
    return train, val

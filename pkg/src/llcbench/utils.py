#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os
from pathlib import Path
import subprocess
from typing import Dict, Iterable, Optional, Set, Union

import numpy as np

from . import exceptions


__all__ = [
    "check_finite",
    "check_positive",
    "check_count",
    "check_choice",
    "derive_seed",
    "make_rng",
    "load_env_var",
    "data_dir",
    "describe_version",
    "ACTIVATIONS",
    "CG_SOLVERS",
    "DATA_DIR_ENV_VAR",
    "DEFAULT_ACTIVATION",
    "DEFAULT_ALPHA",
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_CG_TOL",
    "DEFAULT_DENSE_MAX_DIM",
    "DEFAULT_DOWNSAMPLE_SIDE",
    "DEFAULT_EPSILON_SMOOTH",
    "DEFAULT_HUTCHINSON_SAMPLES",
    "DEFAULT_LEARNING_RATE",
    "DEFAULT_METRIC_BATCH_SIZE",
    "DEFAULT_MIN_BIN_HITS",
    "DEFAULT_SGLD_BATCH_SIZE",
    "DEFAULT_SGLD_BURN_IN",
    "DEFAULT_SGLD_CHAINS",
    "DEFAULT_SGLD_DRAWS",
    "DEFAULT_SGLD_GAMMA",
    "DEFAULT_SGLD_STEP_SIZE",
    "DEFAULT_STABILIZATION_THRESHOLD",
    "DEFAULT_STABILIZATION_WINDOW",
    "DEFAULT_TRAIN_SUBSAMPLE",
    "DEFAULT_VAL_SUBSAMPLE",
    "PROBE_DISTRIBUTIONS",
    "SOLVERS",
    "VERSION",
]


VERSION: str = "0.4.0"
"""The package version, used when `git describe` is unavailable."""

DATA_DIR_ENV_VAR: str = "LLCBENCH_DATA_DIR"
"""Environment variable pointing at the directory holding the IDX files."""

ACTIVATIONS: Set[str] = {"relu", "tanh"}
"""The valid hidden-layer activations."""
DEFAULT_ACTIVATION: str = "relu"
"""The default hidden-layer activation - values to `\"relu\"`."""

SOLVERS: Set[str] = {"conjugate_gradient", "dense_inverse", "woodbury"}
"""The valid NGD linear solvers."""
CG_SOLVERS: Set[str] = {"conjugate_gradient"}
"""Solvers whose accepted steps carry an iteration count and a residual bound."""
PROBE_DISTRIBUTIONS: Set[str] = {"gaussian", "rademacher"}
"""The valid Hutchinson probe distributions."""

DEFAULT_LEARNING_RATE: float = 1e-2
"""The default optimizer learning rate - values to `1e-2`."""
DEFAULT_BATCH_SIZE: int = 128
"""The default training mini-batch size - values to `128`."""
DEFAULT_ALPHA: float = 1e-2
"""The default NGD smoothing scale alpha - values to `1e-2`."""
DEFAULT_EPSILON_SMOOTH: float = 1e-10
"""The default floor on the Fisher trace used by the NGD smoothing - values to `1e-10`."""
DEFAULT_CG_TOL: float = 1e-10
"""The default relative residual accepted by the conjugate gradient solver - values to `1e-10`."""
DEFAULT_DENSE_MAX_DIM: int = 2000
"""The largest parameter count for which the dense Cholesky path may be used."""

DEFAULT_HUTCHINSON_SAMPLES: int = 10_000
"""The default number of Hutchinson probes - values to `10_000`."""
DEFAULT_METRIC_BATCH_SIZE: int = 512
"""The default size of the fixed batch on which the Hessian trace is measured."""

DEFAULT_SGLD_STEP_SIZE: float = 1e-5
"""The default SGLD step size - values to `1e-5`."""
DEFAULT_SGLD_GAMMA: float = 100.0
"""The default SGLD localization strength - values to `100`."""
DEFAULT_SGLD_CHAINS: int = 4
"""The default number of SGLD chains."""
DEFAULT_SGLD_DRAWS: int = 2000
"""The default number of SGLD draws per chain (burn-in included)."""
DEFAULT_SGLD_BURN_IN: int = 200
"""The default number of SGLD draws discarded at the start of each chain."""
DEFAULT_SGLD_BATCH_SIZE: int = 128
"""The default SGLD mini-batch size."""

DEFAULT_MIN_BIN_HITS: int = 100
"""The minimum number of hits in a volume-oracle bin."""

DEFAULT_DOWNSAMPLE_SIDE: int = 8
"""The default side of downsampled benchmark images."""
DEFAULT_TRAIN_SUBSAMPLE: int = 2000
"""The default number of training examples at desk scale."""
DEFAULT_VAL_SUBSAMPLE: int = 500
"""The default number of validation examples at desk scale."""

DEFAULT_STABILIZATION_THRESHOLD: float = 0.05
"""The relative LLC spread under which the fork rule fires - values to `0.05`."""
DEFAULT_STABILIZATION_WINDOW: int = 5
"""The number of LLC measurements inspected by the fork rule."""


proj_path: str = Path(os.path.dirname(os.path.abspath(__file__))).parent.parent.as_posix()
env_file_path: str = f"{proj_path}/.env"
env_file: Dict
if os.path.isfile(env_file_path):
    with open(env_file_path, "r", encoding="utf-8") as _:
        env_file = dict(line.strip().split("=", 1) for line in _.readlines() if "=" in line)
else:
    env_file = {}


def load_env_var(name: str) -> Optional[str]:
    """
    Load an environment variable, falling back to the project's `.env` file.

    Parameters
    ----------
    name : str
        The variable's name.

    Returns
    -------
    Optional[str]
    """
    return os.environ.get(name, env_file.get(name))


def data_dir(path: Union[str, Path, None] = None) -> Optional[Path]:
    """
    Resolve the data directory.

    Parameters
    ----------
    path : Union[str, Path, None]
        An explicit directory. Default `None`, i.e. read `LLCBENCH_DATA_DIR`.

    Returns
    -------
    Optional[Path] : The directory or `None` if neither an explicit path nor the variable is set.
    """
    path = path or load_env_var(DATA_DIR_ENV_VAR)
    return Path(path) if path else None


def check_finite(
        values: Union[np.ndarray, float],
        what: str,
        index_offset: int = 0
) -> None:
    """
    Check that an array (or scalar) holds finite values only.

    Parameters
    ----------
    values : Union[np.ndarray, float]
        The values to inspect.
    what : str
        A short description used in the error message, e.g. `"gradient"`.
    index_offset : int
        Added to the reported index. Default `0`.

    Returns
    -------
    None

    Raises
    ------
    llcbench.exceptions.NumericError
        With `index` set to the first non-finite (flattened) coordinate.
    """
    arr = np.asarray(values)
    if arr.ndim == 0:
        if not np.isfinite(arr):
            raise exceptions.NumericError(f"Non-finite {what}: {arr}.", index=index_offset)
        return None
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        i = int(bad[0])
        raise exceptions.NumericError(
            f"Non-finite {what} at index {i + index_offset}: {arr.ravel()[i]}.",
            index=i + index_offset
        )


def check_positive(value: float, name: str, strict: bool = True) -> None:
    """
    Check a real configuration value.

    Parameters
    ----------
    value : float
        The value.
    name : str
        The field name reported in the error.
    strict : bool
        Require `value > 0` when `True`, `value >= 0` otherwise. Default `True`.

    Returns
    -------
    None
    """
    try:
        x = float(value)
        ok = bool(np.isfinite(x)) and (x > 0 if strict else x >= 0)
    except (TypeError, ValueError):
        ok = False
    if isinstance(value, bool) or not ok:
        bound = "> 0" if strict else ">= 0"
        raise exceptions.ConfigurationError(f"Field \"{name}\" must be a finite real {bound}, got {value!r}.")


def check_count(value: int, name: str, minimum: int = 1) -> None:
    """
    Check an integer configuration value.

    Parameters
    ----------
    value : int
        The value.
    name : str
        The field name reported in the error.
    minimum : int
        The smallest accepted value. Default `1`.

    Returns
    -------
    None
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise exceptions.ConfigurationError(f"Field \"{name}\" must be an integer >= {minimum}, got {value!r}.")


def check_choice(value: str, name: str, choices: Iterable[str]) -> None:
    """
    Check an enumerated configuration value.

    Parameters
    ----------
    value : str
        The value.
    name : str
        The field name reported in the error.
    choices : Iterable[str]
        The accepted values.

    Returns
    -------
    None
    """
    choices = sorted(choices)
    if value not in choices:
        raise exceptions.ConfigurationError(f"Field \"{name}\" must be one of {choices}, got {value!r}.")


def derive_seed(seed: int, *counters: int) -> int:
    """
    Derive a child seed from a root seed and a tuple of counters (chain index, epoch, ...).

    Parameters
    ----------
    seed : int
        The root seed.
    counters : int
        Counters identifying the child stream.

    Returns
    -------
    int : A 63-bit seed that only depends on `(seed, *counters)`.
    """
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(_) for _ in counters]])
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *counters: int) -> np.random.Generator:
    """
    Create a generator for the stream `(seed, *counters)`.

    Parameters
    ----------
    seed : int
        The root seed.
    counters : int
        Counters identifying the stream.

    Returns
    -------
    np.random.Generator
    """
    if counters:
        return np.random.default_rng(derive_seed(seed, *counters))
    return np.random.default_rng(int(seed))


def describe_version() -> str:
    """
    A `git describe`-style version string.

    Returns
    -------
    str : The output of `git describe --tags --always --dirty` when run inside a git checkout, `VERSION` otherwise.
    """
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=proj_path,
            capture_output=True,
            text=True,
            timeout=10,
            check=True,
        )
        return out.stdout.strip() or VERSION
    except (OSError, subprocess.SubprocessError):
        return VERSION

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
import logging
from typing import Callable

import numpy as np

from . import utils
from .base import ConfigBase, DictBase, Field
from .exceptions import NumericError
from .nn import Batch, MlpModel


__all__ = [
    "HutchinsonConfig",
    "TraceEstimate",
    "draw_probe",
    "estimate_trace",
    "hutchinson_trace",
    "exact_hessian_trace"
]

logger = logging.getLogger(__name__)


class HutchinsonConfig(ConfigBase):
    """Settings of the randomized trace estimator."""

    num_samples = Field(utils.DEFAULT_HUTCHINSON_SAMPLES)
    seed = Field(0)
    probe_distribution = Field("gaussian", doc="`gaussian` (standard normal) or `rademacher` (+-1).")

    def validate(self) -> HutchinsonConfig:
        utils.check_count(self.num_samples, "num_samples")
        utils.check_count(self.seed, "seed", minimum=0)
        utils.check_choice(self.probe_distribution, "probe_distribution", utils.PROBE_DISTRIBUTIONS)
        return self


class TraceEstimate(DictBase):
    """A trace estimate with the standard error of its per-probe terms."""

    mean = Field(0.0)
    standard_error = Field(0.0, doc="Sample standard deviation of the per-probe terms divided by `sqrt(N)`.")
    num_samples = Field(0)


def draw_probe(rng: np.random.Generator, d: int, distribution: str) -> np.ndarray:
    """
    Parameters
    ----------
    rng : np.random.Generator
        The probe's generator.
    d : int
        The dimension.
    distribution : str
        `gaussian` or `rademacher`.

    Returns
    -------
    np.ndarray : A probe with identity covariance.
    """
    if distribution == "rademacher":
        return rng.integers(0, 2, size=d).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(d)


def estimate_trace(
        matvec: Callable[[np.ndarray], np.ndarray],
        d: int,
        cfg: HutchinsonConfig,
        *,
        jobs: int = 1
) -> TraceEstimate:
    """
    Hutchinson estimate `(1/N) sum_k v_k . (A v_k)` of the trace of a symmetric operator.

    Probe `k` is drawn from its own generator derived from `(cfg.seed, k)`, and the terms are reduced in index order,
    so the estimate does not depend on `jobs`.

    Parameters
    ----------
    matvec : Callable[[np.ndarray], np.ndarray]
        `v -> A v`.
    d : int
        The dimension of `A`.
    cfg : HutchinsonConfig
        Probe count, seed and distribution.
    jobs : int
        Number of worker threads. Default `1`.

    Returns
    -------
    TraceEstimate

    Raises
    ------
    llcbench.exceptions.NumericError
        With the index of the first probe whose term is not finite.
    """
    cfg = HutchinsonConfig.coerce(cfg).validate()

    def term(k: int) -> float:
        v = draw_probe(utils.make_rng(cfg.seed, k), d, cfg.probe_distribution)
        return float(v @ matvec(v))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            terms = np.fromiter(pool.map(term, range(cfg.num_samples)), dtype=np.float64, count=cfg.num_samples)
    else:
        terms = np.fromiter((term(k) for k in range(cfg.num_samples)), dtype=np.float64, count=cfg.num_samples)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise NumericError(f"Hutchinson probe {int(bad[0])} produced a non-finite term.", index=int(bad[0]))
    n = terms.size
    se = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return TraceEstimate(mean=float(np.mean(terms)), standard_error=se, num_samples=n)


def hutchinson_trace(
        model: MlpModel,
        batch: Batch,
        cfg: HutchinsonConfig,
        *,
        jobs: int = 1
) -> TraceEstimate:
    """
    Estimate the trace of the loss Hessian at the model's parameters from Hessian-vector products.

    Parameters
    ----------
    model : MlpModel
        The model.
    batch : Batch
        The examples defining the loss.
    cfg : HutchinsonConfig
        Probe count, seed and distribution.
    jobs : int
        Number of worker threads. Default `1`.

    Returns
    -------
    TraceEstimate
    """
    batch.check(model.architecture)
    estimate = estimate_trace(lambda v: model.hvp(batch, v), model.param_count, cfg, jobs=jobs)
    logger.debug("Hessian trace %.6g +- %.2g over %d probes.", estimate.mean, estimate.standard_error,
                 estimate.num_samples)
    return estimate


def exact_hessian_trace(model: MlpModel, batch: Batch) -> float:
    """
    The exact Hessian trace `sum_j (H e_j)_j` from `d` Hessian-vector products with the basis vectors.

    Parameters
    ----------
    model : MlpModel
        The model.
    batch : Batch
        The examples defining the loss.

    Returns
    -------
    float
    """
    d = model.param_count
    total = 0.0
    basis = np.zeros(d)
    for j in range(d):
        basis[j] = 1.0
        total += model.hvp(batch, basis)[j]
        basis[j] = 0.0
    return float(total)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import utils
from .base import ConfigBase, DictBase, Field
from .data import Dataset
from .exceptions import ConfigurationError, DivergenceError, InsufficientSamplesError
from .nn import MlpModel, ParamVector


__all__ = [
    "SgldConfig",
    "ChainResult",
    "LlcEstimate",
    "VolumeFit",
    "AnalyticPotential",
    "LossOracle",
    "ModelLossOracle",
    "PotentialLossOracle",
    "BUNDLED_POTENTIALS",
    "constant_potential",
    "sgld_sample",
    "llc_from_oracle",
    "estimate_llc",
    "estimate_wbic",
    "compute_bic",
    "volume_scaling_oracle"
]

logger = logging.getLogger(__name__)


class SgldConfig(ConfigBase):
    """
    Settings of the SGLD sampler targeting the localized tempered posterior
    `p(w) ~ exp(-beta n L_n(w) - (gamma / 2) ||w - w*||^2)`.
    """

    step_size = Field(utils.DEFAULT_SGLD_STEP_SIZE, doc="Step size; the injected noise has variance `step_size`.")
    beta = Field(None, doc="Inverse temperature. `None` means `1 / log n`, resolved when the sampler runs.")
    gamma = Field(utils.DEFAULT_SGLD_GAMMA, doc="Localization strength.")
    num_chains = Field(utils.DEFAULT_SGLD_CHAINS)
    draws_per_chain = Field(utils.DEFAULT_SGLD_DRAWS, doc="Draws per chain, burn-in included.")
    burn_in = Field(utils.DEFAULT_SGLD_BURN_IN)
    batch_size = Field(utils.DEFAULT_SGLD_BATCH_SIZE)
    seed = Field(0)
    divergence_radius = Field(None, doc="Chains leaving this distance from `w*` are dropped. "
                                        "`None` means `10 * max(||w*||, 1)`.")
    record_full_loss = Field(True, doc="Record `n L_n(w_t)` on the whole dataset instead of the mini-batch estimate.")
    store_positions = Field(False, doc="Keep every draw `w_t` (memory `draws_per_chain * d` per chain).")

    def validate(self) -> SgldConfig:
        utils.check_positive(self.step_size, "step_size")
        if self.beta is not None:
            utils.check_positive(self.beta, "beta")
        utils.check_positive(self.gamma, "gamma", strict=False)
        utils.check_count(self.num_chains, "num_chains")
        utils.check_count(self.burn_in, "burn_in", minimum=0)
        utils.check_count(self.draws_per_chain, "draws_per_chain", minimum=self.burn_in + 1)
        utils.check_count(self.batch_size, "batch_size")
        utils.check_count(self.seed, "seed", minimum=0)
        if self.divergence_radius is not None:
            utils.check_positive(self.divergence_radius, "divergence_radius")
        return self

    def resolve_beta(self, n: int) -> float:
        """
        Parameters
        ----------
        n : int
            The training-set size.

        Returns
        -------
        float : `beta` if set, `1 / log n` otherwise.
        """
        if self.beta is not None:
            return float(self.beta)
        if n < 2:
            raise ConfigurationError("The default inverse temperature 1/log(n) needs n >= 2; set \"beta\" explicitly.")
        return 1.0 / float(np.log(n))


class ChainResult(DictBase):
    """One SGLD chain. Series are recorded at every draw, burn-in included."""

    chain = Field(0)
    losses = Field(None, doc="`n L_n(w_t)` per draw.")
    sq_displacement = Field(None, doc="`||w_t - w*||^2` per draw.")
    positions = Field(None, doc="The draws `w_t` when `store_positions` is set.")
    diverged = Field(False)
    reason = Field(None, doc="Why the chain was dropped.")


class LlcEstimate(DictBase):
    """The local learning coefficient and the WBIC from one shared sampling pass."""

    lambda_hat = Field(0.0)
    std_error = Field(0.0, doc="Standard error across chains.")
    wbic = Field(0.0, doc="`E[n L_n(w)]` under the localized tempered posterior.")
    n = Field(0)
    per_chain_lambda = Field(factory=list)
    beta = Field(0.0)
    loss_at_w_star = Field(0.0, doc="`L_n(w*)`.")
    mean_sq_displacement = Field(0.0, doc="Mean of `||w_t - w*||^2` after burn-in over the kept chains.")
    diverged_chains = Field(factory=list)
    bic = Field(0.0, doc="`n L_n(w*) + (d/2) log n` at the same point.")


class VolumeFit(DictBase):
    """Least-squares fit of `log V(eps)` against `log eps`."""

    lambda_fit = Field(0.0)
    r_squared = Field(0.0)
    epsilons = Field(factory=list)
    volumes = Field(factory=list)
    hits = Field(factory=list)


class AnalyticPotential(object):
    """
    A closed-form potential `K(w) >= 0` on a small box, with its gradient.
    """

    def __init__(
            self,
            dimension: int,
            evaluator: Callable[[np.ndarray], np.ndarray],
            gradient: Callable[[np.ndarray], np.ndarray],
            description: str,
            *,
            box_half_width: float = 1.0
    ) -> None:
        """

        Parameters
        ----------
        dimension : int
            The number of coordinates.
        evaluator : Callable[[np.ndarray], np.ndarray]
            `K`, applied to the last axis (accepts a single point or a stack of points).
        gradient : Callable[[np.ndarray], np.ndarray]
            `grad K` at a single point.
        description : str
            A human-readable formula.
        box_half_width : float
            The domain box is `[-box_half_width, box_half_width]^dimension`. Default `1`.
        """
        utils.check_count(dimension, "dimension")
        utils.check_positive(box_half_width, "box_half_width")
        self.dimension = dimension
        self.evaluator = evaluator
        self.gradient = gradient
        self.description = description
        self.box_half_width = float(box_half_width)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.evaluator(np.asarray(w, dtype=np.float64))

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: {self.description} (d={self.dimension})"


BUNDLED_POTENTIALS: Dict[str, AnalyticPotential] = {
    "quadratic_1d": AnalyticPotential(
        1,
        lambda w: w[..., 0] ** 2,
        lambda w: np.array([2.0 * w[0]]),
        "w1^2"
    ),
    "quadratic_2d": AnalyticPotential(
        2,
        lambda w: w[..., 0] ** 2 + w[..., 1] ** 2,
        lambda w: 2.0 * w[:2],
        "w1^2 + w2^2"
    ),
    "degenerate_2d": AnalyticPotential(
        2,
        lambda w: (w[..., 0] * w[..., 1]) ** 2,
        lambda w: np.array([2.0 * w[0] * w[1] ** 2, 2.0 * w[0] ** 2 * w[1]]),
        "w1^2 w2^2"
    ),
}
"""Potentials with known volume-scaling exponents: `1/2`, `1` and `1/2` (with a logarithmic correction)."""


def constant_potential(value: float, dimension: int) -> AnalyticPotential:
    """
    The flat potential `K = value`, whose learning coefficient estimate is exactly zero.

    Parameters
    ----------
    value : float
        The constant.
    dimension : int
        The number of coordinates.

    Returns
    -------
    AnalyticPotential
    """
    return AnalyticPotential(
        dimension,
        lambda w: np.full(np.shape(w)[:-1], float(value)) if np.ndim(w) > 1 else float(value),
        lambda w: np.zeros(dimension),
        f"{value}"
    )


class LossOracle(object):
    """
    Abstract stochastic loss: `L_n` over a dataset of size `n`, with mini-batch estimates of its value and gradient.
    """

    n: int = 0
    dimension: int = 0

    def sample_indices(self, rng: np.random.Generator, m: int) -> Optional[np.ndarray]:
        """
        Returns
        -------
        Optional[np.ndarray] : The indices of a fresh mini-batch of (at most) `m` examples.
        """
        raise NotImplementedError

    def batch_loss_grad(self, w: ParamVector, indices: Optional[np.ndarray]) -> Tuple[float, ParamVector]:
        """
        Returns
        -------
        Tuple[float, ParamVector] : The mini-batch mean loss and its gradient at `w`.
        """
        raise NotImplementedError

    def full_loss(self, w: ParamVector) -> float:
        """
        Returns
        -------
        float : `L_n(w)` over the whole dataset.
        """
        raise NotImplementedError


class ModelLossOracle(LossOracle):
    """The negative log-likelihood of an MLP over a dataset."""

    def __init__(self, model: MlpModel, dataset: Dataset) -> None:
        self.model = model
        self.batch = dataset.as_batch()
        self.batch.check(model.architecture)
        self.n = len(self.batch)
        self.dimension = model.param_count

    def sample_indices(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.choice(self.n, size=min(m, self.n), replace=False)

    def batch_loss_grad(self, w: ParamVector, indices: Optional[np.ndarray]) -> Tuple[float, ParamVector]:
        batch = self.batch if indices is None else self.batch.subset(indices)
        return self.model.with_params(w).loss_and_grad(batch)

    def full_loss(self, w: ParamVector) -> float:
        return self.model.with_params(w).nll_loss(self.batch)


class PotentialLossOracle(LossOracle):
    """An analytic potential standing in for `L_n`, with a synthetic sample size `n`."""

    def __init__(self, potential: AnalyticPotential, n: int) -> None:
        utils.check_count(n, "n")
        self.potential = potential
        self.n = int(n)
        self.dimension = potential.dimension

    def sample_indices(self, rng: np.random.Generator, m: int) -> None:
        return None

    def batch_loss_grad(self, w: ParamVector, indices: Optional[np.ndarray]) -> Tuple[float, ParamVector]:
        return float(self.potential(w)), np.asarray(self.potential.gradient(w), dtype=np.float64)

    def full_loss(self, w: ParamVector) -> float:
        return float(self.potential(w))


def _run_chain(
        oracle: LossOracle,
        w_star: ParamVector,
        cfg: SgldConfig,
        beta: float,
        radius: float,
        chain: int
) -> ChainResult:
    rng = utils.make_rng(cfg.seed, chain)
    d = w_star.size
    scale = beta * oracle.n
    noise_std = np.sqrt(cfg.step_size)
    losses = np.full(cfg.draws_per_chain, np.nan)
    displacement = np.full(cfg.draws_per_chain, np.nan)
    positions = np.full((cfg.draws_per_chain, d), np.nan) if cfg.store_positions else None
    w = w_star.copy()
    for t in range(cfg.draws_per_chain):
        indices = oracle.sample_indices(rng, cfg.batch_size)
        batch_loss, g = oracle.batch_loss_grad(w, indices)
        value = oracle.full_loss(w) if cfg.record_full_loss else batch_loss
        losses[t] = oracle.n * value
        displacement[t] = float(np.sum((w - w_star) ** 2))
        if positions is not None:
            positions[t] = w
        if not np.isfinite(losses[t]) or not np.all(np.isfinite(g)):
            return ChainResult(chain=chain, losses=losses, sq_displacement=displacement, positions=positions,
                               diverged=True, reason=f"non-finite loss or gradient at draw {t}")
        drift = -scale * g + cfg.gamma * (w_star - w)
        w = w + 0.5 * cfg.step_size * drift + noise_std * rng.standard_normal(d)
        distance = float(np.linalg.norm(w - w_star))
        if not np.isfinite(distance) or distance > radius:
            return ChainResult(chain=chain, losses=losses, sq_displacement=displacement, positions=positions,
                               diverged=True, reason=f"left radius {radius:.3g} at draw {t} (distance {distance:.3g})")
    return ChainResult(chain=chain, losses=losses, sq_displacement=displacement, positions=positions)


def sgld_sample(
        loss_fn: LossOracle,
        w_star: ParamVector,
        cfg: SgldConfig,
        *,
        beta: float = None,
        jobs: int = 1
) -> List[ChainResult]:
    """
    Run `num_chains` independent SGLD chains started at `w*`:

        w_{t+1} = w_t + (step/2) (-beta n grad L_m(w_t) + gamma (w* - w_t)) + N(0, step)

    with `L_m` a fresh mini-batch estimate of `L_n` at every draw.

    Parameters
    ----------
    loss_fn : LossOracle
        The stochastic loss.
    w_star : ParamVector
        The localization centre.
    cfg : SgldConfig
        Sampler settings.
    beta : float
        Overrides `cfg.resolve_beta(n)`.
    jobs : int
        Number of worker threads. Chain `k` always uses the generator derived from `(cfg.seed, k)`. Default `1`.

    Returns
    -------
    List[ChainResult] : The chains in index order, diverged ones flagged.
    """
    cfg = SgldConfig.coerce(cfg).validate()
    w_star = np.asarray(w_star, dtype=np.float64).ravel()
    if w_star.size != loss_fn.dimension:
        raise ConfigurationError(f"w* has length {w_star.size}, the loss expects {loss_fn.dimension}.")
    beta = cfg.resolve_beta(loss_fn.n) if beta is None else float(beta)
    radius = cfg.divergence_radius or 10.0 * max(float(np.linalg.norm(w_star)), 1.0)

    def run(k: int) -> ChainResult:
        return _run_chain(loss_fn, w_star, cfg, beta, radius, k)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chains = list(pool.map(run, range(cfg.num_chains)))
    else:
        chains = [run(k) for k in range(cfg.num_chains)]
    for _ in chains:
        if _.diverged:
            logger.warning("SGLD chain %d diverged: %s.", _.chain, _.reason)
    return chains


def llc_from_oracle(
        loss_fn: LossOracle,
        w_star: ParamVector,
        cfg: SgldConfig,
        *,
        jobs: int = 1
) -> LlcEstimate:
    """
    Estimate `lambda_hat = beta (E[n L_n(w)] - n L_n(w*))` and the WBIC `E[n L_n(w)]` from one sampling pass.

    Per chain, `lambda_k = beta * mean_t(n L_n(w_t) - n L_n(w*))` over the post-burn-in draws; `lambda_hat` is the mean
    over the kept chains and `wbic = n L_n(w*) + lambda_hat / beta`.

    Parameters
    ----------
    loss_fn : LossOracle
        The stochastic loss.
    w_star : ParamVector
        The point being characterized.
    cfg : SgldConfig
        Sampler settings.
    jobs : int
        Number of worker threads. Default `1`.

    Returns
    -------
    LlcEstimate

    Raises
    ------
    llcbench.exceptions.DivergenceError
        When more than half of the chains diverged.
    llcbench.exceptions.NumericError
        When `n L_n(w*)` is not finite.
    """
    cfg = SgldConfig.coerce(cfg).validate()
    w_star = np.asarray(w_star, dtype=np.float64).ravel()
    n = loss_fn.n
    beta = cfg.resolve_beta(n)
    loss_star = float(loss_fn.full_loss(w_star))
    n_loss_star = n * loss_star
    utils.check_finite(n_loss_star, "n L_n(w*)")
    chains = sgld_sample(loss_fn, w_star, cfg, beta=beta, jobs=jobs)
    kept = [_ for _ in chains if not _.diverged]
    diverged = [_.chain for _ in chains if _.diverged]
    if 2 * len(diverged) > len(chains):
        raise DivergenceError(
            f"{len(diverged)} of {len(chains)} SGLD chains diverged ({'; '.join(_.reason for _ in chains if _.diverged)})."
        )
    excess = [float(np.mean(_.losses[cfg.burn_in:] - n_loss_star)) for _ in kept]
    per_chain = [beta * _ for _ in excess]
    mean_excess = float(np.mean(excess))
    lambda_hat = float(np.mean(per_chain))
    std_error = float(np.std(per_chain, ddof=1) / np.sqrt(len(per_chain))) if len(per_chain) > 1 else 0.0
    utils.check_finite(lambda_hat, "LLC estimate")
    return LlcEstimate(
        lambda_hat=lambda_hat,
        std_error=std_error,
        wbic=n_loss_star + mean_excess,
        n=n,
        per_chain_lambda=per_chain,
        beta=beta,
        loss_at_w_star=loss_star,
        mean_sq_displacement=float(np.mean([np.mean(_.sq_displacement[cfg.burn_in:]) for _ in kept])),
        diverged_chains=diverged,
        bic=compute_bic(n, loss_star, w_star.size),
    )


def estimate_llc(
        model_at_w_star: MlpModel,
        dataset: Dataset,
        cfg: SgldConfig,
        *,
        jobs: int = 1
) -> LlcEstimate:
    """
    The local learning coefficient of an MLP at its current parameters, on a training set.

    Parameters
    ----------
    model_at_w_star : MlpModel
        The model; its parameters are `w*`.
    dataset : Dataset
        The training set (`n = dataset.n`).
    cfg : SgldConfig
        Sampler settings.
    jobs : int
        Number of worker threads. Default `1`.

    Returns
    -------
    LlcEstimate
    """
    return llc_from_oracle(ModelLossOracle(model_at_w_star, dataset), model_at_w_star.params, cfg, jobs=jobs)


def estimate_wbic(
        model_at_w_star: MlpModel,
        dataset: Dataset,
        cfg: SgldConfig,
        *,
        jobs: int = 1
) -> float:
    """
    The WBIC `E[n L_n(w)]` under the localized tempered posterior. Use `estimate_llc` to get it together with
    `lambda_hat` from the same chains.

    Returns
    -------
    float
    """
    return estimate_llc(model_at_w_star, dataset, cfg, jobs=jobs).wbic


def compute_bic(n: int, loss_at_min: float, d: int) -> float:
    """
    Bayesian information criterion `n L_n(w*) + (d/2) log n`.

    Parameters
    ----------
    n : int
        The sample size (>= 1).
    loss_at_min : float
        The average loss `L_n(w*)`.
    d : int
        The parameter count.

    Returns
    -------
    float
    """
    utils.check_count(n, "n")
    return n * float(loss_at_min) + 0.5 * d * float(np.log(n))


def volume_scaling_oracle(
        potential: AnalyticPotential,
        epsilon_grid: Sequence[float],
        samples: int,
        seed: int,
        *,
        fit_decades: float = None,
        min_hits: int = utils.DEFAULT_MIN_BIN_HITS
) -> VolumeFit:
    """
    Monte-Carlo estimate of the sublevel volumes `V(eps) = vol{w in box : K(w) <= eps}` and of the exponent `lambda`
    in `V(eps) ~ eps^lambda`, from a least-squares line through `(log eps, log V)`.

    Parameters
    ----------
    potential : AnalyticPotential
        The potential, with `K(0) = 0` at the centre of its box.
    epsilon_grid : Sequence[float]
        Positive thresholds spanning at least two decades; each sublevel set must lie inside the box.
    samples : int
        Number of uniform samples in the box.
    seed : int
        The RNG seed.
    fit_decades : float
        Restrict the fit to thresholds within this many decades of the smallest one. Default `None` (whole grid).
    min_hits : int
        Minimum number of samples under each fitted threshold. Default `100`.

    Returns
    -------
    VolumeFit : `lambda_fit` (the slope) and `r_squared`, with the per-threshold volumes.

    Raises
    ------
    llcbench.exceptions.InsufficientSamplesError
        If a fitted threshold holds fewer than `min_hits` samples.
    """
    if potential.dimension > 4:
        raise ConfigurationError(f"The volume oracle supports dimension <= 4, got {potential.dimension}.")
    utils.check_count(samples, "samples")
    eps = np.sort(np.asarray(epsilon_grid, dtype=np.float64))
    if eps.size < 2 or np.any(eps <= 0):
        raise ConfigurationError("Field \"epsilon_grid\" needs at least two positive thresholds.")
    if eps[-1] / eps[0] < 100.0:
        raise ConfigurationError(
            f"Field \"epsilon_grid\" must span at least two decades, got [{eps[0]:.3g}, {eps[-1]:.3g}]."
        )
    if fit_decades is not None:
        utils.check_positive(fit_decades, "fit_decades")
        eps = eps[eps <= eps[0] * 10.0 ** fit_decades * (1.0 + 1e-12)]
        if eps.size < 2:
            raise ConfigurationError("Field \"fit_decades\" keeps fewer than two thresholds.")
    rng = utils.make_rng(seed)
    half = potential.box_half_width
    values = np.sort(potential(rng.uniform(-half, half, size=(samples, potential.dimension))))
    hits = np.searchsorted(values, eps, side="right")
    short = np.flatnonzero(hits < min_hits)
    if short.size:
        i = int(short[0])
        raise InsufficientSamplesError(
            f"Only {int(hits[i])} of {samples} samples satisfy K <= {eps[i]:.3g} (need {min_hits}); "
            f"raise samples or widen the thresholds."
        )
    volumes = hits / samples * (2.0 * half) ** potential.dimension
    fit = stats.linregress(np.log(eps), np.log(volumes))
    return VolumeFit(
        lambda_fit=float(fit.slope),
        r_squared=float(fit.rvalue ** 2),
        epsilons=eps.tolist(),
        volumes=volumes.tolist(),
        hits=hits.tolist(),
    )

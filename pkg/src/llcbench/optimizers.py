#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import logging
from typing import Callable, Dict, Tuple, Union

import numpy as np
from scipy import linalg

from . import utils
from .base import ConfigBase, DictBase, Field
from .exceptions import ConfigurationError, NumericError, SolverError
from .nn import Batch, MlpModel


__all__ = [
    "SgdConfig",
    "NgdConfig",
    "StepResult",
    "OptimizerConfig",
    "optimizer_config",
    "smoothing_kappa",
    "conjugate_gradient",
    "sgd_step",
    "ngd_step",
    "step"
]

logger = logging.getLogger(__name__)


class SgdConfig(ConfigBase):
    """Plain stochastic gradient descent: `w <- w - lr * grad L`."""

    kind = Field("sgd")
    learning_rate = Field(utils.DEFAULT_LEARNING_RATE)
    batch_size = Field(utils.DEFAULT_BATCH_SIZE)

    def validate(self) -> SgdConfig:
        if self.kind != "sgd":
            raise ConfigurationError(f"Field \"kind\" of an SGD config must be \"sgd\", got {self.kind!r}.")
        utils.check_positive(self.learning_rate, "learning_rate")
        utils.check_count(self.batch_size, "batch_size")
        return self


class NgdConfig(ConfigBase):
    """
    Natural gradient descent with the smoothed empirical Fisher `F + kappa I`.

    `solver` is one of `conjugate_gradient` (default), `dense_inverse` and `woodbury`. The last one is an addition to
    the CG and dense solvers: it applies the exact low-rank identity
    `(kappa I + G^T G / m)^-1 b = (b - G^T (m kappa I + G G^T)^-1 G b) / kappa`, cheap when the batch is much smaller
    than `d`.
    """

    kind = Field("ngd")
    learning_rate = Field(utils.DEFAULT_LEARNING_RATE)
    alpha = Field(utils.DEFAULT_ALPHA)
    epsilon_smooth = Field(utils.DEFAULT_EPSILON_SMOOTH)
    batch_size = Field(utils.DEFAULT_BATCH_SIZE)
    solver = Field("conjugate_gradient")
    cg_tol = Field(utils.DEFAULT_CG_TOL)
    cg_max_iters = Field(None, doc="Iteration budget of the CG solver. `None` means `10 * d`.")

    def validate(self) -> NgdConfig:
        if self.kind != "ngd":
            raise ConfigurationError(f"Field \"kind\" of an NGD config must be \"ngd\", got {self.kind!r}.")
        utils.check_positive(self.learning_rate, "learning_rate")
        utils.check_positive(self.alpha, "alpha")
        utils.check_positive(self.epsilon_smooth, "epsilon_smooth")
        utils.check_count(self.batch_size, "batch_size")
        utils.check_choice(self.solver, "solver", utils.SOLVERS)
        utils.check_positive(self.cg_tol, "cg_tol")
        if self.cg_max_iters is not None:
            utils.check_count(self.cg_max_iters, "cg_max_iters")
        return self


OptimizerConfig = Union[SgdConfig, NgdConfig]


def optimizer_config(value: Union[Dict, OptimizerConfig, None]) -> OptimizerConfig:
    """
    Build the optimizer config named by the `kind` key (`sgd` when absent).

    Parameters
    ----------
    value : Union[Dict, OptimizerConfig, None]
        A config or its dictionary form.

    Returns
    -------
    OptimizerConfig
    """
    if isinstance(value, (SgdConfig, NgdConfig)):
        return value
    value = dict(value or {})
    kind = value.get("kind", "sgd")
    if kind == "sgd":
        return SgdConfig(**value)
    if kind == "ngd":
        return NgdConfig(**value)
    raise ConfigurationError(f"Field \"optimizer.kind\" must be one of ['ngd', 'sgd'], got {kind!r}.")


class StepResult(DictBase):
    """The outcome of one optimizer step."""

    new_params = Field(None)
    update_norm = Field(0.0, doc="`||w_new - w_old||_2`.")
    kappa = Field(0.0, doc="The smoothing used (`0` for SGD).")
    cg_iterations = Field(0, doc="CG iterations (`0` for SGD and the direct solvers).")
    residual = Field(0.0, doc="Relative residual `||(F + kappa I) u - g|| / ||g||` of the NGD solve.")
    loss = Field(None, doc="Mini-batch loss before the step.")


def smoothing_kappa(
        fisher_trace: float,
        alpha: float,
        epsilon: float,
        d: int
) -> float:
    """
    Smoothing added to the empirical Fisher: `kappa = (alpha / d) * max(trace(F), epsilon)`.

    Parameters
    ----------
    fisher_trace : float
        `trace(F)`, non-negative.
    alpha : float
        Smoothing scale, positive.
    epsilon : float
        Floor on the trace, positive.
    d : int
        The parameter count.

    Returns
    -------
    float
    """
    utils.check_count(d, "d")
    return (alpha / d) * max(float(fisher_trace), float(epsilon))


def conjugate_gradient(
        matvec: Callable[[np.ndarray], np.ndarray],
        b: np.ndarray,
        *,
        tol: float = utils.DEFAULT_CG_TOL,
        max_iters: int = None
) -> Tuple[np.ndarray, int, float]:
    """
    Solve `A x = b` for a symmetric positive definite operator given only through `matvec`.

    Convergence is declared on the true residual `||b - A x|| / ||b||`; when the recursively updated residual meets
    `tol` but the true one does not, the iteration restarts from the true residual.

    Parameters
    ----------
    matvec : Callable[[np.ndarray], np.ndarray]
        `x -> A x`.
    b : np.ndarray
        The right-hand side.
    tol : float
        The relative residual to reach. Default `1e-10`.
    max_iters : int
        The iteration budget. Default `None`, i.e. `10 * len(b)`.

    Returns
    -------
    Tuple[np.ndarray, int, float] : The solution, the number of iterations and the final relative residual.

    Raises
    ------
    llcbench.exceptions.SolverError
        When the budget is exhausted, carrying the final residual.
    """
    b = np.asarray(b, dtype=np.float64)
    max_iters = max_iters or 10 * b.size
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = (tol * b_norm) ** 2
    iterations = 0
    while iterations < max_iters:
        ap = matvec(p)
        curvature = float(p @ ap)
        if curvature <= 0.0 or not np.isfinite(curvature):
            raise SolverError(
                f"Operator is not positive definite along the search direction (p.Ap = {curvature}).",
                residual=np.sqrt(rs) / b_norm,
                iterations=iterations
            )
        step_len = rs / curvature
        x += step_len * p
        r -= step_len * ap
        rs_new = float(r @ r)
        iterations += 1
        if rs_new <= target:
            r = b - matvec(x)
            rs_new = float(r @ r)
            if rs_new <= target:
                return x, iterations, float(np.sqrt(rs_new)) / b_norm
            logger.debug("CG residual replacement after %d iterations (true residual %.3e).",
                         iterations, np.sqrt(rs_new) / b_norm)
            p = r.copy()
            rs = rs_new
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    residual = float(np.linalg.norm(b - matvec(x))) / b_norm
    raise SolverError(
        f"Conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e}, "
        f"tolerance {tol:.1e}).",
        residual=residual,
        iterations=iterations
    )


def sgd_step(model: MlpModel, batch: Batch, cfg: SgdConfig) -> StepResult:
    """
    One SGD step `w_{n+1} = w_n - lr * grad L`.

    Parameters
    ----------
    model : MlpModel
        The current model.
    batch : Batch
        The mini-batch.
    cfg : SgdConfig
        The optimizer settings.

    Returns
    -------
    StepResult : The step record; `new_params` holds the updated parameters.

    Raises
    ------
    llcbench.exceptions.NumericError
        If the new parameters are not finite.
    """
    loss, g = model.loss_and_grad(batch)
    new_params = model.params - cfg.learning_rate * g
    utils.check_finite(new_params, "parameter after SGD step")
    result = StepResult(
        new_params=new_params,
        update_norm=float(np.linalg.norm(new_params - model.params)),
        loss=loss
    )
    return result


def _solve_smoothed_fisher(
        grads: np.ndarray,
        g: np.ndarray,
        kappa: float,
        cfg: NgdConfig
) -> Tuple[np.ndarray, int, float]:
    m, d = grads.shape

    def matvec(v: np.ndarray) -> np.ndarray:
        return grads.T @ (grads @ v) / m + kappa * v

    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        return np.zeros_like(g), 0, 0.0
    if cfg.solver == "conjugate_gradient":
        return conjugate_gradient(matvec, g, tol=cfg.cg_tol, max_iters=cfg.cg_max_iters or 10 * d)
    if cfg.solver == "dense_inverse":
        if d > utils.DEFAULT_DENSE_MAX_DIM:
            raise ConfigurationError(
                f"The dense solver is limited to d <= {utils.DEFAULT_DENSE_MAX_DIM}, the model has d = {d}."
            )
        fisher = grads.T @ grads / m
        fisher[np.diag_indices(d)] += kappa
        u = linalg.cho_solve(linalg.cho_factor(fisher, lower=True), g)
    else:
        gram = grads @ grads.T
        gram[np.diag_indices(m)] += m * kappa
        u = (g - grads.T @ linalg.cho_solve(linalg.cho_factor(gram, lower=True), grads @ g)) / kappa
    return u, 0, float(np.linalg.norm(matvec(u) - g)) / g_norm


def ngd_step(model: MlpModel, batch: Batch, cfg: NgdConfig) -> StepResult:
    """
    One smoothed natural gradient step: solve `(F + kappa I) u = grad L` with `F` the empirical Fisher of the batch and
    `kappa = smoothing_kappa(trace(F), alpha, epsilon_smooth, d)`, then `w_{n+1} = w_n - lr * u`.

    Parameters
    ----------
    model : MlpModel
        The current model.
    batch : Batch
        The mini-batch.
    cfg : NgdConfig
        The optimizer settings.

    Returns
    -------
    StepResult : The step record; `new_params` holds the updated parameters.

    Raises
    ------
    llcbench.exceptions.SolverError
        If CG does not reach `cg_tol` within `cg_max_iters`.
    llcbench.exceptions.NumericError
        If the direction or the new parameters are not finite.
    """
    loss, g = model.loss_and_grad(batch)
    grads = model.per_example_grad_matrix(batch)
    trace = float(np.sum(grads * grads)) / len(batch)
    kappa = smoothing_kappa(trace, cfg.alpha, cfg.epsilon_smooth, model.param_count)
    if not kappa > 0.0:
        raise NumericError(f"Smoothing kappa underflowed to {kappa}; raise alpha or epsilon_smooth.")
    try:
        u, iterations, residual = _solve_smoothed_fisher(grads, g, kappa, cfg)
    except SolverError as err:
        logger.error("NGD solve failed: %s", err)
        raise
    utils.check_finite(u, "natural gradient direction")
    new_params = model.params - cfg.learning_rate * u
    utils.check_finite(new_params, "parameter after NGD step")
    result = StepResult(
        new_params=new_params,
        update_norm=float(np.linalg.norm(new_params - model.params)),
        kappa=kappa,
        cg_iterations=iterations,
        residual=residual,
        loss=loss
    )
    return result


def step(model: MlpModel, batch: Batch, cfg: OptimizerConfig) -> StepResult:
    """
    Dispatch to `sgd_step` or `ngd_step` on the config's kind.

    Returns
    -------
    StepResult
    """
    if isinstance(cfg, NgdConfig):
        return ngd_step(model, batch, cfg)
    return sgd_step(model, batch, cfg)


#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import unittest

import numpy as np

from llcbench import optimizers
from llcbench.exceptions import ConfigurationError, SolverError
from llcbench.nn import MlpModel
from llcbench.optimizers import NgdConfig, SgdConfig

from tests.fixtures import random_batch, random_model, tiny_architecture


class TestConfigs(unittest.TestCase):
    def test_dispatch(self):
        self.assertIsInstance(optimizers.optimizer_config({"kind": "ngd", "alpha": 0.1}), NgdConfig)
        self.assertIsInstance(optimizers.optimizer_config({}), SgdConfig)
        self.assertIsInstance(optimizers.optimizer_config(None), SgdConfig)
        with self.assertRaises(ConfigurationError):
            optimizers.optimizer_config({"kind": "adam"})

    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            NgdConfig(solver="cholesky").validate()
        with self.assertRaises(ConfigurationError):
            NgdConfig(alpha=0.0).validate()
        with self.assertRaises(ConfigurationError):
            SgdConfig(learning_rate=-1.0).validate()
        with self.assertRaises(ConfigurationError):
            SgdConfig(batch_size=0).validate()
        with self.assertRaises(ConfigurationError):
            SgdConfig(momentum=0.9)

    def test_kappa(self):
        self.assertAlmostEqual(optimizers.smoothing_kappa(50.0, 1e-2, 1e-10, 10), 1e-2 / 10 * 50.0)

    def test_kappa_floor(self):
        for eps in (1e-3, 1e-2, 1e-1):
            self.assertAlmostEqual(optimizers.smoothing_kappa(1e-6, 0.5, eps, 20), 0.5 * eps / 20, delta=1e-18)

    def test_kappa_monotone(self):
        alphas = np.logspace(-6, 6, 25)
        epsilons = np.logspace(-12, 2, 29)
        for trace in (0.0, 1e-8, 0.3, 25.0):
            by_alpha = [optimizers.smoothing_kappa(trace, alpha, 1e-10, 100) for alpha in alphas]
            self.assertTrue(np.all(np.diff(by_alpha) >= 0.0), msg=f"trace={trace}")
            self.assertTrue(np.all(np.asarray(by_alpha) > 0.0))
            by_eps = [optimizers.smoothing_kappa(trace, 1e-2, eps, 100) for eps in epsilons]
            self.assertTrue(np.all(np.diff(by_eps) >= 0.0), msg=f"trace={trace}")


class TestConjugateGradient(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        a = rng.standard_normal((30, 30))
        self.matrix = a @ a.T + 0.5 * np.eye(30)
        self.b = rng.standard_normal(30)

    def test_solves_spd_system(self):
        x, iterations, residual = optimizers.conjugate_gradient(lambda v: self.matrix @ v, self.b, tol=1e-12)
        expected = np.linalg.solve(self.matrix, self.b)
        self.assertLess(np.linalg.norm(x - expected) / np.linalg.norm(expected), 1e-8)
        self.assertLessEqual(residual, 1e-12)
        self.assertGreater(iterations, 0)

    def test_zero_rhs(self):
        x, iterations, residual = optimizers.conjugate_gradient(lambda v: self.matrix @ v, np.zeros(30))
        np.testing.assert_array_equal(x, 0.0)
        self.assertEqual((iterations, residual), (0, 0.0))

    def test_budget_exhausted(self):
        with self.assertRaises(SolverError) as ctx:
            optimizers.conjugate_gradient(lambda v: self.matrix @ v, self.b, tol=1e-14, max_iters=2)
        self.assertEqual(ctx.exception.iterations, 2)
        self.assertGreater(ctx.exception.residual, 1e-14)

    def test_not_positive_definite(self):
        with self.assertRaises(SolverError):
            optimizers.conjugate_gradient(lambda v: -v, self.b)


class TestSteps(unittest.TestCase):
    def setUp(self) -> None:
        self.arch = tiny_architecture(hidden=(6,))
        self.model = random_model(self.arch)
        self.batch = random_batch(12, 4, 3)

    def test_sgd_step(self):
        cfg = SgdConfig(learning_rate=0.05)
        g = self.model.grad(self.batch)
        result = optimizers.sgd_step(self.model, self.batch, cfg)
        np.testing.assert_allclose(result.new_params, self.model.params - 0.05 * g, rtol=0, atol=1e-15)
        self.assertAlmostEqual(result.update_norm, 0.05 * np.linalg.norm(g), places=12)
        self.assertEqual(result.kappa, 0.0)

    def test_solvers_agree_with_dense_solve(self):
        grads = self.model.per_example_grad_matrix(self.batch)
        g = self.model.grad(self.batch)
        d = self.arch.param_count
        cfg = NgdConfig(learning_rate=1.0, alpha=1e-2, cg_tol=1e-12)
        kappa = optimizers.smoothing_kappa(np.sum(grads ** 2) / len(self.batch), 1e-2, 1e-10, d)
        expected = np.linalg.solve(grads.T @ grads / len(self.batch) + kappa * np.eye(d), g)
        for solver in ("conjugate_gradient", "dense_inverse", "woodbury"):
            result = optimizers.ngd_step(self.model, self.batch, cfg.replace(solver=solver))
            u = self.model.params - result.new_params
            self.assertLess(np.linalg.norm(u - expected) / np.linalg.norm(expected), 1e-8, msg=solver)
            self.assertAlmostEqual(result.kappa, kappa, delta=1e-12 * kappa)

    def test_cg_step_reports_iterations(self):
        result = optimizers.ngd_step(self.model, self.batch, NgdConfig())
        self.assertGreater(result.cg_iterations, 0)
        self.assertLessEqual(result.residual, 1e-10)

    def test_large_alpha_reduces_to_sgd(self):
        d = self.arch.param_count
        g = self.model.grad(self.batch)
        grads = self.model.per_example_grad_matrix(self.batch)
        fisher = grads.T @ grads / len(self.batch)
        lambda_max = np.linalg.eigvalsh(fisher)[-1]
        for alpha in (1e6, 1e8, 1e10):
            kappa = optimizers.smoothing_kappa(np.trace(fisher), alpha, 1e-10, d)
            # learning_rate = kappa makes the update kappa * u, of the size of g
            cfg = NgdConfig(learning_rate=kappa, alpha=alpha)
            result = optimizers.ngd_step(self.model, self.batch, cfg)
            self.assertAlmostEqual(result.kappa, kappa, delta=1e-12 * kappa)
            err = np.linalg.norm(self.model.params - result.new_params - g) / np.linalg.norm(g)
            bound = lambda_max / kappa
            self.assertLessEqual(bound, d / alpha)
            self.assertLess(err, bound + 1e-8, msg=f"alpha={alpha}")
            if d / alpha <= 1e-6:
                self.assertLess(err, 1e-6, msg=f"alpha={alpha}")

    def test_cg_failure_propagates(self):
        cfg = NgdConfig(cg_max_iters=1, cg_tol=1e-14, alpha=1e-6)
        with self.assertRaises(SolverError):
            optimizers.ngd_step(self.model, self.batch, cfg)

    def test_dense_solver_dimension_limit(self):
        arch = tiny_architecture(hidden=(32,), input_dim=64, classes=2)
        self.assertGreater(arch.param_count, 2000)
        model = MlpModel.initialize(arch, seed=0)
        with self.assertRaises(ConfigurationError):
            optimizers.ngd_step(model, random_batch(4, 64, 2), NgdConfig(solver="dense_inverse"))

    def test_step_dispatch(self):
        sgd = optimizers.step(self.model, self.batch, SgdConfig())
        ngd = optimizers.step(self.model, self.batch, NgdConfig())
        self.assertEqual(sgd.kappa, 0.0)
        self.assertGreater(ngd.kappa, 0.0)


if __name__ == '__main__':
    unittest.main()

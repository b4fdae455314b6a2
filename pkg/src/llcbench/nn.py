#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from . import utils
from .base import ConfigBase, Field
from .exceptions import ConfigurationError


__all__ = [
    "ParamVector",
    "MlpArchitecture",
    "Batch",
    "MlpModel",
    "as_param_vector",
    "forward",
    "nll_loss",
    "grad",
    "per_example_grads",
    "hvp",
    "fisher_vector_product",
    "fisher_trace"
]

logger = logging.getLogger(__name__)

ParamVector = np.ndarray
"""A flat float64 vector of length `MlpArchitecture.param_count` (parameters, tangents, gradients)."""


class MlpArchitecture(ConfigBase):
    """Fully connected classifier layout: `input_dim -> hidden_layers... -> output_classes`."""

    input_dim = Field(None, doc="Number of input features. `None` is resolved from the dataset by the harness.")
    hidden_layers = Field(factory=lambda: [64], doc="Widths of the hidden layers.")
    output_classes = Field(10, doc="Number of classes (>= 2).")
    activation = Field(utils.DEFAULT_ACTIVATION, doc="Hidden activation, `relu` or `tanh`.")

    def validate(self) -> MlpArchitecture:
        utils.check_count(self.input_dim, "input_dim")
        if not isinstance(self.hidden_layers, (list, tuple)):
            raise ConfigurationError(f"Field \"hidden_layers\" must be a list of counts, got {self.hidden_layers!r}.")
        for i, width in enumerate(self.hidden_layers):
            utils.check_count(width, f"hidden_layers[{i}]")
        utils.check_count(self.output_classes, "output_classes", minimum=2)
        utils.check_choice(self.activation, "activation", utils.ACTIVATIONS)
        return self

    @property
    def layer_sizes(self) -> List[int]:
        """
        Returns
        -------
        List[int] : `[input_dim, *hidden_layers, output_classes]`.
        """
        return [int(self.input_dim), *[int(_) for _ in self.hidden_layers], int(self.output_classes)]

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        """
        Returns
        -------
        List[Tuple[int, int]] : The `(fan_in, fan_out)` of every layer.
        """
        sizes = self.layer_sizes
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def param_count(self) -> int:
        """
        Returns
        -------
        int : The sum over layers of `(fan_in + 1) * fan_out` (weights and biases).
        """
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.shapes)

    def describe(self) -> str:
        """
        Returns
        -------
        str : A short tag such as `"1x64-relu"`.
        """
        hidden = self.hidden_layers
        if hidden and len(set(hidden)) == 1:
            body = f"{len(hidden)}x{hidden[0]}"
        else:
            body = "-".join(str(_) for _ in hidden) or "linear"
        return f"{body}-{self.activation}"


def as_param_vector(values: Sequence[float], architecture: MlpArchitecture = None) -> ParamVector:
    """
    Convert to a contiguous float64 parameter vector and check it.

    Parameters
    ----------
    values : Sequence[float]
        The raw values.
    architecture : MlpArchitecture
        If given, the length must equal `architecture.param_count`.

    Returns
    -------
    ParamVector
    """
    w = np.array(values, dtype=np.float64).ravel()
    if architecture is not None and w.size != architecture.param_count:
        raise ConfigurationError(
            f"Parameter vector has length {w.size}, the architecture needs {architecture.param_count}."
        )
    utils.check_finite(w, "parameter")
    return w


class Batch(object):
    """
    Inputs (`m x input_dim`, float64) with their class labels (`m`, int64).
    """

    def __init__(self, inputs: np.ndarray, labels: np.ndarray) -> None:
        self.inputs = np.ascontiguousarray(np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
        self.labels = np.ascontiguousarray(np.asarray(labels, dtype=np.int64).ravel())
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError(
                f"Batch has {self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels."
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: m={len(self)}, input_dim={self.inputs.shape[1]}"

    @property
    def size(self) -> int:
        return len(self)

    def subset(self, indices: Sequence[int]) -> Batch:
        """
        Parameters
        ----------
        indices : Sequence[int]
            Row indices.

        Returns
        -------
        Batch : The selected rows, in the given order.
        """
        indices = np.asarray(indices, dtype=np.int64)
        return Batch(self.inputs[indices], self.labels[indices])

    @classmethod
    def concat(cls, *batches: Batch) -> Batch:
        return cls(
            np.concatenate([_.inputs for _ in batches], axis=0),
            np.concatenate([_.labels for _ in batches], axis=0)
        )

    def check(self, architecture: MlpArchitecture) -> None:
        """
        Check the batch against an architecture.

        Raises
        ------
        llcbench.exceptions.ConfigurationError
            On empty batches, a wrong input width or labels outside `[0, output_classes)`.
        """
        if len(self) < 1:
            raise ConfigurationError("Batch must hold at least one example.")
        if self.inputs.shape[1] != architecture.input_dim:
            raise ConfigurationError(
                f"Batch input width {self.inputs.shape[1]} does not match input_dim {architecture.input_dim}."
            )
        if self.labels.min() < 0 or self.labels.max() >= architecture.output_classes:
            raise ConfigurationError(
                f"Batch labels must lie in [0, {architecture.output_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]."
            )


class _Trace(object):
    """Forward-pass intermediates kept for the reverse pass."""

    __slots__ = ("acts", "pre", "log_probs")

    def __init__(self, acts: List[np.ndarray], pre: List[np.ndarray], log_probs: np.ndarray) -> None:
        # acts[l] is the input of layer l, pre[l] its hidden pre-activation (output layer excluded)
        self.acts = acts
        self.pre = pre
        self.log_probs = log_probs


class MlpModel(object):
    """
    A feed-forward classifier: an architecture together with a flat parameter vector.

    Instances are immutable in practice: every method is a pure function of `(params, batch)` and optimizers return
    new models through `with_params`.
    """

    def __init__(self, architecture: MlpArchitecture, params: Optional[Sequence[float]] = None) -> None:
        """

        Parameters
        ----------
        architecture : MlpArchitecture
            The validated layout.
        params : Optional[Sequence[float]]
            The parameters. Default `None`, i.e. all zeros.
        """
        self.architecture = MlpArchitecture.coerce(architecture).validate()
        d = self.architecture.param_count
        self.params = np.zeros(d, dtype=np.float64) if params is None else as_param_vector(params, self.architecture)
        self.params.flags.writeable = False

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: {self.architecture.describe()} (d={self.param_count})"

    @classmethod
    def initialize(cls, architecture: MlpArchitecture, seed: int) -> MlpModel:
        """
        Uniform initialization in `+-sqrt(6 / (fan_in + fan_out))` per layer, zero biases.

        Parameters
        ----------
        architecture : MlpArchitecture
            The layout.
        seed : int
            The RNG seed.

        Returns
        -------
        MlpModel
        """
        architecture = MlpArchitecture.coerce(architecture).validate()
        rng = utils.make_rng(seed)
        chunks = []
        for fan_in, fan_out in architecture.shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(architecture, np.concatenate(chunks))

    @property
    def param_count(self) -> int:
        return self.architecture.param_count

    def with_params(self, params: Sequence[float]) -> MlpModel:
        """
        Returns
        -------
        MlpModel : A model with the same architecture and the given parameters.
        """
        return MlpModel(self.architecture, params)

    def unpack(self, vector: Sequence[float] = None) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        Split a flat vector into per-layer `(W, b)` views; `W` has shape `(fan_in, fan_out)` and is stored row-major
        before `b`.

        Parameters
        ----------
        vector : Sequence[float]
            A parameter or tangent vector. Default `None`, i.e. the model's parameters.

        Returns
        -------
        List[Tuple[np.ndarray, np.ndarray]]
        """
        vector = self.params if vector is None else np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.param_count,):
            raise ConfigurationError(f"Vector has shape {vector.shape}, expected ({self.param_count},).")
        layers, offset = [], 0
        for fan_in, fan_out in self.architecture.shapes:
            w = vector[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = vector[offset:offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers

    def _activation(self, z: np.ndarray) -> np.ndarray:
        if self.architecture.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activation_d1(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.architecture.activation == "tanh":
            return 1.0 - a * a
        return (z > 0.0).astype(np.float64)

    def _activation_d2(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.architecture.activation == "tanh":
            return -2.0 * a * (1.0 - a * a)
        return np.zeros_like(z)

    def _forward(self, batch: Batch) -> _Trace:
        batch.check(self.architecture)
        layers = self.unpack()
        acts, pre = [batch.inputs], []
        a = batch.inputs
        for w, b in layers[:-1]:
            z = a @ w + b
            a = self._activation(z)
            pre.append(z)
            acts.append(a)
        w, b = layers[-1]
        logits = a @ w + b
        return _Trace(acts, pre, log_softmax(logits, axis=1))

    def _output_delta(self, trace: _Trace, batch: Batch) -> np.ndarray:
        # d(-log p_y)/d logits for every row
        delta = np.exp(trace.log_probs)
        delta[np.arange(len(batch)), batch.labels] -= 1.0
        return delta

    def forward(self, batch: Batch) -> np.ndarray:
        """
        Log-probabilities of every class.

        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        np.ndarray : An `m x output_classes` matrix whose rows are log-softmax outputs.
        """
        return self._forward(batch).log_probs

    def nll_loss(self, batch: Batch) -> float:
        """
        Average negative log-likelihood `-(1/m) sum_i log p(y_i | x_i, w)`.

        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        float
        """
        log_probs = self.forward(batch)
        loss = -float(np.mean(log_probs[np.arange(len(batch)), batch.labels]))
        utils.check_finite(loss, "loss")
        return max(loss, 0.0)

    def loss_and_grad(self, batch: Batch) -> Tuple[float, ParamVector]:
        """
        The loss together with its gradient, sharing one forward pass.

        Returns
        -------
        Tuple[float, ParamVector]
        """
        trace = self._forward(batch)
        m = len(batch)
        loss = max(-float(np.mean(trace.log_probs[np.arange(m), batch.labels])), 0.0)
        delta = self._output_delta(trace, batch) / m
        layers = self.unpack()
        chunks = []
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            a_in = trace.acts[idx]
            chunks.append((a_in.T @ delta).ravel())
            chunks.append(delta.sum(axis=0))
            if idx > 0:
                delta = (delta @ w.T) * self._activation_d1(trace.pre[idx - 1], trace.acts[idx])
        g = self._pack_reversed(chunks)
        utils.check_finite(g, "gradient")
        return loss, g

    def grad(self, batch: Batch) -> ParamVector:
        """
        The gradient of `nll_loss` by reverse-mode accumulation.

        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        ParamVector
        """
        return self.loss_and_grad(batch)[1]

    def _pack_reversed(self, chunks: List[np.ndarray]) -> np.ndarray:
        # chunks arrive as [W_L, b_L, W_{L-1}, b_{L-1}, ...]
        ordered = []
        for i in range(len(chunks) - 2, -1, -2):
            ordered.append(chunks[i])
            ordered.append(chunks[i + 1])
        return np.concatenate(ordered)

    def per_example_grad_matrix(self, batch: Batch) -> np.ndarray:
        """
        The gradients of the single-example losses stacked as rows.

        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        np.ndarray : An `m x d` matrix whose row `i` is the gradient of `-log p(y_i | x_i, w)`.
        """
        trace = self._forward(batch)
        m = len(batch)
        delta = self._output_delta(trace, batch)
        layers = self.unpack()
        blocks = []
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            a_in = trace.acts[idx]
            blocks.append(delta)
            blocks.append(np.einsum("mi,mj->mij", a_in, delta).reshape(m, -1))
            if idx > 0:
                delta = (delta @ w.T) * self._activation_d1(trace.pre[idx - 1], trace.acts[idx])
        # blocks are [b_L, W_L, b_{L-1}, W_{L-1}, ...]
        out = np.concatenate(blocks[::-1], axis=1)
        utils.check_finite(out, "per-example gradient")
        return out

    def per_example_grads(self, batch: Batch) -> List[ParamVector]:
        """
        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        List[ParamVector] : Element `i` is the gradient of `-log p(y_i | x_i, w)`.
        """
        return list(self.per_example_grad_matrix(batch))

    def hvp(self, batch: Batch, v: Sequence[float]) -> ParamVector:
        """
        Hessian-vector product `H v` of `nll_loss` by forward-over-reverse differentiation: the directional derivative
        of the gradient along `v`, never materializing `H`.

        Parameters
        ----------
        batch : Batch
            The examples.
        v : Sequence[float]
            The direction, of length `d`.

        Returns
        -------
        ParamVector

        Raises
        ------
        llcbench.exceptions.NumericError
            With the offending coordinate if the product is not finite.
        """
        v = np.asarray(v, dtype=np.float64)
        layers = self.unpack()
        tangents = self.unpack(v)
        trace = self._forward(batch)
        m = len(batch)
        n_layers = len(layers)

        # forward tangent pass
        r_pre = []
        r_a = np.zeros_like(batch.inputs)
        for idx in range(n_layers):
            w, _ = layers[idx]
            vw, vb = tangents[idx]
            r_z = r_a @ w + trace.acts[idx] @ vw + vb
            if idx < n_layers - 1:
                r_pre.append(r_z)
                r_a = self._activation_d1(trace.pre[idx], trace.acts[idx + 1]) * r_z
            else:
                r_logits = r_z

        p = np.exp(trace.log_probs)
        r_p = p * (r_logits - np.sum(p * r_logits, axis=1, keepdims=True))
        delta = self._output_delta(trace, batch) / m
        r_delta = r_p / m

        # reverse pass with tangents
        chunks = []
        r_acts = [np.zeros_like(batch.inputs)] + [
            self._activation_d1(trace.pre[i], trace.acts[i + 1]) * r_pre[i] for i in range(n_layers - 1)
        ]
        for idx in range(n_layers - 1, -1, -1):
            w, _ = layers[idx]
            vw, _ = tangents[idx]
            a_in = trace.acts[idx]
            chunks.append((r_acts[idx].T @ delta + a_in.T @ r_delta).ravel())
            chunks.append(r_delta.sum(axis=0))
            if idx > 0:
                z, a = trace.pre[idx - 1], trace.acts[idx]
                back = delta @ w.T
                r_back = r_delta @ w.T + delta @ vw.T
                d1 = self._activation_d1(z, a)
                r_delta = r_back * d1 + back * self._activation_d2(z, a) * r_pre[idx - 1]
                delta = back * d1
        out = self._pack_reversed(chunks)
        utils.check_finite(out, "Hessian-vector product")
        return out

    def fisher_vector_product(self, batch: Batch, v: Sequence[float]) -> ParamVector:
        """
        Empirical Fisher-vector product `(1/m) sum_i (g_i . v) g_i`.

        Parameters
        ----------
        batch : Batch
            The examples.
        v : Sequence[float]
            The vector, of length `d`.

        Returns
        -------
        ParamVector
        """
        grads = self.per_example_grad_matrix(batch)
        return grads.T @ (grads @ np.asarray(v, dtype=np.float64)) / len(batch)

    def fisher_trace(self, batch: Batch) -> float:
        """
        Trace of the empirical Fisher, `(1/m) sum_i ||g_i||^2`.

        Since each per-example weight gradient is an outer product, `||a delta^T||^2 = ||a||^2 ||delta||^2` and the
        trace is computed without forming the gradients.

        Parameters
        ----------
        batch : Batch
            The examples.

        Returns
        -------
        float
        """
        trace = self._forward(batch)
        delta = self._output_delta(trace, batch)
        layers = self.unpack()
        total = np.zeros(len(batch))
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            a_in = trace.acts[idx]
            total += (np.sum(a_in * a_in, axis=1) + 1.0) * np.sum(delta * delta, axis=1)
            if idx > 0:
                delta = (delta @ w.T) * self._activation_d1(trace.pre[idx - 1], trace.acts[idx])
        return float(np.mean(total))


def forward(model: MlpModel, batch: Batch) -> np.ndarray:
    """See `MlpModel.forward`."""
    return model.forward(batch)


def nll_loss(model: MlpModel, batch: Batch) -> float:
    """See `MlpModel.nll_loss`."""
    return model.nll_loss(batch)


def grad(model: MlpModel, batch: Batch) -> ParamVector:
    """See `MlpModel.grad`."""
    return model.grad(batch)


def per_example_grads(model: MlpModel, batch: Batch) -> List[ParamVector]:
    """See `MlpModel.per_example_grads`."""
    return model.per_example_grads(batch)


def hvp(model: MlpModel, batch: Batch, v: Sequence[float]) -> ParamVector:
    """See `MlpModel.hvp`."""
    return model.hvp(batch, v)


def fisher_vector_product(model: MlpModel, batch: Batch, v: Sequence[float]) -> ParamVector:
    """See `MlpModel.fisher_vector_product`."""
    return model.fisher_vector_product(batch, v)


def fisher_trace(model: MlpModel, batch: Batch) -> float:
    """See `MlpModel.fisher_trace`."""
    return model.fisher_trace(batch)

"""Fully connected autoencoder over node attributes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import NumericFailure, make_rng
from .optim import AdamState, adam_step
from .weights import load_weights, save_weights

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (500, 500, 2000)


def layer_dims(d0: int, n_z: int, depth: int, hidden=DEFAULT_HIDDEN) -> list[int]:
    """Width list ``[d0, ..., n_z]`` with ``depth`` layers.

    Depth ``d`` keeps the last ``d - 1`` entries of ``hidden``; when more are
    needed the first hidden width is repeated in front.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    hidden = list(hidden)
    need = depth - 1
    if need > len(hidden):
        hidden = [hidden[0]] * (need - len(hidden)) + hidden if hidden else [n_z] * need
    kept = hidden[len(hidden) - need:] if need else []
    return [int(d0), *map(int, kept), int(n_z)]


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AeParams:
    """Encoder/decoder weights keyed ``enc.{l}.W``, ``enc.{l}.b``, ``dec.{l}.W``, ``dec.{l}.b``.

    Values may be arrays or tape variables; the forward code does not care.
    """

    dims: list[int]
    tensors: dict

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @classmethod
    def init(cls, dims, rng) -> "AeParams":
        dims = [int(d) for d in dims]
        t = {}
        for l in range(len(dims) - 1):
            t[f"enc.{l}.W"] = uniform_init(rng, dims[l], (dims[l], dims[l + 1]))
            t[f"enc.{l}.b"] = np.zeros((1, dims[l + 1]))
        rev = dims[::-1]
        for l in range(len(rev) - 1):
            t[f"dec.{l}.W"] = uniform_init(rng, rev[l], (rev[l], rev[l + 1]))
            t[f"dec.{l}.b"] = np.zeros((1, rev[l + 1]))
        return cls(dims, t)

    def replace(self, tensors) -> "AeParams":
        return AeParams(list(self.dims), tensors)

    def copy(self) -> "AeParams":
        return self.replace({k: np.array(v, copy=True) for k, v in self.tensors.items()})

    def save(self, path):
        save_weights(path, self.tensors, {"kind": "ae", "dims": self.dims})

    @classmethod
    def load(cls, path) -> "AeParams":
        meta, tensors = load_weights(path)
        if meta.get("kind") != "ae":
            raise ValueError(f"{path}: not an autoencoder weight file")
        dims = [int(v) for v in meta["dims"].split()]
        return cls(dims, tensors)


def ae_forward(params: AeParams, x, slope=nc.DEFAULT_SLOPE):
    """Return ``(hidden, x_hat)``; ``hidden[l]`` is the output of encoder layer ``l + 1``."""
    t = params.tensors
    if nc.value_of(x).shape[1] != params.dims[0]:
        raise nc.DimensionError(f"input width {nc.value_of(x).shape[1]} != {params.dims[0]}")
    hidden = []
    h = x
    for l in range(params.depth):
        h = nc.leaky_relu(nc.add_row(nc.matmul(h, t[f"enc.{l}.W"]), t[f"enc.{l}.b"]), slope)
        hidden.append(h)
    for l in range(params.depth):
        h = nc.leaky_relu(nc.add_row(nc.matmul(h, t[f"dec.{l}.W"]), t[f"dec.{l}.b"]), slope)
    return hidden, h


def ae_recon_loss(x, x_hat):
    """(1 / 2N) * sum_i ||x_i - x_hat_i||^2."""
    n = nc.value_of(x).shape[0]
    return nc.scale(nc.sum_squares(nc.sub(x, x_hat)), 1.0 / (2.0 * n))


def pretrain_ae(x: np.ndarray, params: AeParams, lr=1e-3, epochs=50, seed=0,
                batch_size: int | None = None, slope=nc.DEFAULT_SLOPE):
    """Adam on the reconstruction loss; returns ``(params, history)``.

    ``history[e]`` is the loss measured at the start of epoch ``e``; one extra
    entry holds the loss after the final update.  Full batch unless
    ``batch_size`` is given.
    """
    x = np.asarray(x, dtype=np.float64)
    params = params.copy()
    state = AdamState()
    rng = make_rng(seed, 1)
    n = x.shape[0]
    history = []
    for epoch in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            perm = rng.permutation(n)
            batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
        epoch_loss = 0.0
        for idx in batches:
            tape = nc.Tape()
            pv = {k: tape.param(v) for k, v in params.tensors.items()}
            _, x_hat = ae_forward(params.replace(pv), x[idx], slope)
            loss = ae_recon_loss(x[idx], x_hat)
            val = nc.scalar(loss)
            if not np.isfinite(val):
                raise NumericFailure(f"pretraining loss became non-finite at epoch {epoch}")
            tape.backward(loss)
            adam_step(params.tensors, {k: v.grad for k, v in pv.items()}, state, lr)
            epoch_loss += val * len(idx) / n
        history.append(epoch_loss)
        log.debug("pretrain epoch %d loss %.6g", epoch, epoch_loss)
    if epochs:
        _, x_hat = ae_forward(params, x, slope)
        history.append(nc.scalar(ae_recon_loss(x, x_hat)))
    return params, history

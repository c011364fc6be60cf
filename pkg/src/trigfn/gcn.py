"""Graph-convolution encoder/decoder branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .autoencoder import uniform_init
from .weights import load_weights, save_weights


@dataclass
class GcnParams:
    """Bias-free weights ``enc.{l}.W`` / ``dec.{l}.W`` mirroring the AE widths."""

    dims: list[int]
    tensors: dict
    residual: bool = False

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @classmethod
    def init(cls, dims, rng, residual=False) -> "GcnParams":
        dims = [int(d) for d in dims]
        t = {}
        for l in range(len(dims) - 1):
            t[f"enc.{l}.W"] = uniform_init(rng, dims[l], (dims[l], dims[l + 1]))
        rev = dims[::-1]
        for l in range(len(rev) - 1):
            t[f"dec.{l}.W"] = uniform_init(rng, rev[l], (rev[l], rev[l + 1]))
        return cls(dims, t, residual)

    def replace(self, tensors) -> "GcnParams":
        return GcnParams(list(self.dims), tensors, self.residual)

    def copy(self) -> "GcnParams":
        return self.replace({k: np.array(v, copy=True) for k, v in self.tensors.items()})

    def save(self, path):
        save_weights(path, self.tensors, {"kind": "gcn", "dims": self.dims, "residual": int(self.residual)})

    @classmethod
    def load(cls, path) -> "GcnParams":
        meta, tensors = load_weights(path)
        if meta.get("kind") != "gcn":
            raise ValueError(f"{path}: not a GCN weight file")
        return cls([int(v) for v in meta["dims"].split()], tensors, bool(int(meta.get("residual", "0"))))


def gcn_layer(norm_adj, h, w, slope=nc.DEFAULT_SLOPE, residual=None):
    """LeakyReLU(A_norm h w [+ residual]); the residual joins before the activation."""
    n = norm_adj.shape[0]
    if norm_adj.shape != (n, n) or nc.value_of(h).shape[0] != n:
        raise nc.DimensionError(f"gcn_layer: operator {norm_adj.shape} vs features {nc.value_of(h).shape}")
    pre = nc.spmm(norm_adj, nc.matmul(h, w))
    if residual is not None:
        pre = nc.add(pre, residual)
    return nc.leaky_relu(pre, slope)


def mix(eps, h, z):
    """eps * h + (1 - eps) * z, skipping the arithmetic at the endpoints."""
    if eps == 0.0:
        return z
    if eps == 1.0:
        return h
    return nc.add(nc.scale(h, eps), nc.scale(z, 1.0 - eps))


def check_eps(eps):
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")


def residual_input(inp, w, enabled):
    # the identity shortcut is only defined when the layer keeps its width
    if not enabled:
        return None
    wv = nc.value_of(w)
    return inp if wv.shape[0] == wv.shape[1] else None


def gcn_encode_fused(norm_adj, x, ae_hidden, params: GcnParams, eps, slope=nc.DEFAULT_SLOPE):
    """Encoder stack where layer l+1 reads eps*H^(l) + (1-eps)*Z^(l)."""
    check_eps(eps)
    t = params.tensors
    out = []
    z = x
    for l in range(params.depth):
        if l == 0:
            inp = x
        else:
            if nc.value_of(ae_hidden[l - 1]).shape != nc.value_of(z).shape:
                raise nc.DimensionError(f"AE hidden {l} width does not match GCN layer {l}")
            inp = mix(eps, ae_hidden[l - 1], z)
        w = t[f"enc.{l}.W"]
        z = gcn_layer(norm_adj, inp, w, slope, residual_input(inp, w, params.residual))
        out.append(z)
    return out


def gcn_decode(norm_adj, z, params: GcnParams, slope=nc.DEFAULT_SLOPE):
    if nc.value_of(z).shape[1] != params.dims[-1]:
        raise nc.DimensionError(f"decoder expects width {params.dims[-1]}, got {nc.value_of(z).shape[1]}")
    h = z
    for l in range(params.depth):
        h = gcn_layer(norm_adj, h, params.tensors[f"dec.{l}.W"], slope)
    return h

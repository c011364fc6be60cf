"""Graph-transformer branch: per-edge multi-head dot-product attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .autoencoder import uniform_init
from .gcn import check_eps, mix, residual_input
from .weights import load_weights, save_weights

ATTENTION_NORMS = ("softmax", "sigmoid")


@dataclass(frozen=True)
class EdgeIndex:
    """Directed message edges ``src[e] -> dst[e]`` over ``n`` nodes."""

    src: np.ndarray
    dst: np.ndarray
    n: int

    @classmethod
    def from_graph(cls, graph) -> "EdgeIndex":
        src, dst = graph.directed_edges()
        return cls(src, dst, graph.n_nodes)

    @classmethod
    def empty(cls, n) -> "EdgeIndex":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, n)


@dataclass
class GtParams:
    """Per layer ``{enc|dec}.{l}.h{k}.{Wq,Wk,Wv}`` (d_in x d_head) and ``{enc|dec}.{l}.Wskip`` (d_in x d_out)."""

    dims: list[int]
    tensors: dict
    heads: int = 1
    residual: bool = False

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @classmethod
    def init(cls, dims, rng, heads=1, residual=False) -> "GtParams":
        dims = [int(d) for d in dims]
        for d in dims[1:]:
            if d % heads:
                raise ValueError(f"layer width {d} is not divisible by {heads} heads")
        t = {}
        for part, ds in (("enc", dims), ("dec", dims[::-1])):
            for l in range(len(ds) - 1):
                d_in, d_out = ds[l], ds[l + 1]
                d_head = d_out // heads
                for k in range(heads):
                    for name in ("Wq", "Wk", "Wv"):
                        t[f"{part}.{l}.h{k}.{name}"] = uniform_init(rng, d_in, (d_in, d_head))
                t[f"{part}.{l}.Wskip"] = uniform_init(rng, d_in, (d_in, d_out))
        return cls(dims, t, heads, residual)

    def layer(self, part, l) -> dict:
        prefix = f"{part}.{l}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def replace(self, tensors) -> "GtParams":
        return GtParams(list(self.dims), tensors, self.heads, self.residual)

    def copy(self) -> "GtParams":
        return self.replace({k: np.array(v, copy=True) for k, v in self.tensors.items()})

    def save(self, path):
        save_weights(path, self.tensors, {"kind": "gt", "dims": self.dims, "heads": self.heads,
                                          "residual": int(self.residual)})

    @classmethod
    def load(cls, path) -> "GtParams":
        meta, tensors = load_weights(path)
        if meta.get("kind") != "gt":
            raise ValueError(f"{path}: not a graph-transformer weight file")
        return cls([int(v) for v in meta["dims"].split()], tensors, int(meta.get("heads", "1")),
                   bool(int(meta.get("residual", "0"))))


def attention_layer(edges: EdgeIndex, x, layer: dict, heads=1, norm="softmax"):
    """Pre-activation output and per-head attention weights of one layer.

    ``x'_i = Wskip x_i + concat_k sum_{j -> i} alpha^k_ij Wv^k x_j`` with
    ``alpha^k_ij`` the normalized score ``(Wq^k x_i).(Wk^k x_j) / sqrt(d_head)``
    over node i's in-neighbours.  Returns ``(out, alphas)``, ``alphas[k]``
    an (E, 1) column aligned with ``edges``.
    """
    if norm not in ATTENTION_NORMS:
        raise ValueError(f"attention_norm must be one of {ATTENTION_NORMS}")
    skip = nc.matmul(x, layer["Wskip"])
    if nc.value_of(x).shape[0] != edges.n:
        raise nc.DimensionError(f"{nc.value_of(x).shape[0]} rows for a {edges.n}-node graph")
    if edges.src.size == 0:
        return skip, [np.zeros((0, 1)) for _ in range(heads)]
    outs, alphas = [], []
    for k in range(heads):
        q = nc.matmul(x, layer[f"h{k}.Wq"])
        key = nc.matmul(x, layer[f"h{k}.Wk"])
        v = nc.matmul(x, layer[f"h{k}.Wv"])
        d_head = nc.value_of(q).shape[1]
        scores = nc.scale(nc.rowdot(nc.gather_rows(q, edges.dst), nc.gather_rows(key, edges.src)),
                          1.0 / np.sqrt(d_head))
        if norm == "softmax":
            alpha = nc.softmax_over_index_groups(scores, edges.dst, edges.n)
        else:
            alpha = nc.sigmoid(scores)
        msgs = nc.scale_rows(nc.gather_rows(v, edges.src), alpha)
        outs.append(nc.segment_sum(msgs, edges.dst, edges.n))
        alphas.append(nc.value_of(alpha))
    return nc.add(skip, nc.concat_cols(outs)), alphas


def gt_encode_fused(edges: EdgeIndex, x, ae_hidden, params: GtParams, eps, norm="softmax",
                    slope=nc.DEFAULT_SLOPE):
    check_eps(eps)
    out = []
    z = x
    for l in range(params.depth):
        if l == 0:
            inp = x
        else:
            if nc.value_of(ae_hidden[l - 1]).shape != nc.value_of(z).shape:
                raise nc.DimensionError(f"AE hidden {l} width does not match transformer layer {l}")
            inp = mix(eps, ae_hidden[l - 1], z)
        layer = params.layer("enc", l)
        pre, _ = attention_layer(edges, inp, layer, params.heads, norm)
        res = residual_input(inp, layer["Wskip"], params.residual)
        if res is not None:
            pre = nc.add(pre, res)
        z = nc.leaky_relu(pre, slope)
        out.append(z)
    return out


def gt_decode(edges: EdgeIndex, z, params: GtParams, norm="softmax", slope=nc.DEFAULT_SLOPE):
    if nc.value_of(z).shape[1] != params.dims[-1]:
        raise nc.DimensionError(f"decoder expects width {params.dims[-1]}, got {nc.value_of(z).shape[1]}")
    h = z
    for l in range(params.depth):
        pre, _ = attention_layer(edges, h, params.layer("dec", l), params.heads, norm)
        h = nc.leaky_relu(pre, slope)
    return h

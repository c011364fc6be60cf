"""Full three-branch forward pass and the composite training objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .autoencoder import DEFAULT_HIDDEN, AeParams, ae_forward, layer_dims
from .gcn import GcnParams, gcn_decode, gcn_encode_fused
from .graphio import Graph
from .numcore import NumericFailure
from .selfsup import kl_divergence, student_t_assign, target_distribution
from .transformer import ATTENTION_NORMS, EdgeIndex, GtParams, gt_decode, gt_encode_fused

RECON_BRANCHES = ("gcn", "transformer", "averaged")
AE_TARGETS = ("smoothed", "raw")
WEIGHT_SUM_TOL = 1e-9


@dataclass
class ModelConfig:
    n_z: int = 10
    depth: int = 4
    hidden: tuple = DEFAULT_HIDDEN
    eps: float = 0.5
    lam: float = 1 / 3
    theta: float = 1 / 3
    gamma: float = 1 / 3
    delta: float = 0.1
    alpha: float = 0.1
    beta: float = 0.1
    t: float = 1.0
    heads: int = 1
    residual: bool = False
    recon_branch: str = "gcn"
    ae_recon_target: str = "smoothed"
    attention_norm: str = "softmax"
    slope: float = nc.DEFAULT_SLOPE

    def __post_init__(self):
        if abs(self.lam + self.theta + self.gamma - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"lambda + theta + gamma must equal 1, got {self.lam + self.theta + self.gamma!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        for name in ("alpha", "beta", "delta", "lam", "theta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.t <= 0:
            raise ValueError("t must be positive")
        if self.depth < 1 or self.n_z < 1 or self.heads < 1:
            raise ValueError("depth, n_z and heads must be positive")
        if self.recon_branch not in RECON_BRANCHES:
            raise ValueError(f"recon_branch must be one of {RECON_BRANCHES}")
        if self.ae_recon_target not in AE_TARGETS:
            raise ValueError(f"ae_recon_target must be one of {AE_TARGETS}")
        if self.attention_norm not in ATTENTION_NORMS:
            raise ValueError(f"attention_norm must be one of {ATTENTION_NORMS}")

    def dims(self, d0: int) -> list[int]:
        return layer_dims(d0, self.n_z, self.depth, self.hidden)


@dataclass
class GraphContext:
    """Per-graph constants reused by every forward pass."""

    x: np.ndarray
    norm_adj: object
    edges: EdgeIndex
    smoothed: np.ndarray  # A_norm X
    adj_dense: np.ndarray

    @classmethod
    def of(cls, graph) -> "GraphContext":
        if isinstance(graph, GraphContext):
            return graph
        return cls(graph.features, graph.norm_adj, EdgeIndex.from_graph(graph),
                   graph.smoothed_features(), graph.dense_adj())

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class TriGfnParams:
    ae: AeParams
    gcn: GcnParams
    gt: GtParams
    centroids: object  # k x n_z array or Var

    @classmethod
    def init(cls, cfg: ModelConfig, d0: int, k: int, rng, ae: AeParams | None = None) -> "TriGfnParams":
        dims = cfg.dims(d0)
        if ae is None:
            ae = AeParams.init(dims, rng)
        elif ae.dims != dims:
            raise ValueError(f"autoencoder widths {ae.dims} do not match configured {dims}")
        gcn = GcnParams.init(dims, rng, cfg.residual)
        gt = GtParams.init(dims, rng, cfg.heads, cfg.residual)
        return cls(ae, gcn, gt, np.zeros((k, cfg.n_z)))

    def flat(self) -> dict:
        out = {f"ae.{k}": v for k, v in self.ae.tensors.items()}
        out.update({f"gcn.{k}": v for k, v in self.gcn.tensors.items()})
        out.update({f"gt.{k}": v for k, v in self.gt.tensors.items()})
        out["centroids"] = self.centroids
        return out

    def replace(self, flat: dict) -> "TriGfnParams":
        def pick(prefix):
            return {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}
        return TriGfnParams(self.ae.replace(pick("ae.")), self.gcn.replace(pick("gcn.")),
                            self.gt.replace(pick("gt.")), flat["centroids"])


@dataclass
class ForwardOutputs:
    hidden: list
    x_hat: object
    z_gcn: list
    z_t: list
    z_l: object
    z_hat_g: object
    a_hat: object
    q: object
    q_prime: object
    p: np.ndarray
    z_hat_gcn: object = None
    z_hat_t: object = None
    extras: dict = field(default_factory=dict)


def enhance(norm_adj, z_gcn, h, z_t, lam, theta, gamma):
    """A_norm (lam * Z_gcn + theta * H + gamma * Z_t)."""
    if abs(lam + theta + gamma - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"branch weights must sum to 1, got {lam + theta + gamma!r}")
    shapes = {nc.value_of(m).shape for m in (z_gcn, h, z_t)}
    if len(shapes) != 1:
        raise nc.DimensionError(f"enhance: branch shapes differ {sorted(shapes)}")
    mixed = nc.add(nc.add(nc.scale(z_gcn, lam), nc.scale(h, theta)), nc.scale(z_t, gamma))
    return nc.spmm(norm_adj, mixed)


def forward(graph, params: TriGfnParams, cfg: ModelConfig, target=None) -> ForwardOutputs:
    """One full pass.  ``target`` fixes P; by default it is derived from this pass's Q."""
    ctx = GraphContext.of(graph)
    hidden, x_hat = ae_forward(params.ae, ctx.x, cfg.slope)
    z_gcn = gcn_encode_fused(ctx.norm_adj, ctx.x, hidden, params.gcn, cfg.eps, cfg.slope)
    z_t = gt_encode_fused(ctx.edges, ctx.x, hidden, params.gt, cfg.eps, cfg.attention_norm, cfg.slope)
    z_l = enhance(ctx.norm_adj, z_gcn[-1], hidden[-1], z_t[-1], cfg.lam, cfg.theta, cfg.gamma)

    z_hat_gcn = z_hat_t = None
    if cfg.recon_branch in ("gcn", "averaged"):
        z_hat_gcn = gcn_decode(ctx.norm_adj, z_gcn[-1], params.gcn, cfg.slope)
    if cfg.recon_branch in ("transformer", "averaged"):
        z_hat_t = gt_decode(ctx.edges, z_t[-1], params.gt, cfg.attention_norm, cfg.slope)
    if cfg.recon_branch == "gcn":
        z_hat_g = z_hat_gcn
    elif cfg.recon_branch == "transformer":
        z_hat_g = z_hat_t
    else:
        z_hat_g = nc.scale(nc.add(z_hat_gcn, z_hat_t), 0.5)
    a_hat = nc.sigmoid(nc.matmul(z_hat_g, nc.transpose(z_hat_g)))

    q = student_t_assign(z_l, params.centroids, cfg.t)
    q_prime = student_t_assign(hidden[-1], params.centroids, cfg.t)
    p = target_distribution(q) if target is None else np.asarray(target, dtype=np.float64)
    return ForwardOutputs(hidden, x_hat, z_gcn, z_t, z_l, z_hat_g, a_hat, q, q_prime, p, z_hat_gcn, z_hat_t)


COMPONENTS = ("loss_gfn", "loss_ae", "loss_clu", "loss_con", "loss_w", "loss_e")


def objective(out: ForwardOutputs, graph, cfg: ModelConfig):
    """Return ``(L, components)``; ``L`` is a tape variable when ``out`` came from one."""
    ctx = GraphContext.of(graph)
    n = ctx.n
    loss_w = nc.scale(nc.sum_squares(nc.sub(out.z_hat_g, ctx.smoothed)), 1.0 / n)
    loss_e = nc.scale(nc.sum_squares(nc.sub(out.a_hat, ctx.adj_dense)), 1.0 / (n * n))
    loss_gfn = nc.add(loss_w, nc.scale(loss_e, cfg.delta))
    ae_target = ctx.smoothed if cfg.ae_recon_target == "smoothed" else ctx.x
    loss_ae = nc.scale(nc.sum_squares(nc.sub(out.x_hat, ae_target)), 1.0 / n)
    loss_clu = kl_divergence(out.p, out.q)
    loss_con = kl_divergence(out.q, out.q_prime)
    total = nc.add(nc.add(loss_gfn, loss_ae),
                   nc.add(nc.scale(loss_clu, cfg.alpha), nc.scale(loss_con, cfg.beta)))
    comps = {
        "loss_gfn": nc.scalar(loss_gfn),
        "loss_ae": nc.scalar(loss_ae),
        "loss_clu": nc.scalar(loss_clu),
        "loss_con": nc.scalar(loss_con),
        "loss_w": nc.scalar(loss_w),
        "loss_e": nc.scalar(loss_e),
    }
    # leaf terms first so the message names the actual source
    for name in ("loss_w", "loss_e", "loss_ae", "loss_clu", "loss_con", "loss_gfn"):
        if not np.isfinite(comps[name]):
            breakdown = ", ".join(f"{k}={v:.6g}" for k, v in comps.items())
            raise NumericFailure(f"objective component {name} is non-finite ({breakdown})")
    return total, comps

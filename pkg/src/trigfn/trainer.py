"""Joint training of the three branches with KL self-supervision."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .autoencoder import AeParams, ae_forward, pretrain_ae
from .config import TrainConfig
from .fusion import GraphContext, TriGfnParams, forward, objective
from .graphio import Graph, write_labels
from .metrics import KmeansResult, MetricsReport, evaluate_labels, kmeans
from .numcore import NumericFailure, make_rng
from .optim import AdamState, adam_step, step_decay_lr
from .selfsup import extract_labels
from .weights import save_weights

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "loss", "loss_gfn", "loss_ae", "loss_clu", "loss_con", "acc", "nmi", "ari", "f1")

# sub-stream ids under the run seed
_AE_INIT, _MODEL_INIT = 10, 11


@dataclass
class EpochLog:
    epoch: int
    loss: float
    loss_gfn: float
    loss_ae: float
    loss_clu: float
    loss_con: float
    acc: float | None = None
    nmi: float | None = None
    ari: float | None = None
    f1: float | None = None


@dataclass
class TrainResult:
    labels: np.ndarray
    history: list
    params: TriGfnParams
    kmeans: KmeansResult
    pretrain_history: list = field(default_factory=list)
    metrics: MetricsReport | None = None
    final_loss: float | None = None
    config: TrainConfig | None = None


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_decay == "step":
        return step_decay_lr(cfg.lr, epoch)
    return cfg.lr


def prepare_autoencoder(graph: Graph, cfg: TrainConfig, ae: AeParams | None = None):
    """Pretrained AE weights: given, loaded from ``paths.ae_weights``, or trained now."""
    dims = cfg.model().dims(graph.feat_dim)
    if ae is None and cfg.paths.ae_weights:
        ae = AeParams.load(cfg.paths.ae_weights)
    if ae is not None:
        if ae.dims != dims:
            raise ValueError(f"pretrained autoencoder widths {ae.dims} do not match configured {dims}")
        return ae.copy(), []
    init = AeParams.init(dims, make_rng(cfg.seed, _AE_INIT))
    return pretrain_ae(graph.features, init, lr=cfg.pretrain.lr, epochs=cfg.pretrain.epochs,
                       seed=cfg.seed, batch_size=cfg.pretrain.batch_size, slope=cfg.leaky_slope)


def train(graph: Graph, cfg: TrainConfig, ae: AeParams | None = None) -> TrainResult:
    model_cfg = cfg.model()
    k = graph.n_clusters
    ctx = GraphContext.of(graph)

    ae, pre_hist = prepare_autoencoder(graph, cfg, ae)
    params = TriGfnParams.init(model_cfg, graph.feat_dim, k, make_rng(cfg.seed, _MODEL_INIT), ae=ae)

    hidden, _ = ae_forward(params.ae, ctx.x, model_cfg.slope)
    km = kmeans(hidden[-1], k, restarts=cfg.kmeans_restarts, seed=cfg.seed)
    params.centroids = km.centroids.copy()

    flat = params.flat()
    state = AdamState()
    history = []
    target = None
    for epoch in range(cfg.epochs):
        tape = nc.Tape()
        pv = {name: tape.param(v) for name, v in flat.items()}
        if epoch % cfg.target_update_interval == 0:
            target = None
        out = forward(ctx, params.replace(pv), model_cfg, target=target)
        target = out.p
        try:
            loss, comps = objective(out, ctx, model_cfg)
        except NumericFailure as exc:
            raise NumericFailure(f"epoch {epoch}: {exc}") from None
        total = nc.scalar(loss)
        if not np.isfinite(total):
            raise NumericFailure(f"epoch {epoch}: total loss non-finite; components {comps}")
        row = EpochLog(epoch, total, comps["loss_gfn"], comps["loss_ae"], comps["loss_clu"], comps["loss_con"])
        if graph.labels is not None:
            q_now = out.q_prime if cfg.label_source == "q_prime" else out.q
            m = evaluate_labels(extract_labels(q_now), graph.labels)
            row.acc, row.nmi, row.ari, row.f1 = m.acc, m.nmi, m.ari, m.f1
        history.append(row)
        log.info("epoch %d loss %.6f acc %s", epoch, total, row.acc)

        tape.backward(loss)
        try:
            adam_step(flat, {name: v.grad for name, v in pv.items()}, state, learning_rate(cfg, epoch))
        except FloatingPointError as exc:
            raise NumericFailure(f"epoch {epoch}: {exc}") from None

    out = forward(ctx, params, model_cfg)
    final_loss, _ = objective(out, ctx, model_cfg)
    if cfg.epochs == 0:
        labels = km.assignments.copy()
    else:
        labels = extract_labels(out.q_prime if cfg.label_source == "q_prime" else out.q)
    metrics = evaluate_labels(labels, graph.labels) if graph.labels is not None else None
    return TrainResult(labels, history, params, km, pre_hist, metrics, nc.scalar(final_loss), cfg)


# ----------------------------------------------------------------------------
# artifacts


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            d = asdict(row)
            w.writerow([_fmt(d[f]) for f in HISTORY_FIELDS])


def read_history(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(fh)]


def save_outputs(result: TrainResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "history": out / "history.csv",
        "labels": out / "labels.txt",
        "summary": out / "summary.json",
        "ae": out / "ae_weights.txt",
        "gcn": out / "gcn_weights.txt",
        "gt": out / "gt_weights.txt",
        "centroids": out / "centroids.txt",
    }
    write_history(paths["history"], result.history)
    write_labels(paths["labels"], result.labels)
    result.params.ae.save(paths["ae"])
    result.params.gcn.save(paths["gcn"])
    result.params.gt.save(paths["gt"])
    save_weights(paths["centroids"], {"centroids": np.asarray(result.params.centroids)},
                 {"kind": "centroids", "t": result.config.t if result.config else 1.0})
    summary = {
        "metrics": result.metrics.as_dict() if result.metrics else None,
        "final_loss": result.final_loss,
        "epochs_run": len(result.history),
        "kmeans_wcss": result.kmeans.wcss,
        "config": result.config.to_dict() if result.config else None,
    }
    paths["summary"].write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return paths

"""Finite-difference audit of every registered op and of the full objective."""

from __future__ import annotations

import zlib

import numpy as np

from . import numcore as nc
from .fusion import ModelConfig, TriGfnParams, forward, objective
from .graphio import Graph
from .numcore import FDReport, make_rng

# ring plus one chord
DEMO_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 3)]

OBJECTIVE_VARIANTS = {
    "objective": dict(depth=2, hidden=(5,), recon_branch="averaged"),
    "objective[gcn-recon,raw-ae]": dict(depth=2, hidden=(5,), recon_branch="gcn", ae_recon_target="raw"),
    "objective[residual,sigmoid]": dict(depth=3, hidden=(4, 4), recon_branch="transformer",
                                        residual=True, attention_norm="sigmoid"),
}


def _sample_away_from_kinks(op, rng, step):
    for _ in range(100):
        inputs, attrs = op.sample(rng)
        if op.kink is None or op.kink(*inputs, **attrs) > max(1e-7, 10 * step):
            return inputs, attrs
    raise nc.GradientCheckError(f"{op.name}: could not draw inputs away from kinks")


def check_op(op, samples=20, step=1e-5, tol=1e-4, seed=0) -> FDReport:
    rng = make_rng(seed, zlib.crc32(op.name.encode()))
    worst = FDReport(op.name, 0.0, True)
    for _ in range(samples):
        inputs, attrs = _sample_away_from_kinks(op, rng, step)
        rep = nc.finite_diff_check(op, inputs, step=step, tol=tol, attrs=attrs, rng=rng)
        if not rep.passed or rep.max_rel_err > worst.max_rel_err:
            worst = rep
        if not rep.passed:
            break
    return worst


def demo_instance(seed=0, n_z=3, k=2, d0=4, **cfg_kw):
    """Six-node, two-cluster problem with random parameters and centroids."""
    rng = make_rng(seed)
    x = rng.normal(size=(6, d0))
    graph = Graph(features=x, edges=np.array(DEMO_EDGES), n_clusters=k)
    cfg = ModelConfig(n_z=n_z, eps=0.5, lam=0.5, theta=0.3, gamma=0.2, alpha=0.7, beta=0.4, delta=0.3, **cfg_kw)
    params = TriGfnParams.init(cfg, d0, k, rng)
    for key, val in params.ae.tensors.items():
        if key.endswith(".b"):
            params.ae.tensors[key] = rng.normal(scale=0.3, size=val.shape)
    params.centroids = rng.normal(size=(k, n_z))
    return graph, cfg, params


KINK_MARGIN = 1e-3


def _objective_at(graph, params, cfg, target, flat):
    out = forward(graph, params.replace(flat), cfg, target=target)
    return objective(out, graph, cfg)[0]


def smooth_demo_instance(seed=0, margin=KINK_MARGIN, attempts=50, **cfg_kw):
    """First demo instance (from ``seed`` upward) whose activations all sit ``margin`` away from a kink."""
    for offset in range(attempts):
        graph, cfg, params = demo_instance(seed + offset, **cfg_kw)
        target = forward(graph, params, cfg).p
        tape = nc.Tape()
        flat = {k: tape.param(v) for k, v in params.flat().items()}
        _objective_at(graph, params, cfg, target, flat)
        if nc.kink_distance(tape) > margin:
            return graph, cfg, params, target
    raise nc.GradientCheckError(f"no demo instance within {attempts} draws avoids the kinks")


def check_objective(name="objective", step=1e-5, tol=1e-4, seed=0, **cfg_kw) -> FDReport:
    graph, cfg, params, target = smooth_demo_instance(seed, **cfg_kw)  # P held fixed, as in training

    def fn(flat):
        return _objective_at(graph, params, cfg, target, flat)

    return nc.check_function_gradients(fn, params.flat(), step=step, tol=tol, name=name)


def gradcheck_suite(registry=None, samples=20, step=1e-5, tol=1e-4, seed=0, objectives=True):
    """Return ``(reports, ok)``."""
    registry = nc.OPS if registry is None else registry
    reports = []
    for name in sorted(registry):
        op = registry[name]
        if op.sample is None:
            continue
        reports.append(check_op(op, samples, step, tol, seed))
    if objectives:
        for name, kw in OBJECTIVE_VARIANTS.items():
            reports.append(check_objective(name, step, tol, seed, **kw))
    return reports, all(r.passed for r in reports)

import json

import numpy as np
import pytest
from pydantic import ValidationError

from trigfn.autoencoder import AeParams, ae_forward
from trigfn.config import PRESETS, TrainConfig, preset, preset_json
from trigfn.graphio import generate_sbm, read_labels
from trigfn.metrics import kmeans
from trigfn.numcore import NumericFailure, make_rng
from trigfn.optim import AdamState, NonFiniteGradient, adam_step, step_decay_lr
from trigfn.trainer import (HISTORY_FIELDS, learning_rate, prepare_autoencoder, read_history, save_outputs, train,
                            write_history)


def small_cfg(**kw):
    base = dict(epochs=3, lr=1e-3, n_z=3, depth=2, hidden_dims=[8], kmeans_restarts=3,
                pretrain={"epochs": 5, "lr": 1e-3})
    base.update(kw)
    return TrainConfig.model_validate(base)


@pytest.fixture(scope="module")
def tiny_graph():
    return generate_sbm(2, 6, 0.8, 0.05, 4, 3.0, 0.3, seed=1)


# adam --------------------------------------------------------------------


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_size():
    p = {"w": np.array([0.0, 0.0])}
    adam_step(p, {"w": np.array([1.0, -1.0])}, AdamState(), 0.1)
    step = 0.1 / (1 + 1e-8)
    np.testing.assert_array_equal(p["w"], [-step, step])
    # magnitude of the first step is lr * |g| / (|g| + eps) for any g
    p = {"w": np.zeros(2)}
    adam_step(p, {"w": np.array([3.0, -0.25])}, AdamState(), 0.1)
    np.testing.assert_allclose(p["w"], [-0.3 / (3 + 1e-8), 0.025 / (0.25 + 1e-8)], rtol=1e-15)


def test_adam_is_odd_in_the_gradient(rng):
    grads = rng.normal(size=(5, 3))
    pos, neg = {"w": np.zeros(3)}, {"w": np.zeros(3)}
    sp, sn = AdamState(), AdamState()
    for g in grads:
        adam_step(pos, {"w": g.copy()}, sp, 0.05)
        adam_step(neg, {"w": -g}, sn, 0.05)
        np.testing.assert_array_equal(neg["w"], -pos["w"])


def test_adam_against_reference_loop(rng):
    # plain scalar recurrence over several steps
    w0 = rng.normal(size=4)
    grads = rng.normal(size=(6, 4))
    p, st = {"w": w0.copy()}, AdamState()
    for g in grads:
        adam_step(p, {"w": g.copy()}, st, 0.01)
    for i in range(4):
        w, m, v = w0[i], 0.0, 0.0
        for t, g in enumerate(grads[:, i], start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p["w"][i] == pytest.approx(w, rel=1e-13, abs=1e-15)


def test_adam_rejects_non_finite_and_shape_mismatch():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteGradient, match="'w'"):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), 0.1)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(3)}, AdamState(), 0.1)
    adam_step(p, {"w": None}, AdamState(), 0.1)


def test_step_decay_schedule():
    assert [step_decay_lr(1.0, e) for e in (0, 19, 20, 39, 40)] == [1.0, 1.0, 0.1, 0.1, 0.1 ** 2]
    cfg = TrainConfig(lr=0.5, lr_decay="step")
    assert learning_rate(cfg, 45) == 0.5 * 0.1 ** 2
    assert learning_rate(TrainConfig(lr=0.5), 45) == 0.5


# config ------------------------------------------------------------------


def test_config_defaults_and_alias():
    cfg = TrainConfig.from_json('{"lambda": 0.5, "theta": 0.25, "gamma": 0.25}')
    assert cfg.lam == 0.5 and json.loads(cfg.to_json())["lambda"] == 0.5
    assert TrainConfig(lam=0.2, theta=0.3, gamma=0.5).lam == 0.2


def test_config_rejects_bad_input():
    with pytest.raises(ValidationError, match="must equal 1"):
        TrainConfig(lam=0.5, theta=0.5, gamma=0.5)
    with pytest.raises(ValidationError):
        TrainConfig.from_json('{"epoch": 3}')
    for bad in ({"eps": 1.5}, {"t": 0}, {"lr_decay": "cosine"}, {"pretrain": {"lr": 1, "steps": 2}}):
        with pytest.raises(ValidationError):
            TrainConfig.model_validate(bad)


def test_config_round_trip(tmp_path):
    cfg = small_cfg(residual=True, recon_branch="averaged", paths={"out_dir": "x"})
    cfg.save(tmp_path / "c.json")
    assert TrainConfig.load(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_and_round_trip(name):
    cfg = preset(name)
    epochs, alpha, beta, n_z, lr, lam, theta, gamma, eps = PRESETS[name]
    assert (cfg.epochs, cfg.alpha, cfg.beta, cfg.n_z, cfg.lr, cfg.lam, cfg.theta, cfg.gamma, cfg.eps) == \
        (epochs, alpha, beta, n_z, lr, lam, theta, gamma, eps)
    assert abs(cfg.lam + cfg.theta + cfg.gamma - 1) <= 1e-9
    assert TrainConfig.from_json(preset_json(name)) == cfg


def test_acm_preset_values():
    cfg = preset("ACM")
    assert (cfg.epochs, cfg.alpha, cfg.beta, cfg.n_z, cfg.lr) == (200, 0.12, 0.1, 10, 5e-5)
    assert (cfg.lam, cfg.theta, cfg.gamma, cfg.eps) == (0.5, 0.4, 0.1, 0.5)
    with pytest.raises(KeyError):
        preset("Pubmed")


# training ----------------------------------------------------------------


def test_zero_epochs_returns_kmeans_partition(tiny_graph):
    cfg = small_cfg(epochs=0)
    res = train(tiny_graph, cfg)
    assert res.history == []
    ae, _ = prepare_autoencoder(tiny_graph, cfg)
    z = ae_forward(ae, tiny_graph.features, cfg.leaky_slope)[0][-1]
    km = kmeans(z, 2, restarts=3, seed=cfg.seed)
    np.testing.assert_array_equal(res.params.centroids, km.centroids)
    d2 = ((z[:, None] - km.centroids[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(res.labels, np.argmin(d2, axis=1))


def test_initial_centroids_are_best_wcss_restart(tiny_graph):
    from trigfn.metrics import wcss
    cfg = small_cfg(epochs=0, kmeans_restarts=6)
    res = train(tiny_graph, cfg)
    ae, _ = prepare_autoencoder(tiny_graph, cfg)
    z = ae_forward(ae, tiny_graph.features, cfg.leaky_slope)[0][-1]
    assert wcss(z, res.kmeans.centroids, res.kmeans.assignments) == res.kmeans.wcss
    for r in range(1, 7):
        assert res.kmeans.wcss <= kmeans(z, 2, restarts=r, seed=cfg.seed).wcss


def test_training_is_deterministic(tiny_graph):
    a, b = train(tiny_graph, small_cfg()), train(tiny_graph, small_cfg())
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.history == b.history
    c = train(tiny_graph, small_cfg(seed=5))
    assert [h.loss for h in c.history] != [h.loss for h in a.history]


def test_history_has_metrics_and_components(tiny_graph):
    res = train(tiny_graph, small_cfg())
    assert [h.epoch for h in res.history] == [0, 1, 2]
    for h in res.history:
        assert h.loss == pytest.approx(h.loss_gfn + h.loss_ae + 0.1 * h.loss_clu + 0.1 * h.loss_con, rel=1e-12)
        assert 0 <= h.acc <= 1
    assert res.final_loss is not None and np.isfinite(res.final_loss)


def test_pretrained_weights_are_reused(tiny_graph, tmp_path):
    cfg = small_cfg()
    ae, hist = prepare_autoencoder(tiny_graph, cfg)
    assert len(hist) == 6  # one entry per epoch plus the final loss
    ae.save(tmp_path / "ae.txt")
    loaded, hist2 = prepare_autoencoder(tiny_graph, small_cfg(paths={"ae_weights": str(tmp_path / "ae.txt")}))
    assert hist2 == [] and all(np.array_equal(loaded.tensors[k], ae.tensors[k]) for k in ae.tensors)
    with pytest.raises(ValueError, match="widths"):
        prepare_autoencoder(tiny_graph, cfg, AeParams.init([4, 5, 3], make_rng(0)))


def test_divergence_is_reported_with_epoch(tiny_graph):
    with pytest.raises(NumericFailure, match="epoch"), np.errstate(all="ignore"):
        train(tiny_graph, small_cfg(lr=1e200, epochs=5))


def test_outputs_written(tiny_graph, tmp_path):
    res = train(tiny_graph, small_cfg())
    paths = save_outputs(res, tmp_path / "run")
    for p in paths.values():
        assert p.exists()
    lines = paths["history"].read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_FIELDS) and len(lines) == 4
    rows = read_history(paths["history"])
    assert [r["loss"] for r in rows] == [h.loss for h in res.history]
    np.testing.assert_array_equal(read_labels(paths["labels"]), res.labels)
    summary = json.loads(paths["summary"].read_text())
    assert summary["epochs_run"] == 3 and set(summary["metrics"]) == {"acc", "nmi", "ari", "f1"}
    assert TrainConfig.model_validate(summary["config"]) == res.config


def test_history_without_labels_leaves_metric_columns_empty(tmp_path, tiny_graph):
    from trigfn.graphio import Graph
    g = Graph(features=tiny_graph.features, edges=tiny_graph.edges, n_clusters=2)
    res = train(g, small_cfg(epochs=1))
    write_history(tmp_path / "h.csv", res.history)
    assert read_history(tmp_path / "h.csv")[0]["acc"] is None
    assert res.metrics is None

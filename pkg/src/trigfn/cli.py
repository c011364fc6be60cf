"""Command line: ``trigfn {gen-sbm,pretrain,train,eval,gradcheck}``.

Exit codes: 0 success, 1 validation/input error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import PRESETS, TrainConfig, preset
from .graphio import GraphValidationError, generate_sbm, load_graph, read_labels, save_graph
from .metrics import evaluate_labels
from .numcore import NumericFailure

log = logging.getLogger("trigfn")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _load_config(args) -> TrainConfig:
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "config", None):
        cfg = TrainConfig.load(args.config)
    else:
        cfg = TrainConfig()
    updates = {}
    for key in ("epochs", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            updates[key] = val
    paths = cfg.paths.model_dump()
    for key in ("features", "edges", "labels", "ae_weights", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            paths[key] = str(val)
    updates["paths"] = paths
    if getattr(args, "k", None) is not None:
        updates["n_clusters"] = args.k
    return TrainConfig.model_validate({**cfg.to_dict(), **updates})


def _load_graph(cfg: TrainConfig):
    p = cfg.paths
    if not p.features or not p.edges:
        raise GraphValidationError("features and edges files are required (flags or config paths)")
    return load_graph(p.features, p.edges, p.labels, cfg.n_clusters, standardize=cfg.standardize)


def cmd_gen_sbm(args):
    g = generate_sbm(args.blocks, args.nodes_per_block, args.p_in, args.p_out, args.feat_dim,
                     args.separation, args.noise, args.seed)
    paths = save_graph(g, args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def cmd_pretrain(args):
    from .trainer import prepare_autoencoder

    cfg = _load_config(args)
    graph = _load_graph(cfg)
    ae, hist = prepare_autoencoder(graph, cfg.model_copy(update={"paths": cfg.paths.model_copy(update={"ae_weights": None})}))
    out = Path(args.output)
    ae.save(out)
    if hist:
        print(f"reconstruction loss {hist[0]:.6g} -> {hist[-1]:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args):
    from .trainer import save_outputs, train

    cfg = _load_config(args)
    graph = _load_graph(cfg)
    result = train(graph, cfg)
    out_dir = cfg.paths.out_dir or "trigfn_out"
    paths = save_outputs(result, out_dir)
    if result.metrics:
        m = result.metrics
        print(f"ACC {m.acc:.4f}  NMI {m.nmi:.4f}  ARI {m.ari:.4f}  F1 {m.f1:.4f}")
    print(f"outputs in {Path(paths['summary']).parent}")
    return EXIT_OK


def cmd_eval(args):
    pred = read_labels(args.pred)
    truth = read_labels(args.truth)
    report = evaluate_labels(pred, truth)
    for key, val in report.as_dict().items():
        print(f"{key} {val:.6f}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import gradcheck_suite

    reports, ok = gradcheck_suite(samples=args.samples, step=args.step, tol=args.tol, seed=args.seed)
    for r in reports:
        print(r.line())
    print("gradcheck", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    ap = argparse.ArgumentParser(prog="trigfn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-sbm", help="write a synthetic stochastic-block-model graph")
    s.add_argument("--blocks", type=int, default=3)
    s.add_argument("--nodes-per-block", type=int, default=30)
    s.add_argument("--p-in", type=float, default=0.5)
    s.add_argument("--p-out", type=float, default=0.02)
    s.add_argument("--feat-dim", type=int, default=16)
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_gen_sbm)

    def data_flags(p):
        p.add_argument("--config", type=Path, help="JSON TrainConfig")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a per-dataset preset")
        p.add_argument("--features", type=Path)
        p.add_argument("--edges", type=Path)
        p.add_argument("--labels", type=Path)
        p.add_argument("--k", type=int, help="number of clusters (defaults to the label count)")
        p.add_argument("--seed", type=int)

    s = sub.add_parser("pretrain", help="pretrain the autoencoder and save its weights")
    data_flags(s)
    s.add_argument("--output", required=True, type=Path)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="joint training; writes history.csv, labels.txt, summary.json, weights")
    data_flags(s)
    s.add_argument("--ae-weights", type=Path, help="pretrained autoencoder weights")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", dest="out_dir", type=Path)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="ACC / NMI / ARI / macro-F1 of a label file against ground truth")
    s.add_argument("pred", type=Path)
    s.add_argument("truth", type=Path)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

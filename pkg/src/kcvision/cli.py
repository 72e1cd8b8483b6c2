"""Command-line entry point: ``kcvision <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import evalkit, plotting, synth
from .checkpoint import (CheckpointError, build_model, load_checkpoint, read_checkpoint,
                         save_checkpoint)
from .config import ConfigError, load_config
from .datasets import class_manifest, read_index_map, traverse_manifest, write_fixtures
from .images import ImageLoadError, load_image_bg, resize_bilinear
from .trainer import TrainingDiverged, fit

log = logging.getLogger("kcvision")

RUNTIME_ERRORS = (ConfigError, CheckpointError, ImageLoadError, TrainingDiverged, OSError,
                  ValueError)


def _encode(model, images, seed=0):
    if model.kind == "snn":
        return model.encode(images, seed=seed)
    return model.encode(images)


def _resized(images, size):
    return np.stack([resize_bilinear(img, size, size) for img in images]).astype(np.float32)


def _label(path):
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args):
    cfg = load_config(args.config, desk_scale=args.desk_scale)
    tc = cfg.train
    if args.data:
        manifest = traverse_manifest(args.data)
        paths = manifest.paths[:tc.n_images]
        images = [load_image_bg(p, size=None) for p in paths]
    else:
        log.info("no --data given: using %d synthetic training scenes", tc.n_images)
        images = synth.natural_images(tc.n_images, seed=tc.seed)
    model = build_model("snn" if args.snn else "ann", cfg)
    log_path = args.log or args.out + ".log.jsonl"
    open(log_path, "w").close()
    history = fit(model, images, tc, log_path=log_path)
    save_checkpoint(model, args.out, cfg)
    for rec in history:
        print(f"epoch {rec['epoch']}: loss {rec['mean_loss']:.6f} lr {rec['lr']:.3g}")
    print(f"wrote {args.out} and {log_path}")
    return 0


def cmd_encode(args):
    model = load_checkpoint(args.ckpt)
    manifest = traverse_manifest(args.images)
    codes = _encode(model, np.stack(manifest.load((model.cfg.input_size,) * 2)), args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "code"])
        for path, code in zip(manifest.paths, codes):
            idx = np.flatnonzero(code)
            w.writerow([os.path.basename(path),
                        " ".join(f"{i}:{float(code[i]):.9g}" for i in idx)])
    print(f"wrote {len(codes)} codes to {args.out}")
    return 0


def cmd_eval_flowers(args):
    model = load_checkpoint(args.ckpt)
    size = (model.cfg.input_size,) * 2
    a = np.stack(traverse_manifest(args.class_a).load(size))
    b = np.stack(traverse_manifest(args.class_b).load(size))
    stats = evalkit.class_similarity(_encode(model, a), _encode(model, b))
    for key in ("intra_a", "intra_b", "intra", "inter", "inter_concatenated"):
        print(f"{key}: {stats[key]:.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        evalkit.write_matrix_csv(os.path.join(args.out, f"similarity_{model.kind}.csv"),
                                 stats["matrix"])
        plotting.similarity_figure(stats["matrix"],
                                   os.path.join(args.out, f"similarity_{model.kind}.png"),
                                   split=len(a))
    return 0


def cmd_eval_scan(args):
    models = {_label(p): load_checkpoint(p) for p in args.ckpt}
    if args.untrained:
        first = read_checkpoint(args.ckpt[0])
        models["untrained"] = build_model(first.kind, first.config)
    manifest = class_manifest(args.dataset, per_class=args.per_class)
    images = manifest.load(None)
    labels = manifest.labels
    os.makedirs(args.out, exist_ok=True)
    rows, accs = [], {}
    for label, model in models.items():
        feats, ys, groups = evalkit.scanning_dataset(
            lambda x, m=model: _encode(m, x), images, labels, n_paths=args.paths,
            steps=args.steps, kappa=args.kappa, seed=args.seed,
            patch_size=model.cfg.input_size, max_step=args.max_step)
        acc = evalkit.classification_accuracy(feats, ys, groups, seeds=args.seeds)
        accs[label] = acc
        rows += [(s, label, a) for s, a in enumerate(acc)]
        print(f"{label}: accuracy {acc.mean():.4f} +/- {acc.std():.4f} over {len(acc)} splits")
        if model.kind == "snn":
            rates = _encode(model, _resized(images, model.cfg.input_size))
            st = evalkit.spiking_statistics(rates, labels, topk=args.topk, mode=args.si_mode)
            print(f"{label}: active KC {st['active_mean']:.1f}, SI p90 {st['si_p90']:.4f}, "
                  f"top-{args.topk} overlap {st['topk_overlap']:.4f}")
            evalkit.write_selectivity_csv(os.path.join(args.out, f"selectivity_{label}.csv"),
                                          st["si"])
            plotting.selectivity_figure(st["si"],
                                        os.path.join(args.out, f"selectivity_{label}.png"))
    evalkit.write_classification_csv(os.path.join(args.out, "classification.csv"), rows)
    plotting.accuracy_figure(accs, os.path.join(args.out, "classification.png"))
    return 0


def cmd_eval_vpr(args):
    refs = traverse_manifest(args.reference)
    queries = traverse_manifest(args.query)
    if args.index_map:
        gt = read_index_map(args.index_map)
        if len(gt) != len(queries) or gt.max() >= len(refs) or gt.min() < 0:
            raise ValueError("index map does not fit the query/reference sets")
    elif len(refs) != len(queries):
        raise ValueError(f"{len(queries)} queries vs {len(refs)} references: "
                         "pass --index-map to align them")
    else:
        gt = None
    encoders = {}
    size = 75
    for path in args.ckpt or []:
        model = load_checkpoint(path)
        size = model.cfg.input_size
        name = model.kind if model.kind not in encoders else f"{model.kind}_{_label(path)}"
        encoders[name] = (lambda x, m=model: _encode(m, x))
    encoders["sad"] = "sad"
    ref_imgs = np.stack(refs.load((size, size)))
    qry_imgs = np.stack(queries.load((size, size)))
    results = evalkit.run_vpr(ref_imgs, qry_imgs, encoders, tolerance=args.tolerance,
                              sad_res=args.sad_res, ground_truth=gt)
    for name in sorted(results):
        r = results[name].recall_at_k
        print(name + ": " + "  ".join(f"R@{k}={r[k]:.4f}" for k in sorted(r)))
    evalkit.write_vpr_outputs(args.out, results)
    plotting.recall_figure(results, os.path.join(args.out, "recall.png"))
    for name, res in results.items():
        plotting.similarity_figure(res.similarity.scores if name != "sad" else
                                   res.similarity.scores - res.similarity.scores.min(),
                                   os.path.join(args.out, f"similarity_{name}.png"),
                                   title=f"{name} similarity")
    return 0


def cmd_inspect(args):
    ck = read_checkpoint(args.ckpt)
    model = load_checkpoint(args.ckpt)
    c = model.cfg
    print(f"kind: {ck.kind}")
    print(f"format version: {ck.version}")
    size = c.input_size
    print("architecture:")
    print(f"  input: 2x{size}x{size}")
    for layer in model.layers:
        size = layer.out_size(size)
        print(f"  {layer.name}: {layer.kernel.shape[1]}->{layer.kernel.shape[0]} "
              f"stride {layer.stride} -> {size}x{size}")
    print(f"  lobula channels: {c.lobula_channels}")
    print(f"  vpn dim: {model.d_vpn}")
    print(f"  kc dim: {c.kc_dim} (fan-in {c.fan_in})")
    print("tensors:")
    for name, arr in ck.tensors.items():
        print(f"  {name}: {'x'.join(map(str, arr.shape))} float32")
    mu = model.akwta.mu
    print(f"akwta: rho {model.akwta.rho} k {model.akwta.k} momentum {model.akwta.momentum}")
    print(f"  mu mean {mu.mean():.6f} min {mu.min():.6f} max {mu.max():.6f}; "
          f"theta mean {model.akwta.theta.mean():.6f}")
    print("config: " + ck.config_json)
    return 0


def cmd_make_fixtures(args):
    write_fixtures(args.out, n_train=args.n_train, per_class=args.per_class,
                   n_places=args.places, seed=args.seed)
    print(f"wrote fixtures under {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kcvision",
                                description="Insect-inspired sparse visual coding toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="contrastive training; writes checkpoint + JSONL log")
    s.add_argument("--config", help="TOML run configuration")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--snn", action="store_true", help="train the spiking model")
    s.add_argument("--desk-scale", action="store_true",
                   help="2,000 images, 3 epochs, batch 32")
    s.add_argument("--data", help="folder of training images (default: synthetic scenes)")
    s.add_argument("--log", help="JSON-lines log path (default: <out>.log.jsonl)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="write sparse KC codes for a folder of images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0, help="spike-encoding seed (SNN)")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("eval-flowers", help="within/between class KC similarity")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--class-a", required=True)
    s.add_argument("--class-b", required=True)
    s.add_argument("--out", help="folder for the similarity CSV and figure")
    s.set_defaults(func=cmd_eval_flowers)

    s = sub.add_parser("eval-scan", help="scanning-path linear classification")
    s.add_argument("--ckpt", required=True, nargs="+")
    s.add_argument("--dataset", required=True, help="class-per-directory root")
    s.add_argument("--untrained", action="store_true",
                   help="also evaluate a freshly initialised model of the same config")
    s.add_argument("--paths", type=int, default=10)
    s.add_argument("--steps", type=int, default=16)
    s.add_argument("--seeds", type=int, default=8)
    s.add_argument("--kappa", type=float, default=0.9)
    s.add_argument("--max-step", type=int, default=40)
    s.add_argument("--per-class", type=int, help="use only the first N images per class")
    s.add_argument("--topk", type=int, default=32)
    s.add_argument("--si-mode", choices=("verbatim", "contrast"), default="verbatim")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="scan_out")
    s.set_defaults(func=cmd_eval_scan)

    s = sub.add_parser("eval-vpr", help="place recognition Recall@K against SAD")
    s.add_argument("--ckpt", nargs="*", help="model checkpoints to compare")
    s.add_argument("--reference", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--tolerance", type=int, default=3)
    s.add_argument("--sad-res", type=int, default=32)
    s.add_argument("--index-map", help="CSV of query,reference index pairs")
    s.add_argument("--out", default="vpr_out")
    s.set_defaults(func=cmd_eval_vpr)

    s = sub.add_parser("inspect", help="print architecture, tensors and a-kWTA state")
    s.add_argument("--ckpt", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("make-fixtures", help="write the synthetic image sets to disk")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--per-class", type=int, default=12)
    s.add_argument("--places", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_fixtures)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: dataset generation, training, evaluation, and
ablation sweeps driven by key=value config files.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, derive_seed, parse_config
from .data import Dataset, default_class_specs, make_splits
from .encoders import ModelDims, TokenizationError
from .model import PROMPTING_MODES, SketchPhotoModel
from .retrieval import (InferenceContractError, dump_embeddings, embed_gallery,
                        embed_images, evaluate)
from .train import Trainer, TrainingError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_model(cfg: RunConfig, class_names):
    dims = ModelDims(
        layers=cfg.layers, d_t=cfg.d_t, d_v=cfg.d_v, d_e=cfg.d_e,
        seq_len=cfg.seq_len, image_size=cfg.image_size,
        patch_size=cfg.patch_size, heads=cfg.heads,
    )
    return SketchPhotoModel(
        dims, class_names, m=cfg.m, n=cfg.n, prompt_depth=cfg.prompt_depth,
        prompting_mode=cfg.prompting_mode, jigsaw_grid=cfg.jigsaw_grid,
        solver_layers=cfg.solver_layers, semantic_rows=cfg.semantic_rows,
        seed=derive_seed(cfg.seed, "model"),
    )


def build_dataset(cfg: RunConfig, data_dir=None):
    if data_dir:
        return Dataset.load(data_dir)
    return Dataset(
        default_class_specs(), instances_per_class=cfg.instances_per_class,
        height=cfg.image_size, width=cfg.image_size,
        base_seed=derive_seed(cfg.seed, "synthdata"),
    )


def _load_config(args):
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.protocol:
        cfg.protocol = args.protocol
    if getattr(args, "loss", None):
        if args.loss == "triplet":
            cfg.alpha, cfg.beta = 0.0, 0.0
        elif args.loss == "triplet+class":
            cfg.beta = 0.0
        # "full" keeps the configured weights
    if getattr(args, "margin", None):
        if args.margin == "adaptive":
            cfg.margin_mode = "adaptive"
        elif args.margin.startswith("fixed:"):
            cfg.margin_mode = "fixed"
            cfg.fixed_margin = float(args.margin.split(":", 1)[1])
        else:
            raise ValueError(f"bad margin spec: {args.margin!r}")
    if getattr(args, "jigsaw", None):
        cfg.jigsaw_mode = args.jigsaw
        if args.jigsaw == "off":
            cfg.beta = 0.0
    if getattr(args, "prompting", None):
        cfg.prompting_mode = args.prompting
    if getattr(args, "depth", None) is not None:
        cfg.prompt_depth = args.depth
    if getattr(args, "tokens", None):
        parts = args.tokens.split(",")
        if len(parts) != 3:
            raise ValueError("--tokens expects three comma-separated integers")
        cfg.m, cfg.semantic_rows, cfg.n = (int(p) for p in parts)
    return cfg


def _train_one(cfg: RunConfig, dataset, out_dir, tag=""):
    split = make_splits(dataset.classes, cfg.seen_count, cfg.protocol,
                        derive_seed(cfg.seed, "split"))
    model = build_model(cfg, [c.name for c in dataset.classes])
    trainer = Trainer(model, dataset, split, cfg.train_config(),
                      config_hash=cfg.content_hash())
    os.makedirs(out_dir, exist_ok=True)
    suffix = f"_{tag}" if tag else ""
    trainer.run(csv_path=os.path.join(out_dir, f"loss{suffix}.csv"))
    trainer.save_checkpoint(os.path.join(out_dir, f"model{suffix}.ckpt"))
    return model, split, trainer


def cmd_gen_data(args):
    cfg = _load_config(args)
    dataset = build_dataset(cfg)
    manifest = dataset.export(args.out)
    print(json.dumps({
        "out": args.out,
        "config_hash": cfg.content_hash(),
        "classes": len(manifest["classes"]),
        "images": 2 * len(manifest["records"]),
    }, sort_keys=True))
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    dataset = build_dataset(cfg, args.data)
    _train_one(cfg, dataset, args.out)
    print(json.dumps({"out": args.out, "config_hash": cfg.content_hash()},
                     sort_keys=True))
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    dataset = build_dataset(cfg, args.data)
    split = make_splits(dataset.classes, cfg.seen_count, cfg.protocol,
                        derive_seed(cfg.seed, "split"))
    model = build_model(cfg, [c.name for c in dataset.classes])
    if args.checkpoint:
        trainer = Trainer(model, dataset, split, cfg.train_config(),
                          config_hash=cfg.content_hash())
        header = trainer.load_checkpoint(args.checkpoint)
        if header["config_hash"] != cfg.content_hash():
            raise ValueError(
                "checkpoint was written under a different configuration "
                f"({header['config_hash']} vs {cfg.content_hash()})"
            )
    report = evaluate(model, dataset, split, protocol=cfg.protocol,
                      seed=cfg.seed, config_hash=cfg.content_hash())
    text = report.to_json()
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as f:
            f.write(text + "\n")
        if args.dump_embeddings:
            seen_names = [dataset.class_name(c) for c in split.seen_ids]
            unseen_names = [dataset.class_name(c) for c in split.unseen_ids]
            n_inst = dataset.instances_per_class
            keys = [(c, i) for c in split.unseen_ids for i in range(n_inst)]
            gal = embed_gallery(model, dataset, keys, "photo", cfg.protocol,
                                seen_names, forbidden_names=unseen_names)
            q = embed_images(
                model, np.stack([dataset.pairs[k].sketch for k in keys]),
                "sketch", cfg.protocol, seen_names, forbidden_names=unseen_names,
            )
            dump_embeddings(os.path.join(args.out, "embeddings.csv"),
                            gal, q, keys)
    return 0


ABLATION_AXES = ("depth", "tokens", "losses", "margin", "jigsaw-mode",
                 "prompting-mode")


def _ablation_variants(cfg: RunConfig, axis):
    import copy
    base = copy.deepcopy(cfg)
    out = []
    if axis == "depth":
        for k in range(1, cfg.layers + 1):
            v = copy.deepcopy(base)
            v.prompt_depth = k
            out.append((f"depth{k}", v))
    elif axis == "tokens":
        for m, jm1, n in ((4, 4, 2), (2, 4, 2), (4, 2, 2), (4, 4, 0)):
            v = copy.deepcopy(base)
            v.m, v.n = m, n
            v.semantic_rows = jm1
            out.append((f"tokens{m}_{jm1}_{n}", v))
    elif axis == "losses":
        # (name, alpha, beta, gamma); None keeps the configured weight
        recipes = [
            ("triplet", 0.0, 0.0, None), ("class", None, 0.0, 0.0),
            ("triplet_class", None, 0.0, None), ("triplet_cjs", 0.0, None, None),
            ("full", None, None, None),
        ]
        for name, alpha, beta, gamma in recipes:
            v = copy.deepcopy(base)
            if alpha is not None:
                v.alpha = alpha
            if beta is not None:
                v.beta = beta
            if gamma is not None:
                v.gamma = gamma
            out.append((name, v))
    elif axis == "margin":
        for name in ("adaptive", "fixed"):
            v = copy.deepcopy(base)
            v.margin_mode = name
            out.append((name, v))
    elif axis == "jigsaw-mode":
        for mode in ("crossmodal", "unimodal", "off"):
            v = copy.deepcopy(base)
            v.jigsaw_mode = "crossmodal" if mode == "off" else mode
            if mode == "off":
                v.beta = 0.0
            out.append((mode, v))
    elif axis == "prompting-mode":
        for mode in PROMPTING_MODES:
            v = copy.deepcopy(base)
            v.prompting_mode = mode
            out.append((mode, v))
    else:
        raise ValueError(f"unknown ablation axis: {axis!r}")
    return out


def cmd_ablate(args):
    cfg = _load_config(args)
    dataset = build_dataset(cfg, args.data)
    rows = []
    for tag, variant in _ablation_variants(cfg, args.axis):
        model, split, _ = _train_one(variant, dataset, args.out, tag=tag)
        report = evaluate(model, dataset, split, protocol=variant.protocol,
                          seed=variant.seed, config_hash=variant.content_hash())
        rows.append({"variant": tag, "report": json.loads(report.to_json())})
    table = json.dumps({"axis": args.axis, "rows": rows}, sort_keys=True, indent=1)
    print(table)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"ablation_{args.axis}.json"), "w") as f:
        f.write(table + "\n")
    return 0


def make_parser():
    parser = _Parser(prog="sketchprompt")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required)
        p.add_argument("--protocol", choices=("zs", "gzs", "fg"), default=None)

    def train_flags(p):
        p.add_argument("--data", default=None,
                       help="directory of an exported dataset; omitted = in-memory")
        p.add_argument("--loss", choices=("triplet", "triplet+class", "full"),
                       default=None)
        p.add_argument("--margin", default=None,
                       help="adaptive or fixed:<value>")
        p.add_argument("--jigsaw", choices=("crossmodal", "unimodal", "off"),
                       default=None)
        p.add_argument("--prompting", choices=PROMPTING_MODES, default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--tokens", default=None, help="m,jm1,n")

    p = sub.add_parser("gen-data")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train")
    common(p)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval")
    common(p, out_required=False)
    train_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dump-embeddings", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate")
    common(p)
    train_flags(p)
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        return args.func(args)
    except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, TokenizationError,
            InferenceContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

"""Training loop: Adam over the trainable parameter set only, linear
warm-up followed by cosine decay, gradient clipping, and bit-exact
checkpoint/resume."""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .data import sample_triplet_batch
from .model import SketchPhotoModel, template_for


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.001
    warmup_steps: int = 20
    grad_clip: float = 5.0
    seed: int = 0
    protocol: str = "zs"
    jigsaw_mode: str = "crossmodal"   # crossmodal | unimodal | off
    loss: L.LossConfig = field(default_factory=L.LossConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warm-up steps must be nonnegative")
        if self.jigsaw_mode not in ("crossmodal", "unimodal", "off"):
            raise ValueError(f"unknown jigsaw mode: {self.jigsaw_mode!r}")


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value.data) for p in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        for p in self.params:
            g = p.value.grad
            if g is None:
                continue
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.value.data = p.value.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.value.zero_grad()


def lr_at(step, total_steps, cfg: TrainConfig):
    """Linear warm-up to cfg.lr, then cosine decay to 0."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if total_steps <= cfg.warmup_steps:
        return cfg.lr
    frac = (step - cfg.warmup_steps) / max(1, total_steps - cfg.warmup_steps)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, frac)))


def clip_gradients(params, max_norm):
    total = 0.0
    for p in params:
        if p.trainable and p.value.grad is not None:
            total += float((p.value.grad ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.trainable and p.value.grad is not None:
                p.value.grad = p.value.grad * scale
    return norm


def compute_losses(model: SketchPhotoModel, batch, seen_names, seen_ids, cfg: TrainConfig):
    """Forward the batch and return the loss components as tensors."""
    lc = cfg.loss
    proto = cfg.protocol
    sk_t = template_for("sketch", proto)
    ph_t = template_for("photo", proto)

    out_s = model.encode_images(batch.sketches, sk_t, seen_names)
    out_p = model.encode_images(batch.photos_pos, ph_t, seen_names)
    out_n = model.encode_images(batch.photos_neg, ph_t, seen_names)

    local = {cid: i for i, cid in enumerate(seen_ids)}
    all_names = [model.class_names[c] for c in sorted(set(batch.class_pos) | set(batch.class_neg))]
    name_idx = {model.class_names.index(n): i for i, n in enumerate(all_names)}
    class_feats = model.class_name_features(all_names)
    if lc.margin_mode == "adaptive":
        mu = L.adaptive_margin(
            class_feats,
            [name_idx[c] for c in batch.class_pos],
            [name_idx[c] for c in batch.class_neg],
        )
    else:
        mu = Tensor(np.full(len(batch.class_pos), lc.fixed_margin))
    parts = {"triplet": L.triplet_loss(out_s["f_v"], out_p["f_v"], out_n["f_v"], mu)}

    if lc.alpha > 0:
        labels = L.one_hot([local[c] for c in batch.class_pos], len(seen_names))
        cl_sketch = L.classification_loss(out_s["f_v"], out_s["f_t"], labels, lc.tau)
        cl_photo = L.classification_loss(out_p["f_v"], out_p["f_t"], labels, lc.tau)
        parts["class"] = ad.mul(ad.add(cl_sketch, cl_photo), 0.5)

    if lc.beta > 0 and cfg.jigsaw_mode != "off":
        out_sp = model.encode_images(batch.sketches_perm, sk_t, seen_names)
        jig_t = template_for(batch.jig_modality, proto)
        if batch.jig_modality == "photo":
            f_jp, f_jn = out_p["f_v"], out_n["f_v"]
        else:
            out_jp = model.encode_images(batch.jig_pos, jig_t, seen_names)
            out_jn = model.encode_images(batch.jig_neg, jig_t, seen_names)
            f_jp, f_jn = out_jp["f_v"], out_jn["f_v"]
        perm_oh = L.one_hot(batch.perm_indices, model.table.size)
        parts["cjs"] = L.cjs_loss(
            model.solver, out_s["f_v"], out_sp["f_v"], f_jp, f_jn, perm_oh
        )
    return parts


def train_step(model, batch, seen_names, seen_ids, cfg, opt, lr):
    model.zero_grad()
    parts = compute_losses(model, batch, seen_names, seen_ids, cfg)
    total = L.total_loss(parts, cfg.loss)
    values = {k: v.item() for k, v in parts.items()}
    values["total"] = total.item()
    if not all(math.isfinite(v) for v in values.values()):
        raise TrainingError(f"non-finite loss: {values}")
    total.backward()
    clip_gradients(model.trainable_parameters(), cfg.grad_clip)
    opt.step(lr=lr)
    return values


class Trainer:
    """Drives seeded epochs over a split; checkpoint round-trips bit-exactly."""

    def __init__(self, model: SketchPhotoModel, dataset, split, cfg: TrainConfig,
                 config_hash=""):
        self.model = model
        self.dataset = dataset
        self.split = split
        self.cfg = cfg
        self.config_hash = config_hash
        self.opt = Adam(model.trainable_parameters(), lr=cfg.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7070]))
        self.step = 0
        self.history = []
        self.seen_ids = list(split.seen_ids)
        self.seen_names = [dataset.class_name(c) for c in self.seen_ids]

    @property
    def steps_per_epoch(self):
        population = len(self.seen_ids) * self.dataset.instances_per_class
        return max(1, population // self.cfg.batch_size)

    @property
    def total_steps(self):
        return self.cfg.epochs * self.steps_per_epoch

    def run(self, steps=None, csv_path=None):
        target = self.total_steps if steps is None else self.step + steps
        jig = self.cfg.jigsaw_mode if self.cfg.jigsaw_mode != "off" else "crossmodal"
        while self.step < target:
            batch = sample_triplet_batch(
                self.dataset, self.split, self.cfg.batch_size, self.rng,
                self.model.table, jigsaw_mode=jig,
            )
            lr = lr_at(self.step, self.total_steps, self.cfg)
            values = train_step(self.model, batch, self.seen_names, self.seen_ids,
                                self.cfg, self.opt, lr)
            values["lr"] = lr
            values["step"] = self.step
            self.history.append(values)
            self.step += 1
        if csv_path:
            self.write_csv(csv_path)
        return self.history

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("step,loss_total,loss_triplet,loss_class,loss_cjs,lr\n")
            for row in self.history:
                f.write("{step},{total:.17g},{trip:.17g},{cls:.17g},{cjs:.17g},{lr:.17g}\n".format(
                    step=row["step"], total=row["total"], trip=row["triplet"],
                    cls=row.get("class", 0.0), cjs=row.get("cjs", 0.0), lr=row["lr"]))

    # -- checkpointing -------------------------------------------------------

    MAGIC = b"SKPR"
    VERSION = 1

    def save_checkpoint(self, path):
        tensors = {}
        for p in self.opt.params:
            tensors[p.name] = p.value.data
            tensors[p.name + "/adam_m"] = self.opt.m[p.name]
            tensors[p.name + "/adam_v"] = self.opt.v[p.name]
        names = sorted(tensors)
        header = {
            "config_hash": self.config_hash,
            "step": self.step,
            "adam_step": self.opt.step_count,
            "rng_state": self.rng.bit_generator.state,
            "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write(struct.pack("<I", self.VERSION))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for n in names:
                f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())

    def load_checkpoint(self, path):
        with open(path, "rb") as f:
            if f.read(4) != self.MAGIC:
                raise ValueError("not a checkpoint file")
            (version,) = struct.unpack("<I", f.read(4))
            if version != self.VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen))
            tensors = {}
            for rec in header["tensors"]:
                shape = tuple(rec["shape"])
                count = int(np.prod(shape)) if shape else 1
                tensors[rec["name"]] = np.frombuffer(
                    f.read(count * 8), dtype="<f8"
                ).reshape(shape).copy()
        for p in self.opt.params:
            p.value.data = tensors[p.name]
            self.opt.m[p.name] = tensors[p.name + "/adam_m"]
            self.opt.v[p.name] = tensors[p.name + "/adam_v"]
        self.step = header["step"]
        self.opt.step_count = header["adam_step"]
        state = header["rng_state"]
        # json round-trips the generator state dict with string keys intact
        self.rng.bit_generator.state = state
        self.config_hash = header["config_hash"]
        return header

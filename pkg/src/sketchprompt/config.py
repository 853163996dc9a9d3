"""Run configuration: plain key=value files with [section] headers, a stable
content hash, and per-module seed derivation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

from .losses import LossConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # model
    layers: int = 4
    d_t: int = 64
    d_v: int = 64
    d_e: int = 32
    seq_len: int = 16
    image_size: int = 32
    patch_size: int = 8
    heads: int = 4
    m: int = 4
    n: int = 2
    semantic_rows: int = 4
    prompt_depth: int | None = None
    prompting_mode: str = "bidirectional"
    jigsaw_grid: int = 2
    solver_layers: int = 2
    # data
    instances_per_class: int = 40
    seen_count: int = 9
    # training
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.001
    warmup_steps: int = 20
    grad_clip: float = 5.0
    protocol: str = "zs"
    jigsaw_mode: str = "crossmodal"
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0
    tau: float = 0.07
    margin_mode: str = "adaptive"
    fixed_margin: float = 0.2
    seed: int = 0

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            warmup_steps=self.warmup_steps, grad_clip=self.grad_clip,
            seed=self.seed, protocol=self.protocol, jigsaw_mode=self.jigsaw_mode,
            loss=LossConfig(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                            tau=self.tau,
                            margin_mode=self.margin_mode,
                            fixed_margin=self.fixed_margin),
        )

    def content_hash(self):
        """Hash of the canonical key=value rendering; independent of file
        formatting, comments, or key order."""
        items = sorted(asdict(self).items())
        blob = "\n".join(f"{k}={v!r}" for k, v in items).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_INT_FIELDS = {"layers", "d_t", "d_v", "d_e", "seq_len", "image_size",
               "patch_size", "heads", "m", "n", "semantic_rows",
               "jigsaw_grid", "solver_layers",
               "instances_per_class", "seen_count", "epochs", "batch_size",
               "warmup_steps", "seed"}
_FLOAT_FIELDS = {"lr", "grad_clip", "alpha", "beta", "gamma", "tau",
                 "fixed_margin"}


def parse_config(path):
    """Read key=value lines (optionally grouped under [section] headers,
    which are cosmetic) into a RunConfig.  Unknown keys raise."""
    cfg = RunConfig()
    valid = set(asdict(cfg))
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in _INT_FIELDS:
                parsed = int(value)
            elif key in _FLOAT_FIELDS:
                parsed = float(value)
            elif key == "prompt_depth":
                parsed = None if value in ("", "none", "None") else int(value)
            else:
                parsed = value
            setattr(cfg, key, parsed)
    # revalidate the dataclass-level constraints
    cfg.train_config()
    return cfg


def derive_seed(base_seed, module_name):
    """Stable per-module seed so modules draw from independent streams."""
    digest = hashlib.sha256(f"{base_seed}:{module_name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")

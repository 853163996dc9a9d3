"""Procedural paired sketch/photo dataset and protocol splits.

Every image is a deterministic function of (class spec, instance seed,
config).  A photo renders an anti-aliased filled shape over a smooth
texture; the sketch renders a jittered stroke outline of the same geometry
on white, so the two modalities share their ground-truth parameters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

# Families group names by rough semantic proximity, which gives the adaptive
# margin a ground truth to be checked against at desk scale.
DEFAULT_CLASSES = [
    ("circle", "round"), ("ring", "round"), ("ellipse", "round"), ("moon", "round"),
    ("square", "angular"), ("cross", "angular"), ("arrow", "angular"), ("diamond", "angular"),
    ("triangle", "pointy"), ("star", "pointy"), ("wave", "curvy"), ("spiral", "curvy"),
]


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    name: str
    family: str


def default_class_specs():
    return [ClassSpec(i, n, f) for i, (n, f) in enumerate(DEFAULT_CLASSES)]


# -- shape signed-distance fields (negative inside) --------------------------


def _sdf(name, x, y, rng):
    if name == "circle":
        return np.hypot(x, y) - 0.72
    if name == "ring":
        return np.abs(np.hypot(x, y) - 0.62) - 0.16
    if name == "ellipse":
        a, b = 0.85, 0.5
        return (np.sqrt((x / a) ** 2 + (y / b) ** 2) - 1.0) * min(a, b)
    if name == "moon":
        outer = np.hypot(x, y) - 0.72
        inner = np.hypot(x - 0.34, y) - 0.6
        return np.maximum(outer, -inner)
    if name == "square":
        return np.maximum(np.abs(x), np.abs(y)) - 0.62
    if name == "diamond":
        return (np.abs(x) + np.abs(y)) - 0.8
    if name == "cross":
        bar1 = np.maximum(np.abs(x) - 0.75, np.abs(y) - 0.22)
        bar2 = np.maximum(np.abs(x) - 0.22, np.abs(y) - 0.75)
        return np.minimum(bar1, bar2)
    if name == "arrow":
        shaft = np.maximum(np.abs(x + 0.3) - 0.45, np.abs(y) - 0.16)
        head = np.maximum(x - 0.8, (np.abs(y) - (0.8 - x) * 0.75))
        head = np.maximum(head, 0.15 - x)
        return np.minimum(shaft, head)
    if name == "triangle":
        # intersection of three half-planes (equilateral, inradius r/2)
        r = 0.75
        n1 = (0.0, 1.0)
        n2 = (np.cos(np.deg2rad(-30)), np.sin(np.deg2rad(-30)))
        n3 = (np.cos(np.deg2rad(210)), np.sin(np.deg2rad(210)))
        h = r * 0.5
        d = np.maximum(n1[0] * x + n1[1] * y - h,
                       np.maximum(n2[0] * x + n2[1] * y - h,
                                  n3[0] * x + n3[1] * y - h))
        return d
    if name == "star":
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        edge = 0.72 * (0.64 + 0.36 * np.cos(5.0 * theta))
        return r - edge
    if name == "wave":
        band = np.abs(y - 0.35 * np.sin(4.2 * x)) - 0.16
        return np.maximum(band, np.abs(x) - 0.85)
    if name == "spiral":
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        t = (r * 2.4 - theta / (2 * np.pi)) % 1.0
        band = (np.abs(t - 0.5) - 0.22) * 0.35
        return np.maximum(band, r - 0.85)
    raise ValueError(f"unknown shape family member: {name}")


@dataclass
class InstancePair:
    class_id: int
    instance_seed: int
    sketch: np.ndarray
    photo: np.ndarray


def generate_pair(spec: ClassSpec, instance_seed, height=32, width=32, base_seed=0):
    """Render one sketch/photo pair from a shared geometric parameter draw."""
    rng = np.random.default_rng(
        np.random.SeedSequence([base_seed, spec.class_id, int(instance_seed)])
    )
    ys = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    gx, gy = np.meshgrid(xs, ys)

    size = rng.uniform(0.7, 1.05)
    # moderate rotation keeps instances of a class pixel-correlated; full
    # rotations would demand an invariance the frozen backbone cannot express
    rot = rng.uniform(-0.6, 0.6)
    aspect = rng.uniform(0.85, 1.18)
    shift_x = rng.uniform(-0.2, 0.2)
    shift_y = rng.uniform(-0.2, 0.2)
    cr, sr = np.cos(rot), np.sin(rot)
    cx, cy = gx - shift_x, gy - shift_y
    rx = (cx * cr + cy * sr) / (size * aspect)
    ry = (-cx * sr + cy * cr) / (size / aspect)
    sdf = _sdf(spec.name, rx, ry, rng) * size

    # photo: smooth fill over a low-frequency texture
    aa = 2.0 / height
    fill = np.clip(0.5 - sdf / aa, 0.0, 1.0)
    f1, f2 = rng.uniform(2.0, 6.0, size=2)
    p1, p2 = rng.uniform(0.0, 2 * np.pi, size=2)
    bg = 0.82 + 0.07 * np.sin(f1 * gx + p1) + 0.05 * np.sin(f2 * gy + p2)
    fg = 0.15 + 0.06 * np.sin(f2 * gx + f1 * gy + p1)
    photo = np.clip(bg * (1.0 - fill) + fg * fill, 0.0, 1.0)

    # sketch: jittered stroke outline on white
    jx = 0.015 * np.sin(7.3 * gy + rng.uniform(0, 2 * np.pi))
    jy = 0.015 * np.sin(6.1 * gx + rng.uniform(0, 2 * np.pi))
    rxj = ((cx + jx) * cr + (cy + jy) * sr) / (size * aspect)
    ryj = (-(cx + jx) * sr + (cy + jy) * cr) / (size / aspect)
    sdfj = _sdf(spec.name, rxj, ryj, rng) * size
    stroke = np.abs(sdfj) < 0.1
    ink = rng.uniform(0.0, 0.12)
    sketch = np.where(stroke, ink, 1.0)

    return InstancePair(spec.class_id, int(instance_seed), sketch, photo)


class Dataset:
    """All rendered pairs for a class list, indexed by (class_id, instance)."""

    def __init__(self, classes=None, instances_per_class=40, height=32, width=32,
                 base_seed=0):
        self.classes = classes if classes is not None else default_class_specs()
        self.instances_per_class = instances_per_class
        self.height = height
        self.width = width
        self.base_seed = base_seed
        self.pairs = {}
        for spec in self.classes:
            for inst in range(instances_per_class):
                self.pairs[(spec.class_id, inst)] = generate_pair(
                    spec, inst, height, width, base_seed
                )

    def class_name(self, class_id):
        return self.classes[class_id].name

    def export(self, out_dir):
        """Raw little-endian float64 image files plus a manifest."""
        os.makedirs(out_dir, exist_ok=True)
        records = []
        for (cid, inst), pair in sorted(self.pairs.items()):
            rel_s = f"c{cid:02d}_i{inst:03d}_sketch.f64"
            rel_p = f"c{cid:02d}_i{inst:03d}_photo.f64"
            pair.sketch.astype("<f8").tofile(os.path.join(out_dir, rel_s))
            pair.photo.astype("<f8").tofile(os.path.join(out_dir, rel_p))
            records.append({"class_id": cid, "instance_seed": inst,
                            "sketch": rel_s, "photo": rel_p})
        manifest = {
            "classes": [{"class_id": c.class_id, "name": c.name, "family": c.family}
                        for c in self.classes],
            "instances_per_class": self.instances_per_class,
            "height": self.height, "width": self.width,
            "base_seed": self.base_seed, "records": records,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        return manifest

    @staticmethod
    def load(out_dir):
        path = os.path.join(out_dir, "manifest.json")
        with open(path) as f:
            manifest = json.load(f)
        required = {"classes", "instances_per_class", "height", "width",
                    "base_seed", "records"}
        if not required.issubset(manifest):
            raise ValueError(f"corrupted manifest: missing {sorted(required - set(manifest))}")
        classes = [ClassSpec(c["class_id"], c["name"], c["family"])
                   for c in manifest["classes"]]
        ds = Dataset.__new__(Dataset)
        ds.classes = classes
        ds.instances_per_class = manifest["instances_per_class"]
        ds.height, ds.width = manifest["height"], manifest["width"]
        ds.base_seed = manifest["base_seed"]
        ds.pairs = {}
        shape = (ds.height, ds.width)
        for rec in manifest["records"]:
            sk = np.fromfile(os.path.join(out_dir, rec["sketch"]), dtype="<f8").reshape(shape)
            ph = np.fromfile(os.path.join(out_dir, rec["photo"]), dtype="<f8").reshape(shape)
            ds.pairs[(rec["class_id"], rec["instance_seed"])] = InstancePair(
                rec["class_id"], rec["instance_seed"], sk, ph
            )
        return ds


@dataclass
class DatasetSplit:
    seen_ids: list
    unseen_ids: list
    protocol: str  # zs | gzs | fg

    def __post_init__(self):
        if set(self.seen_ids) & set(self.unseen_ids):
            raise ValueError("seen and unseen classes must be disjoint")


def make_splits(classes, seen_count, protocol, seed):
    """Deterministic disjoint seen/unseen class partition."""
    if not 0 < seen_count < len(classes):
        raise ValueError("seen_count out of range")
    if protocol not in ("zs", "gzs", "fg"):
        raise ValueError(f"unknown protocol: {protocol!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 9090]))
    order = rng.permutation(len(classes))
    seen = sorted(int(classes[i].class_id) for i in order[:seen_count])
    unseen = sorted(int(classes[i].class_id) for i in order[seen_count:])
    return DatasetSplit(seen, unseen, protocol)


@dataclass
class TripletBatch:
    sketches: np.ndarray        # (B, H, W) anchors
    photos_pos: np.ndarray      # (B, H, W)
    photos_neg: np.ndarray      # (B, H, W)
    class_pos: np.ndarray       # (B,) int ids
    class_neg: np.ndarray       # (B,)
    perm_indices: np.ndarray    # (B,) into the permutation table
    sketches_perm: np.ndarray   # (B, H, W) shuffled anchors
    jig_pos: np.ndarray         # conditioning images for the jigsaw hinge
    jig_neg: np.ndarray
    jig_modality: str           # "photo" (cross-modal) or "sketch" (uni-modal)
    anchor_keys: list           # (class_id, instance) per anchor, for audits


def sample_triplet_batch(dataset: Dataset, split: DatasetSplit, batch_size, rng,
                         table, jigsaw_mode="crossmodal"):
    """Draw anchors/positives/negatives from the seen training pool.

    (G)ZS: positive photo shares the anchor's class, negative comes from a
    different seen class.  FG: positive is the instance-paired photo, the
    negative any other seen instance.  Permutation indices are uniform over
    the table; the shuffled anchor is produced here.
    """
    from .jigsaw import shuffle

    seen = split.seen_ids
    n_inst = dataset.instances_per_class
    population = len(seen) * n_inst
    if batch_size > population:
        raise ValueError("batch larger than the training population")
    if split.protocol != "fg" and len(seen) < 2:
        raise ValueError("(G)ZS triplet sampling needs at least two seen classes")
    if split.protocol == "fg" and population < 2:
        raise ValueError("FG triplet sampling needs at least two instances")
    s, pp, pn, cp, cn, keys = [], [], [], [], [], []
    jp, jn = [], []
    for _ in range(batch_size):
        c_pos = int(seen[rng.integers(len(seen))])
        inst = int(rng.integers(n_inst))
        anchor = dataset.pairs[(c_pos, inst)]
        if split.protocol == "fg":
            pos = anchor
            while True:
                c_neg = int(seen[rng.integers(len(seen))])
                inst_n = int(rng.integers(n_inst))
                if (c_neg, inst_n) != (c_pos, inst):
                    break
            neg = dataset.pairs[(c_neg, inst_n)]
        else:
            pos = dataset.pairs[(c_pos, int(rng.integers(n_inst)))]
            while True:
                c_neg = int(seen[rng.integers(len(seen))])
                if c_neg != c_pos:
                    break
            neg = dataset.pairs[(c_neg, int(rng.integers(n_inst)))]
        s.append(anchor.sketch)
        pp.append(pos.photo)
        pn.append(neg.photo)
        if jigsaw_mode == "unimodal":
            jp.append(pos.sketch)
            jn.append(neg.sketch)
        else:
            jp.append(pos.photo)
            jn.append(neg.photo)
        cp.append(c_pos)
        cn.append(c_neg)
        keys.append((c_pos, inst))
    perms = rng.integers(table.size, size=batch_size)
    sketches = np.stack(s)
    return TripletBatch(
        sketches=sketches,
        photos_pos=np.stack(pp),
        photos_neg=np.stack(pn),
        class_pos=np.array(cp),
        class_neg=np.array(cn),
        perm_indices=perms,
        sketches_perm=shuffle(sketches, perms, table),
        jig_pos=np.stack(jp),
        jig_neg=np.stack(jn),
        jig_modality="sketch" if jigsaw_mode == "unimodal" else "photo",
        anchor_keys=keys,
    )

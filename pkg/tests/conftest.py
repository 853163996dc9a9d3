import numpy as np
import pytest

from sketchprompt.data import Dataset, default_class_specs, make_splits
from sketchprompt.encoders import ModelDims
from sketchprompt.model import SketchPhotoModel


def micro_dims(**kw):
    base = dict(layers=2, d_t=16, d_v=16, d_e=8, seq_len=12, image_size=8,
                patch_size=4, heads=2, mlp_ratio=2)
    base.update(kw)
    return ModelDims(**base)


def micro_model(seed=0, class_names=("circle", "square"), **kw):
    return SketchPhotoModel(micro_dims(), list(class_names), seed=seed, **kw)


@pytest.fixture(scope="session")
def tiny_dataset():
    # 4 classes x 6 instances at 8x8 keeps per-test forwards fast
    specs = default_class_specs()[:4]
    return Dataset(specs, instances_per_class=6, height=8, width=8, base_seed=11)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    return make_splits(tiny_dataset.classes, 3, "zs", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

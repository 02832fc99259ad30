import os

# Single-threaded BLAS keeps timing-bound acceptance checks honest; must be
# set before numpy loads.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from fragmenta.dataset_io import generate_corpus, load_dataset
from fragmenta.tearing import GeneratorConfig


def synth_image(rng, w, h, waves=6):
    """Smooth colorful test texture: random low-frequency sine products."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(waves):
            fx, fy = rng.uniform(0.002, 0.02, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            acc += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fx * xx + ph[0]) \
                * np.sin(2 * np.pi * fy * yy + ph[1])
        img[:, :, c] = acc
    img -= img.min()
    img /= img.max()
    return (img * 255).astype(np.uint8)


def small_generator_config(seed=11, t_max=3):
    return GeneratorConfig(t_max=t_max, h_min=100, w_min=100, d_min=50.0, seed=seed)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 4-image corpus written to disk and loaded back; shared by tests
    that only read it."""
    root = tmp_path_factory.mktemp("small_corpus")
    rng = np.random.default_rng(5)
    images = {i: synth_image(rng, 460, 340) for i in range(4)}
    cfg = small_generator_config()
    generate_corpus(images, cfg, root)
    return load_dataset(root)


@pytest.fixture(scope="session")
def single_pair_fragments():
    """One seeded cut of one image: two fragments plus their ground truth."""
    from fragmenta.tearing import generate

    img = synth_image(np.random.default_rng(3), 420, 320)
    cfg = GeneratorConfig(t_max=1, h_min=100, w_min=100, d_min=50.0, seed=0)
    frags, pairs = generate(img, cfg, np.random.default_rng(2))
    assert len(frags) == 2 and len(pairs) == 1
    return {f.id: f for f in frags}, pairs[0]

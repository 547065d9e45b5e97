"""Shared synthetic-data helpers for the test suite."""

import numpy as np

from cagewarp.cage import build_template_cage
from cagewarp.splats import GaussianCloud


def random_cloud(n, sh_rest_width=9, seed=0, f32=False):
    """A random but valid splat cloud."""
    rng = np.random.default_rng(seed)
    cloud = GaussianCloud(
        centers=rng.normal(size=(n, 3)),
        log_scales=rng.normal(size=(n, 3)) - 2.0,
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.normal(size=n),
        sh_dc=rng.normal(size=(n, 3)),
        sh_rest=rng.normal(size=(n, sh_rest_width)),
    )
    if f32:
        # Round every field to float32 so a PLY read-back compares exactly.
        for name in ("centers", "log_scales", "rotations", "opacity_logits",
                     "sh_dc", "sh_rest"):
            setattr(cloud, name,
                    getattr(cloud, name).astype(np.float32).astype(np.float64))
    return cloud


def cage_pair(seed=0, amplitude=0.15, resolution=2, n_anchor=40):
    """A template cage and a smoothly jiggled copy of it."""
    rng = np.random.default_rng(seed)
    anchor = rng.normal(size=(n_anchor, 3))
    source = build_template_cage(anchor, resolution=resolution)
    lo, hi = source.bbox()
    jiggle = amplitude * (hi - lo) * np.sin(
        source.vertices @ rng.normal(size=(3, 3)) * 0.7)
    return source, source.with_vertices(source.vertices + jiggle,
                                        validate=False)


def interior_points(cage, n, seed, margin=0.25):
    """Random points comfortably inside a box-shaped cage."""
    lo, hi = cage.bbox()
    rng = np.random.default_rng(seed)
    pad = margin * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, size=(n, 3))

"""Synthetic four-class image set with class-dependent geometry.

Each image holds one bright ellipse on a noisy dark background. The class
fixes its orientation (tall or wide) and which half of the frame it sits in
(upper or lower); size, exact position, brightness and noise vary per image.
Class names reuse the radiograph categories so the CLI output reads naturally.
"""
from pathlib import Path

import numpy as np

from .data import TARGET_HW, write_pgm

# class name -> (tall ellipse?, upper half?)
TOY_CLASSES = {
    "dv_upper": (True, True),
    "dv_lower": (True, False),
    "lat_upper": (False, True),
    "lat_lower": (False, False),
}


def render_ellipse(rng, tall, upper, size=TARGET_HW):
    h, w = size
    long_axis = rng.uniform(0.30, 0.42) * h
    short_axis = rng.uniform(0.12, 0.18) * h
    ry, rx = (long_axis, short_axis) if tall else (short_axis, long_axis)
    cy = rng.uniform(0.22, 0.30) * h if upper else rng.uniform(0.70, 0.78) * h
    cx = rng.uniform(0.35, 0.65) * w
    if not tall:
        ry = min(ry, 0.2 * h)
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img = rng.normal(0.15, 0.05, size)
    img[inside] += rng.uniform(0.5, 0.75)
    return np.clip(img, 0.0, 1.0)


def make_toy_arrays(n_per_class, seed=0, size=TARGET_HW):
    """Return ``(images (n, h, w, 1) float32 in [0, 1], labels, class_names)``.

    Labels follow lexicographic class order, as :func:`index_dataset` would.
    """
    rng = np.random.default_rng(seed)
    names = sorted(TOY_CLASSES)
    images, labels = [], []
    for i in range(n_per_class):
        for k, name in enumerate(names):
            tall, upper = TOY_CLASSES[name]
            images.append(render_ellipse(rng, tall, upper, size))
            labels.append(k)
    images = np.stack(images)[..., None].astype(np.float32)
    return images, np.array(labels, dtype=np.int64), names


def write_toy_dataset(root, n_per_class, seed=0, size=TARGET_HW):
    """Write 8-bit PGMs under ``root/<class>/``; returns the root path."""
    root = Path(root)
    images, labels, names = make_toy_arrays(n_per_class, seed, size)
    counters = dict.fromkeys(names, 0)
    for img, k in zip(images, labels):
        name = names[k]
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        write_pgm(d / f"{name}_{counters[name]:04d}.pgm", np.rint(img[..., 0] * 255).astype(int))
        counters[name] += 1
    return root

"""Procedural image/caption pairs for desk-scale training runs.

Each image is one coloured shape on a light or dark background; the caption
is generated from the same attributes, e.g. "un cerchio rosso piccolo al buio".
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from clipita.augment import write_ppm

SHAPES = ("cerchio", "anello", "rettangolo", "triangolo")
COLORS = {
    "rosso": (220, 30, 30),
    "verde": (30, 180, 40),
    "blu": (30, 50, 220),
    "giallo": (240, 220, 20),
    "viola": (140, 40, 180),
    "arancione": (250, 140, 20),
    "azzurro": (80, 200, 250),
    "rosa": (250, 130, 190),
}
BACKGROUNDS = {"chiaro": (205, 205, 205), "scuro": (35, 35, 35)}
SIZES = ("grande", "piccolo")


def caption_for(shape: str, color: str, size: str, background: str) -> str:
    words = ["un", shape, color]
    if size == "piccolo":
        words.append("piccolo")
    if background == "scuro":
        words += ["al", "buio"]
    return " ".join(words)


def _mask(shape: str, radius: float, cx: float, cy: float, n: int) -> np.ndarray:
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64) + 0.5
    dx, dy = xs - cx, ys - cy
    if shape == "cerchio":
        return dx * dx + dy * dy <= radius * radius
    if shape == "anello":
        d2 = dx * dx + dy * dy
        inner = radius - max(2.0, 0.4 * radius)
        return (d2 <= radius * radius) & (d2 >= inner * inner)
    if shape == "rettangolo":
        return (np.abs(dx) <= radius * 1.1) & (np.abs(dy) <= radius * 0.4)
    if shape == "triangolo":
        # apex up, base at cy + radius
        top, bottom = cy - radius, cy + radius
        frac = (ys - top) / (bottom - top)
        return (ys >= top) & (ys <= bottom) & (np.abs(dx) <= frac * radius * 1.1)
    raise ValueError(f"unknown shape {shape!r}")


def render(shape: str, color: str, size: str, background: str, rng: np.random.Generator,
           image_size: int = 32) -> np.ndarray:
    n = image_size
    radius = (0.34 if size == "grande" else 0.17) * n * rng.uniform(0.92, 1.08)
    jitter = 0.06 * n
    cx = n / 2 + rng.uniform(-jitter, jitter)
    cy = n / 2 + rng.uniform(-jitter, jitter)
    img = np.empty((n, n, 3), dtype=np.uint8)
    img[:] = BACKGROUNDS[background]
    img[_mask(shape, radius, cx, cy, n)] = COLORS[color]
    return img


def make_pairs(n_pairs: int = 256, seed: int = 0, image_size: int = 32):
    """Return ``(ids, images uint8 (N, S, S, 3), captions)``.

    Attribute combinations are cycled so every combination appears as evenly
    as ``n_pairs`` allows; order is shuffled by ``seed``.
    """
    rng = np.random.default_rng(seed)
    combos = list(itertools.product(SHAPES, COLORS, SIZES, BACKGROUNDS))
    picks = [combos[i % len(combos)] for i in range(n_pairs)]
    order = rng.permutation(n_pairs)
    ids, images, captions = [], [], []
    for k, j in enumerate(order):
        shape, color, size, bg = picks[j]
        ids.append(f"syn-{k:04d}")
        images.append(render(shape, color, size, bg, rng, image_size))
        captions.append(caption_for(shape, color, size, bg))
    return ids, np.stack(images), captions


def write_dataset(out_dir: str | Path, n_pairs: int = 256, seed: int = 0,
                  image_size: int = 32) -> Path:
    """Write PPM images, a ``manifest.jsonl`` and a zero-shot class list.

    Classes are shape+colour; every image record also carries its class id
    under ``label`` so the manifest doubles as a labelled-image manifest.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ids, images, captions = make_pairs(n_pairs, seed, image_size)
    classes = [f"{s} {c}" for s, c in itertools.product(SHAPES, COLORS)]
    lines = []
    for rid, img, cap in zip(ids, images, captions):
        rel = f"images/{rid}.ppm"
        write_ppm(out / rel, img)
        shape, color = cap.split()[1:3]
        lines.append(json.dumps({"id": rid, "image_ref": rel, "caption": cap, "source": "custom",
                                 "lang": "it", "label": classes.index(f"{shape} {color}")},
                                sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    with open(out / "classes.tsv", "w") as fh:
        for i, label in enumerate(classes):
            fh.write(f"{i}\tun\t{label}\n")
    return out / "manifest.jsonl"

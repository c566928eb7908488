"""Deterministic synthetic H&E-like textures, slides and labelled patch sets.

Two classes are generated.  Tumor-like tissue has dense dark-purple
elliptical nuclei and violet curvilinear vessels on a mottled pink stroma;
healthy-like tissue has sparse, smaller nuclei on a smooth pink background.
Glass (slide background) is a uniform light gray.  Every patch is drawn from
its own seed derived from ``(seed, kind, index)``, so any subset can be
regenerated independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

TUMOR = "tumor"
HEALTHY = "not_tumor"
GLASS = "glass"

GLASS_RGB = (242, 242, 242)
STROMA_RGB = (232, 168, 204)
NUCLEUS_RGB = (88, 48, 148)
VESSEL_RGB = (156, 92, 202)

KIND_CODES = {TUMOR: 1, HEALTHY: 2, GLASS: 3}


def patch_rng(seed: int, kind: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, KIND_CODES[kind], index])


def _background(rng, h, w, base, mottle, grain):
    # low-frequency mottling drawn on a coarse grid and upsampled
    gh, gw = h // 16 + 3, w // 16 + 3
    coarse = ndimage.gaussian_filter(rng.standard_normal((gh, gw)), 1.5, mode="wrap")
    low = ndimage.zoom(coarse, 16, order=1)[:h, :w]
    low *= mottle / (low.std() + 1e-12)
    img = rng.standard_normal((h, w, 3), dtype=np.float32)
    img *= grain
    for ch in range(3):
        img[..., ch] += base[ch] + low * (1.0 if ch != 1 else 1.4)
    return img


def _draw_nuclei(img, rng, count, r_range, elong, color, truth=None):
    h, w = img.shape[:2]
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        a = rng.uniform(*r_range)
        b = a / rng.uniform(1.0, elong)
        ang = rng.uniform(0, math.pi)
        shade = rng.uniform(-18, 18)
        rr = int(math.ceil(a)) + 1
        y0, y1 = max(int(cy) - rr, 0), min(int(cy) + rr + 1, h)
        x0, x1 = max(int(cx) - rr, 0), min(int(cx) + rr + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        dy = np.arange(y0, y1)[:, None] - cy
        dx = np.arange(x0, x1)[None, :] - cx
        u = dx * math.cos(ang) + dy * math.sin(ang)
        v = -dx * math.sin(ang) + dy * math.cos(ang)
        q = (u / a) ** 2 + (v / b) ** 2
        inside = q <= 1.0
        # darker core, chromatin-like speckle
        tone = np.asarray(color, dtype=float) + shade - 25.0 * (1.0 - q[inside])[:, None]
        tone += rng.normal(0.0, 6.0, size=tone.shape)
        img[y0:y1, x0:x1][inside] = tone
        if truth is not None:
            truth[y0:y1, x0:x1][inside] = True


def _draw_vessels(img, rng, count, color, radius=2):
    h, w = img.shape[:2]
    trace = np.zeros((h, w), dtype=bool)
    for _ in range(count):
        n = int(rng.integers(60, 220))
        heading = rng.uniform(0, 2 * math.pi)
        turn = np.cumsum(rng.normal(0.0, 0.12, n))
        # sub-pixel steps so the traced centre line has no gaps
        steps = np.repeat(np.c_[np.sin(heading + turn), np.cos(heading + turn)] * 0.5, 4, axis=0)
        pts = np.array([rng.uniform(0, h), rng.uniform(0, w)]) + np.cumsum(steps, axis=0)
        pts = np.rint(pts).astype(np.int64)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        trace[pts[ok, 0], pts[ok, 1]] = True
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    vessel = ndimage.binary_dilation(trace, structure=yy * yy + xx * xx <= radius * radius)
    img[vessel] = color


def _finish(img) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def tumor_texture(rng, h, w, truth=None) -> np.ndarray:
    img = _background(rng, h, w, STROMA_RGB, mottle=10.0, grain=5.0)
    area = h * w
    _draw_vessels(img, rng, max(1, int(area / 40_000)), VESSEL_RGB)
    _draw_nuclei(img, rng, int(area / 650), (5.0, 9.0), 1.9, NUCLEUS_RGB, truth)
    return _finish(ndimage.gaussian_filter(img, (0.7, 0.7, 0)))


def healthy_texture(rng, h, w, truth=None) -> np.ndarray:
    img = _background(rng, h, w, STROMA_RGB, mottle=4.0, grain=2.5)
    _draw_nuclei(img, rng, int(h * w / 1800), (4.0, 6.5), 1.3, NUCLEUS_RGB, truth)
    return _finish(ndimage.gaussian_filter(img, (0.7, 0.7, 0)))


def glass_texture(rng, h, w, truth=None) -> np.ndarray:
    return np.broadcast_to(np.asarray(GLASS_RGB, dtype=np.uint8), (h, w, 3)).copy()


TEXTURES = {TUMOR: tumor_texture, HEALTHY: healthy_texture, GLASS: glass_texture}


def rotated_crop(rng, kind: str, size: int, angle: float) -> np.ndarray:
    """Texture rotated by ``angle`` degrees (counter-clockwise), cropped so no corner padding remains."""
    big = int(math.ceil(size * math.sqrt(2))) + 4
    tex = TEXTURES[kind](rng, big, big)
    rot = np.asarray(Image.fromarray(tex).rotate(angle, resample=Image.Resampling.BILINEAR))
    off = (big - size) // 2
    return rot[off : off + size, off : off + size].copy()


def make_patch(seed: int, kind: str, index: int, size: int = 600, rotate: bool = False) -> tuple[np.ndarray, float]:
    """One patch and the rotation angle applied to it (0 when ``rotate`` is false)."""
    rng = patch_rng(seed, kind, index)
    if rotate:
        angle = float(rng.uniform(0.0, 360.0))
        return rotated_crop(rng, kind, size, angle), angle
    return TEXTURES[kind](rng, size, size), 0.0


def nucleus_truth(seed: int, kind: str, index: int, size: int = 600) -> np.ndarray:
    """Pixels painted as nuclei when drawing the unrotated patch ``(seed, kind, index)``."""
    truth = np.zeros((size, size), dtype=bool)
    TEXTURES[kind](patch_rng(seed, kind, index), size, size, truth)
    return truth


@dataclass(frozen=True)
class PatchSpec:
    patch_id: str
    kind: str
    index: int
    slide_id: str
    split: str
    rotate: bool


def dataset_specs(n_train: int = 800, n_test: int = 400, slides_train: int = 8, slides_test: int = 4,
                  rotate_test: bool = True) -> list[PatchSpec]:
    """Balanced train/test patch list; slides never straddle the split."""
    specs = []
    counters = {TUMOR: 0, HEALTHY: 0}
    for split, n, n_slides, offset in (("train", n_train, slides_train, 0), ("test", n_test, slides_test, slides_train)):
        for i in range(n):
            kind = TUMOR if i % 2 == 0 else HEALTHY
            slide = f"s{offset + (i * n_slides) // max(n, 1):02d}"
            idx = counters[kind]
            counters[kind] += 1
            specs.append(PatchSpec(f"{split}_{i:04d}", kind, idx, slide, split, split == "test" and rotate_test))
    return specs


# default slide: glass (G), healthy (H) and tumor (T) tiles; the tumor block
# is 3x2 tiles and touches the bottom edge
SLIDE_LAYOUT = (
    "GGHHGG",
    "GHHHHG",
    "HHTTTH",
    "HHTTTH",
)


def make_slide(seed: int, layout=SLIDE_LAYOUT, tile: int = 600) -> tuple[np.ndarray, np.ndarray]:
    """Slide raster and its slide-resolution ROI mask (True = tumor)."""
    rows, cols = len(layout), len(layout[0])
    slide = np.empty((rows * tile, cols * tile, 3), dtype=np.uint8)
    roi = np.zeros((rows * tile, cols * tile), dtype=bool)
    kinds = {"G": GLASS, "H": HEALTHY, "T": TUMOR}
    for r, line in enumerate(layout):
        if len(line) != cols:
            raise ValueError("slide layout rows must have equal length")
        for c, ch in enumerate(line):
            kind = kinds[ch]
            rng = np.random.default_rng([seed, 9, r, c])
            slide[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = TEXTURES[kind](rng, tile, tile)
            if kind == TUMOR:
                roi[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = True
    return slide, roi

"""Slide-level processing: tiling, per-tile classification, map cleanup, overlays, region metrics."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .imaging import MorphOp, StructuringElement, as_rgb, channel_image, morph, square
from .learn.models import TrainedModel
from .nuclei import NucleiConfig, cellularity_report
from .texture import (DominantPatternDictionary, FeatureVector, LayoutError, LbpConfig, PatternHistogram,
                      assemble_feature, extract_histogram, project)

TILE_SIZE = 600
SKIPPED = -1
NOT_TUMOR = 0
TUMOR = 1
LABEL_NAMES = {SKIPPED: "skipped", NOT_TUMOR: "not_tumor", TUMOR: "tumor"}


class TileError(RuntimeError):
    def __init__(self, row: int, col: int, cause: Exception):
        super().__init__(f"tile (row={row}, col={col}): {cause}")
        self.row, self.col, self.cause = row, col, cause


@dataclass(frozen=True)
class SlideTiling:
    width: int
    height: int
    tile_size: int = TILE_SIZE

    @property
    def rows(self) -> int:
        return self.height // self.tile_size

    @property
    def cols(self) -> int:
        return self.width // self.tile_size

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def origin(self, row: int, col: int) -> tuple[int, int]:
        """(x, y) of the tile's top-left pixel."""
        return col * self.tile_size, row * self.tile_size

    def tiles(self):
        for r in range(self.rows):
            for c in range(self.cols):
                yield r, c

    def crop(self, slide: np.ndarray, row: int, col: int) -> np.ndarray:
        x, y = self.origin(row, col)
        return slide[y : y + self.tile_size, x : x + self.tile_size]


def tile_slide(slide: np.ndarray, tile_size: int = TILE_SIZE) -> SlideTiling:
    """Grid of full tiles; right and bottom remainders are dropped."""
    h, w = np.asarray(slide).shape[:2]
    if tile_size < 1:
        raise ValueError("tile size must be positive")
    if w < tile_size or h < tile_size:
        raise ValueError(f"slide {w}x{h} is smaller than one {tile_size}x{tile_size} tile")
    return SlideTiling(w, h, tile_size)


def patch_histograms(patch, channels: Sequence[str], cfg: LbpConfig) -> list[PatternHistogram]:
    return [extract_histogram(channel_image(patch, ch), cfg) for ch in channels]


def describe_patch(patch, dictionaries: Sequence[DominantPatternDictionary], expected=None) -> FeatureVector:
    """Project each channel's histogram onto its dictionary and concatenate."""
    parts = []
    for d in dictionaries:
        hist = extract_histogram(channel_image(patch, d.channel), d.config)
        parts.append((d, project(hist, d)))
    return assemble_feature(parts, expected)


@dataclass
class TumorMap:
    labels: np.ndarray              # SKIPPED / NOT_TUMOR / TUMOR per tile
    scores: np.ndarray              # tumor score, NaN for skipped tiles
    cleaned: np.ndarray | None = None
    tile_size: int = TILE_SIZE
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def raw_positive(self) -> np.ndarray:
        return self.labels == TUMOR

    @property
    def positive(self) -> np.ndarray:
        return self.cleaned if self.cleaned is not None else self.raw_positive

    def to_dict(self) -> dict:
        names = np.vectorize(LABEL_NAMES.get, otypes=[object])(self.labels)
        scores = [[None if np.isnan(s) else float(s) for s in row] for row in self.scores]
        d = {
            "rows": int(self.labels.shape[0]),
            "cols": int(self.labels.shape[1]),
            "tile_size": self.tile_size,
            "labels": names.tolist(),
            "scores": scores,
            "cleaned": None if self.cleaned is None else self.cleaned.astype(int).tolist(),
            "provenance": self.provenance,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TumorMap":
        codes = {v: k for k, v in LABEL_NAMES.items()}
        labels = np.array([[codes[n] for n in row] for row in d["labels"]], dtype=np.int8).reshape(d["rows"], d["cols"])
        scores = np.array([[np.nan if s is None else s for s in row] for row in d["scores"]], dtype=np.float64)
        scores = scores.reshape(d["rows"], d["cols"])
        cleaned = None if d.get("cleaned") is None else np.array(d["cleaned"], dtype=bool).reshape(d["rows"], d["cols"])
        return cls(labels, scores, cleaned, int(d["tile_size"]), d.get("provenance", {}))


def _classify_tile(patch, model: TrainedModel, dictionaries, gate: NucleiConfig | None):
    if gate is not None and not cellularity_report(patch, cfg=gate).accepted:
        return SKIPPED, np.nan
    fv = describe_patch(patch, dictionaries)
    labels, scores = model.predict_batch(fv.values, fv.layout)
    return int(labels[0]), float(scores[0])


def run_inference(slide: np.ndarray, model: TrainedModel, dictionaries: Sequence[DominantPatternDictionary],
                  tile_size: int = TILE_SIZE, gate: NucleiConfig | None = NucleiConfig(), threads: int = 1,
                  cleanup: dict | None = None, provenance: dict | None = None) -> TumorMap:
    """Classify every tile of ``slide`` and return the raw and cleaned tumor map.

    Tiles failing the cellularity gate are marked skipped.  Results are
    gathered by grid position, so ``threads`` never changes the output.
    """
    slide = as_rgb(slide)
    tiling = tile_slide(slide, tile_size)
    expected = tuple(model.layout)
    got = tuple((d.channel, d.digest, d.M) for d in dictionaries)
    if expected and tuple((s.channel, s.dictionary, s.length) for s in expected) != got:
        raise LayoutError(
            "dictionaries do not match the model; expected "
            + ", ".join(f"{s.channel.value}={s.dictionary}" for s in expected)
        )
    coords = list(tiling.tiles())

    def work(rc):
        r, c = rc
        try:
            return _classify_tile(tiling.crop(slide, r, c), model, dictionaries, gate)
        except Exception as exc:  # noqa: BLE001 - re-raised with the tile position
            raise TileError(r, c, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, coords))
    else:
        results = [work(rc) for rc in coords]
    labels = np.full(tiling.shape, SKIPPED, dtype=np.int8)
    scores = np.full(tiling.shape, np.nan)
    for (r, c), (lab, score) in zip(coords, results):
        labels[r, c] = lab
        scores[r, c] = score
    prov = {
        "model_kind": model.kind,
        "layout_hash": model.layout_hash,
        "dictionaries": {d.channel.value: d.digest for d in dictionaries},
        "gate": None if gate is None else gate.to_dict(),
    }
    prov.update(provenance or {})
    tmap = TumorMap(labels, scores, None, tile_size, prov)
    return cleanup_map(tmap, **(cleanup or {}))


def cleanup_grid(positive: np.ndarray, min_component: int = 2, se: StructuringElement = square(1)) -> np.ndarray:
    opened = morph(np.asarray(positive, dtype=bool), MorphOp.OPEN, se)
    lab, n = ndimage.label(opened)  # default structure is 4-connectivity
    if n == 0:
        return opened
    sizes = np.bincount(lab.ravel())
    keep = sizes >= min_component
    keep[0] = False
    return keep[lab]


def cleanup_map(tmap: TumorMap, min_component: int = 2, se: StructuringElement = square(1)) -> TumorMap:
    """Opening then removal of 4-connected components smaller than ``min_component`` tiles.

    Always starts from the raw labels, so applying it twice changes nothing.
    """
    cleaned = cleanup_grid(tmap.raw_positive, min_component, se)
    prov = dict(tmap.provenance)
    prov["cleanup"] = {"min_component": min_component, "se": {"shape": se.shape, "radius": se.radius}}
    return TumorMap(tmap.labels, tmap.scores, cleaned, tmap.tile_size, prov)


def render_overlay(tmap: TumorMap, tiling: SlideTiling, color=(0, 0, 0), background=(255, 255, 255),
                   thumb_tile: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Slide-sized overlay painting each positive tile, plus a small thumbnail.

    The thumbnail draws each tile as a ``thumb_tile`` square.
    """
    if tmap.shape != tiling.shape or tmap.tile_size != tiling.tile_size:
        raise ValueError(f"map {tmap.shape} does not fit tiling {tiling.shape}")
    pos = tmap.positive
    ts = tiling.tile_size
    full = np.zeros((tiling.height, tiling.width), dtype=bool)
    full[: tiling.rows * ts, : tiling.cols * ts] = np.kron(pos, np.ones((ts, ts), dtype=bool)).astype(bool)
    overlay = np.empty((tiling.height, tiling.width, 3), dtype=np.uint8)
    overlay[:] = background
    overlay[full] = color
    thumb_mask = np.kron(pos, np.ones((thumb_tile, thumb_tile), dtype=bool)).astype(bool)
    thumb = np.empty(thumb_mask.shape + (3,), dtype=np.uint8)
    thumb[:] = background
    thumb[thumb_mask] = color
    return overlay, thumb


def resample_truth(truth: np.ndarray, tiling: SlideTiling) -> np.ndarray:
    """Tile-grid truth by strict per-tile majority; grid-sized input is returned as is."""
    truth = np.asarray(truth, dtype=bool)
    if truth.shape == tiling.shape:
        return truth
    if truth.shape != (tiling.height, tiling.width):
        raise ValueError(f"ground truth {truth.shape[::-1]} matches neither the slide nor the tile grid")
    ts = tiling.tile_size
    cut = truth[: tiling.rows * ts, : tiling.cols * ts]
    frac = cut.reshape(tiling.rows, ts, tiling.cols, ts).sum(axis=(1, 3))
    return frac * 2 > ts * ts


def region_metrics(pred: np.ndarray, truth: np.ndarray) -> dict:
    """IoU and Dice in percent; 100 when both masks are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    inter = int((pred & truth).sum())
    union = int((pred | truth).sum())
    size = int(pred.sum()) + int(truth.sum())
    if union == 0:
        return {"iou": 100.0, "dice": 100.0}
    return {"iou": 100.0 * inter / union, "dice": 100.0 * 2 * inter / size}

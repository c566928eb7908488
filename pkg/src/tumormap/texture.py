"""LBP and rotated LBP histograms, dominant-pattern selection, feature assembly.

Neighbour ``p`` of a pixel sits at angle ``2*pi*p/P`` counter-clockwise from
the +x axis at distance ``R``; image rows grow downwards, so its pixel offset
is ``(R cos a, -R sin a)``.  Off-grid samples are bilinearly interpolated.

The interpolation is arranged so that rotating a square image by a multiple
of 90 degrees reproduces the sample values bit for bit (for ``P % 4 == 0``):
offsets outside the first quadrant are exact rotations of first-quadrant
ones, each axis is interpolated from the magnitude of its offset, and the
four bilinear terms are summed as ``(t_nn + t_ff) + (t_nf + t_fn)``, which is
symmetric under swapping the axes.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .imaging import Channel, ScalarImage

MAX_P = 24
CHANNEL_ORDER = (Channel.H, Channel.V, Channel.GRAY)


class LayoutError(ValueError):
    """Raised when histograms, dictionaries or feature vectors do not line up."""


@dataclass(frozen=True)
class LbpConfig:
    P: int = 16
    R: float = 3.0
    variant: str = "RLBP"
    snap_tol: float = 1e-6

    def __post_init__(self):
        if not 4 <= self.P <= MAX_P:
            raise ValueError(f"P must be in [4, {MAX_P}], got {self.P}")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.variant not in ("LBP", "RLBP"):
            raise ValueError(f"variant must be LBP or RLBP, got {self.variant!r}")
        object.__setattr__(self, "R", float(self.R))

    @property
    def border(self) -> int:
        return math.ceil(self.R)

    @property
    def n_bins(self) -> int:
        return 1 << self.P

    def to_dict(self) -> dict:
        return {"P": self.P, "R": self.R, "variant": self.variant, "snap_tol": self.snap_tol}


def _snap(v: float, tol: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) <= tol else v


@functools.lru_cache(maxsize=None)
def neighbor_offsets(P: int, R: float, snap_tol: float = 1e-6) -> tuple[tuple[float, float], ...]:
    """(dx, dy) pixel offsets of the P circular neighbours, y pointing down."""
    R = float(R)
    if P % 4 == 0:
        q = P // 4
        first = [(R * math.cos(2 * math.pi * p / P), R * math.sin(2 * math.pi * p / P)) for p in range(q)]
        # (u, v) -> (-v, u) is an exact 90 degree rotation
        quads = [first]
        for _ in range(3):
            quads.append([(-v, u) for u, v in quads[-1]])
        uv = [pt for quad in quads for pt in quad]
    else:
        uv = [(R * math.cos(2 * math.pi * p / P), R * math.sin(2 * math.pi * p / P)) for p in range(P)]
    return tuple((_snap(u, snap_tol) + 0.0, _snap(-v, snap_tol) + 0.0) for u, v in uv)


def _axis_taps(offset: float) -> tuple[int, int, float, float]:
    """Near/far integer taps and their weights along one axis."""
    a = abs(offset)
    lo = math.floor(a)
    f = a - lo
    sign = -1 if offset < 0 else 1
    if f == 0.0:
        return sign * lo, sign * lo, 1.0, 0.0
    return sign * lo, sign * (lo + 1), 1.0 - f, f


@functools.lru_cache(maxsize=None)
def sampling_table(cfg: LbpConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-neighbour integer taps and bilinear weights consumed by the kernels.

    Row p of ``offsets`` is (near_dy, far_dy, near_dx, far_dx); row p of
    ``weights`` is (w_nn, w_ff, w_nf, w_fn) where the first letter refers to x.
    """
    offsets = np.zeros((cfg.P, 4), dtype=np.intp)
    weights = np.zeros((cfg.P, 4), dtype=np.float64)
    for p, (dx, dy) in enumerate(neighbor_offsets(cfg.P, cfg.R, cfg.snap_tol)):
        nx, fx, wnx, wfx = _axis_taps(dx)
        ny, fy, wny, wfy = _axis_taps(dy)
        offsets[p] = (ny, fy, nx, fx)
        weights[p] = (wnx * wny, wfx * wfy, wnx * wfy, wfx * wny)
    offsets.flags.writeable = False
    weights.flags.writeable = False
    return offsets, weights


def sample_neighbors(img: ScalarImage | np.ndarray, x: int, y: int, cfg: LbpConfig) -> np.ndarray:
    """Interpolated values of the P neighbours of pixel (x, y), one at a time."""
    values = img.values if isinstance(img, ScalarImage) else np.asarray(img, dtype=np.float64)
    b = cfg.border
    height, width = values.shape
    if not (b <= x < width - b and b <= y < height - b):
        raise ValueError(f"pixel ({x}, {y}) is closer than {b} px to the border")
    out = np.empty(cfg.P)
    for p, (dx, dy) in enumerate(neighbor_offsets(cfg.P, cfg.R, cfg.snap_tol)):
        nx, fx, wnx, wfx = _axis_taps(dx)
        ny, fy, wny, wfy = _axis_taps(dy)
        t_nn = (wnx * wny) * float(values[y + ny, x + nx])
        t_ff = (wfx * wfy) * float(values[y + fy, x + fx])
        t_nf = (wnx * wfy) * float(values[y + fy, x + nx])
        t_fn = (wfx * wny) * float(values[y + ny, x + fx])
        out[p] = (t_nn + t_ff) + (t_nf + t_fn)
    return out


def lbp_code(samples: Sequence[float], center: float) -> int:
    code = 0
    for p, g in enumerate(samples):
        if g >= center:
            code |= 1 << p
    return code


def dominant_direction(samples: Sequence[float], center: float) -> int:
    best = -1.0
    d = 0
    for p, g in enumerate(samples):
        mag = abs(g - center)
        if mag > best:
            best = mag
            d = p
    return d


def rlbp_code(samples: Sequence[float], center: float) -> int:
    """LBP code with weights rotated so the dominant neighbour gets weight 1."""
    P = len(samples)
    d = dominant_direction(samples, center)
    code = 0
    for p, g in enumerate(samples):
        if g >= center:
            code |= 1 << ((p - d) % P)
    return code


@dataclass(frozen=True)
class PatternHistogram:
    counts: np.ndarray
    channel: Channel
    config: LbpConfig

    def __post_init__(self):
        if self.counts.shape != (self.config.n_bins,):
            raise LayoutError(f"histogram needs {self.config.n_bins} bins, got {self.counts.shape}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def sparse(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.counts)
        return idx, self.counts[idx]

    @classmethod
    def from_sparse(cls, idx, counts, channel, config: LbpConfig) -> "PatternHistogram":
        dense = np.zeros(config.n_bins, dtype=np.int64)
        dense[np.asarray(idx, dtype=np.int64)] = counts
        return cls(dense, Channel(channel), config)


def extract_histogram(img: ScalarImage, cfg: LbpConfig, backend=None) -> PatternHistogram:
    """Histogram of one (R)LBP code per interior pixel of ``img``.

    Pixels closer than ``ceil(R)`` to the border are skipped.  ``backend``
    overrides the kernel chosen at import (see :mod:`tumormap.kernels`).
    """
    b = cfg.border
    if img.height <= 2 * b or img.width <= 2 * b:
        raise ValueError(f"image {img.width}x{img.height} too small for radius {cfg.R}: needs more than {2 * b} px per side")
    values = np.ascontiguousarray(img.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("image contains non-finite values")
    offsets, weights = sampling_table(cfg)
    counts = np.zeros(cfg.n_bins, dtype=np.int64)
    kernel = backend or kernels.code_histogram
    kernel(values, offsets, weights, b, cfg.variant == "RLBP", counts)
    return PatternHistogram(counts, img.channel, cfg)


@dataclass(frozen=True)
class DominantPatternDictionary:
    channel: Channel
    config: LbpConfig
    theta: float
    selected: tuple[int, ...]

    def __post_init__(self):
        if not self.selected:
            raise LayoutError("a dictionary needs at least one pattern")
        if len(set(self.selected)) != len(self.selected):
            raise LayoutError("dictionary patterns must be unique")
        if min(self.selected) < 0 or max(self.selected) >= self.config.n_bins:
            raise LayoutError("dictionary pattern out of range")
        object.__setattr__(self, "selected", tuple(int(i) for i in self.selected))
        object.__setattr__(self, "channel", Channel(self.channel))

    @property
    def M(self) -> int:
        return len(self.selected)

    def to_dict(self) -> dict:
        return {
            "channel": self.channel.value,
            "P": self.config.P,
            "R": self.config.R,
            "variant": self.config.variant,
            "theta": self.theta,
            "selected": list(self.selected),
        }

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict, snap_tol: float = 1e-6) -> "DominantPatternDictionary":
        cfg = LbpConfig(P=int(data["P"]), R=float(data["R"]), variant=data["variant"], snap_tol=snap_tol)
        return cls(Channel(data["channel"]), cfg, float(data["theta"]), tuple(data["selected"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DominantPatternDictionary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def select_dominant(summed: np.ndarray, theta: float) -> list[int]:
    """Indices of the fewest most-frequent bins whose mass fraction reaches theta."""
    summed = np.asarray(summed)
    order = np.argsort(-summed, kind="stable")
    cum = np.cumsum(summed[order])
    total = cum[-1]
    frac = cum / total
    m = int(np.argmax(frac >= theta)) + 1
    return order[:m].tolist()


def build_dictionary(histograms: Iterable[PatternHistogram], theta: float = 0.90) -> DominantPatternDictionary:
    """Learn the dominant patterns of a channel from training histograms.

    Histograms are summed, bins ranked by decreasing count (ties by pattern
    index) and the shortest prefix holding at least ``theta`` of the total
    mass is kept.
    """
    if not 0 < theta <= 1:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    summed = None
    channel = cfg = None
    for h in histograms:
        if summed is None:
            channel, cfg = h.channel, h.config
            summed = np.zeros(cfg.n_bins, dtype=np.int64)
        elif h.channel != channel or h.config != cfg:
            raise LayoutError(f"cannot mix {h.channel.value}/{h.config} with {channel.value}/{cfg}")
        summed += h.counts
    if summed is None or summed.sum() == 0:
        raise ValueError("no training mass to select patterns from")
    return DominantPatternDictionary(channel, cfg, float(theta), tuple(select_dominant(summed, theta)))


def project(hist: PatternHistogram, dictionary: DominantPatternDictionary) -> np.ndarray:
    """L1-normalized counts of the dictionary's patterns, in dictionary order."""
    if hist.channel != dictionary.channel:
        raise LayoutError(f"histogram channel {hist.channel.value} does not match dictionary {dictionary.channel.value}")
    c, d = hist.config, dictionary.config
    if (c.P, c.R, c.variant) != (d.P, d.R, d.variant):
        raise LayoutError(f"histogram config {c} does not match dictionary config {d}")
    vals = hist.counts[np.asarray(dictionary.selected)].astype(np.float64)
    s = vals.sum()
    return vals / s if s > 0 else vals


@dataclass(frozen=True)
class Segment:
    channel: Channel
    dictionary: str
    length: int


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[Segment, ...]

    @property
    def layout_hash(self) -> str:
        return layout_hash(self.layout)


def layout_hash(layout: Sequence[Segment]) -> str:
    blob = "|".join(f"{s.channel.value}:{s.dictionary}:{s.length}" for s in layout)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def assemble_feature(projections: Sequence[tuple[DominantPatternDictionary, np.ndarray]],
                     expected: Sequence[Segment] | None = None) -> FeatureVector:
    """Concatenate per-channel projections into one feature vector.

    Channels must be unique and appear in the order H, V, GRAY.  When
    ``expected`` is given (a trained model's layout) the result must match it.
    """
    if not projections:
        raise LayoutError("no projections to assemble")
    layout = []
    for dictionary, vec in projections:
        if len(vec) != dictionary.M:
            raise LayoutError(f"{dictionary.channel.value} projection has length {len(vec)}, dictionary has {dictionary.M}")
        layout.append(Segment(dictionary.channel, dictionary.digest, dictionary.M))
    ranks = [CHANNEL_ORDER.index(s.channel) for s in layout]
    if ranks != sorted(set(ranks)):
        raise LayoutError(f"channel order {[s.channel.value for s in layout]} is not canonical (H, V, GRAY)")
    layout = tuple(layout)
    if expected is not None and tuple(expected) != layout:
        raise LayoutError(f"feature layout {layout_hash(layout)} does not match expected {layout_hash(expected)}")
    values = np.concatenate([np.asarray(v, dtype=np.float64) for _, v in projections])
    return FeatureVector(values, layout)

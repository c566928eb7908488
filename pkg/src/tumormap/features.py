"""Batch feature extraction for labelled patch sets.

Histograms are kept sparse between the two passes (dictionary fitting on the
training split, then projection of every patch) so that thousands of 2^16-bin
histograms fit in memory.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .imaging import Channel, channel_image
from .texture import (DominantPatternDictionary, LbpConfig, PatternHistogram, assemble_feature, build_dictionary,
                      extract_histogram, project)

Sparse = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class FeatureConfig:
    channels: tuple[str, ...] = ("H", "V")
    lbp: LbpConfig = field(default_factory=LbpConfig)
    theta: float = 0.90

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(Channel(c).value for c in self.channels))

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "lbp": self.lbp.to_dict(), "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(tuple(d.get("channels", ("H", "V"))), LbpConfig(**d.get("lbp", {})), float(d.get("theta", 0.90)))


def patch_sparse_histograms(patch, channels: Sequence[str], cfg: LbpConfig | Sequence[LbpConfig]):
    """Sparse histograms per channel; with several configs, one list per config.

    Channel images are computed once and shared by all configs.
    """
    cfgs = [cfg] if isinstance(cfg, LbpConfig) else list(cfg)
    images = [channel_image(patch, ch) for ch in channels]
    out = [[extract_histogram(img, c).sparse() for img in images] for c in cfgs]
    return out[0] if isinstance(cfg, LbpConfig) else out


def compute_histograms(load: Callable[[int], np.ndarray], n: int, channels: Sequence[str],
                       cfg: LbpConfig | Sequence[LbpConfig], threads: int = 1):
    """Sparse per-channel histograms of patches ``load(0) .. load(n-1)``, in order.

    Given a sequence of configs, returns one such list per config.
    """

    def one(i):
        return patch_sparse_histograms(load(i), channels, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            res = list(pool.map(one, range(n)))
    else:
        res = [one(i) for i in range(n)]
    if isinstance(cfg, LbpConfig):
        return res
    return [[r[k] for r in res] for k in range(len(cfg))]


def _dense(sp: Sparse, channel: str, cfg: LbpConfig) -> PatternHistogram:
    return PatternHistogram.from_sparse(sp[0], sp[1], channel, cfg)


def fit_dictionaries(train_hists: Iterable[list[Sparse]], channels: Sequence[str], cfg: LbpConfig,
                     theta: float) -> list[DominantPatternDictionary]:
    train_hists = list(train_hists)
    if not train_hists:
        raise ValueError("empty training split: cannot learn dominant patterns")
    return [
        build_dictionary((_dense(h[k], ch, cfg) for h in train_hists), theta)
        for k, ch in enumerate(channels)
    ]


def project_all(hists: Sequence[list[Sparse]], dictionaries: Sequence[DominantPatternDictionary]):
    """Feature matrix (one row per patch) and its layout."""
    rows = []
    layout = None
    for h in hists:
        parts = []
        for k, d in enumerate(dictionaries):
            parts.append((d, project(_dense(h[k], d.channel.value, d.config), d)))
        fv = assemble_feature(parts)
        layout = fv.layout
        rows.append(fv.values)
    if not rows:
        width = sum(d.M for d in dictionaries)
        return np.zeros((0, width)), layout
    return np.vstack(rows), layout

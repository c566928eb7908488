"""Nucleus mask, cellularity ratio and the minimum-cellularity patch gate."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import MorphOp, Polarity, disk, morph, threshold, to_h_channel

MIN_RATIO = 0.03


@dataclass(frozen=True)
class NucleiConfig:
    open_radius: int = 2
    close_radius: int = 2
    method: str | float = "OTSU"
    # Eq. 2 maps blue/violet (hematoxylin) pixels to *low* values, so nuclei
    # are the dark class of the H channel.
    polarity: str = "BELOW"
    min_ratio: float = MIN_RATIO

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellularityReport:
    patch_id: str
    nucleus_pixels: int
    total_pixels: int
    ratio: float
    accepted: bool


def nucleus_mask(patch, cfg: NucleiConfig = NucleiConfig()) -> np.ndarray:
    h = to_h_channel(patch)
    opened = morph(h, MorphOp.OPEN, disk(cfg.open_radius))
    mask = threshold(opened, cfg.method, Polarity(cfg.polarity))
    return morph(mask, MorphOp.CLOSE, disk(cfg.close_radius))


def cellularity(mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise ValueError("empty mask")
    return int(mask.sum()) / mask.size


def cellularity_report(patch, patch_id: str = "", cfg: NucleiConfig = NucleiConfig()) -> CellularityReport:
    mask = nucleus_mask(patch, cfg)
    n = int(mask.sum())
    ratio = n / mask.size
    return CellularityReport(str(patch_id), n, int(mask.size), ratio, ratio >= cfg.min_ratio)


def gate_patches(patches: Sequence, min_ratio: float | None = None, cfg: NucleiConfig = NucleiConfig(),
                 ids: Sequence[str] | None = None, threads: int = 1):
    """Keep the patches whose nucleus ratio is at least ``min_ratio``.

    Returns ``(accepted, reports)``; reports cover every patch in input order.
    """
    if min_ratio is not None:
        cfg = NucleiConfig(**{**cfg.to_dict(), "min_ratio": min_ratio})
    if not 0 <= cfg.min_ratio <= 1:
        raise ValueError("min_ratio must lie in [0, 1]")
    patches = list(patches)
    ids = [str(i) for i in range(len(patches))] if ids is None else list(ids)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(lambda a: cellularity_report(a[0], a[1], cfg), zip(patches, ids)))
    else:
        reports = [cellularity_report(p, i, cfg) for p, i in zip(patches, ids)]
    accepted = [p for p, r in zip(patches, reports) if r.accepted]
    return accepted, reports


REPORT_FIELDS = ("patch_id", "nucleus_pixels", "total_pixels", "ratio", "accepted")


def write_reports(path: str | Path, reports: Sequence[CellularityReport], cfg: NucleiConfig | None = None) -> None:
    """CSV with one row per patch; the gate settings go in ``#`` comment lines on top."""
    with open(path, "w", newline="") as fh:
        if cfg is not None:
            for k, v in cfg.to_dict().items():
                fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([r.patch_id, r.nucleus_pixels, r.total_pixels, repr(r.ratio), int(r.accepted)])


def read_reports(path: str | Path) -> list[CellularityReport]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [
            CellularityReport(row["patch_id"], int(row["nucleus_pixels"]), int(row["total_pixels"]),
                              float(row["ratio"]), row["accepted"] in ("1", "True", "true"))
            for row in rows
        ]

"""Run configuration and dataset manifests."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .features import FeatureConfig
from .nuclei import NucleiConfig
from .texture import LbpConfig

LABELS = ("tumor", "not_tumor")
SPLITS = ("train", "test")
MANIFEST_FIELDS = ("patch_path", "label", "slide_id", "split")


class ConfigError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class RunConfig:
    tile_size: int = 600
    nuclei: NucleiConfig = field(default_factory=NucleiConfig)
    gate_training: bool = True
    features: FeatureConfig = field(default_factory=FeatureConfig)
    classifier: dict = field(default_factory=lambda: {"kind": "SVM"})
    cleanup: dict = field(default_factory=lambda: {"min_component": 2, "se_radius": 1})
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "nuclei": self.nuclei.to_dict(),
            "gate_training": self.gate_training,
            "features": self.features.to_dict(),
            "classifier": dict(self.classifier),
            "cleanup": dict(self.cleanup),
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"tile_size", "nuclei", "gate_training", "features", "classifier", "cleanup", "seed", "threads"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        try:
            feats = d.get("features", {})
            return cls(
                tile_size=int(d.get("tile_size", base.tile_size)),
                nuclei=NucleiConfig(**{**base.nuclei.to_dict(), **d.get("nuclei", {})}),
                gate_training=bool(d.get("gate_training", True)),
                features=FeatureConfig(
                    tuple(feats.get("channels", base.features.channels)),
                    LbpConfig(**{**base.features.lbp.to_dict(), **feats.get("lbp", {})}),
                    float(feats.get("theta", base.features.theta)),
                ),
                classifier={**base.classifier, **d.get("classifier", {})},
                cleanup={**base.cleanup, **d.get("cleanup", {})},
                seed=int(d.get("seed", 0)),
                threads=int(d.get("threads", 1)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class ManifestRow:
    patch_path: Path
    label: str
    slide_id: str
    split: str

    @property
    def patch_id(self) -> str:
        return self.patch_path.stem


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestRow]:
    """Read and validate a manifest; relative paths resolve against its folder."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
        rows = []
        for n, rec in enumerate(reader, start=2):
            p = Path(rec["patch_path"])
            if not p.is_absolute():
                p = path.parent / p
            if rec["label"] not in LABELS:
                raise ManifestError(f"{path}:{n}: label {rec['label']!r} not in {LABELS}")
            if rec["split"] not in SPLITS:
                raise ManifestError(f"{path}:{n}: split {rec['split']!r} not in {SPLITS}")
            if check_files and not p.exists():
                raise ManifestError(f"{path}:{n}: patch {p} does not exist")
            rows.append(ManifestRow(p, rec["label"], rec["slide_id"], rec["split"]))
    seen: dict = {}
    slide_split: dict = {}
    for r in rows:
        key = r.patch_path.resolve()
        if key in seen and seen[key] != r.split:
            raise ManifestError(f"{r.patch_path} appears in both train and test")
        seen[key] = r.split
        if slide_split.setdefault(r.slide_id, r.split) != r.split:
            raise ManifestError(f"slide {r.slide_id} has patches in both train and test")
    return rows


def write_manifest(path: str | Path, rows) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            p = Path(r.patch_path)
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([p.as_posix(), r.label, r.slide_id, r.split])

"""Training, prediction, evaluation and persistence of patch classifiers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..texture import FeatureVector, LayoutError, Segment, layout_hash
from ..imaging import Channel
from . import rng
from .forest import Tree, forest_votes, grow_forest
from .knn import METRICS, knn_scores
from .metrics import EvalReport
from .svm import SvmState, train_svm

FORMAT_VERSION = 1
TUMOR = "tumor"
NOT_TUMOR = "not_tumor"
KINDS = ("KNN", "SVM", "RF")


class ModelFormatError(ValueError):
    """Raised for unreadable, truncated or incompatible model files."""


def label_to_int(label) -> int:
    if label in (1, True, TUMOR, "TUMOR"):
        return 1
    if label in (0, False, NOT_TUMOR, "NOT_TUMOR"):
        return 0
    raise ValueError(f"unknown label {label!r}")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    ids: list
    layout: tuple = ()

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray([label_to_int(v) for v in self.y], dtype=np.int64)
        self.ids = [str(i) for i in self.ids]
        if not (len(self.X) == len(self.y) == len(self.ids)) or len(self.X) == 0:
            raise ValueError("features, labels and ids must be non-empty and of equal length")
        self.layout = tuple(self.layout)
        if self.layout and sum(s.length for s in self.layout) != self.X.shape[1]:
            raise LayoutError("feature width does not match the layout")

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], labels, ids) -> "Dataset":
        if not vectors:
            raise ValueError("empty dataset")
        layout = vectors[0].layout
        for v in vectors:
            if v.layout != layout:
                raise LayoutError("feature vectors have different layouts")
        return cls(np.vstack([v.values for v in vectors]), labels, ids, layout)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], [self.ids[i] for i in rows], self.layout)


@dataclass
class TrainedModel:
    kind: str
    hyperparameters: dict
    layout: tuple
    state: object
    n_features: int
    info: dict = field(default_factory=dict)

    @property
    def layout_hash(self) -> str:
        return layout_hash(self.layout)

    def check(self, X, x_layout=None) -> np.ndarray:
        if x_layout is not None and tuple(x_layout) != self.layout:
            raise LayoutError(
                f"feature layout {layout_hash(x_layout)} does not match the model; expected dictionaries "
                + ", ".join(f"{s.channel.value}={s.dictionary}" for s in self.layout)
                + f" (layout hash {self.layout_hash})"
            )
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise LayoutError(f"feature length {X.shape[1]} does not match the model's {self.n_features}")
        return X

    def scores(self, X, x_layout=None) -> np.ndarray:
        """Tumor score in [0, 1] per row."""
        X = self.check(X, x_layout)
        if self.kind == "KNN":
            train_X, train_y = self.state
            hp = self.hyperparameters
            return knn_scores(train_X, train_y, X, hp["k"], hp["metric"])
        if self.kind == "SVM":
            return 1.0 / (1.0 + np.exp(-self.state.decision(X)))
        return forest_votes(self.state, X)

    def predict_batch(self, X, x_layout=None) -> tuple[np.ndarray, np.ndarray]:
        """(labels as 0/1, scores).  Ties go to the negative class."""
        X = self.check(X, x_layout)
        if self.kind == "SVM":
            dec = self.state.decision(X)
            return (dec > 0).astype(np.int64), 1.0 / (1.0 + np.exp(-dec))
        s = self.scores(X)
        return (s > 0.5).astype(np.int64), s


def train(ds: Dataset, kind: str = "SVM", **hp) -> TrainedModel:
    """Fit a KNN, SVM or RF classifier.

    KNN: ``k=5, metric="euclidean"``; SVM: ``C=10, gamma=1/d``; RF:
    ``n_trees=1000, seed=0, max_features=sqrt(d)``.
    """
    kind = kind.upper()
    if kind not in KINDS:
        raise ValueError(f"unknown classifier {kind!r}; choose from {KINDS}")
    if len(np.unique(ds.y)) < 2:
        raise ValueError("training needs both tumor and not-tumor examples")
    if not np.all(np.isfinite(ds.X)):
        raise ValueError("non-finite feature value in training data")
    d = ds.dim
    if kind == "KNN":
        params = {"k": int(hp.get("k", 5)), "metric": hp.get("metric", "euclidean")}
        if params["metric"] not in METRICS:
            raise ValueError(f"unknown k-NN metric {params['metric']!r}")
        state = (ds.X.copy(), ds.y.copy())
        info = {}
    elif kind == "SVM":
        gamma = hp.get("gamma")
        params = {"C": float(hp.get("C", 10.0)), "gamma": float(gamma) if gamma is not None else 1.0 / d,
                  "tol": float(hp.get("tol", 1e-3)), "max_iter": int(hp.get("max_iter", 100_000)),
                  "standardize": bool(hp.get("standardize", True))}
        state = train_svm(ds.X, ds.y, **params)
        info = {"iterations": state.iterations, "n_support": int(len(state.alpha))}
    else:
        mf = hp.get("max_features")
        params = {"n_trees": int(hp.get("n_trees", 1000)), "seed": int(hp.get("seed", 0)),
                  "max_features": int(mf) if mf else max(1, int(math.sqrt(d))), "prng": rng.NAME}
        state = grow_forest(ds.X, ds.y, params["n_trees"], params["seed"], params["max_features"],
                            threads=int(hp.get("threads", 1)))
        info = {"nodes": int(sum(t.n_nodes for t in state))}
    return TrainedModel(kind, params, ds.layout, state, ds.dim, info)


def predict(model: TrainedModel, x: FeatureVector | np.ndarray) -> tuple[str, float]:
    if isinstance(x, FeatureVector):
        labels, scores = model.predict_batch(x.values, x.layout)
    else:
        labels, scores = model.predict_batch(x)
    return (TUMOR if labels[0] else NOT_TUMOR), float(scores[0])


def evaluate(model: TrainedModel, ds: Dataset) -> EvalReport:
    labels, _ = model.predict_batch(ds.X, ds.layout or None)
    return EvalReport.from_labels(ds.y, labels)


def grid_search(ds: Dataset, Cs=(1.0, 10.0, 100.0), gamma_factors=(0.1, 1.0, 10.0), folds: int = 3,
                seed: int = 0) -> dict:
    """3-fold accuracy search over C and gamma = factor / d; returns the best pair."""
    order = np.arange(len(ds.y))
    gen = rng.XorShift64Star(seed)
    for i in range(len(order) - 1, 0, -1):
        j = gen.below(i + 1)
        order[i], order[j] = order[j], order[i]
    parts = np.array_split(order, folds)
    best = None
    for C in Cs:
        for gf in gamma_factors:
            correct = 0
            for f in range(folds):
                test = parts[f]
                train_rows = np.concatenate([parts[g] for g in range(folds) if g != f])
                sub = ds.subset(train_rows)
                if len(np.unique(sub.y)) < 2:
                    continue
                m = train(sub, "SVM", C=C, gamma=gf / ds.dim)
                rep = evaluate(m, ds.subset(test))
                correct += rep.tp + rep.tn
            if best is None or correct > best[0]:
                best = (correct, C, gf / ds.dim)
    return {"C": best[1], "gamma": best[2], "accuracy": 100.0 * best[0] / len(ds.y)}


def _layout_to_json(layout) -> list:
    return [{"channel": s.channel.value, "dictionary": s.dictionary, "length": s.length} for s in layout]


def _layout_from_json(items) -> tuple:
    return tuple(Segment(Channel(i["channel"]), i["dictionary"], int(i["length"])) for i in items)


def _payload(model: TrainedModel) -> dict:
    if model.kind == "KNN":
        X, y = model.state
        return {"X": X.tolist(), "y": y.tolist()}
    if model.kind == "SVM":
        s: SvmState = model.state
        return {"support": s.support.tolist(), "alpha": s.alpha.tolist(), "labels": s.labels.tolist(),
                "bias": s.bias, "gamma": s.gamma, "C": s.C, "mean": s.mean.tolist(), "scale": s.scale.tolist(),
                "iterations": s.iterations}
    return {"trees": [t.to_dict() for t in model.state]}


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyperparameters": model.hyperparameters,
        "layout_hash": model.layout_hash,
        "layout": _layout_to_json(model.layout),
        "n_features": model.n_features,
        "info": model.info,
        "payload": _payload(model),
    }


def save_model(model: TrainedModel, path: str | Path, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc["provenance"] = extra
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_model(path: str | Path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    return model_from_dict(doc, str(path))


def model_from_dict(doc: dict, source: str = "<model>") -> TrainedModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError(f"{source}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelFormatError(f"{source}: format version {doc['format_version']} is not supported (expected {FORMAT_VERSION})")
    try:
        kind = doc["kind"]
        hp = doc["hyperparameters"]
        layout = _layout_from_json(doc["layout"])
        p = doc["payload"]
        if kind == "KNN":
            state = (np.asarray(p["X"], dtype=np.float64).reshape(len(p["y"]), -1), np.asarray(p["y"], dtype=np.int64))
        elif kind == "SVM":
            state = SvmState(np.asarray(p["support"], dtype=np.float64).reshape(len(p["alpha"]), -1),
                             np.asarray(p["alpha"], dtype=np.float64), np.asarray(p["labels"], dtype=np.float64),
                             float(p["bias"]), float(p["gamma"]), float(p["C"]),
                             np.asarray(p["mean"], dtype=np.float64), np.asarray(p["scale"], dtype=np.float64),
                             iterations=int(p.get("iterations", 0)))
        elif kind == "RF":
            state = [Tree.from_dict(t) for t in p["trees"]]
        else:
            raise ModelFormatError(f"{source}: unknown model kind {kind!r}")
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{source}: corrupt model payload ({exc})") from exc
    model = TrainedModel(kind, hp, layout, state, int(doc["n_features"]), doc.get("info", {}))
    if doc.get("layout_hash") != model.layout_hash:
        raise ModelFormatError(f"{source}: layout hash mismatch")
    return model

"""Dementia / AD prediction from fused retrieval evidence.

Two predictors ship side by side: a logistic head over the concatenation of
the projected query, the predicted-type anchor, and the normalized mean of
the retrieved reference vectors (3P features), and a smoothed conditional
table P(positive | abnormality type).  Both emit probabilities strictly
inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AbnormalityType
from .errors import NumericError
from .projection import l2_normalize

__all__ = [
    "EvidenceBundle",
    "DiagnosisHead",
    "ConditionalTable",
    "build_evidence",
    "init_head",
    "predict",
    "train_head",
    "head_gradient",
    "fit_conditional",
    "predict_conditional",
]

_PROB_EPS = 1e-15


@dataclass
class EvidenceBundle:
    """Inputs to the diagnosis head for one query."""

    query_proj: np.ndarray
    anchor_proj: np.ndarray
    ref_mean: np.ndarray
    top_k_scores: list[float]
    predicted_type: AbnormalityType

    def __post_init__(self) -> None:
        dims = {len(self.query_proj), len(self.anchor_proj), len(self.ref_mean)}
        if len(dims) != 1:
            raise ValueError("bundle vectors must share the projection dimension")
        if not self.top_k_scores:
            raise ValueError("bundle needs at least one retrieved reference")

    def features(self) -> np.ndarray:
        return np.concatenate([self.query_proj, self.anchor_proj, self.ref_mean])


def build_evidence(
    query_proj: np.ndarray,
    predicted_type: AbnormalityType,
    anchors: dict[AbnormalityType, np.ndarray],
    ref_vectors: np.ndarray,
    ref_scores: list[float],
) -> EvidenceBundle:
    """Assemble the bundle; the reference side is the l2-normalized mean of
    the retrieved vectors."""
    ref_vectors = np.asarray(ref_vectors, dtype=np.float64)
    if ref_vectors.ndim != 2 or ref_vectors.shape[0] == 0:
        raise ValueError("ref_vectors must be a nonempty (k, P) array")
    if predicted_type not in anchors:
        raise ValueError(f"missing anchor for {predicted_type.value!r}")
    return EvidenceBundle(
        query_proj=np.asarray(query_proj, dtype=np.float64),
        anchor_proj=np.asarray(anchors[predicted_type], dtype=np.float64),
        ref_mean=l2_normalize(ref_vectors.mean(axis=0)),
        top_k_scores=[float(s) for s in ref_scores],
        predicted_type=predicted_type,
    )


@dataclass
class DiagnosisHead:
    """Logistic head over the 3P-dim evidence features."""

    w: np.ndarray
    b: float
    task: str = "dementia"

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1:
            raise ValueError("w must be a vector")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise NumericError("head parameters contain NaN/Inf")
        if self.task not in ("dementia", "ad"):
            raise ValueError("task must be 'dementia' or 'ad'")

    def copy(self) -> "DiagnosisHead":
        return DiagnosisHead(self.w.copy(), float(self.b), self.task)

    def to_json(self) -> dict:
        return {"w": [float(x) for x in self.w], "b": float(self.b), "task": self.task}

    @classmethod
    def from_json(cls, obj: dict) -> "DiagnosisHead":
        return cls(w=np.asarray(obj["w"], dtype=np.float64), b=float(obj["b"]),
                   task=obj.get("task", "dementia"))


def _sigmoid(z: float | np.ndarray):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def predict(head: DiagnosisHead, bundle: EvidenceBundle) -> float:
    """sigmoid(w . features + b), clamped strictly inside (0, 1)."""
    x = bundle.features()
    if x.shape != head.w.shape:
        raise ValueError(
            f"feature dimension {x.shape[0]} != head dimension {head.w.shape[0]}"
        )
    p = float(_sigmoid(float(head.w @ x) + head.b))
    return float(np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS))


def init_head(n_features: int, seed: int, task: str = "dementia") -> DiagnosisHead:
    """Seeded uniform init, bound sqrt(6/(n+1)); bias 0."""
    bound = np.sqrt(6.0 / (n_features + 1))
    rng = np.random.default_rng(seed)
    return DiagnosisHead(w=rng.uniform(-bound, bound, size=n_features), b=0.0, task=task)


def head_gradient(
    head: DiagnosisHead, X: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Gradient of mean binary cross-entropy; returns (dw, db, loss)."""
    z = X @ head.w + head.b
    p = _sigmoid(z)
    resid = p - y
    dw = X.T @ resid / len(y)
    db = float(resid.mean())
    # stable BCE: softplus(z) - y*z
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return dw, db, loss


def train_head(
    bundles: list[EvidenceBundle],
    labels,
    lr: float = 0.5,
    epochs: int = 500,
    seed: int = 0,
    task: str = "dementia",
    init: DiagnosisHead | None = None,
) -> DiagnosisHead:
    """Full-batch gradient descent on mean binary cross-entropy.

    Deterministic under ``seed`` (which fixes the init when none is given).
    Requires at least one example of each label.
    """
    y = np.asarray([int(v) for v in labels], dtype=np.float64)
    if len(bundles) != len(y):
        raise ValueError("bundles and labels must have equal lengths")
    if len(set(y.tolist())) < 2:
        raise ValueError("training set must contain both labels")
    X = np.stack([b.features() for b in bundles])
    head = init.copy() if init is not None else init_head(X.shape[1], seed, task)
    if head.w.shape[0] != X.shape[1]:
        raise ValueError("init head dimension does not match features")
    for _ in range(epochs):
        dw, db, loss = head_gradient(head, X, y)
        if not np.isfinite(loss):
            raise NumericError("non-finite diagnosis loss")
        head.w = head.w - lr * dw
        head.b = head.b - lr * db
    return head


@dataclass
class ConditionalTable:
    """Smoothed P(positive | abnormality type)."""

    probs: dict[AbnormalityType, float]
    alpha: float
    task: str = "dementia"

    def __post_init__(self) -> None:
        for abn, p in self.probs.items():
            if not 0.0 < p < 1.0:
                raise ValueError(f"P(positive | {abn.value}) must be in (0, 1)")

    def to_json(self) -> dict:
        obj: dict = {t.value: self.probs[t] for t in AbnormalityType}
        obj["alpha"] = self.alpha
        return obj

    @classmethod
    def from_json(cls, obj: dict, task: str = "dementia") -> "ConditionalTable":
        probs = {t: float(obj[t.value]) for t in AbnormalityType}
        return cls(probs=probs, alpha=float(obj["alpha"]), task=task)


def fit_conditional(
    pairs: list[tuple[AbnormalityType, int]],
    alpha: float = 1.0,
    task: str = "dementia",
) -> ConditionalTable:
    """P(positive | type) = (count_pos + alpha) / (count + 2 alpha).

    The smoothing keeps every probability strictly inside (0, 1), including
    for types with no cases (pure prior 1/2).
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    counts = {t: 0 for t in AbnormalityType}
    positives = {t: 0 for t in AbnormalityType}
    for abn, label in pairs:
        counts[abn] += 1
        positives[abn] += int(label)
    probs = {
        t: (positives[t] + alpha) / (counts[t] + 2 * alpha) for t in AbnormalityType
    }
    return ConditionalTable(probs=probs, alpha=alpha, task=task)


def predict_conditional(table: ConditionalTable, predicted_type: AbnormalityType) -> float:
    """Table lookup for the predicted abnormality type."""
    return table.probs[predicted_type]

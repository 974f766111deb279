"""Trainable linear projection heads and the checkpoint format.

The vision head maps raw image embeddings (dim D) and the text head maps raw
text embeddings (dim M) into a shared space of dim P.  Heads are plain affine
maps ``W @ x + b``; all similarity downstream happens on l2-normalized
outputs, so cosine reduces to a dot product.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, NumericError

__all__ = [
    "LinearProjection",
    "ProjectionPair",
    "project_image",
    "project_text",
    "project_images",
    "project_texts",
    "l2_normalize",
    "normalize_rows",
    "init_projection",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

NORM_EPS = 1e-12
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class LinearProjection:
    """Affine map to the shared space: W is (P, D_in), b is (P,)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError("W must be (P, D_in) and b (P,)")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise NumericError("projection parameters contain NaN/Inf")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(
                f"input dimension {x.shape[-1]} != head input dimension {self.in_dim}"
            )
        return x @ self.W.T + self.b

    def copy(self) -> "LinearProjection":
        return LinearProjection(self.W.copy(), self.b.copy())


@dataclass
class ProjectionPair:
    """The vision (D -> P) and text (M -> P) heads with a shared P."""

    vision: LinearProjection
    text: LinearProjection

    def __post_init__(self) -> None:
        if self.vision.out_dim != self.text.out_dim:
            raise ValueError(
                "vision and text heads must share the output dimension "
                f"({self.vision.out_dim} != {self.text.out_dim})"
            )

    @property
    def proj_dim(self) -> int:
        return self.vision.out_dim

    def copy(self) -> "ProjectionPair":
        return ProjectionPair(self.vision.copy(), self.text.copy())


def project_image(pair: ProjectionPair, v: np.ndarray) -> np.ndarray:
    """Map one raw image embedding into the shared space."""
    return pair.vision.apply(v)


def project_text(pair: ProjectionPair, t: np.ndarray) -> np.ndarray:
    """Map one raw text embedding into the shared space."""
    return pair.text.apply(t)


def project_images(pair: ProjectionPair, V: np.ndarray) -> np.ndarray:
    """Batched image projection, rows of V are cases."""
    return pair.vision.apply(V)


def project_texts(pair: ProjectionPair, T: np.ndarray) -> np.ndarray:
    """Batched text projection, rows of T are cases."""
    return pair.text.apply(T)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale to unit norm; raises ``NumericError`` on a near-zero vector."""
    x = np.asarray(x, dtype=np.float64)
    norm = float(np.linalg.norm(x))
    if norm <= NORM_EPS:
        raise NumericError("degenerate embedding")
    return x / norm


def normalize_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize with the same degenerate-vector guard."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise NumericError("degenerate embedding")
    return X / norms


def init_projection(in_dim: int, out_dim: int, seed: int) -> LinearProjection:
    """Glorot-style uniform init: W ~ U(-s, s) with s = sqrt(6/(in+out)); b = 0."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("dimensions must be >= 1")
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    rng = np.random.default_rng(seed)
    W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearProjection(W=W, b=np.zeros(out_dim))


def _head_to_json(head: LinearProjection) -> dict[str, Any]:
    return {
        "W": [float(x) for x in head.W.ravel(order="C")],
        "b": [float(x) for x in head.b],
    }


def _head_from_json(obj: dict, out_dim: int, in_dim: int) -> LinearProjection:
    W = np.asarray(obj["W"], dtype=np.float64).reshape(out_dim, in_dim)
    b = np.asarray(obj["b"], dtype=np.float64)
    return LinearProjection(W=W, b=b)


@dataclass
class Checkpoint:
    """Everything persisted after training: heads, config, diagnosis artifacts."""

    pair: ProjectionPair
    dim_image: int
    dim_text: int
    tau: float
    train_config: dict[str, Any]
    diagnosis: dict[str, Any] | None = None
    conditional: dict[str, Any] | None = None


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Serialize to JSON; 64-bit decimal repr makes the round-trip exact."""
    pair = checkpoint.pair
    obj: dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "D": checkpoint.dim_image,
        "M": checkpoint.dim_text,
        "P": pair.proj_dim,
        "tau": float(checkpoint.tau),
        "vision": _head_to_json(pair.vision),
        "text": _head_to_json(pair.text),
        "train_config": checkpoint.train_config,
    }
    if checkpoint.diagnosis is not None:
        obj["diagnosis"] = checkpoint.diagnosis
    if checkpoint.conditional is not None:
        obj["conditional"] = checkpoint.conditional
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path}: malformed JSON ({exc.msg})") from None
    for key in ("format_version", "D", "M", "P", "tau", "vision", "text"):
        if key not in obj:
            raise DataError(f"checkpoint {path}: missing key {key!r}")
    if obj["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint {path}: unsupported format_version {obj['format_version']}"
        )
    dim_d, dim_m, dim_p = int(obj["D"]), int(obj["M"]), int(obj["P"])
    pair = ProjectionPair(
        vision=_head_from_json(obj["vision"], dim_p, dim_d),
        text=_head_from_json(obj["text"], dim_p, dim_m),
    )
    return Checkpoint(
        pair=pair,
        dim_image=dim_d,
        dim_text=dim_m,
        tau=float(obj["tau"]),
        train_config=copy.deepcopy(obj.get("train_config", {})),
        diagnosis=copy.deepcopy(obj.get("diagnosis")),
        conditional=copy.deepcopy(obj.get("conditional")),
    )

"""Contrastive fine-tuning of the projection heads.

The objective couples a temperature-scaled softmax alignment loss over the
image/text similarity matrix with an anchor-pull regularizer: every image is
pulled toward the projected text anchor of its abnormality class.  Under the
``abnormality`` modality the per-case text IS the class anchor (fixed-text
scheme); under the other modalities the per-case text is the positive and the
anchor only feeds the regularizer.

Gradients are fully analytic (through projection and normalization) and are
validated against central finite differences in the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import AbnormalityType, DatasetManifest, TextModality
from .errors import NumericError
from .projection import NORM_EPS, ProjectionPair

__all__ = [
    "TrainConfig",
    "TrainReport",
    "Batch",
    "Gradients",
    "similarity_matrix",
    "info_nce_loss",
    "category_regularizer",
    "class_anchor_texts",
    "total_loss",
    "loss_gradient",
    "train",
    "pairwise_cosine_stats",
]


@dataclass
class TrainConfig:
    tau: float = 0.07
    lambda_reg: float = 0.1
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int | None = None  # None -> full batch
    seed: int = 0
    modality: TextModality = TextModality.ABNORMALITY

    def __post_init__(self) -> None:
        if isinstance(self.modality, str):
            self.modality = TextModality.from_code(self.modality)
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "lambda_reg": self.lambda_reg,
            "lr": self.lr,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "modality": self.modality.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    intra_class_cosine: float = float("nan")
    inter_class_cosine: float = float("nan")
    wall_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "intra_class_cosine": self.intra_class_cosine,
            "inter_class_cosine": self.inter_class_cosine,
            "wall_seconds": self.wall_seconds,
        }


@dataclass
class Batch:
    """Raw (image, text, class) triples; projection happens inside the loss."""

    images: np.ndarray  # (N, D)
    texts: np.ndarray   # (N, M)
    classes: np.ndarray  # (N,) canonical class indices

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.texts = np.asarray(self.texts, dtype=np.float64)
        self.classes = np.asarray(self.classes, dtype=int)
        if not len(self.images) == len(self.texts) == len(self.classes):
            raise ValueError("images, texts, classes must have equal lengths")
        if len(self.images) == 0:
            raise ValueError("batch must be nonempty")

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class Gradients:
    W_v: np.ndarray
    b_v: np.ndarray
    W_t: np.ndarray
    b_t: np.ndarray


def similarity_matrix(imgs: np.ndarray, txts: np.ndarray) -> np.ndarray:
    """Pairwise dot products of unit vectors: S[i, j] = imgs[i] . txts[j]."""
    imgs = np.asarray(imgs, dtype=np.float64)
    txts = np.asarray(txts, dtype=np.float64)
    if imgs.shape != txts.shape:
        raise ValueError("imgs and txts must have matching shapes")
    for name, X in (("imgs", imgs), ("txts", txts)):
        norms = np.linalg.norm(X, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise ValueError(f"{name} rows must be unit-norm (tolerance 1e-4)")
    return imgs @ txts.T


def info_nce_loss(S: np.ndarray, tau: float) -> float:
    """Softmax cross-entropy over similarity rows with matched pairs on the
    diagonal; computed with max-subtraction for stability."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be a square matrix")
    if S.shape[0] == 0:
        raise ValueError("S must be nonempty")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    Z = S / tau
    row_max = Z.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(Z - row_max).sum(axis=1))
    loss = float(np.mean(lse - np.diag(Z)))
    # lse >= diagonal mathematically; clamp the ~1e-16 rounding slack
    return max(loss, 0.0)


def category_regularizer(imgs: np.ndarray, anchors: np.ndarray) -> float:
    """Mean anchor-pull penalty: (1/N) sum_i (1 - imgs[i] . anchors[i]).

    ``anchors`` carries one unit row per case (its class anchor); the value
    lives in [0, 2] for unit inputs.
    """
    imgs = np.asarray(imgs, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if imgs.shape != anchors.shape:
        raise ValueError("imgs and anchors must have matching shapes")
    if len(imgs) == 0:
        raise ValueError("imgs must be nonempty")
    return float(np.mean(1.0 - np.sum(imgs * anchors, axis=1)))


def class_anchor_texts(
    manifest: DatasetManifest, modality: TextModality
) -> dict[AbnormalityType, np.ndarray]:
    """Raw anchor text embedding per class: the mean of the class members'
    text embeddings under ``modality``.

    Under the ``abnormality`` modality every member carries the identical
    fixed class text, so the mean equals that text exactly.
    """
    sums: dict[AbnormalityType, np.ndarray] = {}
    counts: dict[AbnormalityType, int] = {}
    for case in manifest.cases:
        vec = case.text_embeddings.get(modality)
        if vec is None:
            raise ValueError(
                f"case {case.id!r} lacks text modality {modality.value!r}"
            )
        acc = sums.get(case.abnormality)
        sums[case.abnormality] = vec.astype(np.float64) if acc is None else acc + vec
        counts[case.abnormality] = counts.get(case.abnormality, 0) + 1
    return {abn: sums[abn] / counts[abn] for abn in sums}


def _batch_anchor_matrix(
    batch: Batch, anchors: dict[int, np.ndarray] | None
) -> tuple[np.ndarray, np.ndarray]:
    """Anchor rows (K, M) and per-case anchor row indices (N,)."""
    if anchors is None:
        # self-contained fallback: per-class means of the batch texts
        anchors = {}
        for cls in np.unique(batch.classes):
            anchors[int(cls)] = batch.texts[batch.classes == cls].mean(axis=0)
    present = sorted(set(int(c) for c in batch.classes))
    missing = [c for c in present if c not in anchors]
    if missing:
        raise ValueError(f"no anchor for class index(es) {missing}")
    U = np.stack([anchors[c] for c in present])
    row_of = {c: i for i, c in enumerate(present)}
    idx = np.array([row_of[int(c)] for c in batch.classes], dtype=int)
    return U, idx


def _forward(batch: Batch, pair: ProjectionPair,
             anchors: dict[int, np.ndarray] | None):
    U, idx = _batch_anchor_matrix(batch, anchors)
    A = pair.vision.apply(batch.images)      # (N, P) raw projected images
    C = pair.text.apply(batch.texts)         # (N, P) raw projected texts
    G = pair.text.apply(U)                   # (K, P) raw projected anchors
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nc = np.linalg.norm(C, axis=1, keepdims=True)
    ng = np.linalg.norm(G, axis=1, keepdims=True)
    if np.any(na <= NORM_EPS) or np.any(nc <= NORM_EPS) or np.any(ng <= NORM_EPS):
        raise NumericError("degenerate embedding")
    Ah, Ch, Gh = A / na, C / nc, G / ng
    return U, idx, A, C, G, na, nc, ng, Ah, Ch, Gh


def total_loss(batch: Batch, pair: ProjectionPair, config: TrainConfig,
               anchors: dict[int, np.ndarray] | None = None) -> float:
    """Alignment loss plus lambda-weighted anchor regularizer; the exact
    objective that ``loss_gradient`` differentiates."""
    _, idx, *_rest, Ah, Ch, Gh = _forward(batch, pair, anchors)
    loss = info_nce_loss(Ah @ Ch.T, config.tau)
    if config.lambda_reg > 0:
        loss += config.lambda_reg * category_regularizer(Ah, Gh[idx])
    return loss


def loss_gradient(
    batch: Batch,
    pair: ProjectionPair,
    config: TrainConfig,
    anchors: dict[int, np.ndarray] | None = None,
) -> tuple[Gradients, float]:
    """Analytic gradient of ``total_loss`` with respect to all head params.

    ``anchors`` maps canonical class index to the raw anchor text embedding;
    when omitted, per-class batch means are used.  Gradient flows through the
    anchor projection as well (anchors are re-projected every step).
    """
    N = len(batch)
    U, idx, A, C, G, na, nc, ng, Ah, Ch, Gh = _forward(batch, pair, anchors)
    tau, lam = config.tau, config.lambda_reg

    Z = (Ah @ Ch.T) / tau
    Z -= Z.max(axis=1, keepdims=True)
    expZ = np.exp(Z)
    probs = expZ / expZ.sum(axis=1, keepdims=True)
    lse = np.log(expZ.sum(axis=1))
    loss = float(np.mean(lse - np.diag(Z)))
    loss = max(loss, 0.0)

    dS = (probs - np.eye(N)) / (N * tau)
    dAh = dS @ Ch
    dCh = dS.T @ Ah

    if lam > 0:
        loss += lam * float(np.mean(1.0 - np.sum(Ah * Gh[idx], axis=1)))
        dAh -= (lam / N) * Gh[idx]
        dGh = np.zeros_like(Gh)
        np.add.at(dGh, idx, -(lam / N) * Ah)
    else:
        dGh = np.zeros_like(Gh)

    def norm_backward(dXh, Xh, norms):
        # Xh = X / |X|  =>  dX = (dXh - (dXh . Xh) Xh) / |X|
        inner = np.sum(dXh * Xh, axis=1, keepdims=True)
        return (dXh - inner * Xh) / norms

    dA = norm_backward(dAh, Ah, na)
    dC = norm_backward(dCh, Ch, nc)
    dG = norm_backward(dGh, Gh, ng)

    grads = Gradients(
        W_v=dA.T @ batch.images,
        b_v=dA.sum(axis=0),
        W_t=dC.T @ batch.texts + dG.T @ U,
        b_t=dC.sum(axis=0) + dG.sum(axis=0),
    )
    return grads, loss


def train(
    dataset: DatasetManifest,
    pair: ProjectionPair,
    config: TrainConfig,
) -> tuple[ProjectionPair, TrainReport]:
    """SGD-with-momentum over the contrastive objective.

    Full-batch when ``batch_size`` is None or >= N, otherwise seeded shuffled
    mini-batches each epoch.  The input pair is left untouched; a trained
    copy is returned.  Class anchors are the dataset-level raw class text
    means, re-projected through the current text head at every step.
    """
    if len(dataset.cases) == 0:
        raise ValueError("dataset must be nonempty")
    started = time.perf_counter()
    pair = pair.copy()

    V = dataset.image_matrix().astype(np.float64)
    T = dataset.text_matrix(config.modality).astype(np.float64)
    y = dataset.abnormality_indices()
    anchors = {
        abn.index: vec
        for abn, vec in class_anchor_texts(dataset, config.modality).items()
    }

    n = len(dataset.cases)
    batch_size = n if config.batch_size is None else min(config.batch_size, n)
    full_batch = batch_size >= n
    rng = np.random.default_rng(config.seed)

    velocity = Gradients(
        W_v=np.zeros_like(pair.vision.W),
        b_v=np.zeros_like(pair.vision.b),
        W_t=np.zeros_like(pair.text.W),
        b_t=np.zeros_like(pair.text.b),
    )

    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        order = np.arange(n) if full_batch else rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            batch = Batch(images=V[sel], texts=T[sel], classes=y[sel])
            grads, loss = loss_gradient(batch, pair, config, anchors)
            if not np.isfinite(loss):
                raise NumericError("non-finite training loss")
            batch_losses.append(loss)
            mu, lr = config.momentum, config.lr
            velocity.W_v = mu * velocity.W_v + grads.W_v
            velocity.b_v = mu * velocity.b_v + grads.b_v
            velocity.W_t = mu * velocity.W_t + grads.W_t
            velocity.b_t = mu * velocity.b_t + grads.b_t
            pair.vision.W -= lr * velocity.W_v
            pair.vision.b -= lr * velocity.b_v
            pair.text.W -= lr * velocity.W_t
            pair.text.b -= lr * velocity.b_t
        epoch_losses.append(float(np.mean(batch_losses)))

    projected = pair.vision.apply(V)
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise NumericError("degenerate embedding")
    intra, inter = pairwise_cosine_stats(projected / norms, y)
    report = TrainReport(
        epoch_losses=epoch_losses,
        intra_class_cosine=intra,
        inter_class_cosine=inter,
        wall_seconds=time.perf_counter() - started,
    )
    return pair, report


def pairwise_cosine_stats(unit_rows: np.ndarray, classes: np.ndarray) -> tuple[float, float]:
    """Mean cosine over same-class pairs and over different-class pairs."""
    unit_rows = np.asarray(unit_rows, dtype=np.float64)
    classes = np.asarray(classes)
    S = unit_rows @ unit_rows.T
    n = len(classes)
    iu, ju = np.triu_indices(n, k=1)
    same = classes[iu] == classes[ju]
    intra = float(S[iu[same], ju[same]].mean()) if same.any() else float("nan")
    diff = ~same
    inter = float(S[iu[diff], ju[diff]].mean()) if diff.any() else float("nan")
    return intra, inter

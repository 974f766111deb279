"""Cosine classification against class anchors and exact top-k retrieval.

The reference index holds the projected, l2-normalized image embeddings of
the reference corpus; queries are scored by exact brute-force dot products
(the corpus is small, approximate structures would only obscure the oracle).
All tie-breaks are deterministic: canonical type order for the class argmax,
ascending case id for equal similarities.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .data import AbnormalityType, DatasetManifest, DementiaLabel
from .errors import NumericError
from .projection import ProjectionPair, l2_normalize, normalize_rows

__all__ = [
    "ReferenceIndex",
    "Match",
    "RetrievalResult",
    "SimilaritySplit",
    "cosine_similarity",
    "classify_abnormality",
    "build_reference_index",
    "retrieve_top_k",
    "accuracy_at_k",
    "precision_at_k",
    "similarity_split",
]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a, b) / (|a| |b|), clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= 1e-12 or nb <= 1e-12:
        raise NumericError("degenerate embedding")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class ReferenceIndex:
    """Frozen projected reference corpus; vectors are unit rows (N, P)."""

    ids: list[str]
    types: list[AbnormalityType]
    dementia: list[DementiaLabel]
    vectors: np.ndarray
    descriptions: list[str]

    def __post_init__(self) -> None:
        n = len(self.ids)
        if not (len(self.types) == len(self.dementia) == len(self.descriptions) == n
                and self.vectors.shape[0] == n):
            raise ValueError("index fields must have equal lengths")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise ValueError("index vectors must be unit-norm (tolerance 1e-4)")

    def __len__(self) -> int:
        return len(self.ids)

    def vector_by_id(self, case_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(case_id)]


def build_reference_index(manifest: DatasetManifest, pair: ProjectionPair) -> ReferenceIndex:
    """Project + normalize every reference image embedding."""
    if not manifest.cases:
        raise ValueError("reference manifest must be nonempty")
    vectors = normalize_rows(pair.vision.apply(manifest.image_matrix().astype(np.float64)))
    return ReferenceIndex(
        ids=[c.id for c in manifest.cases],
        types=[c.abnormality for c in manifest.cases],
        dementia=[c.dementia for c in manifest.cases],
        vectors=vectors,
        descriptions=[c.description for c in manifest.cases],
    )


def classify_abnormality(
    query: np.ndarray,
    anchors: dict[AbnormalityType, np.ndarray],
) -> tuple[AbnormalityType, dict[AbnormalityType, float]]:
    """Argmax of cosine similarity to the four class anchors.

    Ties break by canonical type order (normal < mtl_atrophy < wmh <
    other_atrophy).  Scores are cosines, so the decision is invariant under
    positive rescaling of the query.
    """
    missing = [t.value for t in AbnormalityType if t not in anchors]
    if missing:
        raise ValueError(f"missing anchor(s): {', '.join(missing)}")
    scores = {t: cosine_similarity(query, anchors[t]) for t in AbnormalityType}
    best = max(AbnormalityType, key=lambda t: (scores[t], -t.index))
    return best, scores


@dataclass
class Match:
    ref_id: str
    similarity: float
    abnormality: AbnormalityType
    description: str


@dataclass
class RetrievalResult:
    query_id: str
    predicted: AbnormalityType
    class_scores: dict[AbnormalityType, float]
    top_k: list[Match]
    gold: AbnormalityType | None = None

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "predicted": self.predicted.value,
            "class_scores": {t.value: s for t, s in self.class_scores.items()},
            "top_k": [
                {
                    "ref_id": m.ref_id,
                    "similarity": m.similarity,
                    "abnormality": m.abnormality.value,
                    "description": m.description,
                }
                for m in self.top_k
            ],
            "gold": self.gold.value if self.gold else None,
        }


def retrieve_top_k(query: np.ndarray, index: ReferenceIndex, k: int) -> list[Match]:
    """The k most similar references; ties break by ascending case id.

    Returns all entries when k exceeds the index size, so the ranking for a
    smaller k is always a prefix of the ranking for a larger k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise ValueError("empty index")
    q = l2_normalize(query)
    scores = index.vectors @ q
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.ids[i]))
    return [
        Match(
            ref_id=index.ids[i],
            similarity=float(np.clip(scores[i], -1.0, 1.0)),
            abnormality=index.types[i],
            description=index.descriptions[i],
        )
        for i in order[: min(k, len(index))]
    ]


def _require_results(results: list[RetrievalResult]) -> None:
    if not results:
        raise ValueError("empty result set")
    missing = [r.query_id for r in results if r.gold is None]
    if missing:
        raise ValueError(f"results lack gold types: {missing[:5]}")


def accuracy_at_k(results: list[RetrievalResult], k: int) -> float:
    """Fraction of queries whose top-k holds at least one gold-type reference."""
    _require_results(results)
    hits = sum(
        1
        for r in results
        if any(m.abnormality == r.gold for m in r.top_k[:k])
    )
    return hits / len(results)


def precision_at_k(results: list[RetrievalResult], k: int) -> float:
    """Mean over queries of (#gold-type references in the top-k) / k."""
    _require_results(results)
    fractions = [
        sum(1 for m in r.top_k[:k] if m.abnormality == r.gold) / k
        for r in results
    ]
    return sum(fractions) / len(fractions)


@dataclass
class SimilaritySplit:
    """Retrieved-pair scores partitioned by type correctness, with summaries."""

    correct_scores: list[float] = field(default_factory=list)
    incorrect_scores: list[float] = field(default_factory=list)

    @staticmethod
    def _summary(values: list[float]) -> dict[str, float] | None:
        if not values:
            return None
        return {
            "mean": statistics.fmean(values),
            "median": statistics.median(values),
            "min": min(values),
            "max": max(values),
        }

    @property
    def correct_summary(self) -> dict[str, float] | None:
        return self._summary(self.correct_scores)

    @property
    def incorrect_summary(self) -> dict[str, float] | None:
        return self._summary(self.incorrect_scores)

    def to_json(self) -> dict:
        return {
            "correct_scores": self.correct_scores,
            "incorrect_scores": self.incorrect_scores,
            "correct_summary": self.correct_summary,
            "incorrect_summary": self.incorrect_summary,
        }


def similarity_split(results: list[RetrievalResult]) -> SimilaritySplit:
    """Partition every retrieved (query, reference) score by whether the
    reference type equals the query's gold type."""
    _require_results(results)
    split = SimilaritySplit()
    for r in results:
        for m in r.top_k:
            if m.abnormality == r.gold:
                split.correct_scores.append(m.similarity)
            else:
                split.incorrect_scores.append(m.similarity)
    return split

"""Estimator-style composition of the engine.

``ContrastiveAligner`` owns the projection heads (fit = contrastive
training, transform = project + normalize); ``AbnormalityRetriever`` owns
the class anchors and the reference index (fit = freeze references, predict
= anchor argmax, retrieve = top-k evidence).  ``run_pipeline`` wires them
with a diagnosis predictor into the full per-query flow, and
``evaluate_pipeline`` produces the three task reports plus retrieval
analytics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import AbnormalityType, DatasetManifest, TextModality
from .diagnosis import (
    ConditionalTable,
    DiagnosisHead,
    EvidenceBundle,
    build_evidence,
    fit_conditional,
    predict,
    predict_conditional,
    train_head,
)
from .metrics import (
    ClassMetrics,
    MetricsReport,
    binary_metrics,
    confusion,
    macro_metrics,
    stage_error_rates,
    top1_error_rate,
    safe_auc,
)
from .projection import ProjectionPair, init_projection, normalize_rows
from .retrieval import (
    RetrievalResult,
    build_reference_index,
    classify_abnormality,
    retrieve_top_k,
    accuracy_at_k,
    precision_at_k,
    similarity_split,
)
from .training import TrainConfig, class_anchor_texts, train

__all__ = [
    "ContrastiveAligner",
    "AbnormalityRetriever",
    "PipelineOutput",
    "fit_predictors",
    "run_pipeline",
    "evaluate_pipeline",
    "retrieval_analytics",
]


class ContrastiveAligner(BaseEstimator):
    """Trains the vision/text projection heads on a dataset manifest.

    Parameters mirror the training configuration; ``fit`` consumes a
    ``DatasetManifest`` and stores the trained ``pair_`` and ``report_``.
    """

    def __init__(self, proj_dim: int = 128, tau: float = 0.07,
                 lambda_reg: float = 0.1, lr: float = 0.01, momentum: float = 0.9,
                 epochs: int = 200, batch_size: int | None = None, seed: int = 0,
                 modality: str = "abnormality"):
        self.proj_dim = proj_dim
        self.tau = tau
        self.lambda_reg = lambda_reg
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.modality = modality

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            tau=self.tau, lambda_reg=self.lambda_reg, lr=self.lr,
            momentum=self.momentum, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed,
            modality=TextModality.from_code(self.modality),
        )

    def fit(self, manifest: DatasetManifest, y=None):
        dim_d, dim_m = manifest.dims
        initial = ProjectionPair(
            vision=init_projection(dim_d, self.proj_dim, self.seed),
            text=init_projection(dim_m, self.proj_dim, self.seed + 1),
        )
        self.pair_, self.report_ = train(manifest, initial, self.train_config())
        self.dims_ = manifest.dims
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "pair_"):
            raise NotFittedError("ContrastiveAligner is not fitted")

    def transform(self, V: np.ndarray) -> np.ndarray:
        """Project raw image embeddings into the shared space (unit rows)."""
        self._check_fitted()
        return normalize_rows(self.pair_.vision.apply(np.asarray(V, dtype=np.float64)))

    def transform_text(self, T: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return normalize_rows(self.pair_.text.apply(np.asarray(T, dtype=np.float64)))


class AbnormalityRetriever(BaseEstimator):
    """Freezes anchors + reference index from a manifest and a trained pair.

    ``fit(manifest, pair=..., modality=...)`` builds the projected anchors
    and reference index; ``predict`` classifies raw image embeddings by
    anchor argmax and ``retrieve`` returns full per-query evidence.
    """

    def __init__(self, k: int = 3):
        self.k = k

    def fit(self, manifest: DatasetManifest, y=None, *,
            pair: ProjectionPair, modality: TextModality | str):
        modality = (TextModality.from_code(modality)
                    if isinstance(modality, str) else modality)
        raw_anchors = class_anchor_texts(manifest, modality)
        missing = [t.value for t in AbnormalityType if t not in raw_anchors]
        if missing:
            raise ValueError(f"missing anchor(s): {', '.join(missing)}")
        self.anchors_ = {
            abn: normalize_rows(pair.text.apply(vec)[None, :])[0]
            for abn, vec in raw_anchors.items()
        }
        self.index_ = build_reference_index(manifest, pair)
        self.pair_ = pair
        self.modality_ = modality
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "index_"):
            raise NotFittedError("AbnormalityRetriever is not fitted")

    def project_queries(self, V: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return normalize_rows(self.pair_.vision.apply(np.asarray(V, dtype=np.float64)))

    def predict(self, V: np.ndarray) -> list[AbnormalityType]:
        """Predicted abnormality type per raw image embedding row."""
        return [r.predicted for r in self.retrieve(V)]

    def predict_scores(self, V: np.ndarray) -> np.ndarray:
        """(N, 4) class-score matrix in canonical type order."""
        results = self.retrieve(V)
        return np.array(
            [[r.class_scores[t] for t in AbnormalityType] for r in results]
        )

    def retrieve(self, V: np.ndarray, ids: list[str] | None = None,
                 gold: list[AbnormalityType] | None = None,
                 k: int | None = None) -> list[RetrievalResult]:
        self._check_fitted()
        queries = self.project_queries(V)
        results = []
        for i, q in enumerate(queries):
            predicted, scores = classify_abnormality(q, self.anchors_)
            matches = retrieve_top_k(q, self.index_, self.k if k is None else k)
            results.append(
                RetrievalResult(
                    query_id=ids[i] if ids else f"query-{i:04d}",
                    predicted=predicted,
                    class_scores=scores,
                    top_k=matches,
                    gold=gold[i] if gold else None,
                )
            )
        return results

    def retrieve_manifest(self, manifest: DatasetManifest,
                          k: int | None = None) -> list[RetrievalResult]:
        return self.retrieve(
            manifest.image_matrix().astype(np.float64),
            ids=[c.id for c in manifest.cases],
            gold=[c.abnormality for c in manifest.cases],
            k=k,
        )


@dataclass
class PipelineOutput:
    """Everything the pipeline produces for one query."""

    result: RetrievalResult
    bundle: EvidenceBundle
    probabilities: dict[str, float]  # task -> probability


def _bundle_for(result: RetrievalResult, retriever: AbnormalityRetriever,
                query_vec: np.ndarray) -> EvidenceBundle:
    vec_of = {rid: i for i, rid in enumerate(retriever.index_.ids)}
    refs = np.stack([retriever.index_.vectors[vec_of[m.ref_id]] for m in result.top_k])
    return build_evidence(
        query_proj=query_vec,
        predicted_type=result.predicted,
        anchors=retriever.anchors_,
        ref_vectors=refs,
        ref_scores=[m.similarity for m in result.top_k],
    )


def run_pipeline(
    retriever: AbnormalityRetriever,
    manifest: DatasetManifest,
    predictors: dict[str, DiagnosisHead | ConditionalTable],
) -> list[PipelineOutput]:
    """Classify, retrieve, fuse, and predict for every case of ``manifest``.

    ``predictors`` maps task name to either a trained head or a conditional
    table; outputs keep manifest order.
    """
    results = retriever.retrieve_manifest(manifest)
    queries = retriever.project_queries(manifest.image_matrix().astype(np.float64))
    outputs = []
    for result, q in zip(results, queries):
        bundle = _bundle_for(result, retriever, q)
        probs = {}
        for task, predictor in predictors.items():
            if isinstance(predictor, ConditionalTable):
                probs[task] = predict_conditional(predictor, result.predicted)
            else:
                probs[task] = predict(predictor, bundle)
        outputs.append(PipelineOutput(result=result, bundle=bundle, probabilities=probs))
    return outputs


def fit_predictors(
    retriever: AbnormalityRetriever,
    train_manifest: DatasetManifest,
    predictor: str = "conditional",
    alpha: float = 1.0,
    head_lr: float = 0.5,
    head_epochs: int = 500,
    seed: int = 0,
) -> dict[str, DiagnosisHead | ConditionalTable]:
    """Fit the dementia and AD predictors on the reference corpus.

    Conditional tables are fitted from gold abnormality annotations; logistic
    heads from evidence bundles built against the frozen reference index.
    """
    tasks = {
        "dementia": [c.dementia.binary_dementia for c in train_manifest.cases],
        "ad": [c.dementia.binary_ad for c in train_manifest.cases],
    }
    predictors: dict[str, DiagnosisHead | ConditionalTable] = {}
    if predictor == "conditional":
        for task, labels in tasks.items():
            pairs = [(c.abnormality, y) for c, y in zip(train_manifest.cases, labels)]
            predictors[task] = fit_conditional(pairs, alpha=alpha, task=task)
    elif predictor == "head":
        results = retriever.retrieve_manifest(train_manifest)
        queries = retriever.project_queries(
            train_manifest.image_matrix().astype(np.float64))
        bundles = [
            _bundle_for(r, retriever, q) for r, q in zip(results, queries)
        ]
        for task, labels in tasks.items():
            predictors[task] = train_head(
                bundles, labels, lr=head_lr, epochs=head_epochs, seed=seed, task=task
            )
    else:
        raise ValueError("predictor must be 'conditional' or 'head'")
    return predictors


def _binary_report(gold: list[int], pred: list[int], scores: list[float],
                   label: str) -> MetricsReport:
    cm = confusion(gold, pred, 2)
    base = binary_metrics(cm)
    auc = safe_auc(scores, gold)
    return MetricsReport(
        metrics=ClassMetrics(auc_roc=auc, **base), cm=cm, label=label
    )


def retrieval_analytics(results: list[RetrievalResult], max_k: int | None = None) -> dict:
    """Accuracy@k / precision@k curves plus the similarity-score split."""
    if max_k is None:
        max_k = max(len(r.top_k) for r in results)
    curve = {
        "k": list(range(1, max_k + 1)),
        "accuracy_at_k": [accuracy_at_k(results, k) for k in range(1, max_k + 1)],
        "precision_at_k": [precision_at_k(results, k) for k in range(1, max_k + 1)],
    }
    return {
        "curves": curve,
        "similarity_split": similarity_split(results).to_json(),
        "top1_error_rate_pct": top1_error_rate(results),
    }


def evaluate_pipeline(
    retriever: AbnormalityRetriever,
    test_manifest: DatasetManifest,
    predictors: dict[str, DiagnosisHead | ConditionalTable],
) -> dict:
    """The full evaluation battery over a test manifest.

    Returns the three task reports (abnormality retrieval, dementia
    prediction, AD prediction), the per-stage error-rate table, and the
    retrieval analytics.
    """
    outputs = run_pipeline(retriever, test_manifest, predictors)
    results = [o.result for o in outputs]

    gold_abn = [r.gold.index for r in results]
    pred_abn = [r.predicted.index for r in results]
    score_abn = np.array(
        [[r.class_scores[t] for t in AbnormalityType] for r in results]
    )
    abn_report = macro_metrics(confusion(gold_abn, pred_abn, 4), score_abn, gold_abn)

    task_reports = {}
    task_errors = {}
    for task in ("dementia", "ad"):
        gold = [
            c.dementia.binary_dementia if task == "dementia" else c.dementia.binary_ad
            for c in test_manifest.cases
        ]
        probs = [o.probabilities[task] for o in outputs]
        pred = [1 if p >= 0.5 else 0 for p in probs]
        task_reports[task] = _binary_report(gold, pred, probs, label=task)
        task_errors[task] = stage_error_rates(gold, pred, [1, 0])

    error_table = {
        "abnormality": stage_error_rates(
            [r.gold for r in results], [r.predicted for r in results],
            list(AbnormalityType),
        ),
        "reference_retrieval": {"top1_error_rate_pct": top1_error_rate(results)},
        "dementia": {
            "positive": task_errors["dementia"]["1"],
            "negative": task_errors["dementia"]["0"],
        },
        "ad": {
            "positive": task_errors["ad"]["1"],
            "negative": task_errors["ad"]["0"],
        },
    }

    # analysis curves range over k = 1..25 (or the whole index when smaller)
    curve_results = retriever.retrieve_manifest(
        test_manifest, k=min(25, len(retriever.index_)))
    return {
        "reports": {
            "abnormality": abn_report,
            "dementia": task_reports["dementia"],
            "ad": task_reports["ad"],
        },
        "error_rates": error_table,
        "analytics": retrieval_analytics(curve_results),
        "outputs": outputs,
    }

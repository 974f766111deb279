"""Evidence-driven embedding alignment and diagnosis engine.

Operates on precomputed (or synthetic) vision/text embeddings: contrastive
fine-tuning of linear projection heads against fixed per-class text anchors,
cosine abnormality classification, exact reference retrieval with similarity
scoring, template-based explanation assembly, and dementia/AD prediction,
plus the full evaluation battery.
"""

from .data import (
    AbnormalityType,
    CaseRecord,
    DatasetManifest,
    DementiaLabel,
    SynthConfig,
    TextModality,
    load_manifest,
    mark_splits,
    relabel_binary,
    save_manifest,
    split_dataset,
    synth_dataset,
)
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
from .errors import DataError, NumericError
from .explanation import (
    DEFAULT_TEMPLATES,
    Explanation,
    format_probability,
    generate_description,
    load_templates,
    validate_refined,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    auc_roc,
    binary_metrics,
    confusion,
    macro_metrics,
    report_to_csv,
    stage_error_rates,
    top1_error_rate,
)
from .pca import PowerIterationPCA
from .pipeline import (
    AbnormalityRetriever,
    ContrastiveAligner,
    evaluate_pipeline,
    fit_predictors,
    run_pipeline,
)
from .projection import (
    Checkpoint,
    LinearProjection,
    ProjectionPair,
    init_projection,
    l2_normalize,
    load_checkpoint,
    project_image,
    project_text,
    save_checkpoint,
)
from .retrieval import (
    Match,
    ReferenceIndex,
    RetrievalResult,
    accuracy_at_k,
    build_reference_index,
    classify_abnormality,
    cosine_similarity,
    precision_at_k,
    retrieve_top_k,
    similarity_split,
)
from .training import (
    TrainConfig,
    TrainReport,
    category_regularizer,
    class_anchor_texts,
    info_nce_loss,
    loss_gradient,
    similarity_matrix,
    train,
)

__version__ = "0.1.0"

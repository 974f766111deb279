"""Template-based assembly of the evidence explanation.

Three ordered sections: the canonical description of the predicted
abnormality type, the retrieved reference cases with their similarity scores
(4 decimals), and the diagnosis statement with the predicted probability
(2 decimals, e.g. "81.01%").  An optional text refiner may rewrite the prose
but must preserve every numeric token; ``validate_refined`` enforces that.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable

from .data import AbnormalityType
from .errors import DataError
from .retrieval import RetrievalResult

__all__ = [
    "DEFAULT_TEMPLATES",
    "Explanation",
    "TextRefiner",
    "load_templates",
    "format_probability",
    "format_score",
    "generate_description",
    "validate_refined",
]

# Default per-type descriptions: standard radiological phrasing, shipped as
# editable configuration rather than fixed code.
DEFAULT_TEMPLATES: dict[AbnormalityType, str] = {
    AbnormalityType.NORMAL: (
        "No significant structural abnormality; ventricles, sulci, and "
        "hippocampal volumes are within age-expected limits."
    ),
    AbnormalityType.MTL_ATROPHY: (
        "Volume loss in the medial temporal lobe with widening of the "
        "choroid fissure and temporal horn; reduced hippocampal height, a "
        "pattern commonly associated with Alzheimer's disease."
    ),
    AbnormalityType.WMH: (
        "Confluent periventricular and deep white matter hyperintensities, "
        "consistent with small-vessel ischemic change."
    ),
    AbnormalityType.OTHER_ATROPHY: (
        "Cortical volume loss outside the medial temporal lobe, with "
        "widened sulci and reduced gyral volume."
    ),
}

TextRefiner = Callable[[str], str]

_TASK_PHRASES = {"dementia": "dementia", "ad": "Alzheimer's disease"}


def load_templates(path: str | Path) -> dict[AbnormalityType, str]:
    """Read a {type code: description} JSON file; all four types required."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"templates {path}: malformed JSON ({exc.msg})") from None
    templates = {}
    for abn in AbnormalityType:
        if abn.value not in obj:
            raise DataError(f"templates {path}: missing type {abn.value!r}")
        templates[abn] = str(obj[abn.value])
    return templates


def format_score(score: float) -> str:
    return f"{score:.4f}"


def format_probability(p: float) -> str:
    """Percentage with two decimals, round-half-up: 0.8101 -> '81.01%'."""
    pct = (Decimal(repr(float(p))) * 100).quantize(Decimal("0.01"), ROUND_HALF_UP)
    return f"{pct}%"


@dataclass
class Explanation:
    predicted_type: AbnormalityType
    type_description: str
    references: list[tuple[str, float, str]]
    diagnosis_statement: str
    rendered: str

    def to_json(self) -> dict:
        return {
            "predicted_type": self.predicted_type.value,
            "type_description": self.type_description,
            "references": [
                {"ref_id": rid, "similarity": sim, "description": desc}
                for rid, sim, desc in self.references
            ],
            "diagnosis_statement": self.diagnosis_statement,
            "rendered": self.rendered,
        }


def generate_description(
    result: RetrievalResult,
    probability: float,
    task: str,
    templates: dict[AbnormalityType, str] | None = None,
    refiner: TextRefiner | None = None,
) -> Explanation:
    """Assemble the explanation text for one query.

    Deterministic for identical inputs with the identity refiner.  A refiner
    that drops any numeric token raises ``ValueError`` naming the tokens.
    """
    templates = DEFAULT_TEMPLATES if templates is None else templates
    if result.predicted not in templates:
        raise ValueError(f"missing template for type {result.predicted.value!r}")
    if task not in _TASK_PHRASES:
        raise ValueError("task must be 'dementia' or 'ad'")

    type_description = templates[result.predicted]
    lines = [
        f"Predicted abnormality type: {result.predicted.value}.",
        type_description,
        "",
        "Similar reference cases:",
    ]
    references = []
    for m in result.top_k:
        references.append((m.ref_id, m.similarity, m.description))
        lines.append(
            f"- {m.ref_id} ({m.abnormality.value}, similarity "
            f"{format_score(m.similarity)}): {m.description}"
        )
    diagnosis_statement = (
        f"Estimated probability of {_TASK_PHRASES[task]}: "
        f"{format_probability(probability)}."
    )
    lines += ["", diagnosis_statement]
    rendered = "\n".join(lines)

    if refiner is not None:
        refined = refiner(rendered)
        missing = validate_refined(rendered, refined)
        if missing:
            raise ValueError(
                "refiner dropped numeric token(s): " + ", ".join(missing)
            )
        rendered = refined

    return Explanation(
        predicted_type=result.predicted,
        type_description=type_description,
        references=references,
        diagnosis_statement=diagnosis_statement,
        rendered=rendered,
    )


_DECIMAL_TOKEN = re.compile(r"\d+\.\d+")


def validate_refined(raw: str, refined: str) -> list[str]:
    """Every decimal token of ``raw`` must survive in ``refined``; returns
    the missing tokens (empty list = ok)."""
    missing = []
    for token in sorted(set(_DECIMAL_TOKEN.findall(raw))):
        if token not in refined:
            missing.append(token)
    return missing

from __future__ import annotations

import numpy as np
import pytest

from aligndx.data import (
    AbnormalityType,
    CaseRecord,
    DatasetManifest,
    DementiaLabel,
    TextModality,
)


def make_case(
    case_id: str,
    abnormality: AbnormalityType = AbnormalityType.NORMAL,
    dementia: DementiaLabel = DementiaLabel.NON_DEMENTED,
    image=None,
    text=None,
    dim_image: int = 4,
    dim_text: int = 4,
    split: str | None = None,
) -> CaseRecord:
    rng = np.random.default_rng(abs(hash(case_id)) % (2**32))
    image = rng.normal(size=dim_image) if image is None else np.asarray(image)
    text = rng.normal(size=dim_text) if text is None else np.asarray(text)
    return CaseRecord(
        id=case_id,
        abnormality=abnormality,
        dementia=dementia,
        description=f"case {case_id}",
        image_embedding=image.astype(np.float32),
        text_embeddings={m: text.astype(np.float32) for m in TextModality},
        split=split,
    )


@pytest.fixture
def tiny_manifest() -> DatasetManifest:
    """Eight cases, two per class, alternating dementia labels."""
    cases = []
    for i, abn in enumerate(AbnormalityType):
        for j in range(2):
            cases.append(
                make_case(
                    f"c{i}{j}",
                    abnormality=abn,
                    dementia=DementiaLabel.AD if j else DementiaLabel.NON_DEMENTED,
                )
            )
    return DatasetManifest(cases=cases, dims=(4, 4))

"""Data model and manifest handling.

A dataset is a JSON Lines manifest: one object per case with keys ``id``,
``split`` (optional), ``abnormality``, ``dementia``, ``description``,
``image_embedding`` (array of numbers) and ``text_embeddings`` (object keyed
by modality name).  Numbers are parsed as 64-bit floats and stored as 32-bit.
An optional leading line without an ``id`` key carries manifest-level
metadata (currently only ``provenance``).

Also provides dataset splitting, binary relabeling of severity codes, and a
synthetic Gaussian-cluster generator used as a desk-scale stand-in for real
encoder outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "AbnormalityType",
    "DementiaLabel",
    "TextModality",
    "CaseRecord",
    "DatasetManifest",
    "SynthConfig",
    "load_manifest",
    "save_manifest",
    "split_dataset",
    "mark_splits",
    "relabel_binary",
    "synth_dataset",
    "DEFAULT_DEMENTIA_MIX",
]


class AbnormalityType(str, Enum):
    """The four radiological categories, in canonical (tie-break) order."""

    NORMAL = "normal"
    MTL_ATROPHY = "mtl_atrophy"
    WMH = "wmh"
    OTHER_ATROPHY = "other_atrophy"

    @classmethod
    def from_code(cls, code: str) -> "AbnormalityType":
        try:
            return cls(code)
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise DataError(
                f"unknown abnormality code {code!r}; valid codes: {valid}"
            ) from None

    @property
    def index(self) -> int:
        """Position in canonical order; doubles as the confusion-matrix label."""
        return list(AbnormalityType).index(self)

    @property
    def phrase(self) -> str:
        """Canonical anchor phrase used as the fixed per-class text."""
        return _ABNORMALITY_PHRASES[self]


_ABNORMALITY_PHRASES = {
    AbnormalityType.NORMAL: "Normal",
    AbnormalityType.MTL_ATROPHY: "Medial Temporal Lobe Atrophy",
    AbnormalityType.WMH: "White Matter Hyperintensities",
    AbnormalityType.OTHER_ATROPHY: "Other Atrophy",
}


class DementiaLabel(str, Enum):
    NON_DEMENTED = "non_demented"
    AD = "ad"
    OTHER_DEMENTIA = "other_dementia"

    @classmethod
    def from_code(cls, code: str) -> "DementiaLabel":
        try:
            return cls(code)
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise DataError(
                f"unknown dementia code {code!r}; valid codes: {valid}"
            ) from None

    @property
    def binary_dementia(self) -> int:
        """0 for non-demented, 1 for any dementia."""
        return 0 if self is DementiaLabel.NON_DEMENTED else 1

    @property
    def binary_ad(self) -> int:
        """1 for AD only."""
        return 1 if self is DementiaLabel.AD else 0

    @property
    def phrase(self) -> str:
        return _DEMENTIA_PHRASES[self]


_DEMENTIA_PHRASES = {
    DementiaLabel.NON_DEMENTED: "Non-demented",
    DementiaLabel.AD: "Alzheimer's Disease",
    DementiaLabel.OTHER_DEMENTIA: "Other Dementia",
}


class TextModality(str, Enum):
    DESCRIPTION = "description"
    ABNORMALITY = "abnormality"
    SUMMARY = "summary"
    ALL = "all"

    @classmethod
    def from_code(cls, code: str) -> "TextModality":
        try:
            return cls(code)
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise DataError(
                f"unknown text modality {code!r}; valid codes: {valid}"
            ) from None


@dataclass
class CaseRecord:
    """One case: labels, description text, and embedding vectors (float32)."""

    id: str
    abnormality: AbnormalityType
    dementia: DementiaLabel
    description: str
    image_embedding: np.ndarray
    text_embeddings: dict[TextModality, np.ndarray]
    split: str | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CaseRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.abnormality == other.abnormality
            and self.dementia == other.dementia
            and self.description == other.description
            and np.array_equal(self.image_embedding, other.image_embedding)
            and set(self.text_embeddings) == set(other.text_embeddings)
            and all(
                np.array_equal(v, other.text_embeddings[k])
                for k, v in self.text_embeddings.items()
            )
        )


@dataclass
class DatasetManifest:
    """Immutable-after-load collection of cases with shared dims (D, M)."""

    cases: list[CaseRecord]
    dims: tuple[int, int]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.cases)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.provenance == other.provenance
            and self.cases == other.cases
        )

    def image_matrix(self) -> np.ndarray:
        """All image embeddings stacked, shape (N, D)."""
        return np.stack([c.image_embedding for c in self.cases])

    def text_matrix(self, modality: TextModality) -> np.ndarray:
        """Text embeddings for one modality stacked, shape (N, M)."""
        missing = [c.id for c in self.cases if modality not in c.text_embeddings]
        if missing:
            raise DataError(
                f"modality {modality.value!r} missing for case(s): "
                + ", ".join(missing[:5])
            )
        return np.stack([c.text_embeddings[modality] for c in self.cases])

    def abnormality_indices(self) -> np.ndarray:
        return np.array([c.abnormality.index for c in self.cases], dtype=int)

    def subset(self, case_ids: Sequence[str]) -> "DatasetManifest":
        wanted = set(case_ids)
        return DatasetManifest(
            cases=[c for c in self.cases if c.id in wanted],
            dims=self.dims,
            provenance=self.provenance,
        )


def _parse_vector(raw: object, what: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{what} must be a non-empty array of numbers")
    try:
        vec64 = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"{what} contains non-numeric entries") from None
    if vec64.ndim != 1:
        raise DataError(f"{what} must be a flat array")
    if not np.all(np.isfinite(vec64)):
        raise DataError(f"{what} contains NaN/Inf components")
    return vec64.astype(np.float32)


def _parse_case(obj: Mapping, line_no: int) -> CaseRecord:
    for key in ("id", "abnormality", "dementia", "description",
                "image_embedding", "text_embeddings"):
        if key not in obj:
            raise DataError(f"line {line_no}: missing key {key!r}")
    split = obj.get("split")
    if split is not None and split not in ("train", "test"):
        raise DataError(f"line {line_no}: split must be 'train' or 'test'")
    try:
        abnormality = AbnormalityType.from_code(obj["abnormality"])
        dementia = DementiaLabel.from_code(obj["dementia"])
    except DataError as exc:
        raise DataError(f"line {line_no}: {exc}") from None
    image = _parse_vector(obj["image_embedding"], f"line {line_no}: image_embedding")
    raw_texts = obj["text_embeddings"]
    if not isinstance(raw_texts, Mapping) or not raw_texts:
        raise DataError(f"line {line_no}: text_embeddings must be a non-empty object")
    texts: dict[TextModality, np.ndarray] = {}
    for name, vec in raw_texts.items():
        try:
            modality = TextModality.from_code(name)
        except DataError as exc:
            raise DataError(f"line {line_no}: {exc}") from None
        texts[modality] = _parse_vector(vec, f"line {line_no}: text_embeddings[{name}]")
    return CaseRecord(
        id=str(obj["id"]),
        split=split,
        abnormality=abnormality,
        dementia=dementia,
        description=str(obj["description"]),
        image_embedding=image,
        text_embeddings=texts,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a JSON Lines manifest.

    Raises ``DataError`` naming the offending line for malformed JSON,
    unknown label codes, dimension mismatches, and duplicate ids.
    """
    path = Path(path)
    provenance = ""
    cases: list[CaseRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"line {line_no}: expected a JSON object")
            if "id" not in obj and line_no == 1:
                provenance = str(obj.get("provenance", ""))
                continue
            cases.append(_parse_case(obj, line_no))
    if not cases:
        raise DataError("empty manifest")

    dim_d = cases[0].image_embedding.shape[0]
    dim_m = next(iter(cases[0].text_embeddings.values())).shape[0]
    seen: set[str] = set()
    for case in cases:
        if case.id in seen:
            raise DataError(f"duplicate id {case.id!r}")
        seen.add(case.id)
        if case.image_embedding.shape[0] != dim_d:
            raise DataError(
                f"case {case.id!r}: image embedding dimension "
                f"{case.image_embedding.shape[0]} != {dim_d}"
            )
        for modality, vec in case.text_embeddings.items():
            if vec.shape[0] != dim_m:
                raise DataError(
                    f"case {case.id!r}: text embedding [{modality.value}] dimension "
                    f"{vec.shape[0]} != {dim_m}"
                )
    declared = [c for c in cases if c.split is not None]
    if declared and len(declared) != len(cases):
        raise DataError("split declared for some cases but not all")
    return DatasetManifest(cases=cases, dims=(dim_d, dim_m), provenance=provenance)


def _vec_to_json(vec: np.ndarray) -> list[float]:
    # float32 -> float64 widening is exact, so repr round-trips bit-for-bit
    return [float(x) for x in vec]


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest back to JSON Lines (deterministic byte output)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if manifest.provenance:
            fh.write(json.dumps({"provenance": manifest.provenance}) + "\n")
        for case in manifest.cases:
            obj: dict = {"id": case.id}
            if case.split is not None:
                obj["split"] = case.split
            obj["abnormality"] = case.abnormality.value
            obj["dementia"] = case.dementia.value
            obj["description"] = case.description
            obj["image_embedding"] = _vec_to_json(case.image_embedding)
            obj["text_embeddings"] = {
                m.value: _vec_to_json(v) for m, v in sorted(
                    case.text_embeddings.items(), key=lambda kv: kv[0].value
                )
            }
            fh.write(json.dumps(obj) + "\n")


def split_dataset(
    manifest: DatasetManifest, n_train: int, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition into train/test.

    Declared ``split`` fields, when present, are honored verbatim and
    ``n_train``/``seed`` are ignored.  Otherwise the cases are shuffled
    deterministically under ``seed`` and the first ``n_train`` become train.
    """
    cases = manifest.cases
    if any(c.split is not None for c in cases):
        train = [c for c in cases if c.split == "train"]
        test = [c for c in cases if c.split == "test"]
        if len(train) + len(test) != len(cases):
            raise DataError("declared splits do not partition the manifest")
        return (
            DatasetManifest(train, manifest.dims, manifest.provenance),
            DatasetManifest(test, manifest.dims, manifest.provenance),
        )
    if not 0 < n_train < len(cases):
        raise ValueError(
            f"n_train must be in (0, {len(cases)}), got {n_train}"
        )
    order = np.random.default_rng(seed).permutation(len(cases))
    train = [cases[i] for i in order[:n_train]]
    test = [cases[i] for i in order[n_train:]]
    return (
        DatasetManifest(train, manifest.dims, manifest.provenance),
        DatasetManifest(test, manifest.dims, manifest.provenance),
    )


def mark_splits(manifest: DatasetManifest, train_per_class: int) -> DatasetManifest:
    """Return a copy with stratified ``split`` fields: the first
    ``train_per_class`` cases of every abnormality type (manifest order)
    become train, the rest test."""
    counts: dict[AbnormalityType, int] = {t: 0 for t in AbnormalityType}
    cases = []
    for case in manifest.cases:
        counts[case.abnormality] += 1
        split = "train" if counts[case.abnormality] <= train_per_class else "test"
        cases.append(replace(case, split=split))
    return DatasetManifest(cases, manifest.dims, manifest.provenance)


def relabel_binary(code: int) -> int:
    """Collapse the 0-3 severity code to binary: 0 stays 0, 1-3 become 1."""
    if code not in (0, 1, 2, 3):
        raise ValueError(f"severity code must be in 0..3, got {code}")
    return 0 if code == 0 else 1


# Per-class probabilities over (non_demented, ad, other_dementia); dementia is
# generated downstream of abnormality, so the mix is keyed by abnormality type.
DEFAULT_DEMENTIA_MIX: dict[AbnormalityType, tuple[float, float, float]] = {
    AbnormalityType.NORMAL: (0.90, 0.02, 0.08),
    AbnormalityType.MTL_ATROPHY: (0.10, 0.75, 0.15),
    AbnormalityType.WMH: (0.35, 0.15, 0.50),
    AbnormalityType.OTHER_ATROPHY: (0.25, 0.15, 0.60),
}


@dataclass
class SynthConfig:
    """Gaussian-cluster generator settings.

    One image-embedding cluster per abnormality type; ``class_separation`` is
    the minimum pairwise distance between cluster means and ``noise_sigma``
    the within-cluster standard deviation.
    """

    n_per_class: int = 40
    dim_image: int = 32
    dim_text: int = 32
    class_separation: float = 6.0
    noise_sigma: float = 1.0
    dementia_mix: dict[AbnormalityType, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_DEMENTIA_MIX)
    )

    def validate(self) -> None:
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.dim_image < 2 or self.dim_text < 2:
            raise ValueError("embedding dims must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be > 0")
        for abn in AbnormalityType:
            mix = self.dementia_mix.get(abn)
            if mix is None:
                raise ValueError(f"dementia_mix missing {abn.value!r}")
            if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
                raise ValueError(
                    f"dementia_mix[{abn.value!r}] must be 3 probabilities summing to 1"
                )


def _spread_means(rng: np.random.Generator, n: int, dim: int, separation: float) -> np.ndarray:
    """Random cluster means rescaled so the minimum pairwise distance equals
    ``separation`` exactly."""
    means = rng.normal(size=(n, dim))
    dists = [
        float(np.linalg.norm(means[i] - means[j]))
        for i in range(n)
        for j in range(i + 1, n)
    ]
    return means * (separation / min(dists))


def synth_dataset(config: SynthConfig, seed: int) -> DatasetManifest:
    """Generate a synthetic manifest of Gaussian clusters (deterministic).

    Image embeddings are per-class Gaussians.  The ``abnormality`` text
    modality carries the exact class anchor vector (the fixed-text scheme);
    the other modalities add a seeded per-modality offset plus per-case noise
    at ``noise_sigma``.  Dementia labels are drawn per class from
    ``dementia_mix``.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    classes = list(AbnormalityType)
    image_means = _spread_means(rng, len(classes), config.dim_image, config.class_separation)
    text_means = _spread_means(rng, len(classes), config.dim_text, config.class_separation)
    perturbed = [TextModality.DESCRIPTION, TextModality.SUMMARY, TextModality.ALL]
    offsets = {
        m: rng.normal(size=config.dim_text) * config.noise_sigma for m in perturbed
    }

    cases: list[CaseRecord] = []
    counter = 0
    for ci, abn in enumerate(classes):
        mix = config.dementia_mix[abn]
        for _ in range(config.n_per_class):
            counter += 1
            image = image_means[ci] + rng.normal(size=config.dim_image) * config.noise_sigma
            texts: dict[TextModality, np.ndarray] = {
                TextModality.ABNORMALITY: text_means[ci].astype(np.float32)
            }
            for m in perturbed:
                noise = rng.normal(size=config.dim_text) * config.noise_sigma
                texts[m] = (text_means[ci] + offsets[m] + noise).astype(np.float32)
            dem_idx = rng.choice(3, p=np.asarray(mix) / sum(mix))
            dementia = list(DementiaLabel)[int(dem_idx)]
            case_id = f"case-{counter:04d}"
            cases.append(
                CaseRecord(
                    id=case_id,
                    abnormality=abn,
                    dementia=dementia,
                    description=f"Synthetic case {case_id}: {abn.phrase}.",
                    image_embedding=image.astype(np.float32),
                    text_embeddings=texts,
                )
            )
    provenance = (
        f"synthetic(seed={seed}, n_per_class={config.n_per_class}, "
        f"D={config.dim_image}, M={config.dim_text}, "
        f"separation={config.class_separation}, sigma={config.noise_sigma})"
    )
    return DatasetManifest(cases=cases, dims=(config.dim_image, config.dim_text),
                           provenance=provenance)

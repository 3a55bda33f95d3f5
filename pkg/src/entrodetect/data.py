"""Record file formats, strict ingestion, and synthetic dataset generation.

Labeled records, logit dumps, and response sets are JSONL (one object per
line); feature records are plain lines of ``id,label,v1,v2,...``. Parsing
is all-or-nothing per file and every error carries its line number. Unknown
fields are rejected so schema drift is caught at ingest, not after a
training run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import FeatureRecord, ResponseSet
from .config import coerce, parse_kv_file
from .entropy import MAX_ENTROPY, validate_distribution, validate_entropy_values
from .errors import ValidationError
from .nn import RngStream

SPLITS = ("train", "test", "unspecified")


@dataclass
class LabeledRecord:
    """One training/eval example: an entropy sequence plus its label.

    label 0 is truthful, 1 is hallucinated. ``group`` ties related records
    (e.g. responses to one question) so splits keep them together.
    """

    id: str
    entropies: np.ndarray
    label: int
    dataset: str = ""
    group: str | None = None
    split: str = "unspecified"

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id must be non-empty")
        self.entropies = validate_entropy_values(
            self.entropies, context=f"record {self.id!r}"
        )
        if self.label not in (0, 1):
            raise ValidationError(
                f"record {self.id!r}: label must be 0 or 1, got {self.label!r}"
            )
        if self.split not in SPLITS:
            raise ValidationError(
                f"record {self.id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )


@dataclass
class LogitDumpRecord:
    """Per-token top-k probabilities (k <= 100, descending) for one
    response, with label/tag passthrough so extraction yields a trainable
    file directly."""

    id: str
    token_probs: list[np.ndarray]
    label: int
    dataset: str = ""
    group: str | None = None
    split: str = "unspecified"

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id must be non-empty")
        if not self.token_probs:
            raise ValidationError(f"record {self.id!r}: no token distributions")
        checked = []
        for t, probs in enumerate(self.token_probs):
            arr = np.asarray(probs, dtype=np.float64)
            try:
                validate_distribution(arr)
            except ValidationError as exc:
                raise ValidationError(f"record {self.id!r}, token {t}: {exc}") from exc
            if np.any(np.diff(arr) > 0):
                raise ValidationError(
                    f"record {self.id!r}, token {t}: probabilities must be descending"
                )
            checked.append(arr)
        self.token_probs = checked
        if self.label not in (0, 1):
            raise ValidationError(
                f"record {self.id!r}: label must be 0 or 1, got {self.label!r}"
            )
        if self.split not in SPLITS:
            raise ValidationError(
                f"record {self.id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )


# ---------------------------------------------------------------------------
# parsing

_LABELED_FIELDS = {"id", "entropies", "label", "dataset", "group", "split"}
_DUMP_FIELDS = {"id", "token_probs", "label", "dataset", "group", "split"}
_RESPONSE_FIELDS = {"id", "responses", "clusters"}

RECORD_KINDS = ("labeled", "logit-dump", "features", "responses")


def _require(obj: dict, lineno: int, required: set[str], allowed: set[str]) -> None:
    missing = sorted(required - set(obj))
    if missing:
        raise ValidationError(f"line {lineno}: missing fields {missing}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(f"line {lineno}: unknown fields {unknown}")


def _parse_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"line {lineno}: expected a JSON object")
            yield lineno, obj


def _parse_labeled(path) -> list[LabeledRecord]:
    out = []
    for lineno, obj in _parse_jsonl(path):
        _require(obj, lineno, {"id", "entropies", "label"}, _LABELED_FIELDS)
        try:
            out.append(
                LabeledRecord(
                    id=str(obj["id"]),
                    entropies=obj["entropies"],
                    label=obj["label"],
                    dataset=str(obj.get("dataset", "")),
                    group=obj.get("group"),
                    split=obj.get("split", "unspecified"),
                )
            )
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return out


def _parse_logit_dump(path) -> list[LogitDumpRecord]:
    out = []
    for lineno, obj in _parse_jsonl(path):
        _require(obj, lineno, {"id", "token_probs", "label"}, _DUMP_FIELDS)
        try:
            out.append(
                LogitDumpRecord(
                    id=str(obj["id"]),
                    token_probs=obj["token_probs"],
                    label=obj["label"],
                    dataset=str(obj.get("dataset", "")),
                    group=obj.get("group"),
                    split=obj.get("split", "unspecified"),
                )
            )
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return out


def _parse_responses(path) -> list[ResponseSet]:
    out = []
    for lineno, obj in _parse_jsonl(path):
        _require(obj, lineno, {"id", "responses"}, _RESPONSE_FIELDS)
        try:
            out.append(
                ResponseSet(
                    question_id=str(obj["id"]),
                    responses=[str(r) for r in obj["responses"]],
                    cluster_labels=obj.get("clusters"),
                )
            )
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return out


def _parse_features(path) -> list[FeatureRecord]:
    out = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValidationError(
                    f"line {lineno}: expected 'id,label,v1,...', got {raw!r}"
                )
            try:
                rec = FeatureRecord(
                    id=parts[0],
                    label=int(parts[1]),
                    features=[float(v) for v in parts[2:]],
                )
            except (ValidationError, ValueError) as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
            if dim is None:
                dim = rec.features.shape[0]
            elif rec.features.shape[0] != dim:
                raise ValidationError(
                    f"line {lineno}: {rec.features.shape[0]} features, file uses {dim}"
                )
            out.append(rec)
    return out


def parse_records(path, kind: str):
    """Load and validate a record file; all-or-nothing, errors carry line
    numbers. kind is one of 'labeled', 'logit-dump', 'features',
    'responses'."""
    parsers = {
        "labeled": _parse_labeled,
        "logit-dump": _parse_logit_dump,
        "features": _parse_features,
        "responses": _parse_responses,
    }
    if kind not in parsers:
        raise ValidationError(f"unknown record kind {kind!r}, expected one of {RECORD_KINDS}")
    try:
        records = parsers[kind](path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if not records:
        raise ValidationError(f"{path}: no records")
    return records


# ---------------------------------------------------------------------------
# emission (canonical field order; optional fields omitted when absent)


def labeled_record_to_json(r: LabeledRecord) -> str:
    obj = {"id": r.id, "dataset": r.dataset}
    if r.group is not None:
        obj["group"] = r.group
    obj["entropies"] = [float(v) for v in r.entropies]
    obj["label"] = int(r.label)
    obj["split"] = r.split
    return json.dumps(obj)


def write_labeled_records(path, records: Sequence[LabeledRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(labeled_record_to_json(r) + "\n")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class RegimeParams:
    """Per-class generator: i.i.d. normal entropy values around ``mean``
    plus an additive burst over the first ``burst_width`` positions."""

    mean: float
    std: float
    burst_amp: float = 0.0
    burst_width: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mean <= MAX_ENTROPY:
            raise ValidationError(f"regime mean must be in [0, ln 100], got {self.mean}")
        if self.std < 0 or self.burst_width < 0:
            raise ValidationError("regime std and burst_width must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale synthetic dataset: class 0 draws from a low-entropy
    regime, class 1 from a high-entropy regime with an early burst."""

    n_records: int = 2000
    class_balance: float = 0.5  # fraction of class 1
    len_min: int = 8
    len_max: int = 64
    seed: int = 7
    test_fraction: float = 0.2
    class0: RegimeParams = RegimeParams(mean=0.8, std=0.3)
    class1: RegimeParams = RegimeParams(mean=2.2, std=0.3, burst_amp=1.0, burst_width=8)

    def __post_init__(self):
        if self.n_records < 4:
            raise ValidationError(f"n_records must be >= 4, got {self.n_records}")
        if not 0.0 < self.class_balance < 1.0:
            raise ValidationError(
                f"class_balance must be in (0, 1), got {self.class_balance}"
            )
        if not 1 <= self.len_min <= self.len_max or self.len_max > 64:
            raise ValidationError(
                f"need 1 <= len_min <= len_max <= 64, got [{self.len_min}, {self.len_max}]"
            )
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValidationError(
                f"test_fraction must be in [0, 1), got {self.test_fraction}"
            )

    @classmethod
    def from_mapping(cls, kv: dict, **overrides) -> "SynthConfig":
        schema = {
            "n_records": int,
            "class_balance": float,
            "len_min": int,
            "len_max": int,
            "seed": int,
            "test_fraction": float,
            "class0_mean": float,
            "class0_std": float,
            "class0_burst_amp": float,
            "class0_burst_width": int,
            "class1_mean": float,
            "class1_std": float,
            "class1_burst_amp": float,
            "class1_burst_width": int,
        }
        flat = coerce(kv, schema, context="synth config")
        flat.update(overrides)
        kwargs = {}
        regimes: dict[str, dict] = {"class0": {}, "class1": {}}
        for key, value in flat.items():
            if key.startswith(("class0_", "class1_")):
                cls_key, param = key.split("_", 1)
                regimes[cls_key][param] = value
            else:
                kwargs[key] = value
        defaults = cls()
        for cls_key, params in regimes.items():
            if params:
                base = getattr(defaults, cls_key)
                merged = {
                    "mean": base.mean,
                    "std": base.std,
                    "burst_amp": base.burst_amp,
                    "burst_width": base.burst_width,
                }
                merged.update(params)
                kwargs[cls_key] = RegimeParams(**merged)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "SynthConfig":
        return cls.from_mapping(parse_kv_file(path), **overrides)


def generate_synthetic(config: SynthConfig) -> list[LabeledRecord]:
    """Deterministic dataset with split tags assigned per class.

    Values are clamped to the valid entropy range [0, ln 100].
    """
    rng = RngStream(config.seed)
    n = config.n_records
    n1 = int(round(n * config.class_balance))
    n0 = n - n1
    if n0 < 2 or n1 < 2:
        raise ValidationError(
            f"class balance {config.class_balance} leaves fewer than 2 examples in a class"
        )
    labels = np.array([0] * n0 + [1] * n1)
    labels = labels[rng.permutation(n)]

    # stratified test tagging
    split = ["train"] * n
    for c in (0, 1):
        members = [i for i in range(n) if labels[i] == c]
        k = int(math.floor(len(members) * config.test_fraction + 0.5))
        order = rng.permutation(len(members))
        for j in order[:k]:
            split[members[j]] = "test"

    records = []
    regimes = (config.class0, config.class1)
    for i in range(n):
        label = int(labels[i])
        regime = regimes[label]
        length = int(rng.integers(config.len_min, config.len_max + 1))
        values = regime.mean + regime.std * rng.normal((length,))
        if regime.burst_amp and regime.burst_width:
            values[: regime.burst_width] += regime.burst_amp
        values = np.clip(values, 0.0, MAX_ENTROPY)
        records.append(
            LabeledRecord(
                id=f"synth-{i:06d}",
                entropies=values,
                label=label,
                dataset="synthetic",
                split=split[i],
            )
        )
    return records

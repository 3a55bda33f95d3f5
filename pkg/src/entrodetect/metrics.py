"""Evaluation metrics: confusion matrix, per-class precision/recall/F1,
macro-F1, and the per-position attention profile export.

Macro-F1 is the unweighted mean of the two per-class F1 scores; any 0/0
ratio along the way is defined as 0 so degenerate predictors still score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class ConfusionMatrix:
    """2x2 counts indexed [true class][predicted class]."""

    def __init__(self, counts=None):
        self.counts = np.zeros((2, 2), dtype=np.int64)
        if counts is not None:
            arr = np.asarray(counts, dtype=np.int64)
            if arr.shape != (2, 2) or np.any(arr < 0):
                raise ValidationError(f"confusion matrix must be 2x2 non-negative, got {counts}")
            self.counts = arr

    @classmethod
    def from_pairs(cls, truths, preds) -> "ConfusionMatrix":
        cm = cls()
        for t, p in zip(truths, preds, strict=True):
            cm.add(int(t), int(p))
        return cm

    def add(self, truth: int, pred: int) -> None:
        if truth not in (0, 1) or pred not in (0, 1):
            raise ValidationError(f"classes must be 0 or 1, got truth={truth} pred={pred}")
        self.counts[truth, pred] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix({self.counts.tolist()})"


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def per_class_metrics(cm: ConfusionMatrix) -> dict[int, dict[str, float]]:
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    out = {}
    for c in (0, 1):
        tp = float(cm.counts[c, c])
        fp = float(cm.counts[1 - c, c])
        fn = float(cm.counts[c, 1 - c])
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2.0 * precision * recall, precision + recall)
        out[c] = {"precision": precision, "recall": recall, "f1": f1}
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    per = per_class_metrics(cm)
    return 0.5 * (per[0]["f1"] + per[1]["f1"])


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    per_class: dict[int, dict[str, float]]
    macro_f1: float


def evaluate(predict_fn, records) -> EvalResult:
    """Score a predictor over labeled records.

    predict_fn takes the record list and returns one predicted class per
    record; the result is independent of record order by construction
    (per-record predictions plus an order-insensitive reduction).
    """
    records = list(records)
    if not records:
        raise ValidationError("no records to evaluate")
    truths = []
    for r in records:
        label = getattr(r, "label", None)
        if label not in (0, 1):
            raise ValidationError(f"record {getattr(r, 'id', '?')!r} has no binary label")
        truths.append(int(label))
    preds = predict_fn(records)
    cm = ConfusionMatrix.from_pairs(truths, preds)
    return EvalResult(confusion=cm, per_class=per_class_metrics(cm), macro_f1=macro_f1(cm))


def model_predictor(model, batch_size: int = 256):
    """Predictor over records with .entropies, chunked for memory."""

    def predict(records):
        out = []
        for i in range(0, len(records), batch_size):
            chunk = records[i : i + batch_size]
            preds = model.predict_batch([r.entropies for r in chunk])
            out.extend(p.predicted_class for p in preds)
        return out

    return predict


def threshold_predictor(score_fn, gamma: float):
    """Maps score > gamma to the hallucination class (1)."""

    def predict(records):
        return [1 if score_fn(r) > gamma else 0 for r in records]

    return predict


# ---------------------------------------------------------------------------
# attention profile


@dataclass
class AttentionProfile:
    position: int
    mean_weight: float
    count: int


def attention_profile(model, records, batch_size: int = 64) -> list[AttentionProfile]:
    """Mean attention weight per token position, averaged over the
    sequences that actually reach that position (ragged mean)."""
    records = list(records)
    if not records:
        raise ValidationError("no records for attention profile")
    max_len = model.config.max_seq_len
    sums = np.zeros(max_len)
    counts = np.zeros(max_len, dtype=np.int64)
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        preds = model.predict_batch([r.entropies for r in chunk])
        for p in preds:
            L = len(p.attention)
            sums[:L] += p.attention
            counts[:L] += 1
    out = []
    for pos in range(max_len):
        if counts[pos] == 0:
            break
        out.append(
            AttentionProfile(position=pos, mean_weight=float(sums[pos] / counts[pos]), count=int(counts[pos]))
        )
    return out


# ---------------------------------------------------------------------------
# CSV emission

METRICS_HEADER = (
    "method,dataset,macro_f1,f1_class0,f1_class1,"
    "precision_class0,recall_class0,precision_class1,recall_class1"
)


def metrics_csv_row(method: str, dataset: str, result: EvalResult) -> str:
    per = result.per_class
    fields = [
        method,
        dataset,
        repr(result.macro_f1),
        repr(per[0]["f1"]),
        repr(per[1]["f1"]),
        repr(per[0]["precision"]),
        repr(per[0]["recall"]),
        repr(per[1]["precision"]),
        repr(per[1]["recall"]),
    ]
    return ",".join(fields)


def write_metrics_csv(path, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def write_attention_csv(path, profiles: list[AttentionProfile]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("position,mean_weight,count\n")
        for p in profiles:
            fh.write(f"{p.position},{p.mean_weight!r},{p.count}\n")

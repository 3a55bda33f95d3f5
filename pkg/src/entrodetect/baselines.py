"""Comparison methods: discrete semantic entropy over response clusters and
linear probes over ingested hidden-state features.

Semantic clustering uses a pluggable pairwise equivalence oracle. The
oracle answers the combined bidirectional question ("do these two responses
entail each other?"); shipped oracles are exact match and normalized match,
and any external judge (e.g. an NLI model) can be attached through a
line-based subprocess adapter. Clustering is greedy and single pass:
each response joins the first cluster whose representative it matches,
otherwise it opens a new cluster, so processing order matters by design.
"""

from __future__ import annotations

import math
import string
import subprocess
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import OracleError, ValidationError
from .metrics import ConfusionMatrix, evaluate, macro_f1
from .model import read_container, write_container
from .nn import NamedTensor, RngStream, softmax, weighted_cross_entropy
from .trainer import (
    TrainConfig,
    TrainReport,
    EpochStats,
    adamw_step,
    clip_gradients,
    init_moments,
    lr_at_epoch,
    make_batches,
    stratified_split,
)

EquivalenceOracle = Callable[[str, str], bool]

# ASCII unit separator: cannot occur in normal response text
ORACLE_FIELD_SEP = "\x1f"


def exact_match_oracle(a: str, b: str) -> bool:
    return a == b


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalized_match_oracle(a: str, b: str) -> bool:
    """Case-folded, punctuation-stripped, whitespace-collapsed comparison."""

    def norm(s: str) -> str:
        return " ".join(s.casefold().translate(_PUNCT_TABLE).split())

    return norm(a) == norm(b)


class ExternalProcessOracle:
    """Adapter for an external equivalence judge.

    Protocol: one request per line, the two texts joined by the unit
    separator (0x1f); the process answers "1" (equivalent) or "0" per line
    on stdout.
    """

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def __call__(self, a: str, b: str) -> bool:
        if ORACLE_FIELD_SEP in a or ORACLE_FIELD_SEP in b:
            raise OracleError("response text contains the reserved field separator")
        try:
            self._proc.stdin.write(f"{a}{ORACLE_FIELD_SEP}{b}\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"oracle process failed: {exc}") from exc
        answer = line.strip()
        if answer not in ("0", "1"):
            raise OracleError(f"oracle returned {answer!r}, expected '0' or '1'")
        return answer == "1"

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# response sets and clustering


@dataclass
class ResponseSet:
    """The sampled responses for one question (N >= 2), optionally with
    precomputed per-response cluster labels."""

    question_id: str
    responses: list[str]
    cluster_labels: list[int] | None = None

    def __post_init__(self):
        if len(self.responses) < 2:
            raise ValidationError(
                f"question {self.question_id!r}: need at least 2 responses, got {len(self.responses)}"
            )
        if self.cluster_labels is not None and len(self.cluster_labels) != len(self.responses):
            raise ValidationError(
                f"question {self.question_id!r}: {len(self.cluster_labels)} cluster labels "
                f"for {len(self.responses)} responses"
            )


@dataclass
class ClusterPartition:
    """Disjoint, exhaustive index clusters over responses 0..n-1."""

    clusters: list[list[int]]

    def __post_init__(self):
        if not self.clusters:
            raise ValidationError("partition has no clusters")
        seen = [i for c in self.clusters for i in c]
        n = len(seen)
        if sorted(seen) != list(range(n)):
            raise ValidationError(
                f"clusters must partition 0..{n - 1} exactly, got {self.clusters}"
            )

    @property
    def n_items(self) -> int:
        return sum(len(c) for c in self.clusters)

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters]

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "ClusterPartition":
        order: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            order.setdefault(int(lab), []).append(i)
        return cls(clusters=list(order.values()))


def cluster_responses(rs: ResponseSet, oracle: EquivalenceOracle) -> ClusterPartition:
    """Greedy clustering: join the first cluster whose representative
    (first member) the oracle matches, else open a new cluster."""
    clusters: list[list[int]] = []
    for i, text in enumerate(rs.responses):
        placed = False
        for cluster in clusters:
            rep = rs.responses[cluster[0]]
            try:
                same = bool(oracle(text, rep))
            except Exception as exc:
                raise OracleError(
                    f"oracle failed on pair ({i}, {cluster[0]}) of question "
                    f"{rs.question_id!r}: {exc}"
                ) from exc
            if same:
                cluster.append(i)
                placed = True
                break
        if not placed:
            clusters.append([i])
    return ClusterPartition(clusters=clusters)


def discrete_semantic_entropy(partition: ClusterPartition, n: int) -> float:
    """Entropy (nats) of the cluster-size distribution p_k = |C_k| / n."""
    if partition.n_items != n:
        raise ValidationError(
            f"partition covers {partition.n_items} responses, expected {n}"
        )
    probs = np.array(partition.sizes, dtype=np.float64) / n
    return float(-(probs * np.log(probs)).sum())


# ---------------------------------------------------------------------------
# threshold fitting


@dataclass
class ThresholdFit:
    gamma: float
    macro_f1: float


def fit_threshold(scores, labels) -> ThresholdFit:
    """Pick the cutoff maximizing macro-F1 of (score > gamma -> class 1).

    Candidates are the midpoints of adjacent sorted unique scores plus
    -inf/+inf sentinels; ties take the smallest gamma.
    """
    scores = [float(s) for s in scores]
    labels = [int(y) for y in labels]
    if len(scores) != len(labels) or not scores:
        raise ValidationError("scores and labels must be equal-length and non-empty")
    if set(labels) != {0, 1}:
        raise ValidationError("both classes must be present to fit a threshold")
    uniq = sorted(set(scores))
    candidates = [-math.inf]
    candidates += [0.5 * (a + b) for a, b in zip(uniq, uniq[1:])]
    candidates += [math.inf]
    best = None
    for gamma in candidates:
        preds = [1 if s > gamma else 0 for s in scores]
        f1 = macro_f1(ConfusionMatrix.from_pairs(labels, preds))
        if best is None or f1 > best.macro_f1:
            best = ThresholdFit(gamma=gamma, macro_f1=f1)
    return best


# ---------------------------------------------------------------------------
# linear probes


@dataclass
class FeatureRecord:
    """One hidden-state feature vector with its binary label."""

    id: str
    features: np.ndarray
    label: int
    group: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError(
                f"record {self.id!r}: features must be a non-empty vector"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"record {self.id!r}: non-finite feature values")
        if self.label not in (0, 1):
            raise ValidationError(f"record {self.id!r}: label must be 0 or 1")
        self.features = arr


class LinearProbe:
    """Single affine layer d -> 2 scored with softmax."""

    def __init__(self, dim: int, rng: RngStream | None = None):
        if dim < 1:
            raise ValidationError(f"probe needs at least 1 feature dimension, got {dim}")
        rng = rng if rng is not None else RngStream(0)
        bound = math.sqrt(1.0 / dim)
        self.W = NamedTensor("probe.W", rng.uniform(-bound, bound, (dim, 2)))
        self.b = NamedTensor("probe.b", np.zeros(2))

    @property
    def dim(self) -> int:
        return self.W.data.shape[0]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.data + self.b.data

    def predict_probs(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X), axis=1)

    def predict_classes(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)


def _probe_predictor(probe: LinearProbe):
    def predict(records):
        X = np.stack([r.features for r in records])
        return probe.predict_classes(X).tolist()

    return predict


def train_linear_probe(records: list[FeatureRecord], config: TrainConfig | None = None):
    """Fit a probe with weighted cross-entropy + AdamW, early stopping on
    validation macro-F1. Returns (probe, report)."""
    records = list(records)
    if not records:
        raise ValidationError("no feature records")
    dims = {r.features.shape[0] for r in records}
    if len(dims) != 1:
        raise ValidationError(f"inconsistent feature dimensionality: {sorted(dims)}")
    config = config if config is not None else TrainConfig()
    train_recs, val_recs = stratified_split(records, config.val_fraction, config.seed)

    probe = LinearProbe(dims.pop(), RngStream(config.seed))
    tensors = [probe.W, probe.b]
    moments = init_moments(tensors)
    shuffle_rng = RngStream(config.seed).split()
    report = TrainReport()
    best_snap = None
    global_step = 0

    for epoch in range(config.max_epochs):
        lr = lr_at_epoch(epoch, config)
        order = shuffle_rng.permutation(len(train_recs))
        loss_sum = 0.0
        for batch_idx in make_batches(len(train_recs), config.batch_size, order):
            batch = [train_recs[i] for i in batch_idx]
            X = np.stack([r.features for r in batch])
            y = np.array([r.label for r in batch])
            logits = probe.logits(X)
            loss, dlogits = weighted_cross_entropy(logits, y, config.class_weights)
            probe.W.grad = X.T @ dlogits
            probe.b.grad = dlogits.sum(axis=0)
            clip_gradients((t.grad for t in tensors), config.clip_norm)
            global_step += 1
            adamw_step(tensors, moments, global_step, lr, config.weight_decay)
            loss_sum += loss * len(batch)

        f1 = evaluate(_probe_predictor(probe), val_recs).macro_f1
        report.epochs.append(
            EpochStats(epoch=epoch, lr=lr, train_loss=loss_sum / len(train_recs), val_macro_f1=f1)
        )
        if f1 > report.best_val_f1:
            report.best_val_f1 = f1
            report.best_epoch = epoch
            best_snap = (probe.W.data.copy(), probe.b.data.copy())
        elif epoch - report.best_epoch >= config.patience:
            report.stopped_early = True
            break

    probe.W.data[...] = best_snap[0]
    probe.b.data[...] = best_snap[1]
    return probe, report


PROBE_KIND = "linear-probe"


def save_probe(probe: LinearProbe, path) -> None:
    write_container(
        path,
        {"kind": PROBE_KIND, "config": {"dim": probe.dim}},
        [("probe.W", probe.W.data), ("probe.b", probe.b.data)],
        [],
    )


def load_probe(path) -> LinearProbe:
    config, tensors, _ = read_container(path)
    if config.get("kind") != PROBE_KIND:
        raise ValidationError(f"{path}: holds a {config.get('kind')!r}, expected {PROBE_KIND!r}")
    probe = LinearProbe(int(config["config"]["dim"]))
    loaded = dict(tensors)
    probe.W.data[...] = loaded["probe.W"]
    probe.b.data[...] = loaded["probe.b"]
    return probe

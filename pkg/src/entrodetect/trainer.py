"""Training procedure: stratified split, AdamW, warmup+cosine schedule,
gradient clipping, and early stopping on validation macro-F1.

The returned model always carries the weights of the best validation epoch,
never the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import coerce, parse_kv_file
from .errors import TrainingDivergedError, ValidationError
from .metrics import evaluate, model_predictor
from .model import EntropyClassifier, pad_sequences
from .nn import RngStream, weighted_cross_entropy

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 2e-4
    class_weights: tuple[float, float] = (1.3, 0.7)
    warmup_epochs: int = 5
    max_epochs: int = 100
    patience: int = 10
    clip_norm: float = 1.0
    batch_size: int = 32
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            raise ValidationError(
                f"need 0 <= warmup_epochs < max_epochs, got {self.warmup_epochs} / {self.max_epochs}"
            )
        if self.batch_size < 1 or self.clip_norm <= 0 or self.weight_decay < 0:
            raise ValidationError("batch_size, clip_norm must be positive; weight_decay >= 0")
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    @classmethod
    def from_mapping(cls, kv: dict, **overrides) -> "TrainConfig":
        schema = {
            "lr": float,
            "weight_decay": float,
            "class_weights": "float_pair",
            "warmup_epochs": int,
            "max_epochs": int,
            "patience": int,
            "clip_norm": float,
            "batch_size": int,
            "val_fraction": float,
            "seed": int,
        }
        kwargs = coerce(kv, schema, context="train config")
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_mapping(parse_kv_file(path), **overrides)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_macro_f1: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = -1.0
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        lines = ["epoch,lr,train_loss,val_macro_f1"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.lr!r},{e.train_loss!r},{e.val_macro_f1!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# data splitting


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(records, val_fraction: float = 0.2, seed: int = 0):
    """Split labeled records into (train, validation), stratified by class.

    Per class the validation count is round-half-away(n * fraction), at
    least 1 and at most n-1. Records carrying a ``group`` key stay on one
    side as a unit (proportions then become best effort). Output order
    follows the input order; the shuffle only decides membership.
    """
    records = list(records)
    if not 0.0 < val_fraction < 1.0:
        raise ValidationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    labels = [int(r.label) for r in records]
    counts = {c: labels.count(c) for c in (0, 1)}
    for c, n in counts.items():
        if n < 2:
            raise ValidationError(
                f"class {c} has {n} examples; need at least 2 per class to split"
            )
    targets = {
        c: min(max(1, _round_half_away(n * val_fraction)), n - 1)
        for c, n in counts.items()
    }
    rng = RngStream(seed)

    groups = [getattr(r, "group", None) for r in records]
    if all(g is None for g in groups):
        val_idx = set()
        for c in (0, 1):
            members = [i for i, y in enumerate(labels) if y == c]
            order = rng.permutation(len(members))
            val_idx.update(members[j] for j in order[: targets[c]])
    else:
        by_group: dict = {}
        for i, g in enumerate(groups):
            key = ("solo", i) if g is None else ("group", g)
            by_group.setdefault(key, []).append(i)
        keys = list(by_group.keys())
        order = rng.permutation(len(keys))
        val_idx = set()
        got = {0: 0, 1: 0}
        # first pass: take groups that fit under both class targets
        remaining = []
        for j in order:
            idxs = by_group[keys[j]]
            add = {c: sum(1 for i in idxs if labels[i] == c) for c in (0, 1)}
            if all(got[c] + add[c] <= targets[c] for c in (0, 1)):
                val_idx.update(idxs)
                for c in (0, 1):
                    got[c] += add[c]
            else:
                remaining.append(j)
        # top up classes still short, accepting overshoot on the other class
        for c in (0, 1):
            for j in list(remaining):
                if got[c] >= targets[c]:
                    break
                idxs = by_group[keys[j]]
                add = {k: sum(1 for i in idxs if labels[i] == k) for k in (0, 1)}
                if add[c] == 0:
                    continue
                val_idx.update(idxs)
                for k in (0, 1):
                    got[k] += add[k]
                remaining.remove(j)

    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    if not train or not val:
        raise ValidationError("split produced an empty side; too few records")
    return train, val


# ---------------------------------------------------------------------------
# optimization pieces


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    """Linear per-epoch warmup, then cosine decay that reaches 0 at the
    final epoch."""
    if not 0 <= epoch < config.max_epochs:
        raise ValidationError(
            f"epoch {epoch} outside [0, {config.max_epochs})"
        )
    w = config.warmup_epochs
    if epoch < w:
        return config.lr * (epoch + 1) / w
    span = config.max_epochs - 1 - w
    if span <= 0:
        return 0.0
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / span))


def init_moments(tensors) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {t.name: (np.zeros_like(t.data), np.zeros_like(t.data)) for t in tensors}


def adamw_step(
    tensors,
    moments: dict,
    step_index: int,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> None:
    """Bias-corrected Adam update plus decoupled decay theta -= lr*wd*theta.

    step_index starts at 1. Uses each tensor's .grad in place.
    """
    if step_index < 1:
        raise ValidationError(f"step_index starts at 1, got {step_index}")
    b1, b2 = betas
    c1 = 1.0 - b1**step_index
    c2 = 1.0 - b2**step_index
    for t in tensors:
        g = t.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in tensor '{t.name}'")
        m, v = moments[t.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            t.data -= lr * weight_decay * t.data
        t.data -= lr * update


def clip_gradients(grads, clip_norm: float) -> float:
    """Scale all gradients (in place) so the global L2 norm is <= clip_norm.

    Returns the pre-clip global norm.
    """
    if clip_norm <= 0:
        raise ValidationError(f"clip_norm must be positive, got {clip_norm}")
    grads = list(grads)
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# batching and the main loop


def make_batches(n: int, batch_size: int, order: np.ndarray):
    """Consecutive index chunks over a shuffled order; a trailing batch of a
    single example is folded into its predecessor (batch norm needs >= 2
    rows in train mode)."""
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def batch_arrays(records, max_seq_len: int):
    """Stack records into padded (values, mask, labels) arrays."""
    seqs = [np.asarray(r.entropies, dtype=np.float64)[:max_seq_len] for r in records]
    values, mask = pad_sequences(seqs)
    labels = np.array([int(r.label) for r in records])
    return values, mask, labels


def train(model: EntropyClassifier, records, config: TrainConfig):
    """Run the full procedure and return (model-with-best-weights, report)."""
    records = list(records)
    if not records:
        raise ValidationError("no training records")
    train_recs, val_recs = stratified_split(records, config.val_fraction, config.seed)

    shuffle_rng = RngStream(config.seed).split()
    moments = init_moments(model.params)
    tensors = list(model.params)
    report = TrainReport()
    best_snap = None
    global_step = 0

    for epoch in range(config.max_epochs):
        lr = lr_at_epoch(epoch, config)
        order = shuffle_rng.permutation(len(train_recs))
        model.train_mode()
        loss_sum = 0.0
        for bi, batch_idx in enumerate(make_batches(len(train_recs), config.batch_size, order)):
            batch = [train_recs[i] for i in batch_idx]
            values, mask, labels = batch_arrays(batch, model.config.max_seq_len)
            model.zero_grads()
            logits, _, cache = model.forward(values, mask)
            loss, dlogits = weighted_cross_entropy(logits, labels, config.class_weights)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            model.backward(dlogits, cache)
            clip_gradients((t.grad for t in tensors), config.clip_norm)
            global_step += 1
            adamw_step(tensors, moments, global_step, lr, config.weight_decay)
            loss_sum += loss * len(batch)

        model.eval_mode()
        val_result = evaluate(model_predictor(model), val_recs)
        f1 = val_result.macro_f1
        report.epochs.append(
            EpochStats(epoch=epoch, lr=lr, train_loss=loss_sum / len(train_recs), val_macro_f1=f1)
        )
        if f1 > report.best_val_f1:
            report.best_val_f1 = f1
            report.best_epoch = epoch
            best_snap = model.snapshot()
        elif epoch - report.best_epoch >= config.patience:
            report.stopped_early = True
            break

    model.restore(best_snap)
    model.eval_mode()
    return model, report

import math
from dataclasses import dataclass

import numpy as np
import pytest

from entrodetect.data import SynthConfig, generate_synthetic
from entrodetect.errors import TrainingDivergedError, ValidationError
from entrodetect.metrics import evaluate, model_predictor
from entrodetect.model import EntropyClassifier, ModelConfig
from entrodetect.nn import NamedTensor, RngStream, weighted_cross_entropy
from entrodetect.trainer import (
    TrainConfig,
    adamw_step,
    clip_gradients,
    init_moments,
    lr_at_epoch,
    stratified_split,
    train,
    batch_arrays,
)

SMALL_MODEL = ModelConfig(
    embed_dim=8, lstm_hidden=8, lstm_layers=2, attn_hidden=8, fc_dims=(16, 8),
    max_seq_len=64, dropout=0.1,
)


@dataclass
class Rec:
    label: int
    entropies: list
    group: str | None = None
    id: str = "r"


def labeled(n0, n1, seed=0):
    rng = RngStream(seed)
    out = []
    for i in range(n0):
        out.append(Rec(label=0, entropies=rng.uniform(0.2, 1.4, (10,)).tolist(), id=f"a{i}"))
    for i in range(n1):
        out.append(Rec(label=1, entropies=rng.uniform(1.8, 3.4, (10,)).tolist(), id=f"b{i}"))
    return out


class TestStratifiedSplit:
    def test_exact_divisibility(self):
        records = labeled(50, 50)
        train_recs, val_recs = stratified_split(records, 0.2, seed=1)
        val_labels = [r.label for r in val_recs]
        assert val_labels.count(0) == 10 and val_labels.count(1) == 10
        assert len(train_recs) + len(val_recs) == 100
        assert {id(r) for r in train_recs}.isdisjoint({id(r) for r in val_recs})

    def test_deterministic_under_seed(self):
        records = labeled(30, 20)
        a = stratified_split(records, 0.2, seed=9)
        b = stratified_split(records, 0.2, seed=9)
        assert [r.id for r in a[0]] == [r.id for r in b[0]]
        assert [r.id for r in a[1]] == [r.id for r in b[1]]

    def test_rounding_rule_small_classes(self):
        # per class: round-half-away(n*f), floor 1 -> 7*0.2=1.4 -> 1; 3*0.2=0.6 -> 1
        records = labeled(7, 3)
        _, val_recs = stratified_split(records, 0.2, seed=2)
        val_labels = [r.label for r in val_recs]
        assert val_labels.count(0) == 1 and val_labels.count(1) == 1

    def test_rejects_class_below_two(self):
        with pytest.raises(ValidationError, match="class 1"):
            stratified_split(labeled(5, 1), 0.2, seed=0)

    def test_groups_stay_together(self):
        rng = RngStream(3)
        records = []
        for q in range(12):
            for j in range(3):
                records.append(
                    Rec(label=q % 2, entropies=rng.uniform(0.1, 3.0, (5,)).tolist(),
                        group=f"q{q}", id=f"{q}-{j}")
                )
        train_recs, val_recs = stratified_split(records, 0.25, seed=4)
        train_groups = {r.group for r in train_recs}
        val_groups = {r.group for r in val_recs}
        assert train_groups.isdisjoint(val_groups)
        assert len(train_recs) + len(val_recs) == 36


class TestLrSchedule:
    def test_warmup_start(self):
        assert abs(lr_at_epoch(0, TrainConfig()) - 4.0e-5) < 1e-15

    def test_warmup_end(self):
        assert abs(lr_at_epoch(4, TrainConfig()) - 2.0e-4) < 1e-15

    def test_cosine_reaches_zero_at_final_epoch(self):
        cfg = TrainConfig()
        assert lr_at_epoch(cfg.max_epochs - 1, cfg) == pytest.approx(0.0, abs=1e-18)

    def test_monotone_decay_after_warmup(self):
        cfg = TrainConfig()
        lrs = [lr_at_epoch(e, cfg) for e in range(cfg.warmup_epochs, cfg.max_epochs)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_epoch_out_of_range(self):
        with pytest.raises(ValidationError):
            lr_at_epoch(100, TrainConfig())
        with pytest.raises(ValidationError):
            lr_at_epoch(-1, TrainConfig())


class TestAdamW:
    def test_single_step_hand_computed(self):
        t = NamedTensor("t", [1.0])
        t.grad[:] = 1.0
        moments = init_moments([t])
        adamw_step([t], moments, 1, lr=2e-4, weight_decay=2e-4)
        # bias-corrected m^=v^=1 on the first step
        expected = 1.0 - 2e-4 * (1.0 / (1.0 + 1e-8)) - 2e-4 * 2e-4 * 1.0
        assert abs(t.data[0] - expected) < 1e-12
        assert abs(t.data[0] - 0.9997999) < 1e-7

    def test_zero_grad_zero_decay_is_identity(self):
        t = NamedTensor("t", [0.5, -2.0])
        moments = init_moments([t])
        adamw_step([t], moments, 1, lr=1e-3, weight_decay=0.0)
        np.testing.assert_array_equal(t.data, [0.5, -2.0])

    def test_pure_decay_shrinks_exponentially(self):
        t = NamedTensor("t", [2.0])
        moments = init_moments([t])
        adamw_step([t], moments, 1, lr=0.1, weight_decay=0.5)
        assert abs(t.data[0] - 2.0 * (1.0 - 0.1 * 0.5)) < 1e-15

    def test_non_finite_gradient_names_tensor(self):
        t = NamedTensor("bad_tensor", [1.0])
        t.grad[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="bad_tensor"):
            adamw_step([t], init_moments([t]), 1, lr=1e-3, weight_decay=0.0)


class TestClipGradients:
    def test_below_threshold_unchanged(self):
        g = [np.array([3.0, 4.0])]
        norm = clip_gradients(g, 10.0)
        assert norm == 5.0
        np.testing.assert_array_equal(g[0], [3.0, 4.0])

    def test_scaling(self):
        g = [np.array([3.0, 4.0])]
        norm = clip_gradients(g, 1.0)
        assert norm == 5.0
        np.testing.assert_allclose(g[0], [0.6, 0.8], atol=1e-15)

    def test_global_norm_across_tensors(self):
        g = [np.array([3.0]), np.array([4.0])]
        norm = clip_gradients(g, 1.0)
        assert norm == 5.0
        np.testing.assert_allclose(g[0], [0.6], atol=1e-15)
        np.testing.assert_allclose(g[1], [0.8], atol=1e-15)

    def test_post_clip_norm_bounded(self):
        rng = RngStream(5)
        for trial in range(20):
            grads = [rng.normal((7,)) * 10, rng.normal((3, 4)) * 10]
            clip_gradients(grads, 1.0)
            total = math.sqrt(sum(float((g * g).sum()) for g in grads))
            assert total <= 1.0 + 1e-9


class TestTrainLoop:
    def small_config(self, **kw):
        base = dict(max_epochs=8, patience=3, batch_size=16, seed=11)
        base.update(kw)
        base.setdefault("warmup_epochs", min(5, base["max_epochs"] - 1))
        return TrainConfig(**base)

    def test_learns_separable_data(self):
        # small stand-in model: a higher lr than the full-size default keeps
        # this a seconds-long test
        records = labeled(60, 60, seed=1)
        model = EntropyClassifier(SMALL_MODEL, RngStream(11))
        cfg = self.small_config(max_epochs=30, patience=15, warmup_epochs=2, lr=1e-3)
        model, report = train(model, records, cfg)
        assert report.best_val_f1 >= 0.9

    def test_restores_best_weights(self):
        records = labeled(40, 40, seed=2)
        model = EntropyClassifier(SMALL_MODEL, RngStream(12))
        model, report = train(model, records, self.small_config())
        _, val_recs = stratified_split(records, 0.2, seed=11)
        res = evaluate(model_predictor(model), val_recs)
        assert res.macro_f1 == pytest.approx(report.best_val_f1)
        assert report.best_val_f1 == max(e.val_macro_f1 for e in report.epochs)

    def test_deterministic_given_seed(self):
        records = labeled(30, 30, seed=3)
        reports = []
        for _ in range(2):
            model = EntropyClassifier(SMALL_MODEL, RngStream(13))
            _, report = train(model, records, self.small_config(max_epochs=4, patience=2))
            reports.append(report)
        a, b = reports
        assert len(a.epochs) == len(b.epochs)
        for ea, eb in zip(a.epochs, b.epochs):
            assert ea.train_loss == eb.train_loss
            assert ea.val_macro_f1 == eb.val_macro_f1
            assert ea.lr == eb.lr

    def test_early_stop_contract(self):
        # high lr wrecks the model after the first epochs; patience 1 must
        # stop exactly one epoch after the best
        records = labeled(40, 40, seed=4)
        model = EntropyClassifier(SMALL_MODEL, RngStream(14))
        cfg = TrainConfig(max_epochs=30, patience=1, batch_size=16, seed=14, lr=0.5)
        model, report = train(model, records, cfg)
        if report.stopped_early:
            assert len(report.epochs) == report.best_epoch + 1 + cfg.patience
        best = report.best_val_f1
        assert all(e.val_macro_f1 <= best for e in report.epochs)

    def test_loss_decreases_first_five_steps_on_fixed_batch(self):
        records = generate_synthetic(SynthConfig(n_records=64, seed=6))
        model = EntropyClassifier(ModelConfig(), RngStream(15))
        cfg = TrainConfig()
        values, mask, labels = batch_arrays(records[:32], 64)
        moments = init_moments(model.params)
        tensors = list(model.params)
        losses = []
        model.train_mode()
        for step in range(1, 6):
            model.rng = RngStream(16)  # frozen masks: loss is a function of params only
            model.zero_grads()
            logits, _, cache = model.forward(values, mask)
            loss, dlogits = weighted_cross_entropy(logits, labels, cfg.class_weights)
            losses.append(loss)
            model.backward(dlogits, cache)
            clip_gradients((t.grad for t in tensors), cfg.clip_norm)
            adamw_step(tensors, moments, step, lr_at_epoch(0, cfg), cfg.weight_decay)
        assert all(a > b for a, b in zip(losses, losses[1:])), losses

    def test_degenerate_class_weight_collapses_predictions(self):
        records = labeled(50, 50, seed=7)
        model = EntropyClassifier(SMALL_MODEL, RngStream(17))
        cfg = TrainConfig(
            max_epochs=6, patience=5, batch_size=16, seed=17, class_weights=(1.0, 0.0)
        )
        model, _ = train(model, records, cfg)
        _, val_recs = stratified_split(records, 0.2, seed=17)
        preds = model_predictor(model)(val_recs)
        assert np.mean(np.array(preds) == 0) >= 0.95

    def test_divergence_reported_with_location(self):
        records = labeled(20, 20, seed=8)
        model = EntropyClassifier(SMALL_MODEL, RngStream(18))
        model.params["out.W"].data[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train(model, records, self.small_config())

    def test_report_csv_format(self, tmp_path):
        records = labeled(20, 20, seed=9)
        model = EntropyClassifier(SMALL_MODEL, RngStream(19))
        _, report = train(model, records, self.small_config(max_epochs=2, patience=1))
        path = tmp_path / "report.csv"
        report.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,lr,train_loss,val_macro_f1"
        assert len(lines) == len(report.epochs) + 1
        first = lines[1].split(",")
        assert first[0] == "0"
        assert float(first[1]) == report.epochs[0].lr


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(val_fraction=1.0)
        with pytest.raises(ValidationError):
            TrainConfig(warmup_epochs=10, max_epochs=10)
        with pytest.raises(ValidationError):
            TrainConfig(patience=0)

    def test_from_file(self, tmp_path):
        cfg_file = tmp_path / "train.cfg"
        cfg_file.write_text(
            "lr = 1e-3\nclass_weights = 1.1, 0.9\nmax_epochs = 7\n# comment\nseed = 5\n"
        )
        cfg = TrainConfig.from_file(cfg_file)
        assert cfg.lr == 1e-3
        assert cfg.class_weights == (1.1, 0.9)
        assert cfg.max_epochs == 7
        assert cfg.seed == 5

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "train.cfg"
        cfg_file.write_text("learning_rate = 1e-3\n")
        with pytest.raises(ValidationError, match="learning_rate"):
            TrainConfig.from_file(cfg_file)

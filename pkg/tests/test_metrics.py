from dataclasses import dataclass

import pytest

from entrodetect.errors import ValidationError
from entrodetect.metrics import (
    AttentionProfile,
    ConfusionMatrix,
    attention_profile,
    evaluate,
    macro_f1,
    metrics_csv_row,
    model_predictor,
    per_class_metrics,
    threshold_predictor,
    write_attention_csv,
    write_metrics_csv,
    METRICS_HEADER,
)
from entrodetect.model import EntropyClassifier, ModelConfig
from entrodetect.nn import RngStream

TOY = ModelConfig(
    embed_dim=6, lstm_hidden=5, lstm_layers=2, attn_hidden=4, fc_dims=(8, 6), max_seq_len=16
)


@dataclass
class Rec:
    id: str
    entropies: list
    label: int


class TestMacroF1:
    def test_perfect_predictions(self):
        cm = ConfusionMatrix([[50, 0], [0, 50]])
        assert macro_f1(cm) == 1.0

    def test_all_predicted_class1_on_balanced(self):
        # 100 examples, 50/50; everything predicted 1:
        # class1 F1 = 2*0.5*1/1.5 = 2/3, class0 F1 = 0 -> macro 1/3
        cm = ConfusionMatrix([[0, 50], [0, 50]])
        assert abs(macro_f1(cm) - 1.0 / 3.0) < 1e-12

    def test_random_predictions_near_half(self):
        rng = RngStream(100)
        truths = (rng.random(10_000) < 0.5).astype(int)
        preds = (rng.random(10_000) < 0.5).astype(int)
        cm = ConfusionMatrix.from_pairs(truths, preds)
        assert abs(macro_f1(cm) - 0.5) < 0.02

    def test_label_swap_symmetry(self):
        rng = RngStream(101)
        for _ in range(20):
            counts = rng.integers(0, 40, (2, 2))
            counts[0, 0] += 1
            cm = ConfusionMatrix(counts)
            swapped = ConfusionMatrix(counts[::-1, ::-1].copy())
            assert macro_f1(cm) == pytest.approx(macro_f1(swapped), abs=1e-12)

    def test_range_and_diagonal_iff_one(self):
        rng = RngStream(102)
        for _ in range(50):
            counts = rng.integers(0, 30, (2, 2))
            if counts.sum() == 0:
                continue
            cm = ConfusionMatrix(counts)
            f1 = macro_f1(cm)
            assert 0.0 <= f1 <= 1.0
            off_diag = counts[0, 1] + counts[1, 0]
            if f1 == 1.0:
                assert off_diag == 0
            if off_diag == 0 and counts[0, 0] > 0 and counts[1, 1] > 0:
                assert f1 == 1.0

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            macro_f1(ConfusionMatrix())

    def test_zero_over_zero_is_zero(self):
        # class 1 never present and never predicted: its F1 terms are 0/0 -> 0
        cm = ConfusionMatrix([[10, 0], [0, 0]])
        per = per_class_metrics(cm)
        assert per[1]["precision"] == 0.0 and per[1]["recall"] == 0.0 and per[1]["f1"] == 0.0
        assert macro_f1(cm) == 0.5


class TestEvaluate:
    def test_perfect_oracle(self):
        records = [Rec(f"r{i}", [0.5], i % 2) for i in range(10)]
        res = evaluate(lambda rs: [r.label for r in rs], records)
        assert res.macro_f1 == 1.0

    def test_order_invariance(self):
        rng = RngStream(103)
        records = [Rec(f"r{i}", [float(rng.uniform(0, 4))], int(rng.integers(0, 2)))
                   for i in range(40)]
        records = records[:20] + [Rec("x0", [0.1], 0), Rec("x1", [3.9], 1)] + records[20:]
        pred = threshold_predictor(lambda r: r.entropies[0], 2.0)
        a = evaluate(pred, records)
        b = evaluate(pred, list(reversed(records)))
        assert a.macro_f1 == b.macro_f1
        assert a.confusion == b.confusion

    def test_unlabeled_record_rejected(self):
        @dataclass
        class NoLabel:
            id: str
            entropies: list
            label: object = None

        with pytest.raises(ValidationError, match="label"):
            evaluate(lambda rs: [0], [NoLabel("n", [0.5])])

    def test_model_predictor_matches_individual_predictions(self):
        model = EntropyClassifier(TOY, RngStream(30))
        rng = RngStream(31)
        records = [
            Rec(f"r{i}", rng.uniform(0, 4.6, (int(rng.integers(1, 16)),)).tolist(), i % 2)
            for i in range(9)
        ]
        batched = model_predictor(model, batch_size=4)(records)
        singles = [model.predict(r.entropies).predicted_class for r in records]
        assert batched == singles


class TestAttentionProfile:
    def test_all_length_one(self):
        model = EntropyClassifier(TOY, RngStream(32))
        records = [Rec(f"r{i}", [1.0 + 0.1 * i], i % 2) for i in range(6)]
        profiles = attention_profile(model, records)
        assert len(profiles) == 1
        assert profiles[0].position == 0
        assert profiles[0].mean_weight == pytest.approx(1.0, abs=1e-12)
        assert profiles[0].count == 6

    def test_zero_scoring_model_uniform(self):
        model = EntropyClassifier(TOY, RngStream(33))
        model.params["attn.W1"].data[:] = 0.0
        model.params["attn.b1"].data[:] = 0.0
        model.params["attn.w2"].data[:] = 0.0
        model.params["attn.b2"].data[:] = 0.0
        records = [Rec(f"r{i}", [1.0, 2.0, 0.5, 1.5], i % 2) for i in range(5)]
        profiles = attention_profile(model, records)
        assert [p.position for p in profiles] == [0, 1, 2, 3]
        for p in profiles:
            assert p.mean_weight == pytest.approx(0.25, abs=1e-12)

    def test_fixed_length_means_sum_to_one(self):
        model = EntropyClassifier(TOY, RngStream(34))
        rng = RngStream(35)
        records = [Rec(f"r{i}", rng.uniform(0, 4.6, (7,)).tolist(), i % 2) for i in range(11)]
        profiles = attention_profile(model, records)
        assert sum(p.mean_weight for p in profiles) == pytest.approx(1.0, abs=1e-6)

    def test_counts_non_increasing(self):
        model = EntropyClassifier(TOY, RngStream(36))
        rng = RngStream(37)
        records = [
            Rec(f"r{i}", rng.uniform(0, 4.6, (int(rng.integers(1, 17)),)).tolist(), 0)
            for i in range(20)
        ]
        records.append(Rec("full", rng.uniform(0, 4.6, (16,)).tolist(), 1))
        profiles = attention_profile(model, records)
        counts = [p.count for p in profiles]
        assert counts == sorted(counts, reverse=True)

    def test_empty_records_rejected(self):
        model = EntropyClassifier(TOY, RngStream(38))
        with pytest.raises(ValidationError):
            attention_profile(model, [])


class TestCsvOutputs:
    def test_metrics_csv(self, tmp_path):
        records = [Rec(f"r{i}", [0.5], i % 2) for i in range(8)]
        res = evaluate(lambda rs: [r.label for r in rs], records)
        path = tmp_path / "m.csv"
        write_metrics_csv(path, [metrics_csv_row("test-method", "synthetic", res)])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == METRICS_HEADER
        cells = lines[1].split(",")
        assert cells[0] == "test-method" and cells[1] == "synthetic"
        assert float(cells[2]) == 1.0

    def test_attention_csv(self, tmp_path):
        path = tmp_path / "a.csv"
        write_attention_csv(path, [AttentionProfile(0, 0.5, 10), AttentionProfile(1, 0.25, 7)])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "position,mean_weight,count"
        assert lines[1] == "0,0.5,10"
        assert lines[2] == "1,0.25,7"

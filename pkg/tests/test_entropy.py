import math

import numpy as np
import pytest

from entrodetect.entropy import (
    MAX_ENTROPY,
    EntropySequence,
    build_entropy_sequence,
    compute_token_entropy,
    validate_entropy_values,
)
from entrodetect.errors import ValidationError
from entrodetect.nn import RngStream


class TestComputeTokenEntropy:
    def test_uniform_100_is_max_entropy(self):
        h = compute_token_entropy([0.01] * 100)
        assert abs(h - math.log(100)) < 1e-6
        assert abs(h - 4.605170) < 1e-6

    def test_one_hot_is_zero(self):
        assert compute_token_entropy([1.0] + [0.0] * 99) == 0.0

    def test_two_equal_tokens(self):
        assert abs(compute_token_entropy([0.5, 0.5]) - math.log(2)) < 1e-6

    def test_rejects_negative(self):
        with pytest.raises(ValidationError, match="negative"):
            compute_token_entropy([0.7, -0.1, 0.4])

    def test_rejects_empty(self):
        with pytest.raises(ValidationError, match="empty"):
            compute_token_entropy([])

    def test_rejects_above_one(self):
        with pytest.raises(ValidationError, match="above 1"):
            compute_token_entropy([1.2, 0.3])

    def test_rejects_zero_sum(self):
        with pytest.raises(ValidationError, match="zero"):
            compute_token_entropy([0.0, 0.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError, match="non-finite"):
            compute_token_entropy([float("nan"), 0.5])

    def test_rejects_over_cap(self):
        with pytest.raises(ValidationError, match="top-100"):
            compute_token_entropy([0.005] * 200)

    def test_renormalizes_truncated_mass(self):
        # top-k lists rarely sum to 1; entropy is taken on the rescaled values
        h = compute_token_entropy([0.3, 0.3])
        assert abs(h - math.log(2)) < 1e-12


class TestEntropyProperties:
    def test_bounds_random_distributions(self):
        rng = RngStream(42)
        for _ in range(200):
            k = int(rng.integers(1, 101))
            p = rng.uniform(0.0, 1.0, (k,))
            p[int(rng.integers(0, k))] += 0.5  # ensure positive mass
            h = compute_token_entropy(p / p.sum())
            assert -1e-12 <= h <= math.log(k) + 1e-9

    def test_permutation_invariance(self):
        rng = RngStream(7)
        p = rng.uniform(0.0, 1.0, (30,))
        p /= p.sum()
        h0 = compute_token_entropy(p)
        for _ in range(10):
            shuffled = p[rng.permutation(30)]
            assert abs(compute_token_entropy(shuffled) - h0) < 1e-12

    def test_scale_invariance_via_renormalization(self):
        rng = RngStream(9)
        p = rng.uniform(0.0, 0.01, (50,))
        h0 = compute_token_entropy(p)
        for c in (0.2, 0.9):  # scaled values must stay within [0, 1]
            assert abs(compute_token_entropy(c * p) - h0) < 1e-9


class TestBuildEntropySequence:
    def test_truncates_and_records_source_len(self):
        dists = [[1.0] + [0.0] * 9] * 70
        seq = build_entropy_sequence(dists, max_len=64)
        assert len(seq) == 64
        assert seq.source_len == 70
        assert np.all(seq.values == 0.0)

    def test_short_input_kept_whole(self):
        dists = [[0.01] * 100] * 3
        seq = build_entropy_sequence(dists)
        assert seq.source_len == 3
        np.testing.assert_allclose(seq.values, [4.605170] * 3, atol=1e-6)

    def test_mixed_composition(self):
        seq = build_entropy_sequence([[1.0, 0.0], [0.5, 0.5]])
        np.testing.assert_allclose(seq.values, [0.0, 0.693147], atol=1e-6)
        assert seq.source_len == 2

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            build_entropy_sequence([])

    def test_truncation_idempotent_on_short_sequences(self):
        rng = RngStream(3)
        dists = [rng.uniform(0.01, 1.0, (10,)) for _ in range(20)]
        full = [compute_token_entropy(d) for d in dists]
        seq = build_entropy_sequence(dists, max_len=64)
        np.testing.assert_array_equal(seq.values, full)

    def test_sequence_invariant_len_vs_source(self):
        for n in (1, 30, 64, 65, 100):
            seq = build_entropy_sequence([[0.5, 0.5]] * n)
            assert len(seq) == min(n, 64)
            assert seq.source_len == n


class TestValidateEntropyValues:
    def test_accepts_bound(self):
        arr = validate_entropy_values([0.0, MAX_ENTROPY])
        assert arr.dtype == np.float64

    def test_rejects_above_bound(self):
        with pytest.raises(ValidationError, match="ln"):
            validate_entropy_values([9.7])

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            validate_entropy_values([])

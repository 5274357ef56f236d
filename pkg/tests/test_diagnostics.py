import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homessl.constructions import hadamard_batch
from homessl.diagnostics import (linear_probe, moment_audit, mutual_information_discrete,
                                 total_correlation_discrete, write_audit_csv, xor_samples, xor_suite)
from homessl.model import build_model, forward
from homessl.moments import MomentSpec, Sampled

LOG2 = math.log(2)


class TestProbe:
    def test_separable_blobs(self, rng):
        x = np.concatenate([rng.normal(-4, 0.5, size=(200, 5)), rng.normal(4, 0.5, size=(200, 5))])
        y = np.repeat([0, 1], 200)
        perm = rng.permutation(400)
        x, y = x[perm], y[perm]
        assert linear_probe(x[:300], y[:300], x[300:], y[300:]).accuracy >= 0.99

    def test_shuffled_labels_near_chance(self, rng):
        accs = []
        for s in range(5):
            r = np.random.default_rng(s)
            x = r.normal(size=(2000, 8))
            y = r.integers(0, 4, size=2000)
            accs.append(linear_probe(x[:1000], y[:1000], x[1000:], y[1000:]).accuracy)
        assert abs(np.mean(accs) - 0.25) <= 0.05

    def test_constant_features(self, rng):
        y = rng.integers(0, 3, size=300)
        x = np.ones((300, 4))
        res = linear_probe(x[:200], y[:200], x[200:], y[200:])
        prior = np.bincount(y[200:], minlength=3).max() / 100
        assert res.accuracy <= prior + 0.02
        assert 0.0 <= res.accuracy <= 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            linear_probe(np.ones((5, 2)), np.zeros(5, int), np.ones((2, 2)), np.zeros(2, int))

    def test_record_fields(self, rng):
        x = rng.normal(size=(40, 3))
        y = (x[:, 0] > 0).astype(int)
        rec = linear_probe(x[:30], y[:30], x[30:], y[30:]).record()
        assert set(rec) >= {"top1_accuracy", "per_class_accuracy", "n_train", "n_test"}


class TestTotalCorrelation:
    def test_independent_bits(self):
        z = np.random.default_rng(0).integers(0, 2, size=(100_000, 3))
        assert abs(total_correlation_discrete(z).value) <= 0.01

    def test_copied_pair(self):
        b = np.random.default_rng(1).integers(0, 2, size=100_000)
        assert total_correlation_discrete(np.column_stack([b, b])).value == pytest.approx(LOG2, abs=0.01)

    def test_xor_triple(self):
        z = xor_samples(100_000, seed=2)
        assert total_correlation_discrete(z).value == pytest.approx(LOG2, abs=0.01)
        for i, j in ((0, 1), (0, 2), (1, 2)):
            assert mutual_information_discrete(z[:, i], z[:, j]) <= 0.01

    def test_exact_analytic_xor(self):
        # all four (z1, z2) patterns exactly once: TC = 3 log 2 - 2 log 2
        z = np.array([[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]])
        assert total_correlation_discrete(z).value == pytest.approx(LOG2, abs=1e-15)
        assert mutual_information_discrete(z[:, 0], z[:, 2]) == pytest.approx(0.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            total_correlation_discrete(np.zeros((0, 2), dtype=int))
        with pytest.raises(ValueError):
            total_correlation_discrete(np.zeros((5, 5), dtype=int))
        with pytest.raises(ValueError):
            total_correlation_discrete(np.arange(20).reshape(10, 2))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), d=st.integers(1, 4), k=st.integers(1, 8))
    def test_non_negative(self, seed, n, d, k):
        z = np.random.default_rng(seed).integers(0, k, size=(n, d))
        assert total_correlation_discrete(z).value >= -1e-9

    def test_plugin_bias_shrinks_with_n(self):
        medians = []
        for n in (100, 1000, 10_000):
            vals = [total_correlation_discrete(np.random.default_rng(s).integers(0, 4, size=(n, 3))).value
                    for s in range(20)]
            medians.append(np.median(vals))
        assert medians[0] > medians[1] > medians[2] >= 0

    def test_suite(self):
        rep = xor_suite(10_000, seed=0)
        assert rep["passed"]
        assert all(v <= 0.01 for v in rep["pairwise_mi"].values())
        assert abs(rep["total_correlation"] - LOG2) <= 0.02


class TestAudit:
    def test_hadamard(self):
        summaries, _ = moment_audit(hadamard_batch(), MomentSpec(4, (2, 3)))
        assert summaries[2].max_abs <= 1e-15 and summaries[3].max_abs <= 1e-15

    def test_whitened_batch(self, rng):
        x = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
        c = x - x.mean(axis=0)
        evals, evecs = np.linalg.eigh(c.T @ c / len(c))
        white = c @ evecs @ np.diag(evals ** -0.5) @ evecs.T
        summaries, _ = moment_audit(white, MomentSpec(6, (2,)))
        assert summaries[2].max_abs <= 1e-10

    def test_untrained_baseline_is_recorded(self, rng):
        model = build_model(32, seed=0, proj_dim=16)
        emb = forward(model, rng.normal(size=(300, 32)))[1]
        summaries, report = moment_audit(emb, MomentSpec(16, (2, 3), Sampled({2: 50, 3: 200}, 1)))
        assert summaries[3].count == 200 and summaries[3].max_abs > 0
        assert summaries[3].histogram.sum() == 200

    def test_csv(self, tmp_path):
        summaries, _ = moment_audit(hadamard_batch(), MomentSpec(4, (2, 3)))
        path = tmp_path / "audit.csv"
        write_audit_csv(summaries, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "order,count,max_abs,mean_abs,histogram"
        assert [l.split(",")[:2] for l in lines[1:]] == [["2", "6"], ["3", "4"]]

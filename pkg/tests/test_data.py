"""Dataset construction, partitioning, and canary-window checks."""

import numpy as np
import pytest

from fedaudit.data import (
    CanaryPoolExhausted,
    CanarySet,
    load_csv,
    make_auxiliary,
    make_synthetic,
    partition,
    save_csv,
)
from fedaudit.nn import DenseNet, SgdState, accuracy, loss_and_grad, sgd_step


class TestMakeSynthetic:
    def test_labels_balanced(self):
        ds = make_synthetic(2, 4, 5, seed=0)
        assert sorted(np.bincount(ds.labels).tolist()) == [2, 2]

    def test_balance_up_to_rounding(self):
        ds = make_synthetic(3, 10, 4, seed=1)
        counts = np.bincount(ds.labels, minlength=3)
        assert counts.sum() == 10 and counts.max() - counts.min() <= 1

    def test_same_seed_identical(self):
        a = make_synthetic(4, 64, 6, seed=9)
        b = make_synthetic(4, 64, 6, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            make_synthetic(5, 4, 3, seed=0)

    def test_features_standardized(self):
        ds = make_synthetic(3, 600, 8, seed=2)
        assert np.allclose(ds.features.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(ds.features.std(axis=0), 1.0, atol=1e-9)

    def test_task_is_learnable_centrally(self):
        # Sanity-train oracle: the preset MLP should master the 3-label task.
        ds = make_synthetic(3, 300, 20, seed=5)
        net = DenseNet.create([20, 32, 3], np.random.default_rng(0))
        opt = SgdState(0.01, 0.9, 1e-5)
        rng = np.random.default_rng(1)
        for _ in range(50):
            order = rng.permutation(len(ds))
            for start in range(0, len(ds), 64):
                chunk = order[start : start + 64]
                _, grad = loss_and_grad(net, ds.features[chunk], ds.labels[chunk])
                sgd_step(net, grad, opt)
        assert accuracy(net, ds.features, ds.labels) >= 0.9


class TestPartition:
    def test_iid_histograms_close_to_global(self):
        for seed in range(5):
            ds = make_synthetic(2, 400, 4, seed=seed)
            part = partition(ds, 2, scheme="iid", seed=seed)
            global_hist = ds.label_histogram()
            for ix in part.client_indices:
                hist = ds.subset(ix).label_histogram()
                assert np.abs(hist - global_hist).max() <= 0.10

    def test_disjoint_and_covered(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(40, 200))
            clients = int(rng.integers(2, 7))
            alpha = float(rng.choice([0.1, 1.0, 10.0]))
            scheme = str(rng.choice(["iid", "dirichlet"]))
            ds = make_synthetic(3, n, 4, seed=int(rng.integers(1000)))
            part = partition(ds, clients, scheme=scheme, seed=int(rng.integers(1000)), alpha=alpha)
            allix = np.concatenate(part.client_indices)
            assert len(np.unique(allix)) == len(allix)  # disjoint
            assert allix.max() < n and allix.min() >= 0  # within dataset
            assert all(len(ix) >= 1 for ix in part.client_indices)

    def test_dirichlet_high_alpha_near_uniform(self):
        ds = make_synthetic(4, 2000, 4, seed=3)
        part = partition(ds, 4, scheme="dirichlet", seed=3, alpha=1000.0)
        global_hist = ds.label_histogram()
        for ix in part.client_indices:
            tv = 0.5 * np.abs(ds.subset(ix).label_histogram() - global_hist).sum()
            assert tv <= 0.05

    def test_dirichlet_low_alpha_skews(self):
        maxima = []
        for seed in range(20):
            ds = make_synthetic(4, 800, 4, seed=seed)
            part = partition(ds, 4, scheme="dirichlet", seed=seed, alpha=0.1)
            best = max(ds.subset(ix).label_histogram().max() for ix in part.client_indices)
            maxima.append(best)
        assert np.median(maxima) > 0.60

    def test_heterogeneity_monotone_in_alpha(self):
        # Expected max per-client label share should not increase with alpha.
        def mean_max_share(alpha, seeds=50):
            vals = []
            for seed in range(seeds):
                ds = make_synthetic(3, 300, 4, seed=seed)
                part = partition(ds, 3, scheme="dirichlet", seed=seed, alpha=alpha)
                vals.append(
                    np.mean([ds.subset(ix).label_histogram().max() for ix in part.client_indices])
                )
            return float(np.mean(vals))

        shares = [mean_max_share(a) for a in (0.1, 1.0, 10.0, 1000.0)]
        assert all(a >= b - 1e-9 for a, b in zip(shares, shares[1:]))

    def test_insufficient_samples_rejected(self):
        ds = make_synthetic(2, 4, 3, seed=0)
        with pytest.raises(ValueError):
            partition(ds, 5, scheme="iid", seed=0)


class TestCanarySet:
    def test_windows_cover_pool_disjointly(self):
        pool = make_synthetic(2, 6, 3, seed=0)
        cs = CanarySet(pool, 2)
        seen = []
        for t in (1, 2, 3):
            seen.extend(cs.window_indices(t).tolist())
        assert sorted(seen) == list(range(6))

    def test_same_round_same_batch(self):
        cs = CanarySet(make_synthetic(3, 30, 4, seed=1), 5)
        a, b = cs.window(2), cs.window(2)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_windows_pairwise_disjoint(self):
        cs = CanarySet(make_synthetic(3, 60, 4, seed=2), 7)
        windows = [set(cs.window_indices(t).tolist()) for t in range(1, 60 // 7 + 1)]
        for i in range(len(windows)):
            for j in range(i + 1, len(windows)):
                assert not windows[i] & windows[j]

    def test_pool_exhausted(self):
        cs = CanarySet(make_synthetic(2, 6, 3, seed=0), 2)
        with pytest.raises(CanaryPoolExhausted):
            cs.window(4)

    def test_complement_avoids_window(self):
        cs = CanarySet(make_synthetic(2, 20, 3, seed=4), 5)
        rng = np.random.default_rng(0)
        comp = cs.complement(1, rng)
        window_rows = cs.window(1).features
        for row in comp.features:
            assert not any(np.array_equal(row, w) for w in window_rows)


class TestMakeAuxiliary:
    def test_sample_count(self):
        ds = make_auxiliary(10, 20, 8, seed=0)
        assert len(ds) == 200

    def test_exactly_uniform_labels(self):
        ds = make_auxiliary(5, 7, 4, seed=1)
        assert np.bincount(ds.labels, minlength=5).tolist() == [7] * 5

    def test_same_seed_identical(self):
        a = make_auxiliary(3, 4, 6, seed=2)
        b = make_auxiliary(3, 4, 6, seed=2)
        assert np.array_equal(a.features, b.features)


class TestCsvRoundTrip:
    def test_save_load(self, tmp_path):
        ds = make_synthetic(3, 30, 5, seed=8)
        path = tmp_path / "ds.csv"
        save_csv(ds, path)
        loaded = load_csv(path, n_labels=3)
        assert np.array_equal(loaded.labels, ds.labels)
        assert np.array_equal(loaded.features, ds.features)  # 17 digits round-trips

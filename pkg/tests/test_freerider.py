"""Fake-update fabrication: exact limits, noise statistics, data blindness."""

import math

import numpy as np
import pytest

from fedaudit.freerider import (
    FrStrategy,
    PublicSignals,
    advanced_update,
    delta_update,
    disguised_update,
    expected_cohort_cosine,
    fabricate,
)
from fedaudit.nn import ParamVector

SHAPES = ((100, 99, True),)  # 10^4 parameters, one layer


def _signals(t=4, g_std=1.0, seed=0):
    rng = np.random.default_rng(seed)
    size = 100 * 99 + 100
    m_zero = ParamVector(rng.normal(size=size), SHAPES)
    m_prev = ParamVector(rng.normal(size=size), SHAPES)
    g_prev = ParamVector(rng.normal(0.0, g_std, size=size), SHAPES)
    g_prev2 = ParamVector(rng.normal(0.0, g_std, size=size), SHAPES)
    return PublicSignals(m_prev, g_prev, g_prev2, m_zero, t)


class TestDisguised:
    def test_alpha_zero_returns_previous_model(self):
        sig = _signals()
        out = disguised_update(sig, alpha=0.0, gamma=1.0, rng=np.random.default_rng(0))
        assert np.array_equal(out.values, sig.m_prev.values)

    def test_noise_decays_with_round(self):
        # Same sigma, t=4 vs t=1 with gamma=1: std ratio should be ~1/4.
        base = _signals(t=1)
        later = PublicSignals(base.m_prev, base.g_prev, base.g_prev2, base.m_zero, 4)
        noise1 = disguised_update(base, 1.0, 1.0, np.random.default_rng(1)).values - base.m_prev.values
        noise4 = disguised_update(later, 1.0, 1.0, np.random.default_rng(2)).values - base.m_prev.values
        ratio = noise4.std() / noise1.std()
        assert abs(ratio - 0.25) <= 0.025

    def test_default_sigma_comes_from_previous_gradient(self):
        sig = _signals(t=1, g_std=2.0)
        out = disguised_update(sig, alpha=1.0, gamma=1.0, rng=np.random.default_rng(3))
        noise = out.values - sig.m_prev.values
        assert noise.std() == pytest.approx(sig.g_prev.std(), rel=0.05)

    def test_round_one_without_gradient_uses_fallback(self):
        sig = _signals(t=1)
        sig = PublicSignals(sig.m_prev, None, None, sig.m_zero, 1)
        out = disguised_update(sig, 1.0, 1.0, np.random.default_rng(4), sigma_fallback=0.01)
        noise = out.values - sig.m_prev.values
        assert noise.std() == pytest.approx(0.01, rel=0.1)

    def test_mean_is_previous_model(self):
        sig = _signals()
        rng = np.random.default_rng(5)
        coords = [0, 123, 4567, 9999]
        draws = np.array(
            [disguised_update(sig, 1.0, 1.0, rng).values[coords] for _ in range(1000)]
        )
        sigma = sig.g_prev.std() / 4  # t=4, gamma=1
        se = sigma / math.sqrt(1000)
        assert np.all(np.abs(draws.mean(axis=0) - sig.m_prev.values[coords]) <= 3 * se)


class TestDelta:
    def test_zero_noise_is_exact_replay(self):
        sig = _signals()
        out = delta_update(sig, alpha=0.0, gamma=1.0, rng=np.random.default_rng(0))
        assert np.array_equal(out.values, sig.m_prev.values + sig.g_prev.values)

    def test_mean_is_model_plus_gradient(self):
        sig = _signals()
        rng = np.random.default_rng(6)
        coords = [7, 888, 3210, 6543]
        draws = np.array(
            [delta_update(sig, 1.0, 1.0, rng).values[coords] for _ in range(1000)]
        )
        target = (sig.m_prev.values + sig.g_prev.values)[coords]
        se = (sig.g_prev.std() / 4) / math.sqrt(1000)
        assert np.all(np.abs(draws.mean(axis=0) - target) <= 3 * se)

    def test_round_one_falls_back_to_disguised(self):
        sig = PublicSignals(_signals().m_prev, None, None, _signals().m_zero, 1)
        a = delta_update(sig, 1.0, 1.0, np.random.default_rng(7))
        b = disguised_update(sig, 1.0, 1.0, np.random.default_rng(7))
        assert np.array_equal(a.values, b.values)


class TestAdvanced:
    def test_zero_phi_limit_is_deterministic(self):
        # cos_decay << 0 drives the modeled cohort cosine to 1, so the noise
        # budget under the square root collapses to zero.
        sig = _signals()
        assert expected_cohort_cosine(sig, -50.0) == pytest.approx(1.0, abs=1e-12)
        out = advanced_update(sig, 0.6, np.random.default_rng(0), n_clients=8, ecos_mode="model", cos_decay=-50.0)
        scale = sig.g_prev.norm() / sig.g_prev2.norm()
        assert np.allclose(out.values, sig.m_prev.values + scale * sig.g_prev.values, atol=1e-12)

    def test_noise_hits_requested_fraction_of_coordinates(self):
        sig = _signals()
        for d in (0.25, 0.6, 1.0):
            out = advanced_update(sig, d, np.random.default_rng(1), n_clients=8, ecos_mode="model", cos_decay=0.01)
            scale = sig.g_prev.norm() / sig.g_prev2.norm()
            base = sig.m_prev.values + scale * sig.g_prev.values
            changed = int(np.sum(out.values != base))
            assert changed == math.ceil(d * out.values.size)

    def test_total_noise_energy_tracks_phi(self):
        sig = _signals()
        ecos = expected_cohort_cosine(sig, 0.01)
        n = 8
        phi = math.sqrt(n * n / (n + (n * n - n) * ecos) - 1.0) * sig.g_prev.norm()
        energies = []
        for seed in range(30):
            out = advanced_update(sig, 0.6, np.random.default_rng(seed), n_clients=n, ecos_mode="model", cos_decay=0.01)
            scale = sig.g_prev.norm() / sig.g_prev2.norm()
            base = sig.m_prev.values + scale * sig.g_prev.values
            energies.append(float(np.sum((out.values - base) ** 2)))
        assert np.mean(energies) == pytest.approx(phi**2, rel=0.1)

    def test_early_rounds_fall_back(self):
        sig = _signals(t=2)
        a = advanced_update(sig, 0.6, np.random.default_rng(2), n_clients=8)
        b = delta_update(sig, 1.0, 1.0, np.random.default_rng(2))
        assert np.array_equal(a.values, b.values)

    def test_default_fraction_covers_sixty_percent(self):
        assert FrStrategy("advanced").fraction == 0.6


class TestFabricate:
    def test_shape_preservation(self):
        sig = _signals()
        for kind in ("disguised", "delta", "advanced"):
            out = fabricate(FrStrategy(kind, n_clients=8), sig, np.random.default_rng(0))
            assert out.shapes == sig.m_prev.shapes

    def test_pure_function_of_signals_and_rng(self):
        # Data blindness: a strategy only ever sees PublicSignals, its
        # parameters and an RNG stream; same inputs give identical output.
        sig = _signals()
        strat = FrStrategy("advanced", n_clients=8)
        a = fabricate(strat, sig, np.random.default_rng(99))
        ambient = np.random.default_rng(0).normal(size=1000)  # unrelated state
        ambient += 1.0
        b = fabricate(strat, sig, np.random.default_rng(99))
        assert np.array_equal(a.values, b.values)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FrStrategy("random")

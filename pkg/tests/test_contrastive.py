import math

import numpy as np
import pytest

from megmatch.contrastive import (
    ContrastiveConfig,
    LinearEncoder,
    infonce_grad,
    infonce_loss,
    load_encoder,
    save_encoder,
    topk_accuracy,
    train_linear_encoder,
)
from megmatch.errors import (
    InsufficientDataError,
    KTooLargeError,
    NonPositiveTemperatureError,
    NotSquareError,
)
from megmatch.similarity import EmbeddingSequence, similarity_matrix
from megmatch.synthgen import gen_training_pairs, stream


def seqs_from(stack, rate=10.0):
    return [EmbeddingSequence(data=stack[i], rate_hz=rate) for i in range(stack.shape[0])]


def fd_gradient(queries, keys, temperature, h=1e-5):
    """Central-difference oracle for the loss gradient w.r.t. query entries."""

    def loss_of(stack):
        qs = seqs_from(stack)
        return infonce_loss(similarity_matrix(qs, keys), temperature)

    base = np.stack([q.data for q in queries])
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        grad[idx] = (loss_of(plus) - loss_of(minus)) / (2 * h)
        it.iternext()
    return grad


def rel_error(analytic, numeric):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


class TestInfonceLoss:
    def test_single_candidate_is_zero(self):
        assert infonce_loss(np.array([[0.37]]), 0.015) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 16, 256])
    @pytest.mark.parametrize("tau", [0.015, 1.0])
    def test_uniform_matrix_gives_log_n(self, n, tau):
        for fill in (0.0, 0.42, -0.9):
            sims = np.full((n, n), fill)
            assert infonce_loss(sims, tau) == pytest.approx(math.log(n), abs=1e-10)

    def test_sharp_diagonal_closed_form(self):
        n, tau = 256, 0.015
        sims = np.eye(n)
        expected = math.log1p((n - 1) * math.exp(-1.0 / tau))
        assert infonce_loss(sims, tau) == pytest.approx(expected, abs=1e-12)
        assert infonce_loss(sims, tau) < 1e-12

    def test_never_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 12))
            sims = rng.uniform(-1, 1, size=(n, n))
            assert infonce_loss(sims, 0.015) >= -1e-12
            assert infonce_loss(sims, 1.0) >= -1e-12

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(1)
        sims = rng.uniform(-1, 1, size=(6, 6))
        base = infonce_loss(sims, 0.1)
        shifted = sims.copy()
        shifted[2] += 0.73
        assert infonce_loss(shifted, 0.1) == pytest.approx(base, abs=1e-10)

    def test_raising_diagonal_never_raises_loss(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            sims = rng.uniform(-1, 1, size=(n, n))
            i = int(rng.integers(0, n))
            bumped = sims.copy()
            bumped[i, i] += float(rng.uniform(0.01, 1.0))
            assert infonce_loss(bumped, 0.2) <= infonce_loss(sims, 0.2) + 1e-12

    def test_not_square(self):
        with pytest.raises(NotSquareError):
            infonce_loss(np.zeros((2, 3)), 0.1)

    def test_bad_temperature(self):
        with pytest.raises(NonPositiveTemperatureError):
            infonce_loss(np.zeros((2, 2)), 0.0)


class TestInfonceGrad:
    def test_single_pair_zero_gradient(self):
        rng = np.random.default_rng(3)
        q = seqs_from(rng.standard_normal((1, 2, 6)))
        k = seqs_from(rng.standard_normal((1, 2, 6)))
        assert np.allclose(infonce_grad(q, k, 0.015), 0.0, atol=1e-15)

    def test_small_instance_matches_central_differences(self):
        rng = np.random.default_rng(4)
        q = seqs_from(rng.standard_normal((2, 1, 4)))
        k = seqs_from(rng.standard_normal((2, 1, 4)))
        analytic = infonce_grad(q, k, 0.5)
        numeric = fd_gradient(q, k, 0.5)
        assert rel_error(analytic, numeric) < 1e-4

    def test_random_instances_match_central_differences(self):
        # 100 seeded instances, N <= 4, H <= 3, T <= 10
        for trial in range(100):
            rng = np.random.Generator(
                np.random.Philox(key=np.array([trial, 7], dtype=np.uint64))
            )
            n = int(rng.integers(2, 5))
            h = int(rng.integers(1, 4))
            t = int(rng.integers(3, 11))
            tau = float(rng.uniform(0.05, 1.0))
            q = seqs_from(rng.standard_normal((n, h, t)))
            k = seqs_from(rng.standard_normal((n, h, t)))
            analytic = infonce_grad(q, k, tau)
            numeric = fd_gradient(q, k, tau)
            assert rel_error(analytic, numeric) < 1e-4, f"trial {trial}"

    def test_shift_direction_has_zero_derivative(self):
        # correlations ignore an additive constant per row
        rng = np.random.default_rng(5)
        q = seqs_from(rng.standard_normal((3, 2, 8)))
        k = seqs_from(rng.standard_normal((3, 2, 8)))
        grad = infonce_grad(q, k, 0.1)
        assert np.abs(grad.sum(axis=-1)).max() < 1e-8


class TestTopkAccuracy:
    def test_identity_dominant(self):
        sims = np.eye(5) + 0.01
        assert topk_accuracy(sims, 1) == 1.0

    def test_k_equals_n(self):
        rng = np.random.default_rng(6)
        sims = rng.uniform(-1, 1, size=(9, 9))
        assert topk_accuracy(sims, 9) == 1.0

    def test_chance_level_monte_carlo(self):
        accs = []
        for trial in range(1000):
            rng = np.random.Generator(
                np.random.Philox(key=np.array([trial, 8], dtype=np.uint64))
            )
            sims = rng.standard_normal((100, 100))
            accs.append(topk_accuracy(sims, 10))
        assert np.mean(accs) == pytest.approx(0.10, abs=0.01)

    def test_tie_break_counts_lower_index_first(self):
        sims = np.array([[0.5, 0.5], [0.5, 0.5]])
        # row 0: diagonal ties with col 1 but wins on index; row 1 loses the tie
        assert topk_accuracy(sims, 1) == 0.5

    def test_k_too_large(self):
        with pytest.raises(KTooLargeError):
            topk_accuracy(np.zeros((3, 3)), 4)


class TestTrainLinearEncoder:
    def test_recovers_identity_mapping(self):
        megs, feats, _ = gen_training_pairs(
            seed=5, n_pairs=64, channels=8, dim=4, frames=20, mix_noise_sigma=0.0
        )
        cfg = ContrastiveConfig(
            temperature=0.015, batch_size=8, learning_rate=0.01, patience=5, top_k_monitor=1
        )
        _, history = train_linear_encoder(megs, feats, 0.25, cfg, seed=1, max_epochs=50)
        assert max(h["val_topk"] for h in history) == 1.0

    def test_pure_noise_stays_near_chance(self):
        megs, feats, _ = gen_training_pairs(
            seed=6, n_pairs=128, channels=8, dim=4, frames=20, mix_noise_sigma=0.0
        )
        rng = stream(99, 9)
        noise_feats = [
            EmbeddingSequence(data=rng.standard_normal(f.data.shape), rate_hz=f.rate_hz)
            for f in feats
        ]
        cfg = ContrastiveConfig(
            temperature=0.015, batch_size=16, learning_rate=1e-3, patience=5, top_k_monitor=10
        )
        _, history = train_linear_encoder(megs, noise_feats, 0.5, cfg, seed=2, max_epochs=30)
        chance = 10 / 64
        sigma = math.sqrt(chance * (1 - chance) / 64)
        assert max(h["val_topk"] for h in history) <= chance + 3 * sigma

    def test_early_stopping_bound(self):
        megs, feats, _ = gen_training_pairs(
            seed=7, n_pairs=64, channels=6, dim=3, frames=15, mix_noise_sigma=0.0
        )
        cfg = ContrastiveConfig(
            temperature=0.015, batch_size=8, learning_rate=0.01, patience=3, top_k_monitor=1
        )
        _, history = train_linear_encoder(megs, feats, 0.25, cfg, seed=3, max_epochs=80)
        accs = [h["val_topk"] for h in history]
        best_epoch = accs.index(max(accs)) + 1
        assert len(history) <= best_epoch + cfg.patience

    def test_deterministic_for_fixed_seed(self):
        megs, feats, _ = gen_training_pairs(
            seed=8, n_pairs=48, channels=5, dim=3, frames=12, mix_noise_sigma=0.3
        )
        cfg = ContrastiveConfig(
            temperature=0.015, batch_size=8, learning_rate=1e-3, patience=5, top_k_monitor=5
        )
        enc1, hist1 = train_linear_encoder(megs, feats, 0.25, cfg, seed=4, max_epochs=10)
        enc2, hist2 = train_linear_encoder(megs, feats, 0.25, cfg, seed=4, max_epochs=10)
        assert hist1 == hist2
        assert np.array_equal(enc1.weight, enc2.weight)

    def test_insufficient_data(self):
        megs, feats, _ = gen_training_pairs(
            seed=9, n_pairs=10, channels=4, dim=2, frames=8, mix_noise_sigma=0.0
        )
        cfg = ContrastiveConfig(batch_size=8)
        with pytest.raises(InsufficientDataError):
            train_linear_encoder(megs, feats, 0.25, cfg, seed=0)


class TestEncoderCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        enc = LinearEncoder(weight=rng.standard_normal((4, 7)))
        path = tmp_path / "encoder.json"
        save_encoder(path, enc, seed=42, config={"temperature": 0.015})
        loaded, header = load_encoder(path)
        assert header["C"] == 7 and header["H"] == 4 and header["seed"] == 42
        assert np.array_equal(
            loaded.weight, enc.weight.astype(np.float32).astype(np.float64)
        )

    def test_encode_applies_linear_map(self):
        from megmatch.corpus import MegRecording

        rng = np.random.default_rng(11)
        w = rng.standard_normal((3, 5))
        rec = MegRecording(data=rng.standard_normal((5, 20)), rate_hz=10.0)
        out = LinearEncoder(weight=w).encode(rec)
        assert np.array_equal(out.data, w @ rec.data)
        assert out.rate_hz == 10.0

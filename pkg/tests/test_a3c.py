"""Trainer tests: k-step returns against a direct-summation oracle, segment
loss gradients against finite differences, counter accounting, and
reproducibility of single-worker training."""

import numpy as np
import pytest

from helpers import (SMALL, finite_difference_grads, max_relative_error,
                     random_segment, smooth_gradient_case)
from mixrl import a3c, env, evaluate, net
from mixrl.a3c import RolloutSegment, TrainerConfig, compute_returns
from mixrl.preprocess import REGIME_MASKED, REGIME_RAW


def returns_by_direct_summation(rewards, gamma, bootstrap, terminal):
    """Independent oracle: R_t = sum_i gamma^i r_{t+i} + gamma^(k-t) * V * (1-T)."""
    k = len(rewards)
    out = []
    for t in range(k):
        total = 0.0
        for i, r in enumerate(rewards[t:]):
            total += (gamma ** i) * r
        if not terminal:
            total += (gamma ** (k - t)) * bootstrap
        out.append(total)
    return np.array(out)


class TestTrainerConfig:
    def test_defaults(self):
        cfg = TrainerConfig()
        assert (cfg.gamma, cfg.beta, cfg.t_max, cfg.workers) == (0.99, 0.1, 5, 8)
        assert cfg.learning_rate == 0.004
        assert cfg.clip_norm == 40.0

    @pytest.mark.parametrize("kw", [
        {"gamma": 1.5}, {"gamma": -0.1}, {"beta": -1}, {"t_max": 0},
        {"workers": 0}, {"total_steps": 0}, {"rms_epsilon": 0},
    ])
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValueError):
            TrainerConfig(**kw)

    def test_checkpoint_interval_defaults_to_twentieth(self):
        assert TrainerConfig(total_steps=2_000_000).checkpoint_every == 100_000
        assert TrainerConfig(total_steps=100, checkpoint_interval=7).checkpoint_every == 7


class TestReturns:
    def test_terminal_single_reward(self):
        seg = RolloutSegment(obs=np.zeros((1, 6)), actions=np.array([0]),
                             rewards=np.array([2.5]), values=np.zeros(1),
                             bootstrap_value=9.0, terminal=True)
        assert compute_returns(seg, 0.99) == pytest.approx([2.5])

    def test_worked_example(self):
        seg = RolloutSegment(obs=np.zeros((3, 6)), actions=np.zeros(3, dtype=int),
                             rewards=np.array([1.0, 0.0, 1.0]), values=np.zeros(3),
                             bootstrap_value=2.0, terminal=False)
        returns = compute_returns(seg, 0.99)
        assert returns[2] == pytest.approx(2.98, abs=1e-12)
        assert returns[1] == pytest.approx(2.9502, abs=1e-12)
        assert returns[0] == pytest.approx(3.920698, abs=1e-12)

    def test_gamma_zero_collapses_to_rewards(self):
        gen = np.random.default_rng(0)
        seg = random_segment(gen, k=5)
        assert np.allclose(compute_returns(seg, 0.0), seg.rewards)

    def test_matches_direct_summation(self):
        gen = np.random.default_rng(123)
        for _ in range(2000):
            seg = random_segment(gen)
            gamma = float(gen.uniform(0, 1))
            expected = returns_by_direct_summation(
                list(seg.rewards), gamma, seg.bootstrap_value, seg.terminal)
            assert np.allclose(compute_returns(seg, gamma), expected,
                               rtol=0, atol=1e-12)

    def test_empty_segment_rejected(self):
        with pytest.raises(ValueError):
            RolloutSegment(obs=np.zeros((0, 6)), actions=np.zeros(0, dtype=int),
                           rewards=np.zeros(0), values=np.zeros(0),
                           bootstrap_value=0.0, terminal=False)


class TestSegmentLoss:
    def test_gradients_match_finite_differences(self):
        gen = np.random.default_rng(7)
        gamma, beta = 0.99, 0.1
        for trial in range(10):
            params, seg = smooth_gradient_case(gen)
            grads, _ = a3c.segment_loss_grads(params, seg, gamma, beta)
            fd = finite_difference_grads(
                lambda p: a3c.segment_loss(p, seg, gamma, beta), params)
            err = max_relative_error(grads, fd)
            assert err < 1e-4, (trial, err)

    def test_zero_advantage_zeroes_policy_head(self):
        gen = np.random.default_rng(3)
        params = net.init_params(0, SMALL, dtype=np.float64)
        seg = random_segment(gen, k=4)
        seg.values = compute_returns(seg, 0.5)  # advantage identically zero
        grads, diag = a3c.segment_loss_grads(params, seg, 0.5, beta=0.0)
        assert np.allclose(grads.wp, 0.0, atol=1e-12)
        assert np.allclose(grads.bp, 0.0, atol=1e-12)
        assert diag["mean_advantage"] == pytest.approx(0.0, abs=1e-12)
        assert diag["value_loss"] > 0  # critic still learns

    def test_entropy_share_grows_with_beta(self):
        gen = np.random.default_rng(5)
        params = net.init_params(1, SMALL, dtype=np.float64)
        seg = random_segment(gen, k=5)
        shares = []
        for beta in (0.0, 0.01, 0.1, 1.0):
            _, diag = a3c.segment_loss_grads(params, seg, 0.9, beta)
            total = (abs(diag["policy_loss"]) + abs(diag["entropy_loss"])
                     + abs(diag["value_loss"]))
            shares.append(abs(diag["entropy_loss"]) / total)
        assert shares[0] == 0.0
        assert shares == sorted(shares)
        assert shares[-1] > shares[1]

    def test_loss_matches_component_sum(self):
        gen = np.random.default_rng(11)
        params = net.init_params(2, SMALL, dtype=np.float64)
        seg = random_segment(gen, k=3)
        loss = a3c.segment_loss(params, seg, 0.97, 0.1)
        _, diag = a3c.segment_loss_grads(params, seg, 0.97, 0.1)
        assert loss == pytest.approx(
            diag["policy_loss"] + diag["entropy_loss"] + diag["value_loss"],
            rel=1e-12)


def tiny_env(**kw):
    defaults = dict(episode_max_steps=200)
    defaults.update(kw)
    return env.EnvConfig(**defaults)


class TestTraining:
    def test_single_worker_bit_reproducible(self):
        cfg = tiny_env()
        trainer = TrainerConfig(total_steps=600, workers=1)

        def run():
            result = a3c.train(cfg, trainer, REGIME_RAW, seed=5)
            return result.params.ravel(), result.episodes

        params_a, episodes_a = run()
        params_b, episodes_b = run()
        assert np.array_equal(params_a, params_b)
        assert episodes_a == episodes_b

    def test_step_counter_bounds_and_audit(self):
        cfg = tiny_env()
        trainer = TrainerConfig(total_steps=900, workers=8)
        result = a3c.train(cfg, trainer, REGIME_RAW, seed=2)
        assert trainer.total_steps <= result.global_step
        assert result.global_step <= trainer.total_steps + trainer.workers * trainer.t_max
        assert sum(result.worker_steps.values()) == result.global_step

    def test_regimes_shape_training_rewards(self):
        cfg = tiny_env()
        trainer = TrainerConfig(total_steps=800, workers=2)
        masked = a3c.train(cfg, trainer, REGIME_MASKED, seed=3)
        raw = a3c.train(cfg, trainer, REGIME_RAW, seed=3)
        assert all(row[4] == 2 for row in masked.episodes)
        assert all(row[4] == 1 for row in raw.episodes)
        # life-loss penalties push regime-2 episode rewards below regime-1
        assert masked.episode_rewards().mean() < raw.episode_rewards().mean()

    def test_training_log_matches_rollout_oracle(self):
        """With lr=0 the policy stays at its near-uniform initialisation, so
        training-log episode rewards and an independent rollout of the same
        frozen policy are draws from the same distribution; a uniform-random
        rollout oracle pins the same scale."""
        cfg = env.EnvConfig()
        trainer = TrainerConfig(total_steps=4000, workers=2, learning_rate=0.0)
        result = a3c.train(cfg, trainer, REGIME_RAW, seed=11)
        log_rewards = result.episode_rewards()
        assert len(log_rewards) >= 15

        params = net.init_params(11, (7056, 256, 128, 4))
        frozen = evaluate.single_policy(params, REGIME_RAW, 42, 42)
        frozen_records = evaluate.rollout(frozen, cfg, 40, seed=202,
                                          reward_regime=REGIME_RAW)
        frozen_rewards = np.array([r.shaped_reward for r in frozen_records])

        random_records = evaluate.rollout(evaluate.UniformRandomPolicy(), cfg,
                                          40, seed=303, reward_regime=REGIME_RAW)
        random_rewards = np.array([r.shaped_reward for r in random_records])

        def mean_gap_in_sigmas(a, b):
            spread = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
            return abs(a.mean() - b.mean()) / spread

        assert mean_gap_in_sigmas(log_rewards, frozen_rewards) < 4.0
        assert mean_gap_in_sigmas(log_rewards, random_rewards) < 5.0

    def test_outputs_written(self, tmp_path):
        cfg = tiny_env()
        trainer = TrainerConfig(total_steps=400, workers=2, checkpoint_interval=150)
        result = a3c.train(cfg, trainer, REGIME_RAW, seed=1, out_dir=str(tmp_path))
        assert result.log_path and (tmp_path / "policy_regime1_train_log.csv").exists()
        final = tmp_path / "policy_regime1_final.mxp"
        assert final.exists()
        params, acc, step = net.load_checkpoint(str(final))
        assert step == result.global_step
        assert np.array_equal(params.ravel(), result.params.ravel())
        text = (tmp_path / "policy_regime1_train_log.csv").read_text()
        assert text.splitlines()[0] == a3c.TRAIN_LOG_HEADER
        assert len(text.splitlines()) == len(result.episodes) + 1

    def test_all_workers_faulting_raises(self, monkeypatch):
        def explode(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(a3c.env, "step", explode)
        cfg = tiny_env()
        trainer = TrainerConfig(total_steps=500, workers=2)
        with pytest.raises(net.TrainingFault):
            a3c.train(cfg, trainer, REGIME_RAW, seed=1)

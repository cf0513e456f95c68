"""Rollout evaluation, loop ("stuck") detection and batch statistics.

Episodes are independent: episode i derives its environment seed and action
sampler from (seed, i), so results are identical however episodes are grouped
or threaded. Within one group, episodes advance in lockstep so the component
networks run batched.

Stuck metric: a trajectory counts as stuck when its dynamics fingerprints
show a confirmed loop, i.e. `period` consecutive in-play states that each
exactly repeat the state seen `period` steps earlier (the cycle was
traversed twice). Fingerprints exclude the step counter (monotone, never
recurs) and are collected only while the ball is in play (waiting-to-serve
states recur trivially). Under a deterministic policy the first recurrence
always confirms; under a stochastic policy confirmation filters incidental
revisits. Stuck episodes still run to the step cap.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import env, net, rng
from .mixture import MixedPolicy, mix_n
from .preprocess import (REGIME_MASKED, REGIME_RAW, RegimeSpec,
                         initial_observation, preprocess_frame, shape_reward)

Z_95 = 1.6448536269514722  # one-sided 95% normal quantile

EPISODES_CSV_HEADER = "episode,shaped_reward,raw_score,steps,lives_lost,stuck,cycle_period"
STATS_CSV_HEADER = ("alpha,epsilon,checkpoint_step,episodes,"
                    "min,max,median,mean,mean_steps,stuck_fraction")


@dataclass(frozen=True)
class CycleReport:
    first_repeat_index: int
    period: int
    fingerprint: int


class CycleDetector:
    """Streaming recurrence scanner over a fingerprint sequence.

    Tracks the first exact recurrence of any fingerprint (period = distance
    to its previous occurrence) and the first confirmed loop: `period`
    consecutive observations each repeating the fingerprint seen `period`
    positions earlier.
    """

    def __init__(self) -> None:
        self._last_index: dict[int, int] = {}
        self._index = 0
        self._run_distance = 0
        self._run_length = 0
        self.first_recurrence: CycleReport | None = None
        self.confirmed_loop: CycleReport | None = None

    def observe(self, fingerprint: int) -> CycleReport | None:
        """Feed one fingerprint; returns the first recurrence once known."""
        i = self._index
        previous = self._last_index.get(fingerprint)
        if previous is not None:
            distance = i - previous
            if self.first_recurrence is None:
                self.first_recurrence = CycleReport(i, distance, fingerprint)
            if distance == self._run_distance:
                self._run_length += 1
            else:
                self._run_distance = distance
                self._run_length = 1
            if self.confirmed_loop is None and self._run_length >= distance:
                self.confirmed_loop = CycleReport(i, distance, fingerprint)
        else:
            self._run_distance = 0
            self._run_length = 0
        self._last_index[fingerprint] = i
        self._index += 1
        return self.first_recurrence


def detect_cycle(fingerprints) -> CycleReport | None:
    """First exact recurrence in a fingerprint stream, or None."""
    detector = CycleDetector()
    for fp in fingerprints:
        detector.observe(fp)
        if detector.first_recurrence is not None:
            return detector.first_recurrence
    return None


@dataclass
class EpisodeRecord:
    episode: int
    shaped_reward: float
    raw_score: int
    steps: int
    lives_lost: int
    stuck_detected: bool
    cycle_period: int | None


@dataclass
class CheckpointStats:
    checkpoint_step: int
    episodes: int
    min_reward: float
    max_reward: float
    median_reward: float
    mean_reward: float
    mean_steps: float
    stuck_fraction: float


def aggregate(records: list[EpisodeRecord], checkpoint_step: int = 0) -> CheckpointStats:
    """Batch statistics over raw game scores (exact order statistics; the
    median of an even count is the lower middle)."""
    if not records:
        raise ValueError("cannot aggregate an empty batch")
    rewards = sorted(r.raw_score for r in records)
    n = len(rewards)
    return CheckpointStats(
        checkpoint_step=checkpoint_step,
        episodes=n,
        min_reward=float(rewards[0]),
        max_reward=float(rewards[-1]),
        median_reward=float(rewards[(n - 1) // 2]),
        mean_reward=float(sum(rewards) / n),
        mean_steps=float(sum(r.steps for r in records) / n),
        stuck_fraction=float(sum(r.stuck_detected for r in records) / n),
    )


@dataclass
class UniformRandomPolicy:
    """Acts uniformly at random; the baseline oracle policy."""

    n_actions: int = env.N_ACTIONS


@dataclass
class ScriptedPolicy:
    """Per-episode policy driven by a callable (state, frame) -> distribution.

    `make()` is invoked once per episode and may return a stateful closure.
    """

    make: Callable[[], Callable[[env.GameState, np.ndarray], np.ndarray]]
    n_actions: int = env.N_ACTIONS


def single_policy(params: net.ParamTree, regime: RegimeSpec, obs_height: int,
                  obs_width: int, epsilon: float = 0.0) -> MixedPolicy:
    """One network as a degenerate mixture (optionally epsilon-smoothed)."""
    return MixedPolicy(components=[(params, regime)], alphas=np.array([1.0]),
                       epsilon=epsilon, obs_height=obs_height, obs_width=obs_width)


class _Episode:
    """In-flight state of one evaluation episode."""

    __slots__ = ("index", "env_cfg", "gen", "state", "frame", "stacks",
                 "scripted", "shaped", "raw", "lives_lost", "detector")

    def __init__(self, index: int, base_config: env.EnvConfig, seed: int,
                 policy) -> None:
        self.index = index
        self.env_cfg = replace(base_config,
                               seed=rng.derive_seed(seed, rng.STREAM_EVAL, index, 0))
        self.gen = rng.generator(seed, rng.STREAM_EVAL, index, 1)
        self.state = env.reset(self.env_cfg)
        self.frame = env.render(self.state, self.env_cfg)
        self.stacks: list[np.ndarray] = []
        self.scripted = None
        if isinstance(policy, MixedPolicy):
            self.stacks = [
                initial_observation(self.frame, policy.component_regime(c),
                                    policy.obs_height, policy.obs_width)
                for c in range(len(policy.components))
            ]
        elif isinstance(policy, ScriptedPolicy):
            self.scripted = policy.make()
        self.shaped = 0.0
        self.raw = 0
        self.lives_lost = 0
        self.detector = CycleDetector()

    def advance(self, action: int, policy, reward_regime: RegimeSpec) -> bool:
        """Apply one action; returns True when the episode ended."""
        self.state, outcome = env.step(self.state, action, self.env_cfg)
        self.frame = outcome.frame
        self.shaped += shape_reward(outcome.raw_reward, outcome.life_lost,
                                    reward_regime)
        self.raw += outcome.raw_reward
        self.lives_lost += int(outcome.life_lost)
        if self.state.ball_in_play and self.detector.confirmed_loop is None:
            self.detector.observe(
                env.state_fingerprint(self.state, include_step_count=False))
        if outcome.terminal:
            return True
        if isinstance(policy, MixedPolicy):
            for c in range(len(policy.components)):
                stack = self.stacks[c]
                stack[:-1] = stack[1:]
                stack[-1] = preprocess_frame(self.frame,
                                             policy.component_regime(c),
                                             policy.obs_height, policy.obs_width,
                                             stack.dtype)
        return False

    def record(self) -> EpisodeRecord:
        loop = self.detector.confirmed_loop
        return EpisodeRecord(
            episode=self.index,
            shaped_reward=self.shaped,
            raw_score=self.raw,
            steps=self.state.step_count,
            lives_lost=self.lives_lost,
            stuck_detected=loop is not None,
            cycle_period=loop.period if loop is not None else None,
        )


def _distributions(policy, episodes: list[_Episode]) -> np.ndarray:
    if isinstance(policy, UniformRandomPolicy):
        return np.full((len(episodes), policy.n_actions), 1.0 / policy.n_actions)
    if isinstance(policy, ScriptedPolicy):
        return np.stack([ep.scripted(ep.state, ep.frame) for ep in episodes])
    components = []
    for c, (params, _) in enumerate(policy.components):
        obs = np.stack([ep.stacks[c].reshape(-1) for ep in episodes])
        components.append(net.forward_batch(params, obs)[0])
    return mix_n(components, policy.alphas, policy.epsilon)


def _run_chunk(policy, base_config: env.EnvConfig, indices: list[int], seed: int,
               reward_regime: RegimeSpec) -> dict[int, EpisodeRecord]:
    episodes = [_Episode(i, base_config, seed, policy) for i in indices]
    records: dict[int, EpisodeRecord] = {}
    active = episodes
    while active:
        dists = _distributions(policy, active)
        still_running: list[_Episode] = []
        for row, ep in enumerate(active):
            draw = ep.gen.random()
            cdf = np.cumsum(dists[row])
            action = int(min(np.searchsorted(cdf, draw, side="right"),
                             dists.shape[1] - 1))
            if ep.advance(action, policy, reward_regime):
                records[ep.index] = ep.record()
            else:
                still_running.append(ep)
        active = still_running
    return records


def rollout(policy, env_config: env.EnvConfig, episodes: int, seed: int, *,
            reward_regime: RegimeSpec = REGIME_RAW,
            threads: int = 1) -> list[EpisodeRecord]:
    """Run seeded evaluation episodes to terminal state or step cap.

    `reward_regime` only shapes the reported shaped_reward; raw score is
    always recorded. Results do not depend on `threads`.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    indices = list(range(episodes))
    if threads <= 1:
        records = _run_chunk(policy, env_config, indices, seed, reward_regime)
    else:
        chunks = [indices[i::threads] for i in range(threads)]
        records = {}
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(
                    lambda chunk: _run_chunk(policy, env_config, chunk, seed,
                                             reward_regime),
                    [c for c in chunks if c]):
                records.update(result)
    return [records[i] for i in indices]


@dataclass
class SweepPoint:
    alpha: float
    epsilon: float
    stats: CheckpointStats


def sweep_alpha(pi1_params: net.ParamTree, pi2_params: net.ParamTree,
                alphas, epsilon: float, episodes: int,
                env_config: env.EnvConfig, seed: int, *, obs_height: int = 42,
                obs_width: int = 42, threads: int = 1,
                shared_raw_view: bool = False,
                checkpoint_step: int = 0) -> list[SweepPoint]:
    """Evaluate the two-policy mixture at each alpha (same seeds per point).

    alpha weights the regime-1 policy; 1 - alpha the regime-2 policy.
    """
    points = []
    for alpha in alphas:
        policy = MixedPolicy(
            components=[(pi1_params, REGIME_RAW), (pi2_params, REGIME_MASKED)],
            alphas=np.array([alpha, 1.0 - alpha]), epsilon=epsilon,
            obs_height=obs_height, obs_width=obs_width,
            shared_raw_view=shared_raw_view)
        records = rollout(policy, env_config, episodes, seed, threads=threads)
        points.append(SweepPoint(alpha=float(alpha), epsilon=float(epsilon),
                                 stats=aggregate(records, checkpoint_step)))
    return points


def episodes_csv(records: list[EpisodeRecord]) -> str:
    lines = [EPISODES_CSV_HEADER]
    for r in records:
        period = "" if r.cycle_period is None else str(r.cycle_period)
        lines.append(f"{r.episode},{r.shaped_reward!r},{r.raw_score},{r.steps},"
                     f"{r.lives_lost},{int(r.stuck_detected)},{period}")
    return "\n".join(lines) + "\n"


def stats_csv(points: list[SweepPoint]) -> str:
    lines = [STATS_CSV_HEADER]
    for p in points:
        s = p.stats
        lines.append(f"{p.alpha!r},{p.epsilon!r},{s.checkpoint_step},{s.episodes},"
                     f"{s.min_reward!r},{s.max_reward!r},{s.median_reward!r},"
                     f"{s.mean_reward!r},{s.mean_steps!r},{s.stuck_fraction!r}")
    return "\n".join(lines) + "\n"


def proportion_drop_z(k_high: int, n_high: int, k_low: int, n_low: int) -> float:
    """One-sided two-proportion z statistic for H1: p_low < p_high (pooled)."""
    if min(n_high, n_low) < 1:
        raise ValueError("need at least one trial per group")
    p_high = k_high / n_high
    p_low = k_low / n_low
    pooled = (k_high + k_low) / (n_high + n_low)
    variance = pooled * (1.0 - pooled) * (1.0 / n_high + 1.0 / n_low)
    if variance == 0:
        return math.inf if p_high > p_low else 0.0
    return (p_high - p_low) / math.sqrt(variance)

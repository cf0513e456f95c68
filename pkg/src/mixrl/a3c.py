"""Asynchronous advantage actor-critic trainer.

Worker threads roll out short segments from their own environment instances,
compute gradients of the segment loss against a snapshot of the shared
parameters, and apply RMSProp updates back to the shared store. Updates are
atomic per tensor (Hogwild style: no ordering guarantee across tensors); the
global step counter is lock-protected. With a single worker the whole run is
bit-reproducible.

The segment loss, summed over the segment's timesteps, is

    -log pi(a_t|s_t) * (R_t - V(s_t)) - beta * H(pi(s_t)) + 0.5 * (R_t - V(s_t))^2

where R_t is the discounted k-step return bootstrapped with the snapshot's
value of the successor state, and the advantage weight in the policy term is
a constant computed from the rollout's stored value estimates (no gradient
flows through it).
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import env, ioutil, net, rng
from .preprocess import HISTORY_FRAMES, FrameStack, RegimeSpec, regime_id, shape_reward

logger = logging.getLogger(__name__)

TRAIN_LOG_HEADER = "step,worker,episode_reward,episode_length,regime"


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    beta: float = 0.1
    t_max: int = 5
    workers: int = 8
    total_steps: int = 2_000_000
    learning_rate: float = 0.004
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-6
    clip_norm: float = 40.0
    anneal: bool = True
    checkpoint_interval: int = 0  # 0 = total_steps // 20

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.rms_decay < 1.0:
            raise ValueError("rms_decay must be in [0, 1)")
        if self.rms_epsilon <= 0:
            raise ValueError("rms_epsilon must be > 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be >= 0")

    @property
    def checkpoint_every(self) -> int:
        return self.checkpoint_interval or max(1, self.total_steps // 20)


@dataclass
class RolloutSegment:
    """Up to t_max transitions plus the bootstrap value of the successor."""

    obs: np.ndarray        # (k, input_dim)
    actions: np.ndarray    # (k,)
    rewards: np.ndarray    # (k,) shaped rewards
    values: np.ndarray     # (k,) value estimates under the rollout snapshot
    bootstrap_value: float
    terminal: bool

    def __post_init__(self) -> None:
        k = len(self.actions)
        if k < 1:
            raise ValueError("segment must contain at least one transition")
        if self.obs.shape[0] != k or len(self.rewards) != k or len(self.values) != k:
            raise ValueError("segment arrays disagree on length")

    def __len__(self) -> int:
        return len(self.actions)


def compute_returns(segment: RolloutSegment, gamma: float) -> np.ndarray:
    """Discounted k-step returns, computed backward; the bootstrap value is
    zeroed when the segment ends in a terminal state."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    k = len(segment)
    returns = np.empty(k, dtype=np.float64)
    acc = float(segment.bootstrap_value) * (0.0 if segment.terminal else 1.0)
    for t in range(k - 1, -1, -1):
        acc = float(segment.rewards[t]) + gamma * acc
        returns[t] = acc
    return returns


def segment_loss(params: net.ParamTree, segment: RolloutSegment, gamma: float,
                 beta: float) -> float:
    """Scalar segment loss; the quantity whose exact gradient
    segment_loss_grads produces (useful for finite-difference checks)."""
    policies, values, _ = net.forward_batch(params, segment.obs)
    returns = compute_returns(segment, gamma)
    advantages = returns - np.asarray(segment.values, dtype=np.float64)
    idx = np.arange(len(segment))
    pa = np.maximum(policies[idx, segment.actions], np.finfo(policies.dtype).tiny)
    policy_term = -(np.log(pa) * advantages).sum()
    entropy_term = -beta * net.entropy(policies).sum()
    value_term = 0.5 * ((returns - values) ** 2).sum()
    return float(policy_term + entropy_term + value_term)


def segment_loss_grads(params: net.ParamTree, segment: RolloutSegment, gamma: float,
                       beta: float, out: net.ParamTree | None = None
                       ) -> tuple[net.ParamTree, dict]:
    """Exact gradients of the segment loss plus scalar diagnostics.

    The advantage weighting the policy term comes from the segment's stored
    value estimates, so it is a constant with respect to `params`.
    """
    policies, values, cache = net.forward_batch(params, segment.obs)
    returns = compute_returns(segment, gamma)
    advantages = returns - np.asarray(segment.values, dtype=np.float64)
    k = len(segment)
    idx = np.arange(k)
    tiny = np.finfo(policies.dtype).tiny
    safe = np.maximum(policies, tiny)

    # dL/dpolicy: entropy part beta*(ln p + 1) everywhere, the log-likelihood
    # part -A/p on the taken action. dL/dvalue: V - R.
    pseed = beta * (np.log(safe) + 1.0)
    pseed[idx, segment.actions] -= advantages / safe[idx, segment.actions]
    vseed = values - returns

    grads = net.backward(params, cache, pseed, vseed, out=out)

    entropies = net.entropy(policies)
    diagnostics = {
        "policy_loss": float(-(np.log(safe[idx, segment.actions]) * advantages).sum()),
        "entropy_loss": float(-beta * entropies.sum()),
        "value_loss": float(0.5 * ((returns - values) ** 2).sum()),
        "mean_advantage": float(advantages.mean()),
        "mean_entropy": float(entropies.mean()),
    }
    total = diagnostics["policy_loss"] + diagnostics["entropy_loss"] + diagnostics["value_loss"]
    if not np.isfinite(total):
        raise net.TrainingFault(f"non-finite segment loss: {diagnostics}")
    return grads, diagnostics


class SharedParams:
    """Globally shared parameters, optimizer state and step counter.

    Reads take a consistent copy per tensor; updates are serialized per
    tensor; nothing is guaranteed across tensors.
    """

    def __init__(self, params: net.ParamTree, opt: net.OptState):
        self.params = params
        self.opt = opt
        self._locks = {name: threading.Lock() for name in net.PARAM_FIELDS}
        self._scratch = params.zeros_like()  # guarded by the per-tensor locks
        self._step = 0
        self._step_lock = threading.Lock()

    @property
    def step(self) -> int:
        return self._step

    def reached(self, total_steps: int) -> bool:
        return self._step >= total_steps

    def copy_params_into(self, dst: net.ParamTree) -> None:
        for name, src in self.params.items():
            with self._locks[name]:
                np.copyto(getattr(dst, name), src)

    def snapshot(self) -> net.ParamTree:
        dst = self.params.zeros_like()
        self.copy_params_into(dst)
        return dst

    def snapshot_opt_acc(self) -> net.ParamTree:
        dst = self.opt.acc.zeros_like()
        for name, src in self.opt.acc.items():
            with self._locks[name]:
                np.copyto(getattr(dst, name), src)
        return dst

    def apply_gradients(self, grads: net.ParamTree, n_steps: int) -> int:
        lr = self.opt.learning_rate(self._step)
        for name, grad in grads.items():
            with self._locks[name]:
                net.rmsprop_update_tensor(
                    getattr(self.opt.acc, name), getattr(self.params, name),
                    grad, lr, self.opt.decay, self.opt.epsilon,
                    scratch=getattr(self._scratch, name))
        with self._step_lock:
            self._step += n_steps
            return self._step


class TrainLog:
    """Thread-safe sink for episode rows, per-worker step counts and faults."""

    def __init__(self, regime_label: int):
        self.regime_label = regime_label
        self.rows: list[tuple[int, int, float, int, int]] = []
        self.worker_steps: dict[int, int] = {}
        self.faults: list[tuple[int, str]] = []
        self._lock = threading.Lock()

    def episode(self, step: int, worker: int, reward: float, length: int) -> None:
        with self._lock:
            self.rows.append((step, worker, reward, length, self.regime_label))

    def count_steps(self, worker: int, n: int) -> None:
        with self._lock:
            self.worker_steps[worker] = self.worker_steps.get(worker, 0) + n

    def fault(self, worker: int, message: str) -> None:
        with self._lock:
            self.faults.append((worker, message))

    def to_csv(self) -> str:
        lines = [TRAIN_LOG_HEADER]
        for step, worker, reward, length, regime in self.rows:
            lines.append(f"{step},{worker},{reward!r},{length},{regime}")
        return "\n".join(lines) + "\n"


def sample_action(policy: np.ndarray, gen: np.random.Generator) -> int:
    """Draw an action index from a probability vector."""
    r = gen.random()
    cdf = np.cumsum(policy)
    return int(min(np.searchsorted(cdf, r, side="right"), len(policy) - 1))


def worker_loop(worker_id: int, shared: SharedParams, env_config: env.EnvConfig,
                regime: RegimeSpec, trainer: TrainerConfig, obs_height: int,
                obs_width: int, seed: int, sink: TrainLog) -> None:
    """Roll out segments and push updates until the global budget is spent.

    A fault terminates this worker with a diagnostic in the sink; other
    workers keep running.
    """
    try:
        _worker_body(worker_id, shared, env_config, regime, trainer,
                     obs_height, obs_width, seed, sink)
    except Exception as exc:  # noqa: BLE001 - worker isolation by contract
        logger.exception("worker %d died", worker_id)
        sink.fault(worker_id, f"{type(exc).__name__}: {exc}")


def _worker_body(worker_id: int, shared: SharedParams, env_config: env.EnvConfig,
                 regime: RegimeSpec, trainer: TrainerConfig, obs_height: int,
                 obs_width: int, seed: int, sink: TrainLog) -> None:
    worker_env = replace(env_config, seed=rng.derive_seed(seed, rng.STREAM_ENV, worker_id))
    gen = rng.generator(seed, rng.STREAM_WORKER, worker_id)
    dtype = shared.params.dtype
    stack = FrameStack(regime, obs_height, obs_width, dtype=dtype)
    input_dim = HISTORY_FRAMES * obs_height * obs_width

    obs_buf = np.empty((trainer.t_max, input_dim), dtype=dtype)
    actions_buf = np.empty(trainer.t_max, dtype=np.int64)
    rewards_buf = np.empty(trainer.t_max, dtype=np.float64)
    values_buf = np.empty(trainer.t_max, dtype=np.float64)
    snapshot = shared.params.zeros_like()
    grad_buf = shared.params.zeros_like()

    state = env.reset(worker_env)
    obs_vec = stack.reset(env.render(state, worker_env)).reshape(-1)
    episode_reward = 0.0
    episode_steps = 0

    while not shared.reached(trainer.total_steps):
        shared.copy_params_into(snapshot)
        k = 0
        terminal = False
        for i in range(trainer.t_max):
            policy, value, _ = net.forward(snapshot, obs_vec)
            action = sample_action(policy, gen)
            obs_buf[i] = obs_vec
            actions_buf[i] = action
            values_buf[i] = value
            state, outcome = env.step(state, action, worker_env)
            rewards_buf[i] = shape_reward(outcome.raw_reward, outcome.life_lost, regime)
            episode_reward += rewards_buf[i]
            episode_steps += 1
            k += 1
            obs_vec = stack.push(outcome.frame).reshape(-1)
            if outcome.terminal:
                terminal = True
                sink.episode(shared.step, worker_id, episode_reward, episode_steps)
                episode_reward = 0.0
                episode_steps = 0
                state = env.reset(worker_env)
                obs_vec = stack.reset(env.render(state, worker_env)).reshape(-1)
                break

        bootstrap = 0.0
        if not terminal:
            _, bootstrap, _ = net.forward(snapshot, obs_vec)
        segment = RolloutSegment(obs=obs_buf[:k], actions=actions_buf[:k],
                                 rewards=rewards_buf[:k], values=values_buf[:k],
                                 bootstrap_value=bootstrap, terminal=terminal)
        grads, _ = segment_loss_grads(snapshot, segment, trainer.gamma,
                                      trainer.beta, out=grad_buf)
        net.clip_global_norm(grads, trainer.clip_norm)
        shared.apply_gradients(grads, k)
        sink.count_steps(worker_id, k)


@dataclass
class TrainResult:
    params: net.ParamTree
    opt_acc: net.ParamTree
    global_step: int
    episodes: list[tuple[int, int, float, int, int]]
    worker_steps: dict[int, int]
    checkpoints: list[str] = field(default_factory=list)
    log_path: str | None = None
    faults: list[tuple[int, str]] = field(default_factory=list)

    def episode_rewards(self) -> np.ndarray:
        return np.array([row[2] for row in self.episodes], dtype=np.float64)


def train(env_config: env.EnvConfig, trainer: TrainerConfig, regime: RegimeSpec,
          seed: int, out_dir: str | None = None, *, obs_height: int = 42,
          obs_width: int = 42, dtype=np.float32,
          checkpoint_prefix: str | None = None) -> TrainResult:
    """Run asynchronous training; optionally write checkpoints and a CSV log.

    Checkpoints land every `trainer.checkpoint_every` global steps plus once
    at the end; the log has one row per finished episode.
    """
    input_dim = HISTORY_FRAMES * obs_height * obs_width
    shapes = (input_dim, *net.TRUNK_HIDDEN, env.N_ACTIONS)
    params = net.init_params(seed, shapes, dtype=dtype)
    opt = net.OptState.fresh(params, decay=trainer.rms_decay,
                             epsilon=trainer.rms_epsilon,
                             base_lr=trainer.learning_rate,
                             total_steps=trainer.total_steps,
                             anneal=trainer.anneal)
    shared = SharedParams(params, opt)
    sink = TrainLog(regime_label=regime_id(regime))
    prefix = checkpoint_prefix or f"policy_regime{regime_id(regime)}"

    threads = [
        threading.Thread(
            target=worker_loop, name=f"a3c-worker-{i}",
            args=(i, shared, env_config, regime, trainer, obs_height, obs_width,
                  seed, sink),
            daemon=True)
        for i in range(trainer.workers)
    ]
    started = time.monotonic()
    for t in threads:
        t.start()

    checkpoints: list[str] = []
    next_mark = trainer.checkpoint_every
    while any(t.is_alive() for t in threads):
        time.sleep(0.05)
        current = shared.step
        while out_dir and next_mark <= current and next_mark < trainer.total_steps:
            checkpoints.append(_write_checkpoint(out_dir, prefix, next_mark, shared))
            next_mark += trainer.checkpoint_every
    for t in threads:
        t.join()

    if sink.faults and shared.step < trainer.total_steps:
        details = "; ".join(f"worker {w}: {msg}" for w, msg in sink.faults)
        raise net.TrainingFault(f"all progress stopped before the step budget: {details}")

    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        final = os.path.join(out_dir, f"{prefix}_final.mxp")
        net.save_checkpoint(final, shared.snapshot(), shared.snapshot_opt_acc(),
                            shared.step)
        checkpoints.append(final)
        log_path = os.path.join(out_dir, f"{prefix}_train_log.csv")
        ioutil.atomic_write_text(log_path, sink.to_csv())

    logger.info("trained %d steps in %.1fs (%d episodes)", shared.step,
                time.monotonic() - started, len(sink.rows))
    return TrainResult(params=shared.params, opt_acc=shared.opt.acc,
                       global_step=shared.step, episodes=list(sink.rows),
                       worker_steps=dict(sink.worker_steps),
                       checkpoints=checkpoints, log_path=log_path,
                       faults=list(sink.faults))


def _write_checkpoint(out_dir: str, prefix: str, mark: int, shared: SharedParams) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{prefix}_{mark:010d}.mxp")
    net.save_checkpoint(path, shared.snapshot(), shared.snapshot_opt_acc(), shared.step)
    return path

"""Epsilon-greedy policy mixing.

N trained policies are blended into one stochastic policy:

    pi_mix(a|s) = eps/|A| + sum_i alpha_i * (1 - eps) * pi_i(a|s)

with priorities alpha_i >= 0 summing to one. Every action keeps probability
at least eps/|A|, so no action is ever impossible while eps > 0.

Each component sees its own preprocessing of the same raw frames (a policy
trained on masked input is evaluated on masked input); `shared_raw_view`
turns that off for comparison runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import net
from .preprocess import (HISTORY_FRAMES, REGIME_RAW, RegimeSpec,
                         initial_observation, push_frame)

ALPHA_SUM_TOL = 1e-9


def mix_two(p1: np.ndarray, p2: np.ndarray, alpha: float, epsilon: float) -> np.ndarray:
    """Two-strategy mixture; broadcasts over leading batch axes."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p1.shape[-1] != p2.shape[-1]:
        raise ValueError(f"action sets differ: {p1.shape[-1]} vs {p2.shape[-1]}")
    _check_unit_interval("alpha", alpha)
    _check_unit_interval("epsilon", epsilon)
    n_actions = p1.shape[-1]
    keep = 1.0 - np.asarray(epsilon)
    alpha = np.asarray(alpha)
    return np.asarray(epsilon) / n_actions + alpha * keep * p1 + (1.0 - alpha) * keep * p2


def mix_n(policies, alphas, epsilon: float, *, renormalize: bool = False) -> np.ndarray:
    """N-strategy mixture. `policies` stacks distributions on axis 0 (or is a
    sequence of equally shaped arrays); `alphas` must sum to one within
    1e-9 unless `renormalize` is set."""
    stack = np.stack([np.asarray(p) for p in policies], axis=0)
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 1 or len(alphas) != stack.shape[0]:
        raise ValueError("need one alpha per component policy")
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise ValueError("alphas must lie in [0, 1]")
    total = float(alphas.sum())
    if abs(total - 1.0) > ALPHA_SUM_TOL:
        if not renormalize:
            raise ValueError(f"alphas sum to {total!r}, not 1")
        alphas = alphas / total
    _check_unit_interval("epsilon", epsilon)
    n_actions = stack.shape[-1]
    weighted = np.tensordot(alphas, stack, axes=(0, 0))
    return epsilon / n_actions + (1.0 - epsilon) * weighted


@dataclass
class MixedPolicy:
    """Component networks with priorities and an exploration floor."""

    components: list[tuple[net.ParamTree, RegimeSpec]]
    alphas: np.ndarray
    epsilon: float
    obs_height: int
    obs_width: int
    shared_raw_view: bool = False

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("at least one component policy is required")
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if len(self.alphas) != len(self.components):
            raise ValueError("need one alpha per component")
        if np.any(self.alphas < 0) or np.any(self.alphas > 1):
            raise ValueError("alphas must lie in [0, 1]")
        if abs(float(self.alphas.sum()) - 1.0) > ALPHA_SUM_TOL:
            raise ValueError(f"alphas sum to {float(self.alphas.sum())!r}, not 1")
        _check_unit_interval("epsilon", self.epsilon)
        input_dim = HISTORY_FRAMES * self.obs_height * self.obs_width
        n_actions = {params.shapes[-1] for params, _ in self.components}
        if len(n_actions) != 1:
            raise ValueError("components disagree on the action set size")
        for params, _ in self.components:
            if params.shapes[0] != input_dim:
                raise ValueError(
                    f"component expects input dim {params.shapes[0]}, "
                    f"observations provide {input_dim}")

    @property
    def n_actions(self) -> int:
        return self.components[0][0].shapes[-1]

    def component_regime(self, index: int) -> RegimeSpec:
        return REGIME_RAW if self.shared_raw_view else self.components[index][1]

    def distribution(self, observations: list[np.ndarray]) -> np.ndarray:
        """Mixed action distribution given one observation per component."""
        if len(observations) != len(self.components):
            raise ValueError("need one observation per component")
        policies = [net.forward(params, obs.reshape(-1))[0]
                    for (params, _), obs in zip(self.components, observations)]
        return mix_n(policies, self.alphas, self.epsilon)


def component_observation(mixed: MixedPolicy, index: int,
                          frames: list[np.ndarray]) -> np.ndarray:
    """Observation for one component from raw frame history (oldest first;
    shorter histories are padded by repeating the oldest frame)."""
    if not frames:
        raise ValueError("frame history is empty")
    regime = mixed.component_regime(index)
    recent = frames[-HISTORY_FRAMES:]
    obs = initial_observation(recent[0], regime, mixed.obs_height, mixed.obs_width)
    for frame in recent[1:]:
        obs = push_frame(obs, frame, regime)
    return obs


def act(mixed: MixedPolicy, frames: list[np.ndarray],
        gen: np.random.Generator) -> tuple[int, np.ndarray]:
    """Sample an action for the newest frame; returns (action, distribution).

    `frames` is the raw frame history, most recent last. The generator state
    advances deterministically (one draw per call).
    """
    observations = [component_observation(mixed, i, frames)
                    for i in range(len(mixed.components))]
    dist = mixed.distribution(observations)
    r = gen.random()
    action = int(min(np.searchsorted(np.cumsum(dist), r, side="right"),
                     mixed.n_actions - 1))
    return action, dist


@dataclass
class MixtureSpecEntry:
    checkpoint: str
    alpha: float
    regime_id: int


@dataclass
class MixtureSpec:
    """Parsed mixture spec file: component lines plus one epsilon line.

    Line grammar (one component per line, '#' starts a comment):
        component=<checkpoint path>, alpha=<float>, regime=<1|2>
        epsilon=<float>
    """

    entries: list[MixtureSpecEntry] = field(default_factory=list)
    epsilon: float = 0.0


def parse_mixture_spec(text: str, source: str = "<mixture>") -> MixtureSpec:
    spec = MixtureSpec()
    saw_epsilon = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "," not in line and line.startswith("epsilon"):
            key, _, value = line.partition("=")
            if key.strip() != "epsilon":
                raise ValueError(f"{source}:{lineno}: expected 'epsilon=<float>'")
            spec.epsilon = _parse_float(value, source, lineno)
            saw_epsilon = True
            continue
        parts = {}
        for item in line.split(","):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"{source}:{lineno}: expected key=value, got {item.strip()!r}")
            parts[key.strip()] = value.strip()
        missing = {"component", "alpha", "regime"} - parts.keys()
        if missing:
            raise ValueError(f"{source}:{lineno}: missing {', '.join(sorted(missing))}")
        extra = parts.keys() - {"component", "alpha", "regime"}
        if extra:
            raise ValueError(f"{source}:{lineno}: unknown keys {', '.join(sorted(extra))}")
        regime = parts["regime"]
        if regime not in ("1", "2"):
            raise ValueError(f"{source}:{lineno}: regime must be 1 or 2, got {regime!r}")
        spec.entries.append(MixtureSpecEntry(
            checkpoint=parts["component"],
            alpha=_parse_float(parts["alpha"], source, lineno),
            regime_id=int(regime)))
    if not spec.entries:
        raise ValueError(f"{source}: no component lines found")
    if not saw_epsilon:
        raise ValueError(f"{source}: missing 'epsilon=<float>' line")
    return spec


def load_mixed_policy(path: str, obs_height: int, obs_width: int, *,
                      renormalize: bool = False,
                      shared_raw_view: bool = False) -> tuple[MixedPolicy, int]:
    """Build a MixedPolicy from a spec file; returns it with the largest
    training step among the component checkpoints."""
    with open(path, "r", encoding="utf-8") as handle:
        spec = parse_mixture_spec(handle.read(), source=path)
    base = os.path.dirname(os.path.abspath(path))
    components = []
    alphas = []
    newest_step = 0
    for entry in spec.entries:
        ckpt_path = entry.checkpoint
        if not os.path.isabs(ckpt_path):
            ckpt_path = os.path.join(base, ckpt_path)
        params, _, step = net.load_checkpoint(ckpt_path)
        newest_step = max(newest_step, step)
        components.append((params, RegimeSpec.from_id(entry.regime_id)))
        alphas.append(entry.alpha)
    alphas_arr = np.asarray(alphas, dtype=np.float64)
    if renormalize and alphas_arr.sum() > 0:
        alphas_arr = alphas_arr / alphas_arr.sum()
    policy = MixedPolicy(components=components, alphas=alphas_arr,
                         epsilon=spec.epsilon, obs_height=obs_height,
                         obs_width=obs_width, shared_raw_view=shared_raw_view)
    return policy, newest_step


def _check_unit_interval(name: str, value) -> None:
    arr = np.asarray(value)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{name} must lie in [0, 1]")


def _parse_float(text: str, source: str, lineno: int) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ValueError(f"{source}:{lineno}: not a number: {text.strip()!r}") from None

"""Frame-to-observation pipeline.

A network observation is a stack of the four most recent frames, each
downsampled by area mean and scaled to [0, 1]. Two regimes exist:

  * regime 1 feeds frames through untouched;
  * regime 2 blanks the (immutable) brick pixels before downsampling and
    adds a penalty to the shaped reward whenever a life is lost.

At episode start the stack is filled with four copies of the first frame so
the network never sees artificial motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import BRICK_INTENSITY

HISTORY_FRAMES = 4


@dataclass(frozen=True)
class RegimeSpec:
    mask_immutable: bool = False
    life_loss_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.life_loss_penalty > 0:
            raise ValueError("life_loss_penalty must be <= 0")

    @classmethod
    def from_id(cls, regime_id: int) -> "RegimeSpec":
        if regime_id == 1:
            return REGIME_RAW
        if regime_id == 2:
            return REGIME_MASKED
        raise ValueError(f"unknown regime id {regime_id!r}; expected 1 or 2")


REGIME_RAW = RegimeSpec(mask_immutable=False, life_loss_penalty=0.0)
REGIME_MASKED = RegimeSpec(mask_immutable=True, life_loss_penalty=-1.0)


def regime_id(regime: RegimeSpec) -> int:
    """Nearest preset id, used for log labels."""
    return 2 if regime.mask_immutable else 1


def mask_immutable(frame: np.ndarray) -> np.ndarray:
    """Zero every brick-class pixel; everything else is untouched. Idempotent."""
    out = frame.copy()
    out[out == BRICK_INTENSITY] = 0
    return out


def downsample(frame: np.ndarray, obs_height: int, obs_width: int,
               dtype=np.float32) -> np.ndarray:
    """Area-mean downsample to (obs_height, obs_width), scaled to [0, 1]."""
    h, w = frame.shape
    if h % obs_height or w % obs_width:
        raise ValueError(
            f"frame {h}x{w} is not an integer multiple of {obs_height}x{obs_width}")
    fh, fw = h // obs_height, w // obs_width
    blocks = frame.reshape(obs_height, fh, obs_width, fw)
    return (blocks.mean(axis=(1, 3), dtype=np.float64) / 255.0).astype(dtype)


def preprocess_frame(frame: np.ndarray, regime: RegimeSpec, obs_height: int,
                     obs_width: int, dtype=np.float32) -> np.ndarray:
    if regime.mask_immutable:
        frame = mask_immutable(frame)
    return downsample(frame, obs_height, obs_width, dtype)


def initial_observation(frame: np.ndarray, regime: RegimeSpec, obs_height: int,
                        obs_width: int, dtype=np.float32) -> np.ndarray:
    plane = preprocess_frame(frame, regime, obs_height, obs_width, dtype)
    return np.broadcast_to(plane, (HISTORY_FRAMES,) + plane.shape).copy()


def push_frame(obs: np.ndarray, frame: np.ndarray, regime: RegimeSpec) -> np.ndarray:
    """Drop the oldest plane and append `frame` (most recent last). Returns a
    new observation; the input is not modified."""
    if obs.ndim != 3 or obs.shape[0] != HISTORY_FRAMES:
        raise ValueError(f"observation must have {HISTORY_FRAMES} stacked planes")
    out = np.empty_like(obs)
    out[:-1] = obs[1:]
    out[-1] = preprocess_frame(frame, regime, obs.shape[1], obs.shape[2], obs.dtype)
    return out


def shape_reward(raw_reward: float, life_lost: bool, regime: RegimeSpec) -> float:
    """Clip the raw reward to [0, 1], then apply the regime's life-loss penalty."""
    shaped = min(max(float(raw_reward), 0.0), 1.0)
    if life_lost:
        shaped += regime.life_loss_penalty
    return shaped


class FrameStack:
    """Stateful wrapper over the pure stack functions, one per worker/episode."""

    def __init__(self, regime: RegimeSpec, obs_height: int, obs_width: int,
                 dtype=np.float32):
        self.regime = regime
        self.obs_height = obs_height
        self.obs_width = obs_width
        self.dtype = dtype
        self._obs: np.ndarray | None = None

    def reset(self, frame: np.ndarray) -> np.ndarray:
        self._obs = initial_observation(frame, self.regime, self.obs_height,
                                        self.obs_width, self.dtype)
        return self._obs

    def push(self, frame: np.ndarray) -> np.ndarray:
        if self._obs is None:
            return self.reset(frame)
        self._obs = push_frame(self._obs, frame, self.regime)
        return self._obs

    @property
    def observation(self) -> np.ndarray:
        if self._obs is None:
            raise RuntimeError("frame stack has not been reset")
        return self._obs

"""Run configuration.

Plain `key = value` files ('#' starts a comment) merged with flag overrides;
unknown keys, type mismatches and invariant violations are rejected with the
offending line. The fully resolved configuration can be echoed back out and
re-parses to an identical RunConfig.
"""

from __future__ import annotations

from dataclasses import dataclass

from .a3c import TrainerConfig
from .env import EnvConfig
from .preprocess import HISTORY_FRAMES, RegimeSpec


class ConfigError(ValueError):
    """Bad key, bad value or violated invariant in a run configuration."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    return int(text.strip(), 0)


def _parse_float(text: str) -> float:
    return float(text.strip())


# name -> (parser, default); None defaults are derived after parsing.
KEY_SPECS: dict[str, tuple] = {
    "seed": (_parse_int, 0),
    # environment
    "grid_width": (_parse_int, 84),
    "grid_height": (_parse_int, 84),
    "paddle_width": (_parse_int, 12),
    "brick_rows": (_parse_int, 6),
    "brick_cols": (_parse_int, 12),
    "brick_value": (_parse_int, 1),
    "lives": (_parse_int, 5),
    "episode_max_steps": (_parse_int, 10000),
    "frame_skip": (_parse_int, 4),
    "ball_speed": (_parse_int, 2),
    "repeat_action_probability": (_parse_float, 0.0),
    "pixel_max": (_parse_bool, False),
    "life_loss_terminal": (_parse_bool, False),
    # preprocessing
    "obs_height": (_parse_int, 42),
    "obs_width": (_parse_int, 42),
    "history_frames": (_parse_int, HISTORY_FRAMES),
    "regime": (_parse_int, 1),
    "mask_immutable": (_parse_bool, None),
    "life_loss_penalty": (_parse_float, None),
    # trainer
    "learning_rate": (_parse_float, 0.004),
    "gamma": (_parse_float, 0.99),
    "beta": (_parse_float, 0.1),
    "t_max": (_parse_int, 5),
    "workers": (_parse_int, 8),
    "total_steps": (_parse_int, 2_000_000),
    "clip_norm": (_parse_float, 40.0),
    "rms_decay": (_parse_float, 0.99),
    "rms_epsilon": (_parse_float, 1e-6),
    "anneal": (_parse_bool, True),
    "checkpoint_interval": (_parse_int, 0),
    # mixing and evaluation
    "alpha": (_parse_float, 0.125),
    "epsilon": (_parse_float, 0.01),
    "eval_episodes": (_parse_int, 100),
    "eval_threads": (_parse_int, 1),
}


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    trainer: TrainerConfig
    regime_id: int
    regime: RegimeSpec
    obs_height: int
    obs_width: int
    history_frames: int
    repeat_action_probability: float
    pixel_max: bool
    life_loss_terminal: bool
    alpha: float
    epsilon: float
    eval_episodes: int
    eval_threads: int
    seed: int


def parse_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at `path` (if any), then flag overrides."""
    values: dict[str, object] = {name: default for name, (_, default) in KEY_SPECS.items()}
    origins: dict[str, str] = {}
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            _apply_file(values, origins, handle.read(), path)
    for key, raw in (overrides or {}).items():
        _apply_value(values, origins, key, raw, f"flag {key}")
    return _build(values, origins)


def parse_config_text(text: str, source: str = "<config>",
                      overrides: dict[str, str] | None = None) -> RunConfig:
    values: dict[str, object] = {name: default for name, (_, default) in KEY_SPECS.items()}
    origins: dict[str, str] = {}
    _apply_file(values, origins, text, source)
    for key, raw in (overrides or {}).items():
        _apply_value(values, origins, key, raw, f"flag {key}")
    return _build(values, origins)


def resolved_text(run: RunConfig) -> str:
    """Echo of the resolved configuration; re-parses to an equal RunConfig."""
    values = {
        "seed": run.seed,
        "grid_width": run.env.grid_width,
        "grid_height": run.env.grid_height,
        "paddle_width": run.env.paddle_width,
        "brick_rows": run.env.brick_rows,
        "brick_cols": run.env.brick_cols,
        "brick_value": run.env.brick_value,
        "lives": run.env.lives,
        "episode_max_steps": run.env.episode_max_steps,
        "frame_skip": run.env.frame_skip,
        "ball_speed": run.env.ball_speed,
        "repeat_action_probability": run.repeat_action_probability,
        "pixel_max": run.pixel_max,
        "life_loss_terminal": run.life_loss_terminal,
        "obs_height": run.obs_height,
        "obs_width": run.obs_width,
        "history_frames": run.history_frames,
        "regime": run.regime_id,
        "mask_immutable": run.regime.mask_immutable,
        "life_loss_penalty": run.regime.life_loss_penalty,
        "learning_rate": run.trainer.learning_rate,
        "gamma": run.trainer.gamma,
        "beta": run.trainer.beta,
        "t_max": run.trainer.t_max,
        "workers": run.trainer.workers,
        "total_steps": run.trainer.total_steps,
        "clip_norm": run.trainer.clip_norm,
        "rms_decay": run.trainer.rms_decay,
        "rms_epsilon": run.trainer.rms_epsilon,
        "anneal": run.trainer.anneal,
        "checkpoint_interval": run.trainer.checkpoint_interval,
        "alpha": run.alpha,
        "epsilon": run.epsilon,
        "eval_episodes": run.eval_episodes,
        "eval_threads": run.eval_threads,
    }
    lines = []
    for name in KEY_SPECS:
        value = values[name]
        if isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def _apply_file(values: dict, origins: dict, text: str, source: str) -> None:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        _apply_value(values, origins, key.strip(), value.strip(), f"{source}:{lineno}")


def _apply_value(values: dict, origins: dict, key: str, raw: str, origin: str) -> None:
    if key not in KEY_SPECS:
        raise ConfigError(f"{origin}: unknown key {key!r}")
    parser = KEY_SPECS[key][0]
    try:
        values[key] = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None
    origins[key] = origin


def _build(values: dict, origins: dict) -> RunConfig:
    def fail(key: str, message: str) -> ConfigError:
        origin = origins.get(key)
        prefix = f"{origin}: " if origin else ""
        return ConfigError(f"{prefix}{message}")

    if values["repeat_action_probability"] != 0.0:
        raise fail("repeat_action_probability",
                   "only repeat_action_probability = 0 is supported (sticky actions are out of scope)")
    if values["pixel_max"]:
        raise fail("pixel_max", "pixel-wise frame maximum is not supported")
    if values["life_loss_terminal"]:
        raise fail("life_loss_terminal", "losing a life never marks the episode terminal")
    if values["history_frames"] != HISTORY_FRAMES:
        raise fail("history_frames", f"history_frames must be {HISTORY_FRAMES}")
    if values["regime"] not in (1, 2):
        raise fail("regime", f"regime must be 1 or 2, got {values['regime']}")

    preset = RegimeSpec.from_id(values["regime"])
    mask = preset.mask_immutable if values["mask_immutable"] is None else values["mask_immutable"]
    penalty = preset.life_loss_penalty if values["life_loss_penalty"] is None else values["life_loss_penalty"]
    try:
        regime = RegimeSpec(mask_immutable=mask, life_loss_penalty=penalty)
    except ValueError as exc:
        raise fail("life_loss_penalty", str(exc)) from None

    try:
        env_config = EnvConfig(
            grid_width=values["grid_width"], grid_height=values["grid_height"],
            paddle_width=values["paddle_width"], brick_rows=values["brick_rows"],
            brick_cols=values["brick_cols"], brick_value=values["brick_value"],
            lives=values["lives"], episode_max_steps=values["episode_max_steps"],
            frame_skip=values["frame_skip"], ball_speed=values["ball_speed"],
            seed=values["seed"])
    except ValueError as exc:
        raise ConfigError(f"invalid environment settings: {exc}") from None

    try:
        trainer = TrainerConfig(
            gamma=values["gamma"], beta=values["beta"], t_max=values["t_max"],
            workers=values["workers"], total_steps=values["total_steps"],
            learning_rate=values["learning_rate"], rms_decay=values["rms_decay"],
            rms_epsilon=values["rms_epsilon"], clip_norm=values["clip_norm"],
            anneal=values["anneal"],
            checkpoint_interval=values["checkpoint_interval"])
    except ValueError as exc:
        raise ConfigError(f"invalid trainer settings: {exc}") from None

    for key in ("obs_height", "obs_width"):
        if values[key] < 1:
            raise fail(key, f"{key} must be >= 1")
    if values["grid_height"] % values["obs_height"] or values["grid_width"] % values["obs_width"]:
        raise fail("obs_height", "observation size must divide the grid size exactly")
    for key in ("alpha", "epsilon"):
        if not 0.0 <= values[key] <= 1.0:
            raise fail(key, f"{key} must lie in [0, 1]")
    if values["eval_episodes"] < 1:
        raise fail("eval_episodes", "eval_episodes must be >= 1")
    if values["eval_threads"] < 1:
        raise fail("eval_threads", "eval_threads must be >= 1")

    return RunConfig(
        env=env_config, trainer=trainer, regime_id=values["regime"], regime=regime,
        obs_height=values["obs_height"], obs_width=values["obs_width"],
        history_frames=values["history_frames"],
        repeat_action_probability=values["repeat_action_probability"],
        pixel_max=values["pixel_max"], life_loss_terminal=values["life_loss_terminal"],
        alpha=values["alpha"], epsilon=values["epsilon"],
        eval_episodes=values["eval_episodes"], eval_threads=values["eval_threads"],
        seed=values["seed"])

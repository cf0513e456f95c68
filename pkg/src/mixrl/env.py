"""Deterministic Breakout-style simulator on an integer pixel grid.

Stands in for an Atari emulator at desk scale: a paddle, a 2x2 ball and a
wall of bricks rendered to a grayscale frame. All physics is integer
arithmetic, so a trajectory is an exact function of (seed, action sequence)
on any machine. One instance is single-threaded; instances are independent.

Physics summary:
  * velocity components stay in {-2, -1, 1, 2} pixels per tick;
  * the ball moves in unit sub-steps, reflecting off side/top walls;
  * a brick hit breaks exactly one brick per sub-step and reflects the
    axis of travel; breaking the last brick re-racks the full wall,
    so score counts bricks broken cumulatively;
  * the paddle bounce nudges dx by the contact third (left third -1,
    right third +1, clamped, never zero);
  * FIRE serves the ball; while waiting for a serve the ball rides on the
    paddle and LEFT/RIGHT only move the paddle. Serve direction is a pure
    hash of (seed, lives_left, score), never hidden mutable state, so equal
    states always evolve equally.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

# Disjoint intensity classes so preprocessing can identify objects by value.
BACKGROUND_INTENSITY = 0
BRICK_INTENSITY = 96
PADDLE_INTENSITY = 160
BALL_INTENSITY = 255

BALL_SIZE = 2       # ball is a BALL_SIZE x BALL_SIZE block
PADDLE_THICKNESS = 3
PADDLE_SPEED = 2    # pixels per physics tick
BRICK_HEIGHT = 3    # pixel rows per brick row
BRICK_TOP = 6       # first pixel row of the brick region
PADDLE_MARGIN = 6   # paddle top sits this many rows above the bottom edge
MAX_BALL_SPEED = 2


class Action(IntEnum):
    NOOP = 0
    LEFT = 1
    RIGHT = 2
    FIRE = 3


N_ACTIONS = len(Action)


class ConfigError(ValueError):
    """EnvConfig violates one of its invariants."""


class TerminalStateError(RuntimeError):
    """A finished episode was stepped again."""


@dataclass(frozen=True)
class EnvConfig:
    grid_width: int = 84
    grid_height: int = 84
    paddle_width: int = 12
    brick_rows: int = 6
    brick_cols: int = 12
    brick_value: int = 1
    lives: int = 5
    episode_max_steps: int = 10000
    frame_skip: int = 4
    ball_speed: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lives < 1:
            raise ConfigError("lives must be >= 1")
        if self.frame_skip < 1:
            raise ConfigError("frame_skip must be >= 1")
        if self.episode_max_steps < 1:
            raise ConfigError("episode_max_steps must be >= 1")
        if self.grid_width < 16 or self.grid_height < 32:
            raise ConfigError("grid must be at least 16 x 32 pixels")
        if not 3 <= self.paddle_width < self.grid_width:
            raise ConfigError("paddle_width must be in [3, grid_width)")
        if self.ball_speed not in (1, MAX_BALL_SPEED):
            raise ConfigError("ball_speed must be 1 or 2")
        if self.brick_value < 1:
            raise ConfigError("brick_value must be >= 1")
        if self.brick_rows < 0:
            raise ConfigError("brick_rows must be >= 0")
        if self.brick_cols < 1:
            raise ConfigError("brick_cols must be >= 1")
        if self.grid_width % self.brick_cols != 0:
            raise ConfigError("brick_cols must divide grid_width")
        if BRICK_TOP + self.brick_rows * BRICK_HEIGHT > self.paddle_top - 2 * BALL_SIZE:
            raise ConfigError("brick region does not fit between ceiling and paddle")

    @property
    def paddle_top(self) -> int:
        return self.grid_height - PADDLE_MARGIN

    @property
    def paddle_max_x(self) -> int:
        return self.grid_width - self.paddle_width

    @property
    def brick_width(self) -> int:
        return self.grid_width // self.brick_cols


@dataclass(eq=False)
class GameState:
    paddle_x: int
    ball_x: int
    ball_y: int
    ball_dx: int
    ball_dy: int
    bricks: np.ndarray  # bool (brick_rows, brick_cols), True = alive
    lives_left: int
    step_count: int
    score: int
    ball_in_play: bool

    def copy(self) -> "GameState":
        return replace(self, bricks=self.bricks.copy())


@dataclass
class StepOutcome:
    frame: np.ndarray
    raw_reward: int
    life_lost: bool
    terminal: bool


def reset(config: EnvConfig) -> GameState:
    """Fresh episode: full wall, all lives, ball racked and waiting for FIRE."""
    state = GameState(
        paddle_x=(config.grid_width - config.paddle_width) // 2,
        ball_x=0,
        ball_y=0,
        ball_dx=0,
        ball_dy=0,
        bricks=np.ones((config.brick_rows, config.brick_cols), dtype=bool),
        lives_left=config.lives,
        step_count=0,
        score=0,
        ball_in_play=False,
    )
    _rack_ball(state, config)
    return state


def is_terminal(state: GameState, config: EnvConfig) -> bool:
    return state.lives_left == 0 or state.step_count >= config.episode_max_steps


def step(state: GameState, action: int, config: EnvConfig) -> tuple[GameState, StepOutcome]:
    """Apply one agent step: the action repeats for frame_skip physics ticks,
    rewards are summed and life_lost is OR-ed over the group. The input state
    is not modified."""
    if is_terminal(state, config):
        raise TerminalStateError("episode has ended; reset the environment")
    act = Action(action)
    nxt = state.copy()
    raw_reward = 0
    life_lost = False
    for _ in range(config.frame_skip):
        reward, lost = _tick(nxt, act, config)
        raw_reward += reward
        life_lost = life_lost or lost
        if nxt.lives_left == 0:
            break
    nxt.step_count += 1
    outcome = StepOutcome(
        frame=render(nxt, config),
        raw_reward=raw_reward,
        life_lost=life_lost,
        terminal=is_terminal(nxt, config),
    )
    return nxt, outcome


def render(state: GameState, config: EnvConfig) -> np.ndarray:
    """Grayscale frame (grid_height, grid_width) uint8; pure in the state."""
    frame = np.zeros((config.grid_height, config.grid_width), dtype=np.uint8)
    if config.brick_rows and state.bricks.any():
        wall = state.bricks.astype(np.uint8) * BRICK_INTENSITY
        wall = wall.repeat(BRICK_HEIGHT, axis=0).repeat(config.brick_width, axis=1)
        frame[BRICK_TOP:BRICK_TOP + wall.shape[0], :wall.shape[1]] = wall
    top = config.paddle_top
    frame[top:top + PADDLE_THICKNESS,
          state.paddle_x:state.paddle_x + config.paddle_width] = PADDLE_INTENSITY
    frame[state.ball_y:state.ball_y + BALL_SIZE,
          state.ball_x:state.ball_x + BALL_SIZE] = BALL_INTENSITY
    return frame


def state_fingerprint(state: GameState, *, include_step_count: bool = True) -> int:
    """Stable unsalted 64-bit digest of the full state.

    With include_step_count=False the digest identifies the dynamics-relevant
    state only; the step counter increases monotonically, so it must be left
    out when searching a trajectory for recurrences.
    """
    header = struct.pack(
        "<iiiii?iiq",
        state.paddle_x,
        state.ball_x,
        state.ball_y,
        state.ball_dx,
        state.ball_dy,
        state.ball_in_play,
        state.lives_left,
        state.score,
        state.step_count if include_step_count else -1,
    )
    digest = hashlib.blake2b(header + state.bricks.tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _rack_ball(state: GameState, config: EnvConfig) -> None:
    """Park the ball just above the paddle centre until the next serve."""
    centre = state.paddle_x + config.paddle_width // 2 - BALL_SIZE // 2
    state.ball_x = min(max(centre, 0), config.grid_width - BALL_SIZE)
    state.ball_y = config.paddle_top - BALL_SIZE - 1
    state.ball_dx = 0
    state.ball_dy = 0
    state.ball_in_play = False


def _serve_direction(state: GameState, config: EnvConfig) -> int:
    payload = struct.pack("<Qii", config.seed & 0xFFFFFFFFFFFFFFFF,
                          state.lives_left, state.score)
    return 1 if hashlib.blake2b(payload, digest_size=1).digest()[0] & 1 else -1


def _tick(state: GameState, action: Action, config: EnvConfig) -> tuple[int, bool]:
    if action == Action.LEFT:
        state.paddle_x = max(0, state.paddle_x - PADDLE_SPEED)
    elif action == Action.RIGHT:
        state.paddle_x = min(config.paddle_max_x, state.paddle_x + PADDLE_SPEED)

    if not state.ball_in_play:
        if action != Action.FIRE:
            _rack_ball(state, config)  # ball rides with the paddle
            return 0, False
        state.ball_in_play = True
        state.ball_dx = _serve_direction(state, config)
        state.ball_dy = -config.ball_speed

    return _advance_ball(state, config)


def _advance_ball(state: GameState, config: EnvConfig) -> tuple[int, bool]:
    reward = 0
    substeps = max(abs(state.ball_dx), abs(state.ball_dy))
    for sub in range(substeps):
        # A component of magnitude `substeps` moves every sub-step, a slower
        # one only on the first; |d| is never more than 2.
        if abs(state.ball_dx) == substeps or sub == 0:
            reward += _substep_x(state, config)
        if abs(state.ball_dy) == substeps or sub == 0:
            gained, lost = _substep_y(state, config)
            reward += gained
            if lost:
                return reward, True
    return reward, False


def _substep_x(state: GameState, config: EnvConfig) -> int:
    x = state.ball_x + (1 if state.ball_dx > 0 else -1)
    limit = config.grid_width - BALL_SIZE
    if x < 0:
        x = -x
        state.ball_dx = -state.ball_dx
    elif x > limit:
        x = 2 * limit - x
        state.ball_dx = -state.ball_dx
    state.ball_x = x
    if _break_brick(state, config):
        state.ball_dx = -state.ball_dx
        return config.brick_value
    return 0


def _substep_y(state: GameState, config: EnvConfig) -> tuple[int, bool]:
    y = state.ball_y + (1 if state.ball_dy > 0 else -1)
    if y < 0:
        y = -y
        state.ball_dy = -state.ball_dy
    state.ball_y = y

    if _break_brick(state, config):
        state.ball_dy = -state.ball_dy
        return config.brick_value, False

    if state.ball_dy > 0:
        if _paddle_overlap(state, config):
            _bounce_off_paddle(state, config)
        elif state.ball_y + BALL_SIZE >= config.grid_height:
            state.lives_left -= 1
            _rack_ball(state, config)
            return 0, True
    return 0, False


def _paddle_overlap(state: GameState, config: EnvConfig) -> bool:
    return (state.ball_y + BALL_SIZE > config.paddle_top
            and state.ball_y < config.paddle_top + PADDLE_THICKNESS
            and state.ball_x + BALL_SIZE > state.paddle_x
            and state.ball_x < state.paddle_x + config.paddle_width)


def _bounce_off_paddle(state: GameState, config: EnvConfig) -> None:
    state.ball_y = config.paddle_top - BALL_SIZE
    state.ball_dy = -abs(state.ball_dy)
    contact = state.ball_x + BALL_SIZE // 2 - state.paddle_x
    third = config.paddle_width // 3
    if contact < third:
        delta = -1
    elif contact >= config.paddle_width - third:
        delta = 1
    else:
        delta = 0
    dx = state.ball_dx + delta
    if dx == 0:
        dx = delta  # skip zero, keep travelling in the nudge direction
    state.ball_dx = max(-MAX_BALL_SPEED, min(MAX_BALL_SPEED, dx))


def _break_brick(state: GameState, config: EnvConfig) -> bool:
    """Break at most one brick under the ball; refill the wall after a clear."""
    if config.brick_rows == 0:
        return False
    top = BRICK_TOP
    bottom = top + config.brick_rows * BRICK_HEIGHT
    y0, y1 = state.ball_y, state.ball_y + BALL_SIZE - 1
    if y1 < top or y0 >= bottom:
        return False
    cells = set()
    for py in (y0, y1):
        if top <= py < bottom:
            r = (py - top) // BRICK_HEIGHT
            for px in (state.ball_x, state.ball_x + BALL_SIZE - 1):
                cells.add((r, min(px // config.brick_width, config.brick_cols - 1)))
    for r, c in sorted(cells):
        if state.bricks[r, c]:
            state.bricks[r, c] = False
            state.score += config.brick_value
            if not state.bricks.any():
                state.bricks[:] = True
            return True
    return False

"""Toy pixel control environments with pluggable visual distractors, plus
episode replay storage with contiguous sequence sampling.

Rendering invariants: observations are (C, H, W) float32 in [0, 1];
distractor backgrounds only change pixels, never dynamics or rewards, and
agent/goal sprites are drawn fully opaque on top of any background.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, InsufficientDataError, UsageError

DISTRACTOR_MODES = ("clean", "noise", "stripes", "drift_blobs", "image_folder")


@dataclass(frozen=True)
class DistractorSetting:
    mode: str = "clean"
    seed: int = 0
    held_out: bool = False
    folder: Optional[str] = None

    def __post_init__(self):
        if self.mode not in DISTRACTOR_MODES:
            raise ConfigurationError(f"unknown distractor mode '{self.mode}'")


class BackgroundRenderer:
    """Per-episode animated background as a pure function of (setting, episode, t)."""

    def __init__(self, setting: DistractorSetting, shape: Tuple[int, int, int]):
        self.setting = setting
        self.shape = shape
        self._episode = -1
        self._folder_pool: Optional[np.ndarray] = None

    def start_episode(self, episode_index: int) -> None:
        self._episode = episode_index
        c, h, w = self.shape
        if self.setting.mode == "clean":
            return
        g = np.random.default_rng(
            np.random.SeedSequence([self.setting.seed, episode_index, 0xB6]))
        if self.setting.mode == "stripes":
            self._freq = g.uniform(2.0, 5.0)
            self._angle = g.uniform(0.0, np.pi)
            self._speed = g.uniform(0.05, 0.2)
            self._colors = g.uniform(0.0, 1.0, size=(2, c))
        elif self.setting.mode == "drift_blobs":
            nblobs = int(g.integers(3, 6))
            self._centers = g.uniform(0.0, 1.0, size=(nblobs, 2))
            self._vels = g.uniform(-0.02, 0.02, size=(nblobs, 2))
            self._radii = g.uniform(0.08, 0.2, size=nblobs)
            self._blob_colors = g.uniform(0.2, 1.0, size=(nblobs, c))
            self._base = g.uniform(0.0, 0.4, size=c)
        elif self.setting.mode == "image_folder":
            if self._folder_pool is None:
                from .augment import _folder_pool
                self._folder_pool = _folder_pool(self.setting.folder, self.shape)
            self._folder_idx = int(g.integers(0, self._folder_pool.shape[0]))

    def frame(self, t: int) -> np.ndarray:
        c, h, w = self.shape
        mode = self.setting.mode
        if mode == "clean":
            return np.full((c, h, w), 0.5, dtype=np.float32)
        if mode == "noise":
            g = np.random.default_rng(
                np.random.SeedSequence([self.setting.seed, self._episode, t, 0x17]))
            return g.uniform(0.0, 1.0, size=(c, h, w)).astype(np.float32)
        ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
        if mode == "stripes":
            proj = np.cos(self._angle) * xs + np.sin(self._angle) * ys
            wave = 0.5 + 0.5 * np.sin(2 * np.pi * (self._freq * proj - self._speed * t))
            img = self._colors[0][:, None, None] * wave[None] \
                + self._colors[1][:, None, None] * (1.0 - wave[None])
            return np.clip(img, 0.0, 1.0).astype(np.float32)
        if mode == "drift_blobs":
            img = np.tile(self._base[:, None, None], (1, h, w)).astype(np.float64)
            centers = (self._centers + self._vels * t) % 1.0
            for k in range(centers.shape[0]):
                cy, cx = centers[k]
                d2 = (ys - cy) ** 2 + (xs - cx) ** 2
                mask = np.exp(-d2 / (2 * self._radii[k] ** 2))
                img += self._blob_colors[k][:, None, None] * mask[None]
            return np.clip(img, 0.0, 1.0).astype(np.float32)
        if mode == "image_folder":
            return self._folder_pool[self._folder_idx].copy()
        raise ConfigurationError(f"unknown distractor mode '{mode}'")


def _draw_square(img: np.ndarray, center_row: int, center_col: int, color) -> None:
    img[:, center_row - 1:center_row + 2, center_col - 1:center_col + 2] = \
        np.asarray(color, dtype=img.dtype)[:, None, None]


def pos_to_pixel(pos: float, size: int) -> int:
    """Map a coordinate in [-1, 1] to a sprite center with the 3x3 square inside frame."""
    return 1 + int(round((pos + 1.0) / 2.0 * (size - 3)))


AGENT_COLOR = (1.0, 1.0, 1.0)
GOAL_COLOR = (0.1, 1.0, 0.1)


class PointMassEnv:
    """Planar point mass steered toward a goal.

    pos' = clip(pos + 0.1 * a); reward = -||pos' - goal||_2 per raw step.
    Rendered as a white 3x3 agent square and green 3x3 goal square over the
    distractor background at 32x32x3. Episode ends after `episode_len` raw
    steps (decision count = episode_len // action_repeat).
    """

    SIZE = 32

    def __init__(self, distractor: DistractorSetting = DistractorSetting(),
                 seed: int = 0, action_repeat: int = 1, episode_len: int = 200):
        if action_repeat < 1:
            raise ConfigurationError(f"action_repeat must be >= 1, got {action_repeat}")
        self.distractor = distractor
        self.action_repeat = action_repeat
        self.episode_len = episode_len
        self.obs_shape = (3, self.SIZE, self.SIZE)
        self.action_dim = 2
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0]))
        self._bg = BackgroundRenderer(distractor, self.obs_shape)
        self._episode = -1
        self._t = 0
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)

    @property
    def max_episode_reward_magnitude(self) -> float:
        return 2.0 * np.sqrt(2.0) * self.episode_len

    def reset(self) -> np.ndarray:
        self._episode += 1
        self._t = 0
        self._bg.start_episode(self._episode)
        self.pos = self._rng.uniform(-1.0, 1.0, size=2)
        self.goal = self._rng.uniform(-1.0, 1.0, size=2)
        return self.render()

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.action_dim), -1.0, 1.0)
        reward = 0.0
        for _ in range(self.action_repeat):
            self.pos = np.clip(self.pos + 0.1 * action, -1.0, 1.0)
            reward += -float(np.linalg.norm(self.pos - self.goal))
            self._t += 1
        done = self._t >= self.episode_len
        return self.render(), reward, done

    def render(self) -> np.ndarray:
        img = self._bg.frame(self._t)
        _draw_square(img, pos_to_pixel(self.goal[0], self.SIZE),
                     pos_to_pixel(self.goal[1], self.SIZE), GOAL_COLOR)
        _draw_square(img, pos_to_pixel(self.pos[0], self.SIZE),
                     pos_to_pixel(self.pos[1], self.SIZE), AGENT_COLOR)
        return img

    def render_state(self, pos, goal) -> np.ndarray:
        """Render an arbitrary (pos, goal) situation over the current background."""
        saved_pos, saved_goal = self.pos, self.goal
        self.pos = np.asarray(pos, dtype=np.float64)
        self.goal = np.asarray(goal, dtype=np.float64)
        img = self.render()
        self.pos, self.goal = saved_pos, saved_goal
        return img


class CatcherEnv:
    """Paddle-and-ball task with a sparse +1 catch reward; same interface."""

    SIZE = 32

    def __init__(self, distractor: DistractorSetting = DistractorSetting(),
                 seed: int = 0, action_repeat: int = 1, episode_len: int = 200):
        self.distractor = distractor
        self.action_repeat = action_repeat
        self.episode_len = episode_len
        self.obs_shape = (3, self.SIZE, self.SIZE)
        self.action_dim = 1
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA]))
        self._bg = BackgroundRenderer(distractor, self.obs_shape)
        self._episode = -1
        self._t = 0
        self.paddle_x = 0.0
        self.ball = np.zeros(2)  # (y from 1 at top to -1 at bottom, x)

    def reset(self) -> np.ndarray:
        self._episode += 1
        self._t = 0
        self._bg.start_episode(self._episode)
        self.paddle_x = 0.0
        self._spawn_ball()
        return self.render()

    def _spawn_ball(self):
        self.ball = np.array([1.0, self._rng.uniform(-0.9, 0.9)])

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(1)[0], -1.0, 1.0))
        reward = 0.0
        for _ in range(self.action_repeat):
            self.paddle_x = float(np.clip(self.paddle_x + 0.2 * a, -1.0, 1.0))
            self.ball[0] -= 0.1
            if self.ball[0] <= -1.0:
                if abs(self.ball[1] - self.paddle_x) < 0.25:
                    reward += 1.0
                self._spawn_ball()
            self._t += 1
        done = self._t >= self.episode_len
        return self.render(), reward, done

    def render(self) -> np.ndarray:
        img = self._bg.frame(self._t)
        # paddle: 2x7 white block on the bottom rows
        px = pos_to_pixel(self.paddle_x, self.SIZE)
        lo = max(0, px - 3)
        hi = min(self.SIZE, px + 4)
        img[:, self.SIZE - 2:, lo:hi] = 1.0
        by = pos_to_pixel(-self.ball[0], self.SIZE)  # top of frame = ball y 1
        bx = pos_to_pixel(self.ball[1], self.SIZE)
        img[:, by - 1:by + 1, bx - 1:bx + 1] = \
            np.asarray((1.0, 0.3, 0.3), dtype=img.dtype)[:, None, None]
        return img


def make_env(name: str, distractor: DistractorSetting, seed: int,
             action_repeat: int, episode_len: int):
    if name == "pointmass":
        return PointMassEnv(distractor, seed, action_repeat, episode_len)
    if name == "catcher":
        return CatcherEnv(distractor, seed, action_repeat, episode_len)
    raise ConfigurationError(f"unknown environment '{name}'")


# --- replay ----------------------------------------------------------------------

@dataclass
class Episode:
    obs: np.ndarray  # (T, C, H, W) uint8
    act: np.ndarray  # (T, A) float32
    rew: np.ndarray  # (T,) float32

    def __len__(self):
        return self.obs.shape[0]


@dataclass
class TrajectoryBatch:
    obs: np.ndarray  # (B, L, C, H, W) float32 in [0, 1]
    act: np.ndarray  # (B, L, A) float32
    rew: np.ndarray  # (B, L) float32


def quantize_obs(obs: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(obs * 255.0), 0, 255).astype(np.uint8)


class ReplayBuffer:
    """Whole-episode FIFO store, bounded by total steps."""

    def __init__(self, capacity_steps: int = 100_000):
        self.capacity = capacity_steps
        self.episodes: List[Episode] = []
        self.total_steps = 0

    def add_episode(self, obs: np.ndarray, act: np.ndarray, rew: np.ndarray) -> None:
        if not (len(obs) == len(act) == len(rew)):
            raise UsageError("episode arrays must share their leading length")
        ep = Episode(quantize_obs(np.asarray(obs, dtype=np.float32)),
                     np.asarray(act, dtype=np.float32),
                     np.asarray(rew, dtype=np.float32))
        if len(ep) > self.capacity:
            raise UsageError(
                f"episode of {len(ep)} steps exceeds buffer capacity {self.capacity}")
        self.episodes.append(ep)
        self.total_steps += len(ep)
        while self.total_steps > self.capacity:
            evicted = self.episodes.pop(0)
            self.total_steps -= len(evicted)

    def sample_sequences(self, batch: int, length: int, rng: np.random.Generator) -> TrajectoryBatch:
        eligible = [ep for ep in self.episodes if len(ep) >= length]
        if not eligible:
            raise InsufficientDataError(
                f"no episode of length >= {length} in buffer; collect more data")
        c, h, w = eligible[0].obs.shape[1:]
        a = eligible[0].act.shape[1]
        obs = np.empty((batch, length, c, h, w), dtype=np.float32)
        act = np.empty((batch, length, a), dtype=np.float32)
        rew = np.empty((batch, length), dtype=np.float32)
        for i in range(batch):
            ep = eligible[int(rng.integers(0, len(eligible)))]
            start = int(rng.integers(0, len(ep) - length + 1))
            obs[i] = ep.obs[start:start + length].astype(np.float32) / 255.0
            act[i] = ep.act[start:start + length]
            rew[i] = ep.rew[start:start + length]
        return TrajectoryBatch(obs, act, rew)


def save_episode(path, episode: Episode) -> None:
    """Export one episode in the binary checkpoint container."""
    save_checkpoint(path, {
        "obs": episode.obs.astype(np.float32) / 255.0,
        "act": episode.act.astype(np.float32),
        "rew": episode.rew.astype(np.float32),
    })


def load_episode(path) -> Episode:
    entries = load_checkpoint(path)
    for key in ("obs", "act", "rew"):
        if key not in entries:
            raise ConfigurationError(f"episode file {path} lacks entry '{key}'")
    return Episode(quantize_obs(entries["obs"]),
                   entries["act"].astype(np.float32),
                   entries["rew"].astype(np.float32))

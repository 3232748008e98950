"""Two-way image augmentation and the procedural distractor image source.

All functions are pure over (input, rng state), never mutate their inputs,
accept single images (C, H, W) or batches (N, C, H, W) of float values in
[0, 1], and preserve shape and range. The hard view used for training is
random_shift applied to the overlay composite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError

STRATEGIES = ("H-S", "H-N", "H-H", "S-H")
HARD_KINDS = ("overlay", "random_conv", "cutout_color", "color_jitter")


def _as_batch(o: np.ndarray) -> Tuple[np.ndarray, bool]:
    if o.ndim == 3:
        return o[None], True
    if o.ndim == 4:
        return o, False
    raise ConfigurationError(f"expected (C,H,W) or (N,C,H,W) image array, got {o.shape}")


def _debatch(o: np.ndarray, squeeze: bool) -> np.ndarray:
    return o[0] if squeeze else o


# --- distractor image source ---------------------------------------------------

@dataclass
class DistractorSource:
    """Yields distractor images for the overlay augmentation.

    procedural mode synthesizes a seeded pool of layered sinusoidal color
    fields with random rectangles; image_folder mode reads 8-bit RGB PNGs and
    resizes them bilinearly to the requested shape.
    """
    mode: str = "procedural"
    seed: int = 0
    folder: Optional[str] = None
    pool_size: int = 256
    _pools: dict = field(default_factory=dict, repr=False)

    def sample(self, rng: np.random.Generator, n: int, shape: Tuple[int, int, int]) -> np.ndarray:
        pool = self._pool(shape)
        idx = rng.integers(0, pool.shape[0], size=n)
        return pool[idx]

    def _pool(self, shape) -> np.ndarray:
        key = tuple(shape)
        if key not in self._pools:
            if self.mode == "procedural":
                self._pools[key] = _procedural_pool(self.seed, self.pool_size, shape)
            elif self.mode == "image_folder":
                self._pools[key] = _folder_pool(self.folder, shape)
            else:
                raise ConfigurationError(f"unknown distractor source mode '{self.mode}'")
        return self._pools[key]


def _procedural_pool(seed: int, count: int, shape) -> np.ndarray:
    c, h, w = shape
    g = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    pool = np.empty((count, c, h, w), dtype=np.float32)
    for k in range(count):
        img = np.zeros((c, h, w), dtype=np.float64)
        layers = g.integers(2, 4)
        for _ in range(layers):
            fx, fy = g.uniform(0.5, 4.0, size=2)
            phase = g.uniform(0.0, 2 * np.pi, size=c)
            for ch in range(c):
                img[ch] += 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase[ch])
        img /= layers
        for _ in range(g.integers(1, 5)):
            rh = int(g.integers(h // 8, h // 2))
            rw = int(g.integers(w // 8, w // 2))
            ry = int(g.integers(0, h - rh))
            rx = int(g.integers(0, w - rw))
            color = g.uniform(0.0, 1.0, size=c)
            img[:, ry:ry + rh, rx:rx + rw] = color[:, None, None]
        pool[k] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return pool


def _folder_pool(folder, shape) -> np.ndarray:
    from PIL import Image

    if folder is None:
        raise ConfigurationError("image_folder distractor source needs a folder path")
    paths = sorted(Path(folder).glob("*.png"))
    if not paths:
        raise ConfigurationError(f"no PNG files found in {folder}")
    c, h, w = shape
    pool = np.empty((len(paths), c, h, w), dtype=np.float32)
    for i, p in enumerate(paths):
        img = Image.open(p).convert("RGB").resize((w, h), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0  # (H, W, 3)
        pool[i] = arr.transpose(2, 0, 1)[:c]
    return pool


@dataclass
class AugmentConfig:
    pad: int = 4
    hard_kind: str = "overlay"
    alpha: float = 0.5
    strategy: str = "H-S"
    source: DistractorSource = field(default_factory=DistractorSource)

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must be in [0,1], got {self.alpha}")
        if self.pad < 0:
            raise ConfigurationError(f"pad must be >= 0, got {self.pad}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy '{self.strategy}'")
        if self.hard_kind not in HARD_KINDS:
            raise ConfigurationError(f"unknown hard augmentation '{self.hard_kind}'")


# --- soft augmentation -----------------------------------------------------------

def shift_crop(o: np.ndarray, pad: int, offsets: np.ndarray) -> np.ndarray:
    """Zero-pad by `pad` and crop back at the given per-image (dy, dx) offsets."""
    batch, squeeze = _as_batch(o)
    n, c, h, w = batch.shape
    if pad == 0:
        return _debatch(batch.copy(), squeeze)
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (h, w), axis=(2, 3))
    offsets = np.asarray(offsets).reshape(n, 2)
    out = windows[np.arange(n), :, offsets[:, 0], offsets[:, 1]]
    return _debatch(np.ascontiguousarray(out), squeeze)


def random_shift(o: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """Pad-and-crop at a uniform offset in [0, 2*pad]^2 (per image)."""
    batch, squeeze = _as_batch(o)
    if pad >= min(batch.shape[2], batch.shape[3]):
        raise ConfigurationError(
            f"random_shift: pad {pad} too large for image {batch.shape[2:]}")
    offsets = rng.integers(0, 2 * pad + 1, size=(batch.shape[0], 2)) if pad else \
        np.zeros((batch.shape[0], 2), dtype=np.int64)
    return _debatch(shift_crop(batch, pad, offsets), squeeze)


# --- hard augmentations -----------------------------------------------------------

def random_overlay(o: np.ndarray, alpha: float, src: DistractorSource,
                   rng: np.random.Generator) -> np.ndarray:
    """Pixelwise convex combination (1-alpha)*o + alpha*img, img drawn from src."""
    if not (0.0 <= alpha <= 1.0):
        raise ConfigurationError(f"random_overlay: alpha {alpha} outside [0,1]")
    batch, squeeze = _as_batch(o)
    imgs = src.sample(rng, batch.shape[0], batch.shape[1:])
    out = (1.0 - alpha) * batch + alpha * imgs.astype(batch.dtype)
    return _debatch(out, squeeze)


def random_conv(o: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One freshly random 3x3 full-channel convolution per call, clamped to [0,1]."""
    batch, squeeze = _as_batch(o)
    n, c, h, w = batch.shape
    kernel = rng.normal(0.0, np.sqrt(2.0 / (c * 9)), size=(c, c, 3, 3))
    padded = np.pad(batch, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(batch, dtype=np.float64)
    for i in range(3):
        for j in range(3):
            window = padded[:, :, i:i + h, j:j + w]
            out += np.einsum("nchw,oc->nohw", window, kernel[:, :, i, j])
    out = np.clip(out, 0.0, 1.0).astype(batch.dtype)
    return _debatch(out, squeeze)


def cutout_rect(o: np.ndarray, y: int, x: int, rh: int, rw: int, color) -> np.ndarray:
    """Paste one uniform-color rectangle; zero-sized rectangles are the identity."""
    batch, squeeze = _as_batch(o)
    out = batch.copy()
    if rh > 0 and rw > 0:
        out[:, :, y:y + rh, x:x + rw] = np.asarray(color, dtype=out.dtype)[None, :, None, None]
    return _debatch(out, squeeze)


def cutout_color(o: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniform-color rectangle covering 10-30% of the image area, per image."""
    batch, squeeze = _as_batch(o)
    n, c, h, w = batch.shape
    out = batch.copy()
    for k in range(n):
        frac = rng.uniform(0.1, 0.3)
        aspect = rng.uniform(0.5, 2.0)
        rh = int(np.clip(round(np.sqrt(frac * h * w * aspect)), 1, h))
        rw = int(np.clip(round(np.sqrt(frac * h * w / aspect)), 1, w))
        ry = int(rng.integers(0, h - rh + 1))
        rx = int(rng.integers(0, w - rw + 1))
        color = rng.uniform(0.0, 1.0, size=c)
        out[k, :, ry:ry + rh, rx:rx + rw] = color[:, None, None].astype(out.dtype)
    return _debatch(out, squeeze)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """(N,3,H,W) RGB in [0,1] -> HSV in [0,1]."""
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    maxc = rgb.max(axis=1)
    minc = rgb.min(axis=1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """(N,3,H,W) HSV in [0,1] -> RGB in [0,1]."""
    h, s, v = hsv[:, 0], hsv[:, 1], hsv[:, 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=1)


def color_jitter(o: np.ndarray, rng: np.random.Generator,
                 noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Perturb HSV channels by uniform noise (+-0.1 H, +-0.3 S and V)."""
    batch, squeeze = _as_batch(o)
    if batch.shape[1] != 3:
        raise ConfigurationError("color_jitter requires 3-channel RGB images")
    if noise is None:
        n = batch.shape[0]
        noise = np.stack([rng.uniform(-0.1, 0.1, size=n),
                          rng.uniform(-0.3, 0.3, size=n),
                          rng.uniform(-0.3, 0.3, size=n)], axis=1)
    hsv = rgb_to_hsv(batch.astype(np.float64))
    noise = np.asarray(noise).reshape(batch.shape[0], 3)
    hsv[:, 0] = (hsv[:, 0] + noise[:, 0, None, None]) % 1.0
    hsv[:, 1] = np.clip(hsv[:, 1] + noise[:, 1, None, None], 0.0, 1.0)
    hsv[:, 2] = np.clip(hsv[:, 2] + noise[:, 2, None, None], 0.0, 1.0)
    out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0).astype(batch.dtype)
    return _debatch(out, squeeze)


def hard_augment(o: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Dispatch on cfg.hard_kind. Does not include the shift that training's
    hard views receive on top (see apply_strategy)."""
    if cfg.hard_kind == "overlay":
        return random_overlay(o, cfg.alpha, cfg.source, rng)
    if cfg.hard_kind == "random_conv":
        return random_conv(o, rng)
    if cfg.hard_kind == "cutout_color":
        return cutout_color(o, rng)
    if cfg.hard_kind == "color_jitter":
        return color_jitter(o, rng)
    raise ConfigurationError(f"unknown hard augmentation '{cfg.hard_kind}'")


def apply_strategy(o_batch: np.ndarray, cfg: AugmentConfig,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Produce the (online, target) view pair for one batch.

    Hard views are random_shift of the hard-augmented composite; soft views
    are random_shift of the raw observation. H-S: (hard, soft); H-N:
    (hard, raw); H-H: (hard, hard) with independent draws; S-H: (soft, hard).
    """
    def hard():
        return random_shift(hard_augment(o_batch, cfg, rng), cfg.pad, rng)

    def soft():
        return random_shift(o_batch, cfg.pad, rng)

    if cfg.strategy == "H-S":
        return hard(), soft()
    if cfg.strategy == "H-N":
        return hard(), o_batch.copy()
    if cfg.strategy == "H-H":
        return hard(), hard()
    if cfg.strategy == "S-H":
        return soft(), hard()
    raise ConfigurationError(f"unknown strategy '{cfg.strategy}'")

"""Parameterized layers and the named networks: convolutional encoder, GRU
cell, MLPs, reconstruction decoder (baseline mode), reward head, inverse
dynamics head, and bilinear similarity heads.

Networks are plain functions over a params mapping (local name -> Tensor), so
the same forward code serves the online encoder, its EMA target copy, and
detached (frozen) views. Initialization is uniform in +-sqrt(1/fan_in) with
zero biases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigurationError

Params = Mapping[str, Tensor]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    # He-style gain: variance 2/fan_in keeps activations from collapsing
    # through the ReLU stacks (plain 1/fan_in uniform measurably stalls the
    # contrastive losses at the uniform-softmax plateau)
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def register_linear(store: ParamStore, name: str, in_dim: int, out_dim: int,
                    rng: np.random.Generator, dtype=np.float32) -> None:
    store.register(f"{name}.w", uniform_init(rng, (in_dim, out_dim), in_dim, dtype))
    store.register(f"{name}.b", np.zeros(out_dim, dtype=dtype))


def linear(params: Params, name: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def register_conv(store: ParamStore, name: str, cin: int, cout: int, kernel: int,
                  rng: np.random.Generator, dtype=np.float32) -> None:
    fan_in = cin * kernel * kernel
    store.register(f"{name}.w", uniform_init(rng, (cout, cin, kernel, kernel), fan_in, dtype))
    store.register(f"{name}.b", np.zeros(cout, dtype=dtype))


def register_mlp(store: ParamStore, name: str, in_dim: int, hidden: int,
                 out_dim: int, n_hidden: int, rng: np.random.Generator,
                 dtype=np.float32) -> None:
    """n_hidden hidden layers of width `hidden`, then a linear output layer."""
    d = in_dim
    for i in range(n_hidden):
        register_linear(store, f"{name}.h{i}", d, hidden, rng, dtype)
        d = hidden
    register_linear(store, f"{name}.out", d, out_dim, rng, dtype)


def mlp_forward(params: Params, name: str, x: Tensor, n_hidden: int) -> Tensor:
    h = x
    for i in range(n_hidden):
        h = ad.relu(linear(params, f"{name}.h{i}", h))
    return linear(params, f"{name}.out", h)


def detach_params(params: Params) -> Dict[str, Tensor]:
    """Gradient-blocked view of a parameter mapping (weights frozen)."""
    return {k: ad.stop_gradient(v) for k, v in params.items()}


# --- encoder -----------------------------------------------------------------

@dataclass(frozen=True)
class EncoderSpec:
    in_shape: tuple  # (C, H, W)
    channels: tuple  # output channels per conv layer
    kernel: int
    stride: int
    embed_dim: int

    @property
    def conv_out_shape(self) -> tuple:
        c, h, w = self.in_shape
        pad = self.kernel // 2
        for cout in self.channels:
            h = (h + 2 * pad - self.kernel) // self.stride + 1
            w = (w + 2 * pad - self.kernel) // self.stride + 1
            c = cout
        return (c, h, w)

    @property
    def conv_out_dim(self) -> int:
        c, h, w = self.conv_out_shape
        return c * h * w


def init_encoder(store: ParamStore, prefix: str, spec: EncoderSpec,
                 rng: np.random.Generator, dtype=np.float32) -> None:
    cin = spec.in_shape[0]
    for i, cout in enumerate(spec.channels):
        register_conv(store, f"{prefix}conv{i}", cin, cout, spec.kernel, rng, dtype)
        cin = cout
    register_linear(store, f"{prefix}fc", spec.conv_out_dim, spec.embed_dim, rng, dtype)


def encoder_forward(params: Params, obs: Tensor, spec: EncoderSpec) -> Tensor:
    """Image batch (B, C, H, W) in [0, 1] -> embeddings (B, embed_dim).

    Inputs are centered to [-0.5, 0.5] so near-gray backgrounds contribute
    zero activation and sprite contrast propagates through the ReLU stack.
    """
    if obs.ndim != 4 or obs.shape[1:] != spec.in_shape:
        raise ConfigurationError(
            f"encoder: observation shape {obs.shape} does not match {('B',) + spec.in_shape}")
    pad = spec.kernel // 2
    h = ad.sub(obs, ad.as_tensor(0.5, like=obs))
    for i in range(len(spec.channels)):
        w = params[f"conv{i}.w"]
        b = params[f"conv{i}.b"]
        h = ad.conv2d(h, w, stride=spec.stride, padding=pad)
        h = ad.relu(ad.add(h, ad.reshape(b, (1, b.shape[0], 1, 1))))
    flat = ad.reshape(h, (obs.shape[0], spec.conv_out_dim))
    return linear(params, "fc", flat)


# --- GRU cell ----------------------------------------------------------------

def init_gru(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
             rng: np.random.Generator, dtype=np.float32) -> None:
    for gate in ("z", "r", "c"):
        store.register(f"{prefix}w{gate}", uniform_init(rng, (input_dim, hidden_dim), input_dim, dtype))
        store.register(f"{prefix}u{gate}", uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim, dtype))
        store.register(f"{prefix}b{gate}", np.zeros(hidden_dim, dtype=dtype))


def gru_step(params: Params, h_prev: Tensor, x: Tensor) -> Tensor:
    """Gate convention: z, r use sigmoid; candidate uses tanh on (x, r*h).

    With all-zero parameters the update gate is 0.5, giving h' = 0.5 * h_prev.
    """
    if h_prev.shape[-1] != params["uz"].shape[0] or x.shape[-1] != params["wz"].shape[0]:
        raise ConfigurationError(
            f"gru_step: got h {h_prev.shape}, x {x.shape}; expected hidden "
            f"{params['uz'].shape[0]}, input {params['wz'].shape[0]}")
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params["wz"]), ad.matmul(h_prev, params["uz"])), params["bz"]))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params["wr"]), ad.matmul(h_prev, params["ur"])), params["br"]))
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x, params["wc"]),
                                 ad.matmul(ad.mul(r, h_prev), params["uc"])), params["bc"]))
    one_minus_z = ad.sub(ad.as_tensor(1.0, like=z), z)
    return ad.add(ad.mul(one_minus_z, h_prev), ad.mul(z, cand))


# --- bilinear similarity heads -------------------------------------------------

def init_bilinear(store: ParamStore, name: str, query_dim: int, key_dim: int,
                  rng: np.random.Generator, dtype=np.float32) -> None:
    store.register(name, uniform_init(rng, (query_dim, key_dim), query_dim, dtype))


def bilinear_scores(queries: Tensor, keys: Tensor, w: Tensor) -> Tensor:
    """scores[i, j] = q_i^T W k_j over all pairs; shape (N, N)."""
    if queries.shape[1] != w.shape[0] or keys.shape[1] != w.shape[1]:
        raise ConfigurationError(
            f"bilinear_scores: queries {queries.shape}, keys {keys.shape} "
            f"incompatible with W {w.shape}")
    return ad.matmul(ad.matmul(queries, w), ad.transpose(keys))


# --- inverse dynamics head ------------------------------------------------------

def init_rsid(store: ParamStore, prefix: str, state_dim: int, hidden: int,
              action_dim: int, rng: np.random.Generator, n_hidden: int = 3,
              dtype=np.float32) -> None:
    register_mlp(store, f"{prefix}mlp", 2 * state_dim, hidden, action_dim, n_hidden, rng, dtype)


def rsid_forward(params: Params, x_t: Tensor, x_next: Tensor, n_hidden: int = 3) -> Tensor:
    """Predict the executed action from two consecutive model states."""
    if x_t.shape != x_next.shape:
        raise ConfigurationError(
            f"rsid_forward: state shapes differ: {x_t.shape} vs {x_next.shape}")
    return mlp_forward(params, "mlp", ad.concat([x_t, x_next], axis=1), n_hidden)


# --- decoder (baseline mode only) ----------------------------------------------

@dataclass(frozen=True)
class DecoderSpec:
    out_shape: tuple  # (C, H, W)
    channels: tuple   # deconv input channels, deepest first
    state_dim: int

    @property
    def base_hw(self) -> int:
        # each transposed conv doubles spatial size (kernel 4, stride 2, pad 1)
        return self.out_shape[1] // (2 ** len(self.channels))


def init_decoder(store: ParamStore, prefix: str, spec: DecoderSpec,
                 rng: np.random.Generator, dtype=np.float32) -> None:
    c0 = spec.channels[0]
    base = spec.base_hw
    register_linear(store, f"{prefix}fc", spec.state_dim, c0 * base * base, rng, dtype)
    chans = list(spec.channels) + [spec.out_shape[0]]
    for i in range(len(spec.channels)):
        cin, cout = chans[i], chans[i + 1]
        fan_in = cin * 16
        store.register(f"{prefix}deconv{i}.w",
                       uniform_init(rng, (cin, cout, 4, 4), fan_in, dtype))
        store.register(f"{prefix}deconv{i}.b", np.zeros(cout, dtype=dtype))


def decoder_forward(params: Params, state: Tensor, spec: DecoderSpec) -> Tensor:
    """Model state batch (B, state_dim) -> image mean (B, C, H, W)."""
    b = state.shape[0]
    c0 = spec.channels[0]
    base = spec.base_hw
    h = ad.relu(linear(params, "fc", state))
    h = ad.reshape(h, (b, c0, base, base))
    n = len(spec.channels)
    for i in range(n):
        w = params[f"deconv{i}.w"]
        bias = params[f"deconv{i}.b"]
        h = ad.transpose_conv2d(h, w, stride=2, padding=1)
        h = ad.add(h, ad.reshape(bias, (1, bias.shape[0], 1, 1)))
        if i < n - 1:
            h = ad.relu(h)
    return h

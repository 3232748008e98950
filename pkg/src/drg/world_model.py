"""RSSM latent dynamics: deterministic recurrence, stochastic prior/posterior,
reward head, sequence inference, one-step dream states, and balanced KL.

Model state x = [h; s]. The stochastic state is a diagonal Gaussian with
std = softplus(raw) + MIN_STD. Dream states sample s from the prior p(s|h)
by default (no observation input); conditioning the dream on the posterior
is selectable via `dream_from`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .autodiff import ParamStore, Tensor
from .errors import ConfigurationError, NumericError, UsageError

MIN_STD = 0.1


@dataclass(frozen=True)
class RSSMSpec:
    deter_dim: int
    stoch_dim: int
    embed_dim: int
    action_dim: int
    hidden_dim: int


@dataclass
class GaussianParams:
    mean: Tensor
    std: Tensor


@dataclass
class LatentState:
    h: Tensor
    s: Tensor
    dist: GaussianParams

    @property
    def x(self) -> Tensor:
        return ad.concat([self.h, self.s], axis=1)


def initial_state(batch: int, spec: RSSMSpec, dtype=np.float32) -> LatentState:
    zeros_h = Tensor(np.zeros((batch, spec.deter_dim), dtype=dtype))
    zeros_s = Tensor(np.zeros((batch, spec.stoch_dim), dtype=dtype))
    ones = Tensor(np.ones((batch, spec.stoch_dim), dtype=dtype))
    return LatentState(zeros_h, zeros_s, GaussianParams(zeros_s, ones))


def init_rssm(store: ParamStore, prefix: str, spec: RSSMSpec,
              rng: np.random.Generator, dtype=np.float32) -> None:
    nets.register_linear(store, f"{prefix}inp", spec.stoch_dim + spec.action_dim,
                         spec.hidden_dim, rng, dtype)
    nets.init_gru(store, f"{prefix}gru.", spec.hidden_dim, spec.deter_dim, rng, dtype)
    nets.register_mlp(store, f"{prefix}prior", spec.deter_dim, spec.hidden_dim,
                      2 * spec.stoch_dim, 1, rng, dtype)
    nets.register_mlp(store, f"{prefix}post", spec.deter_dim + spec.embed_dim,
                      spec.hidden_dim, 2 * spec.stoch_dim, 1, rng, dtype)


def _gaussian_head(params, name: str, inp: Tensor, stoch_dim: int) -> GaussianParams:
    out = nets.mlp_forward(params, name, inp, n_hidden=1)
    mean = out[:, :stoch_dim]
    raw = out[:, stoch_dim:]
    std = ad.add(ad.softplus(raw), ad.as_tensor(MIN_STD, like=raw))
    return GaussianParams(mean, std)


def _sample(dist: GaussianParams, eps: Optional[np.ndarray]) -> Tensor:
    """Reparameterized draw; eps=None means the mean (deterministic mode)."""
    if eps is None:
        return dist.mean
    return ad.add(dist.mean, ad.mul(dist.std, ad.as_tensor(eps, like=dist.std)))


def _recurrence(params, prev: LatentState, action: Tensor) -> Tensor:
    feat = ad.relu(nets.linear(params, "inp", ad.concat([prev.s, action], axis=1)))
    return nets.gru_step({k[4:]: v for k, v in params.items() if k.startswith("gru.")},
                         prev.h, feat)


def observe_step(params, prev: LatentState, action: Tensor, z: Tensor,
                 spec: RSSMSpec, eps: Optional[np.ndarray] = None
                 ) -> Tuple[LatentState, GaussianParams]:
    """One filtering step: h from the shared recurrence, s from the posterior
    q(s | h, z). Returns the posterior state and the prior's parameters."""
    if action.shape[-1] != spec.action_dim:
        raise ConfigurationError(
            f"observe_step: action dim {action.shape[-1]} != {spec.action_dim}")
    if z.shape[-1] != spec.embed_dim:
        raise ConfigurationError(
            f"observe_step: embedding dim {z.shape[-1]} != {spec.embed_dim}")
    h = _recurrence(params, prev, action)
    prior = _gaussian_head(params, "prior", h, spec.stoch_dim)
    post = _gaussian_head(params, "post", ad.concat([h, z], axis=1), spec.stoch_dim)
    s = _sample(post, eps)
    return LatentState(h, s, post), prior


def imagine_step(params, prev: LatentState, action: Tensor, spec: RSSMSpec,
                 eps: Optional[np.ndarray] = None) -> LatentState:
    """One prediction step: identical recurrence, s sampled from the prior."""
    h = _recurrence(params, prev, action)
    prior = _gaussian_head(params, "prior", h, spec.stoch_dim)
    s = _sample(prior, eps)
    return LatentState(h, s, prior)


def observe_sequence(params, embeds: Sequence[Tensor], actions: Sequence[Tensor],
                     spec: RSSMSpec, rng: Optional[np.random.Generator] = None,
                     dtype=np.float32
                     ) -> Tuple[List[LatentState], List[GaussianParams]]:
    """Filter a length-L sequence from zero initial state.

    embeds[t] is the encoder output for o_t (shape (B, E)); actions[t] is a_t.
    Step t is driven by a_{t-1}, with a_0 = 0. Returns per-step posterior
    states and prior parameters. rng=None runs with eps = 0 (deterministic).
    """
    length = len(embeds)
    if length < 2:
        raise UsageError(f"observe_sequence: need sequence length >= 2, got {length}")
    if len(actions) != length:
        raise UsageError(
            f"observe_sequence: {length} embeddings vs {len(actions)} actions")
    batch = embeds[0].shape[0]
    state = initial_state(batch, spec, dtype=dtype)
    zero_action = Tensor(np.zeros((batch, spec.action_dim), dtype=dtype))
    posts: List[LatentState] = []
    priors: List[GaussianParams] = []
    for t in range(length):
        action = zero_action if t == 0 else actions[t - 1]
        eps = rng.standard_normal((batch, spec.stoch_dim)).astype(dtype) if rng is not None else None
        state, prior = observe_step(params, state, action, embeds[t], spec, eps=eps)
        posts.append(state)
        priors.append(prior)
    return posts, priors


def dream_states(posts: Sequence[LatentState], priors: Sequence[GaussianParams],
                 rng: Optional[np.random.Generator], dream_from: str = "prior",
                 dtype=np.float32) -> List[Tensor]:
    """Per-step dream model states [h_t; s_t] for the contrastive/inverse-dynamics
    heads. `prior` draws s from p(s|h) (one-step prediction, the default);
    `posterior` reuses the filtered sample."""
    if dream_from == "posterior":
        return [st.x for st in posts]
    if dream_from != "prior":
        raise ConfigurationError(f"dream_states: unknown dream_from '{dream_from}'")
    out = []
    for st, prior in zip(posts, priors):
        shape = st.s.shape
        eps = rng.standard_normal(shape).astype(dtype) if rng is not None else None
        s = _sample(prior, eps)
        out.append(ad.concat([st.h, s], axis=1))
    return out


# --- reward head ---------------------------------------------------------------

def init_reward_head(store: ParamStore, prefix: str, state_dim: int, hidden: int,
                     rng: np.random.Generator, dtype=np.float32) -> None:
    nets.register_mlp(store, f"{prefix}mlp", state_dim, hidden, 1, 2, rng, dtype)


def predict_reward(params, x: Tensor) -> Tensor:
    """Mean of a unit-variance Gaussian over the reward; shape (B,)."""
    out = nets.mlp_forward(params, "mlp", x, n_hidden=2)
    return ad.reshape(out, (x.shape[0],))


# --- KL -------------------------------------------------------------------------

def gaussian_kl(post: GaussianParams, prior: GaussianParams) -> Tensor:
    """Closed-form KL(post || prior) for diagonal Gaussians, summed over dims,
    averaged over the batch; returns a scalar tensor."""
    if np.any(post.std.data <= 0) or np.any(prior.std.data <= 0):
        raise NumericError("gaussian_kl: non-positive std")
    log_ratio = ad.sub(ad.log(prior.std), ad.log(post.std))
    var_ratio = ad.div(ad.mul(post.std, post.std), ad.mul(prior.std, prior.std))
    delta = ad.sub(post.mean, prior.mean)
    mahal = ad.div(ad.mul(delta, delta), ad.mul(prior.std, prior.std))
    half = ad.as_tensor(0.5, like=post.mean)
    per_dim = ad.add(log_ratio, ad.sub(ad.mul(half, ad.add(var_ratio, mahal)), half))
    return ad.mean(ad.sum_(per_dim, axis=1))


def _detach_gaussian(g: GaussianParams) -> GaussianParams:
    return GaussianParams(ad.stop_gradient(g.mean), ad.stop_gradient(g.std))


def kl_balanced(post: GaussianParams, prior: GaussianParams, balance: float = 0.8) -> Tensor:
    """KL with balanced gradient routing.

    Value equals the plain closed-form KL for any balance; gradients are
    composed as balance * KL(sg(post) || prior) + (1-balance) * KL(post || sg(prior)).
    """
    if balance >= 1.0:
        return gaussian_kl(_detach_gaussian(post), prior)
    if balance <= 0.0:
        return gaussian_kl(post, _detach_gaussian(prior))
    lhs = gaussian_kl(_detach_gaussian(post), prior)
    rhs = gaussian_kl(post, _detach_gaussian(prior))
    b = ad.as_tensor(balance, like=lhs)
    one_minus = ad.as_tensor(1.0 - balance, like=lhs)
    return ad.add(ad.mul(b, lhs), ad.mul(one_minus, rhs))

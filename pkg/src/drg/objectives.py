"""Loss terms for world-model training.

Contrastive terms are K-way softmax classification losses over bilinear
scores (minimizing them maximizes the corresponding log-ratio objective).
The negative pool flattens batch and time into N = B*L samples. The total
combines enabled components with all weights 1.0 except the KL scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, UsageError
from .world_model import GaussianParams, kl_balanced


@dataclass
class LossReport:
    total: float
    components: Dict[str, float] = field(default_factory=dict)
    kl_scale: float = 0.1

    def recompute_total(self) -> float:
        tot = 0.0
        for name, value in self.components.items():
            tot += value * (self.kl_scale if name == "KL" else 1.0)
        return tot


def info_nce(queries: Tensor, keys: Tensor, head_w: Tensor) -> Tensor:
    """Mean cross-entropy of row-wise softmax over q_i^T W k_j, label i.

    Row i's positive is key i; the other N-1 keys are negatives. N=1 gives 0.
    """
    from .networks import bilinear_scores

    n = queries.shape[0]
    if keys.shape[0] != n:
        raise UsageError(f"info_nce: {n} queries vs {keys.shape[0]} keys")
    scores = bilinear_scores(queries, keys, head_w)
    losses = ad.softmax_cross_entropy(scores, np.arange(n))
    return ad.mean(losses)


def reality_reality_loss(z_target: Tensor, z_online: Tensor, head_w: Tensor) -> Tensor:
    """Contrast target-encoder (soft view) queries against online-encoder
    (hard view) keys. Queries must already be gradient-free (target encoder
    runs under no_grad); keys carry gradients into the online encoder."""
    if z_target.shape[0] < 2:
        import warnings
        warnings.warn("reality_reality_loss degenerates to 0 with fewer than 2 samples")
    return info_nce(z_target, z_online, head_w)


def dream_reality_loss(z_online: Tensor, dreams: Sequence[Tensor], head_w: Tensor,
                       batch: int) -> Tensor:
    """Contrast encoder realities (queries) against dream model states (keys).

    z_online is the flattened (B*L, E) embedding batch in time-major order;
    dreams is the per-step list of (B, X) dream states from the same pass.
    """
    expected = len(dreams) * batch
    if z_online.shape[0] != expected:
        raise UsageError(
            f"dream_reality_loss: {z_online.shape[0]} realities vs "
            f"{len(dreams)} steps x {batch} batch")
    keys = ad.concat(list(dreams), axis=0)
    return info_nce(z_online, keys, head_w)


def rsid_loss(dreams: Sequence[Tensor], actions: Sequence[Tensor], rsid_params,
              n_hidden: int = 3) -> Tensor:
    """MSE between inferred and executed actions over consecutive dream pairs.

    Pair (x_t, x_{t+1}) predicts a_t, the action that drove that transition.
    """
    from .networks import rsid_forward

    length = len(dreams)
    if length < 2:
        raise UsageError(f"rsid_loss: need >= 2 states, got {length}")
    if len(actions) != length:
        raise UsageError(f"rsid_loss: {length} states vs {len(actions)} actions")
    x_t = ad.concat(list(dreams[:-1]), axis=0)
    x_next = ad.concat(list(dreams[1:]), axis=0)
    a_hat = rsid_forward(rsid_params, x_t, x_next, n_hidden=n_hidden)
    a_true = ad.concat(list(actions[:-1]), axis=0)
    diff = ad.sub(a_hat, a_true)
    return ad.mean(ad.mul(diff, diff))


def reward_loss(predicted: Tensor, observed: Tensor) -> Tensor:
    """Mean squared error of the reward head (unit-variance Gaussian mean)."""
    diff = ad.sub(predicted, observed)
    return ad.mean(ad.mul(diff, diff))


def reconstruction_loss(decoded: Tensor, observations: Tensor) -> Tensor:
    """Pixelwise MSE for the baseline's image reconstruction term."""
    if decoded.shape != observations.shape:
        raise ConfigurationError(
            f"reconstruction_loss: decoded {decoded.shape} vs observations {observations.shape}")
    diff = ad.sub(decoded, observations)
    return ad.mean(ad.mul(diff, diff))


def kl_loss(posts: Sequence[GaussianParams], priors: Sequence[GaussianParams],
            balance: float) -> Tensor:
    """Balanced KL averaged over timesteps and batch.

    Steps share the batch size, so concatenating once and averaging equals the
    mean of per-step means while building a single KL subgraph.
    """
    if len(posts) == 1:
        return kl_balanced(posts[0], priors[0], balance)
    post_all = GaussianParams(ad.concat([p.mean for p in posts], axis=0),
                              ad.concat([p.std for p in posts], axis=0))
    prior_all = GaussianParams(ad.concat([p.mean for p in priors], axis=0),
                               ad.concat([p.std for p in priors], axis=0))
    return kl_balanced(post_all, prior_all, balance)


@dataclass(frozen=True)
class LossSwitches:
    reality_reality: bool = True
    dream_reality: bool = True
    rsid: bool = True

    def validate(self, mode: str) -> None:
        if mode == "drg" and not (self.reality_reality or self.dream_reality or self.rsid):
            raise ConfigurationError(
                "all self-supervised terms disabled and no decoder: "
                "the world model would be untrainable")


def combine_losses(components: Dict[str, Tensor], kl_scale: float) -> Tensor:
    """total = sum of components, with the KL term scaled by kl_scale."""
    total = None
    for name, tensor in components.items():
        term = ad.mul(tensor, ad.as_tensor(kl_scale, like=tensor)) if name == "KL" else tensor
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ConfigurationError("no loss components enabled")
    return total


def make_report(total: Tensor, components: Dict[str, Tensor], kl_scale: float) -> LossReport:
    return LossReport(
        total=float(total.data),
        components={k: float(v.data) for k, v in components.items()},
        kl_scale=kl_scale,
    )

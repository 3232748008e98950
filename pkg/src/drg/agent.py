"""Dreamer-style actor-critic trained on imagined rollouts.

The actor is a tanh-squashed diagonal Gaussian over actions; its loss is the
negated mean lambda-return, differentiated through rewards and dynamics with
critic and world-model weights gradient-blocked. The critic regresses to
stop-gradient lambda-return targets. Discount 0.99 and lambda 0.95 follow the
usual Dreamer convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import networks as nets
from . import world_model as wm
from .autodiff import ParamStore, Tensor
from .errors import UsageError

ACTOR_MIN_STD = 0.01


def init_actor(store: ParamStore, prefix: str, state_dim: int, hidden: int,
               action_dim: int, rng: np.random.Generator, dtype=np.float32) -> None:
    nets.register_mlp(store, f"{prefix}mlp", state_dim, hidden, 2 * action_dim, 2, rng, dtype)


def init_critic(store: ParamStore, prefix: str, state_dim: int, hidden: int,
                rng: np.random.Generator, dtype=np.float32) -> None:
    nets.register_mlp(store, f"{prefix}mlp", state_dim, hidden, 1, 2, rng, dtype)


def actor_dist(params, x: Tensor, action_dim: int) -> Tuple[Tensor, Tensor]:
    """Pre-squash Gaussian parameters (mean, std) from the model state."""
    out = nets.mlp_forward(params, "mlp", x, n_hidden=2)
    mean = out[:, :action_dim]
    std = ad.add(ad.softplus(out[:, action_dim:]), ad.as_tensor(ACTOR_MIN_STD, like=out))
    return mean, std


def sample_action(params, x: Tensor, action_dim: int,
                  eps: Optional[np.ndarray] = None,
                  extra_noise: Optional[np.ndarray] = None) -> Tensor:
    """tanh(mean + std*eps [+ extra_noise]); eps=None takes the mean action.

    The tanh squash keeps sampled actions strictly inside (-1, 1).
    """
    mean, std = actor_dist(params, x, action_dim)
    pre = mean
    if eps is not None:
        pre = ad.add(pre, ad.mul(std, ad.as_tensor(eps, like=std)))
    if extra_noise is not None:
        pre = ad.add(pre, ad.as_tensor(extra_noise, like=pre))
    return ad.tanh(pre)


def critic_value(params, x: Tensor) -> Tensor:
    out = nets.mlp_forward(params, "mlp", x, n_hidden=2)
    return ad.reshape(out, (x.shape[0],))


@dataclass
class Rollout:
    states: List[Tensor]   # x_0 .. x_H (H+1 model states, x_0 = start)
    actions: List[Tensor]  # a_0 .. a_{H-1}
    rewards: List[Tensor]  # r_1 .. r_H, reward on arriving at x_{k+1}


def imagine_rollout(start: wm.LatentState, actor_params, world_params,
                    reward_params, spec: wm.RSSMSpec, horizon: int,
                    rng: Optional[np.random.Generator] = None,
                    dtype=np.float32) -> Rollout:
    """Roll the actor through the learned dynamics for `horizon` steps.

    World-model and reward parameters should be passed as detached views so
    gradients flow only through states and actions into the actor.
    """
    if horizon < 1:
        raise UsageError(f"imagine_rollout: horizon must be >= 1, got {horizon}")
    batch = start.h.shape[0]
    state = start
    states = [start.x]
    actions: List[Tensor] = []
    rewards: List[Tensor] = []
    for _ in range(horizon):
        a_eps = rng.standard_normal((batch, spec.action_dim)).astype(dtype) if rng is not None else None
        action = sample_action(actor_params, states[-1], spec.action_dim, eps=a_eps)
        s_eps = rng.standard_normal((batch, spec.stoch_dim)).astype(dtype) if rng is not None else None
        state = wm.imagine_step(world_params, state, action, spec, eps=s_eps)
        x = state.x
        states.append(x)
        actions.append(action)
        rewards.append(wm.predict_reward(reward_params, x))
    return Rollout(states, actions, rewards)


def lambda_return(rewards: Sequence[Tensor], values: Sequence[Tensor],
                  gamma: float, lam: float) -> List[Tensor]:
    """V_t = r_t + gamma*((1-lam)*v_{t+1} + lam*V_{t+1}), V_H = r_H + gamma*v_{H+1}.

    rewards has length H; values has length H+1 (the last is the bootstrap).
    Returns the H targets as tensors (differentiable through both inputs).
    """
    h = len(rewards)
    if len(values) != h + 1:
        raise UsageError(
            f"lambda_return: {h} rewards need {h + 1} values, got {len(values)}")
    targets: List[Optional[Tensor]] = [None] * h
    last = ad.add(rewards[h - 1], ad.mul(values[h], ad.as_tensor(gamma, like=values[h])))
    targets[h - 1] = last
    for t in range(h - 2, -1, -1):
        mix = ad.add(
            ad.mul(values[t + 1], ad.as_tensor(gamma * (1.0 - lam), like=values[t + 1])),
            ad.mul(targets[t + 1], ad.as_tensor(gamma * lam, like=targets[t + 1])))
        targets[t] = ad.add(rewards[t], mix)
    return targets  # type: ignore[return-value]


def rollout_targets(rollout: Rollout, critic_params, gamma: float, lam: float
                    ) -> List[Tensor]:
    """Lambda-return targets for states x_0..x_{H-1}; critic weights must be
    passed detached so value gradients flow into states, not the critic.

    values[k] = v(x_k); rewards[k] arrives at x_{k+1}, so the recursion's
    v_{t+1} is the value of the state where r_t was received, and v(x_H)
    bootstraps the tail.
    """
    values = [critic_value(critic_params, x) for x in rollout.states]
    return lambda_return(rollout.rewards, values, gamma, lam)


def actor_loss(targets: Sequence[Tensor]) -> Tensor:
    """Negated mean lambda-return over all imagined steps."""
    stacked = ad.concat(list(targets), axis=0)
    return ad.neg(ad.mean(stacked))


def critic_loss(rollout: Rollout, critic_params, targets: Sequence[Tensor]) -> Tensor:
    """MSE between v(x_t) and stop-gradient targets, t = 0..H-1.

    States are detached so no gradient reaches the actor or dynamics.
    """
    h = len(targets)
    xs = ad.concat([ad.stop_gradient(x) for x in rollout.states[:h]], axis=0)
    v = critic_value(critic_params, xs)
    tgt = ad.stop_gradient(ad.concat(list(targets), axis=0))
    diff = ad.sub(v, tgt)
    return ad.mean(ad.mul(diff, diff))


# --- environment-time action selection -------------------------------------------

@dataclass
class AgentCarry:
    state: wm.LatentState
    prev_action: np.ndarray


def init_carry(spec: wm.RSSMSpec, dtype=np.float32) -> AgentCarry:
    return AgentCarry(wm.initial_state(1, spec, dtype=dtype),
                      np.zeros((1, spec.action_dim), dtype=dtype))


def act(obs: np.ndarray, carry: AgentCarry, encoder_params, world_params,
        actor_params, enc_spec, spec: wm.RSSMSpec, explore: bool,
        rng: Optional[np.random.Generator] = None,
        explore_noise: float = 0.3, dtype=np.float32) -> Tuple[np.ndarray, AgentCarry]:
    """Encode a raw observation, filter the carry, and pick an action.

    Eval mode (explore=False) uses the posterior mean state and mean action,
    making the whole step a deterministic function of (params, obs, carry).
    Exploration samples the stochastic state and adds Gaussian noise
    (sigma=explore_noise) to the pre-squash action.
    """
    with ad.no_grad():
        o = Tensor(np.asarray(obs, dtype=dtype)[None])
        z = nets.encoder_forward(encoder_params, o, enc_spec)
        eps = None
        if explore and rng is not None:
            eps = rng.standard_normal((1, spec.stoch_dim)).astype(dtype)
        state, _ = wm.observe_step(world_params, carry.state,
                                   Tensor(carry.prev_action), z, spec, eps=eps)
        a_eps = None
        noise = None
        if explore and rng is not None:
            a_eps = rng.standard_normal((1, spec.action_dim)).astype(dtype)
            noise = (explore_noise * rng.standard_normal((1, spec.action_dim))).astype(dtype)
        action = sample_action(actor_params, state.x, spec.action_dim,
                               eps=a_eps, extra_noise=noise)
    action_np = np.asarray(action.data[0], dtype=np.float64)
    return action_np, AgentCarry(state, action.data.astype(dtype))

"""Training orchestration: collect -> train world model -> train actor/critic
-> interact, plus evaluation, embedding export, ablation sweeps, metrics, and
checkpoint management.

Layout under the run directory:
    config.resolved   resolved key=value config
    metrics.jsonl     append-only metrics stream, one JSON record per line
    ckpt_<step>.drg   periodic checkpoints (binary container)
    ckpt_final.drg    written on successful completion
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import agent as agent_mod
from . import augment as aug
from . import autodiff as ad
from . import networks as nets
from . import objectives as obj
from . import world_model as wm
from .autodiff import ParamStore, Tensor
from .config import RunConfig, save_config, load_config
from .envs import (DistractorSetting, ReplayBuffer, make_env)
from .errors import (CheckpointLoadError, ConfigurationError, NumericError)

DATA_DIR_ENV = "DRG_DATA_DIR"


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "drg_runs"))


# --- model assembly -----------------------------------------------------------------

@dataclass
class Models:
    cfg: RunConfig
    dtype: type
    enc_spec: nets.EncoderSpec
    rssm_spec: wm.RSSMSpec
    dec_spec: Optional[nets.DecoderSpec]
    switches: obj.LossSwitches
    world: ParamStore
    actor: ParamStore
    critic: ParamStore

    @property
    def state_dim(self) -> int:
        return self.rssm_spec.deter_dim + self.rssm_spec.stoch_dim

    def all_arrays(self) -> Dict[str, np.ndarray]:
        """Every named parameter, with EMA shadows under the target_encoder prefix."""
        out: Dict[str, np.ndarray] = {}
        for name, t in self.world.entries.items():
            out[name] = t.data
        for name, t in self.world.ema_shadow.items():
            out["target_encoder." + name[len("encoder."):]] = t.data
        for store in (self.actor, self.critic):
            for name, t in store.entries.items():
                out[name] = t.data
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], source: str = "checkpoint") -> None:
        for name, arr in arrays.items():
            if name.startswith("target_encoder."):
                key = "encoder." + name[len("target_encoder."):]
                table = self.world.ema_shadow
                if key not in table:
                    raise CheckpointLoadError(f"{source}: unexpected entry '{name}'")
            else:
                key = name
                if name.startswith("actor."):
                    table = self.actor.entries
                elif name.startswith("critic."):
                    table = self.critic.entries
                else:
                    table = self.world.entries
                if key not in table:
                    raise CheckpointLoadError(f"{source}: unexpected entry '{name}'")
            target = table[key]
            if tuple(target.shape) != tuple(arr.shape):
                raise CheckpointLoadError(
                    f"{source}: entry '{name}' has shape {tuple(arr.shape)}, "
                    f"expected {tuple(target.shape)}")
            target.data[...] = arr.astype(target.data.dtype)
        missing = set(self.all_arrays()) - set(arrays)
        if missing:
            raise CheckpointLoadError(
                f"{source}: missing entry '{sorted(missing)[0]}'")


def build_models(cfg: RunConfig, action_dim: int, obs_shape: Tuple[int, int, int]) -> Models:
    cfg.validate()
    dtype = np.float64 if cfg.train.precision == "f64" else np.float32
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    net = cfg.networks
    enc_spec = nets.EncoderSpec(in_shape=obs_shape, channels=tuple(net.conv_channels),
                                kernel=net.kernel, stride=2, embed_dim=net.embed_dim)
    rssm_spec = wm.RSSMSpec(deter_dim=net.deter_dim, stoch_dim=net.stoch_dim,
                            embed_dim=net.embed_dim, action_dim=action_dim,
                            hidden_dim=net.hidden_dim)
    state_dim = net.deter_dim + net.stoch_dim
    switches = obj.LossSwitches(cfg.loss.reality_reality, cfg.loss.dream_reality, cfg.loss.rsid)
    baseline = cfg.mode == "dreamer_baseline"

    world = ParamStore()
    nets.init_encoder(world, "encoder.", enc_spec, rng, dtype=dtype)
    wm.init_rssm(world, "rssm.", rssm_spec, rng, dtype=dtype)
    wm.init_reward_head(world, "reward.", state_dim, net.hidden_dim, rng, dtype=dtype)
    dec_spec = None
    if baseline:
        dec_spec = nets.DecoderSpec(out_shape=obs_shape,
                                    channels=tuple(reversed(net.conv_channels)),
                                    state_dim=state_dim)
        nets.init_decoder(world, "decoder.", dec_spec, rng, dtype=dtype)
    else:
        if switches.rsid:
            nets.init_rsid(world, "rsid.", state_dim, net.hidden_dim, action_dim, rng,
                           n_hidden=net.rsid_hidden_layers, dtype=dtype)
        if switches.reality_reality:
            nets.init_bilinear(world, "head_E.w", net.embed_dim, net.embed_dim, rng, dtype=dtype)
            world.init_ema(prefix="encoder.")
        if switches.dream_reality:
            nets.init_bilinear(world, "head_RSSM.w", net.embed_dim, state_dim, rng, dtype=dtype)

    actor = ParamStore()
    agent_mod.init_actor(actor, "actor.", state_dim, net.hidden_dim, action_dim, rng, dtype=dtype)
    critic = ParamStore()
    agent_mod.init_critic(critic, "critic.", state_dim, net.hidden_dim, rng, dtype=dtype)
    return Models(cfg, dtype, enc_spec, rssm_spec, dec_spec, switches, world, actor, critic)


def make_augment_config(cfg: RunConfig) -> aug.AugmentConfig:
    a = cfg.augment
    source = aug.DistractorSource(mode=a.source_mode, seed=a.source_seed,
                                  folder=a.source_folder, pool_size=a.source_pool)
    return aug.AugmentConfig(pad=a.pad, hard_kind=a.hard_kind, alpha=a.alpha,
                             strategy=a.strategy, source=source)


def distractor_setting(cfg: RunConfig) -> DistractorSetting:
    d = cfg.env.distractor
    return DistractorSetting(mode=d.mode, seed=d.seed, held_out=d.held_out, folder=d.folder)


def build_env(cfg: RunConfig, setting: Optional[DistractorSetting] = None,
              seed: Optional[int] = None):
    return make_env(cfg.env.name,
                    setting if setting is not None else distractor_setting(cfg),
                    cfg.seed if seed is None else seed,
                    cfg.env.action_repeat, cfg.env.episode_len)


# --- metrics ---------------------------------------------------------------------------

class MetricsWriter:
    """Append-only JSON Lines stream; one self-contained record per line."""

    def __init__(self, path):
        self.path = Path(path)
        self.step = 0
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, kind: str, env_step: int, **fields) -> dict:
        self.step += 1
        record = {"step": self.step, "kind": kind, "env_step": env_step}
        record.update(fields)
        record["wall_time"] = round(time.time(), 3)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()
        return record

    def close(self):
        self._fh.close()


# --- training --------------------------------------------------------------------------

@dataclass
class RunState:
    models: Models
    buffer: ReplayBuffer
    aug_cfg: aug.AugmentConfig
    rng_sample: np.random.Generator
    rng_augment: np.random.Generator
    rng_model: np.random.Generator
    rng_action: np.random.Generator
    last_posts: Optional[List[wm.LatentState]] = None


def _make_state(cfg: RunConfig, models: Models) -> RunState:
    seeds = np.random.SeedSequence([cfg.seed, 0xD47A]).spawn(4)
    return RunState(
        models=models,
        buffer=ReplayBuffer(cfg.train.buffer_capacity),
        aug_cfg=make_augment_config(cfg),
        rng_sample=np.random.default_rng(seeds[0]),
        rng_augment=np.random.default_rng(seeds[1]),
        rng_model=np.random.default_rng(seeds[2]),
        rng_action=np.random.default_rng(seeds[3]),
    )


def _time_major_flat(arr: np.ndarray, dtype) -> np.ndarray:
    """(B, L, ...) -> (L*B, ...) with rows ordered t0 b0, t0 b1, ..."""
    moved = np.moveaxis(arr, 1, 0)
    return np.ascontiguousarray(moved.reshape((-1,) + arr.shape[2:])).astype(dtype, copy=False)


def world_model_update(state: RunState, batch) -> Tuple[obj.LossReport, float]:
    """One gradient step on the world model; returns the loss report and the
    pre-clip gradient norm. Leaves the posterior states on the tape for the
    behavior phase to consume (detached)."""
    cfg = state.models.cfg
    m = state.models
    b, length = batch.obs.shape[:2]
    dtype = m.dtype
    obs_flat = _time_major_flat(batch.obs, dtype)

    if cfg.mode == "drg":
        online_np, target_np = aug.apply_strategy(obs_flat, state.aug_cfg, state.rng_augment)
    else:
        online_np, target_np = obs_flat, obs_flat

    ad.reset_tape()
    m.world.zero_grads()
    z_online = nets.encoder_forward(m.world.view("encoder."), Tensor(online_np, dtype=dtype),
                                    m.enc_spec)
    embeds = [z_online[t * b:(t + 1) * b, :] for t in range(length)]
    actions = [Tensor(np.ascontiguousarray(batch.act[:, t]), dtype=dtype) for t in range(length)]
    posts, priors = wm.observe_sequence(m.world.view("rssm."), embeds, actions, m.rssm_spec,
                                        rng=state.rng_model, dtype=dtype)

    components: Dict[str, Tensor] = {}
    if cfg.mode == "drg":
        if m.switches.reality_reality:
            with ad.no_grad():
                z_target = nets.encoder_forward(m.world.shadow_view("encoder."),
                                                Tensor(target_np, dtype=dtype), m.enc_spec)
            components["E"] = obj.reality_reality_loss(z_target, z_online,
                                                       m.world.entries["head_E.w"])
        if m.switches.dream_reality or m.switches.rsid:
            dreams = wm.dream_states(posts, priors, rng=state.rng_model,
                                     dream_from=cfg.loss.dream_from, dtype=dtype)
            if m.switches.dream_reality:
                components["RSSM"] = obj.dream_reality_loss(
                    z_online, dreams, m.world.entries["head_RSSM.w"], batch=b)
            if m.switches.rsid:
                components["RSID"] = obj.rsid_loss(dreams, actions, m.world.view("rsid."),
                                                   n_hidden=cfg.networks.rsid_hidden_layers)
    else:
        xs_all = ad.concat([st.x for st in posts], axis=0)
        decoded = nets.decoder_forward(m.world.view("decoder."), xs_all, m.dec_spec)
        components["O"] = obj.reconstruction_loss(decoded, Tensor(obs_flat, dtype=dtype))

    # reward r_t is received on arriving at o_{t+1}: pair posts[t+1] with rew[:, t]
    arrival_x = ad.concat([posts[t].x for t in range(1, length)], axis=0)
    r_pred = wm.predict_reward(m.world.view("reward."), arrival_x)
    r_true = _time_major_flat(batch.rew[:, :length - 1, None], dtype).reshape(-1)
    components["R"] = obj.reward_loss(r_pred, Tensor(r_true, dtype=dtype))
    components["KL"] = obj.kl_loss([p.dist for p in posts], priors, cfg.loss.kl_balance)

    total = obj.combine_losses(components, cfg.loss.kl_scale)
    report = obj.make_report(total, components, cfg.loss.kl_scale)
    ad.backward(total)
    grad_norm = ad.clip_grads_(m.world, cfg.train.grad_clip)
    ad.adam_step(m.world, cfg.train.lr_world)
    m.world.zero_grads()
    if m.world.ema_shadow:
        ad.ema_update(m.world, cfg.train.tau_ema)

    state.last_posts = posts  # consumed (detached) by the behavior phase
    return report, grad_norm


def behavior_update(state: RunState) -> Dict[str, float]:
    """Actor then critic updates on imagined rollouts from the latest
    posteriors; world-model parameters stay frozen (detached views)."""
    cfg = state.models.cfg
    m = state.models
    posts = state.last_posts
    dtype = m.dtype
    h0 = np.concatenate([st.h.data for st in posts], axis=0)
    s0 = np.concatenate([st.s.data for st in posts], axis=0)
    start = wm.LatentState(
        Tensor(h0, dtype=dtype), Tensor(s0, dtype=dtype),
        wm.GaussianParams(Tensor(s0, dtype=dtype), Tensor(np.ones_like(s0), dtype=dtype)))

    ad.reset_tape()
    world_frozen = nets.detach_params(m.world.view("rssm."))
    reward_frozen = nets.detach_params(m.world.view("reward."))
    critic_frozen = nets.detach_params(m.critic.view("critic."))

    rollout = agent_mod.imagine_rollout(start, m.actor.view("actor."), world_frozen,
                                        reward_frozen, m.rssm_spec, cfg.train.horizon,
                                        rng=state.rng_model, dtype=dtype)
    targets = agent_mod.rollout_targets(rollout, critic_frozen, cfg.train.gamma, cfg.train.lam)
    a_loss = agent_mod.actor_loss(targets)
    m.actor.zero_grads()
    ad.backward(a_loss)
    actor_norm = ad.clip_grads_(m.actor, cfg.train.grad_clip)
    ad.adam_step(m.actor, cfg.train.lr_actor)
    m.actor.zero_grads()

    c_loss = agent_mod.critic_loss(rollout, m.critic.view("critic."), targets)
    m.critic.zero_grads()
    ad.backward(c_loss)
    critic_norm = ad.clip_grads_(m.critic, cfg.train.grad_clip)
    ad.adam_step(m.critic, cfg.train.lr_critic)
    m.critic.zero_grads()
    ad.reset_tape()
    return {"actor_loss": float(a_loss.data), "critic_loss": float(c_loss.data),
            "grad_norm_actor": actor_norm, "grad_norm_critic": critic_norm}


def run_episode(state: RunState, env, explore: bool, policy: str = "agent",
                store_episode: bool = True,
                rng: Optional[np.random.Generator] = None) -> Tuple[float, int]:
    """One full episode; returns (return, env steps consumed)."""
    cfg = state.models.cfg
    m = state.models
    rng = rng if rng is not None else state.rng_action
    obs = env.reset()
    carry = agent_mod.init_carry(m.rssm_spec, dtype=m.dtype)
    ep_obs: List[np.ndarray] = []
    ep_act: List[np.ndarray] = []
    ep_rew: List[float] = []
    total = 0.0
    steps = 0
    while True:
        if policy == "random":
            action = rng.uniform(-1.0, 1.0, env.action_dim)
        else:
            action, carry = agent_mod.act(
                obs, carry, m.world.view("encoder."), m.world.view("rssm."),
                m.actor.view("actor."), m.enc_spec, m.rssm_spec, explore=explore,
                rng=rng if explore else None,
                explore_noise=cfg.train.explore_noise, dtype=m.dtype)
        next_obs, reward, done = env.step(action)
        ep_obs.append(obs)
        ep_act.append(np.asarray(action, dtype=np.float32))
        ep_rew.append(reward)
        total += reward
        steps += env.action_repeat
        obs = next_obs
        if done:
            break
    if store_episode:
        state.buffer.add_episode(np.stack(ep_obs), np.stack(ep_act),
                                 np.asarray(ep_rew, dtype=np.float32))
    return total, steps


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint_path: Optional[Path]
    metrics_path: Path
    env_steps: int
    aborted: bool = False


def save_models(models: Models, path) -> None:
    ad.save_checkpoint(path, models.all_arrays())


def train(cfg: RunConfig, out_dir) -> TrainResult:
    """Algorithm: seed the buffer with random episodes, then alternate
    collect-interval many update steps with one exploration episode until the
    env-step budget is spent. NaN losses abort with the last periodic
    checkpoint retained and a diagnostic metrics record."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ad.set_default_dtype(np.float64 if cfg.train.precision == "f64" else np.float32)
    env = build_env(cfg)
    models = build_models(cfg, env.action_dim, env.obs_shape)
    state = _make_state(cfg, models)
    save_config(cfg, out / "config.resolved")
    metrics = MetricsWriter(out / "metrics.jsonl")

    env_steps = 0
    last_ckpt: Optional[Path] = None
    next_ckpt_at = cfg.train.checkpoint_every

    def checkpoint(tag) -> Path:
        path = out / f"ckpt_{tag}.drg"
        save_models(models, path)
        save_config(cfg, str(path) + ".config")
        return path

    try:
        # overflow/invalid land as NumericError via the per-op guard; the
        # numpy warnings on the way there are noise
        with np.errstate(over="ignore", invalid="ignore"):
            for episode in range(cfg.train.seed_episodes):
                ret, _ = run_episode(state, env, explore=True, policy="random")
                metrics.write("collect", env_steps, episode_return=ret,
                              episode=episode, policy="random")

            episode_index = cfg.train.seed_episodes
            while env_steps < cfg.train.total_steps:
                for _ in range(cfg.train.collect_interval):
                    batch = state.buffer.sample_sequences(
                        cfg.train.batch_size, cfg.train.seq_len, state.rng_sample)
                    report, grad_norm = world_model_update(state, batch)
                    behavior = behavior_update(state)
                    metrics.write("update", env_steps, loss_total=report.total,
                                  loss=report.components, grad_norm_world=grad_norm,
                                  **behavior)
                ret, steps = run_episode(state, env, explore=True, policy="agent")
                env_steps += steps
                episode_index += 1
                metrics.write("collect", env_steps, episode_return=ret,
                              episode=episode_index, policy="explore")
                if env_steps >= next_ckpt_at:
                    last_ckpt = checkpoint(f"{env_steps:08d}")
                    next_ckpt_at += cfg.train.checkpoint_every
    except NumericError as e:
        metrics.write("abort", env_steps, error=str(e),
                      last_checkpoint=str(last_ckpt) if last_ckpt else None)
        metrics.close()
        raise
    final = checkpoint("final")
    metrics.close()
    return TrainResult(out, final, out / "metrics.jsonl", env_steps)


# --- evaluation --------------------------------------------------------------------------

@dataclass
class EvalSummary:
    returns: List[float]
    mean: float
    std: float
    episodes: int
    distractor: Dict

    def to_json(self) -> dict:
        return {"returns": self.returns, "mean": self.mean, "std": self.std,
                "episodes": self.episodes, "distractor": self.distractor}


def load_models(ckpt_path, cfg: Optional[RunConfig] = None) -> Tuple[Models, RunConfig]:
    ckpt_path = Path(ckpt_path)
    if cfg is None:
        sidecar = Path(str(ckpt_path) + ".config")
        fallback = ckpt_path.parent / "config.resolved"
        if sidecar.exists():
            cfg = load_config(sidecar)
        elif fallback.exists():
            cfg = load_config(fallback)
        else:
            raise ConfigurationError(
                f"no config found for {ckpt_path}; pass one explicitly")
    ad.set_default_dtype(np.float64 if cfg.train.precision == "f64" else np.float32)
    env = build_env(cfg)
    models = build_models(cfg, env.action_dim, env.obs_shape)
    models.load_arrays(ad.load_checkpoint(ckpt_path), source=str(ckpt_path))
    return models, cfg


def evaluate(ckpt_path, distractor: DistractorSetting, episodes: int,
             cfg: Optional[RunConfig] = None, seed: Optional[int] = None,
             models: Optional[Models] = None) -> EvalSummary:
    """Mean-action rollouts of a trained policy under the given distractors."""
    if models is None:
        models, cfg = load_models(ckpt_path, cfg)
    else:
        cfg = models.cfg
    eval_seed = cfg.eval.seed if seed is None else seed
    env = build_env(cfg, setting=distractor, seed=eval_seed)
    state = _make_state(cfg, models)
    returns = []
    for _ in range(episodes):
        ret, _ = run_episode(state, env, explore=False, policy="agent", store_episode=False)
        returns.append(ret)
    arr = np.asarray(returns)
    return EvalSummary(returns=[float(r) for r in returns], mean=float(arr.mean()),
                       std=float(arr.std()), episodes=episodes,
                       distractor={"mode": distractor.mode, "seed": distractor.seed,
                                   "held_out": distractor.held_out})


# --- embedding export -----------------------------------------------------------------------

def probe_situations(n: int, rng_seed: int = 515151) -> List[Tuple[np.ndarray, np.ndarray]]:
    g = np.random.default_rng(rng_seed)
    return [(g.uniform(-1, 1, 2), g.uniform(-1, 1, 2)) for _ in range(n)]


def export_embeddings(ckpt_path, out_path, situations: int = 15, backgrounds: int = 20,
                      background_mode: str = "drift_blobs", background_seed0: int = 50_000,
                      cfg: Optional[RunConfig] = None,
                      models: Optional[Models] = None) -> Path:
    """Encoder embeddings for fixed (agent, goal) situations rendered over a
    family of backgrounds; CSV columns: situation, background, z_0..z_{d-1}."""
    if models is None:
        models, cfg = load_models(ckpt_path, cfg)
    else:
        cfg = models.cfg
    rows = []
    situations_list = probe_situations(situations)
    for b in range(backgrounds):
        setting = DistractorSetting(mode=background_mode, seed=background_seed0 + b,
                                    held_out=True)
        env = build_env(cfg, setting=setting, seed=cfg.eval.seed)
        env.reset()
        for sid, (pos, goal) in enumerate(situations_list):
            obs = env.render_state(pos, goal)
            with ad.no_grad():
                z = nets.encoder_forward(models.world.view("encoder."),
                                         Tensor(obs[None].astype(models.dtype)), models.enc_spec)
            rows.append((sid, b, np.asarray(z.data[0], dtype=np.float64)))
    dim = rows[0][2].shape[0]
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        header = ["situation", "background"] + [f"z_{i}" for i in range(dim)]
        fh.write(",".join(header) + "\n")
        for sid, b, z in rows:
            fh.write(",".join([str(sid), str(b)] + [repr(float(v)) for v in z]) + "\n")
    return out_path


def embedding_separation(csv_path) -> Tuple[float, float]:
    """(mean within-situation, mean across-situation) cosine distances."""
    import csv as csv_mod

    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv_mod.reader(fh)
        header = next(reader)
        rows = [(int(r[0]), int(r[1]), np.asarray([float(v) for v in r[2:]])) for r in reader]
    vecs = np.stack([r[2] for r in rows])
    sits = np.asarray([r[0] for r in rows])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = vecs / np.maximum(norms, 1e-12)
    cos = unit @ unit.T
    dist = 1.0 - cos
    same = sits[:, None] == sits[None, :]
    off_diag = ~np.eye(len(rows), dtype=bool)
    within = float(dist[same & off_diag].mean())
    across = float(dist[~same].mean())
    return within, across


# --- ablation sweeps --------------------------------------------------------------------------

SWEEPS: Dict[str, List[Tuple[str, List[str]]]] = {
    "modules": [
        ("full", []),
        ("wo_dual", ["loss.reality_reality=false", "loss.dream_reality=false"]),
        ("wo_dream_reality", ["loss.dream_reality=false"]),
        ("wo_reality_reality", ["loss.reality_reality=false"]),
        ("wo_rsid", ["loss.rsid=false"]),
    ],
    "strategy": [(f"strategy_{s}", [f"augment.strategy={s}"])
                 for s in ("H-S", "H-N", "H-H", "S-H")],
    "hardaug": [(f"hard_{k}", [f"augment.hard_kind={k}"])
                for k in ("overlay", "random_conv", "cutout_color", "color_jitter")],
}


def ablate(cfg: RunConfig, sweep: str, out_dir, seeds: int = 3,
           eval_episodes: Optional[int] = None, jobs: int = 1,
           eval_distractor_mode: str = "drift_blobs",
           eval_distractor_seed: int = 77_000) -> dict:
    """Run every sweep configuration for `seeds` seeds, evaluate each run on
    clean and held-out distractor backgrounds, and write summary.json."""
    from .config import parse_text, to_text, apply_override

    if sweep not in SWEEPS:
        raise ConfigurationError(
            f"unknown sweep '{sweep}'; choose from {sorted(SWEEPS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_episodes = eval_episodes if eval_episodes is not None else cfg.eval.episodes

    runs = []
    for name, overrides in SWEEPS[sweep]:
        for s in range(seeds):
            variant = parse_text(to_text(cfg))  # deep copy through serialization
            for ov in overrides:
                key, value = ov.split("=", 1)
                apply_override(variant, key, value)
            variant.seed = cfg.seed + s
            runs.append((name, s, variant, out / f"{name}_seed{s}"))

    def execute(entry):
        name, s, variant, run_dir = entry
        result = train(variant, run_dir)
        return name, s, result

    if jobs > 1:
        _run_parallel(runs, out, jobs)
    else:
        for entry in runs:
            execute(entry)

    summary: Dict[str, dict] = {}
    held_out = DistractorSetting(mode=eval_distractor_mode, seed=eval_distractor_seed,
                                 held_out=True)
    clean = DistractorSetting(mode="clean", seed=0)
    for name, _ in SWEEPS[sweep]:
        per_seed = {"clean": [], "distractor": []}
        for s in range(seeds):
            ckpt = out / f"{name}_seed{s}" / "ckpt_final.drg"
            models, run_cfg = load_models(ckpt)
            per_seed["clean"].append(
                evaluate(ckpt, clean, eval_episodes, models=models).mean)
            per_seed["distractor"].append(
                evaluate(ckpt, held_out, eval_episodes, models=models).mean)
        summary[name] = {
            "clean_returns": per_seed["clean"],
            "distractor_returns": per_seed["distractor"],
            "clean_median": float(np.median(per_seed["clean"])),
            "distractor_median": float(np.median(per_seed["distractor"])),
        }
    payload = {"sweep": sweep, "seeds": seeds, "eval_episodes": eval_episodes,
               "configs": summary}
    (out / "summary.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return payload


def _run_parallel(runs, out: Path, jobs: int) -> None:
    """Each run in its own process (fresh interpreter, single BLAS thread)."""
    import subprocess
    import sys

    pending = []
    for name, s, variant, run_dir in runs:
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = run_dir / "config.in"
        save_config(variant, cfg_path)
        pending.append((name, s, cfg_path, run_dir))

    env = dict(os.environ)
    env.setdefault("OMP_NUM_THREADS", "1")
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    active: List[Tuple[subprocess.Popen, str]] = []
    queue = list(pending)
    failures = []
    while queue or active:
        while queue and len(active) < jobs:
            name, s, cfg_path, run_dir = queue.pop(0)
            log = open(run_dir / "train.log", "w")
            proc = subprocess.Popen(
                [sys.executable, "-m", "drg", "train", "--config", str(cfg_path),
                 "--out", str(run_dir)],
                stdout=log, stderr=subprocess.STDOUT, env=env)
            active.append((proc, f"{name}_seed{s}"))
        for proc, label in list(active):
            code = proc.poll()
            if code is not None:
                active.remove((proc, label))
                if code != 0:
                    failures.append((label, code))
        time.sleep(0.2)
    if failures:
        raise NumericError(f"ablation runs failed: {failures}")

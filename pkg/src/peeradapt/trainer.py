"""PPO training against the full peer pool with cross-episode contexts.

One environment and one context live per training peer tuple. Collection
sweeps the tuples round-robin, one env step each per sweep, with the
policy conditioned on the current context embedding; the exploration
reward is computed from the same embedding the policy acted on and mixed
into the task reward on the decaying coefficient. Meta-episodes of
``n_eps`` episodes are treated as single trajectories: GAE bootstraps
straight through episode boundaries and resets only where a context was
cleared (or at batch truncation, where the critic bootstraps).

Updates re-encode the stored context prefixes with gradients, sharing the
per-pair embedding across all transitions of a meta-episode through
cumulative sums; minibatches therefore partition whole meta-episodes
rather than independent transitions. The auxiliary identification loss is
computed on the same minibatch and added to the PPO loss.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .context import (
    Context,
    ContextEncoder,
    EncoderSpec,
    Identifier,
    RewardSchedule,
    exploration_reward,
    prefix_mean_backward,
    prefix_mean_forward,
)
from .core import (
    STREAM_ENV,
    STREAM_INIT,
    STREAM_POLICY,
    STREAM_SHUFFLE,
    rng_stream,
)
from .kuhn import KuhnEnv, KuhnPeerParams
from .nn import (
    MLP,
    AdamConfig,
    ParamStore,
    categorical_entropy,
    categorical_sample,
    entropy_grad,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    softmax,
)
from .pools import ENV_KUHN, ENV_PP, PeerTuple, PoolSpec
from .predprey import PhysicsConfig, PredPreyEnv, peer_from_specs

DIAG_FIELDS = [
    "global_step",
    "mean_task_return",
    "mean_exploration_reward",
    "c",
    "aux_loss",
    "aux_accuracy",
    "entropy",
    "value_loss",
]


class TrainerAbort(RuntimeError):
    """Raised when an update produces a non-finite loss."""


@dataclass
class PPOConfig:
    lr: float
    entropy_coef: float
    batch_size: int
    update_epochs: int
    n_minibatches: int
    grad_clip: float
    total_steps: int
    n_eps: int
    warmup_steps: int = 0
    c_init: float = 0.0
    c_decay_steps: int = 1
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    aux_weight: float = 1.0
    advantage_norm: bool = True
    checkpoint_interval: int = 0  # env steps; 0 writes only the final one


def kuhn_ppo_defaults(**overrides) -> PPOConfig:
    cfg = dict(
        lr=2e-4,
        entropy_coef=5e-4,
        batch_size=80_000,
        update_epochs=15,
        n_minibatches=12,
        grad_clip=2.0,
        total_steps=5_000_000,
        n_eps=100,
        warmup_steps=100_000,
        c_init=0.01,
        c_decay_steps=4_000_000,
    )
    cfg.update(overrides)
    return PPOConfig(**cfg)


def pp_ppo_defaults(**overrides) -> PPOConfig:
    cfg = dict(
        lr=1e-3,
        entropy_coef=0.03,
        batch_size=64_000,
        update_epochs=4,
        n_minibatches=16,
        grad_clip=15.0,
        total_steps=15_000_000,
        n_eps=5,
        warmup_steps=500_000,
        c_init=0.1,
        c_decay_steps=15_000_000,
    )
    cfg.update(overrides)
    return PPOConfig(**cfg)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild the networks for a checkpoint."""

    env: str
    obs_dim: int
    n_actions: int
    d_z: int
    f_hidden: tuple[int, ...]
    g_hidden: tuple[int, ...]
    actor_hidden: tuple[int, ...]
    critic_hidden: tuple[int, ...]
    slot_cardinalities: tuple[int, ...]
    n_eps: int

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kw = dict(d)
        for k in ("f_hidden", "g_hidden", "actor_hidden", "critic_hidden",
                  "slot_cardinalities"):
            kw[k] = tuple(kw[k])
        return cls(**kw)

    @property
    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(
            obs_dim=self.obs_dim,
            n_actions=self.n_actions,
            f_hidden=self.f_hidden,
            g_hidden=self.g_hidden,
            d_z=self.d_z,
        )


@dataclass
class Models:
    store: ParamStore
    encoder: ContextEncoder
    identifier: Identifier
    actor: MLP
    critic: MLP
    spec: ModelSpec


def build_models(spec: ModelSpec, seed: int) -> Models:
    store = ParamStore()
    rng = rng_stream(seed, STREAM_INIT)
    encoder = ContextEncoder(store, spec.encoder_spec, rng)
    actor = MLP(
        store, "actor",
        [spec.obs_dim + spec.d_z, *spec.actor_hidden, spec.n_actions],
        rng, out_gain=0.01,
    )
    critic = MLP(
        store, "critic",
        [spec.obs_dim + spec.d_z, *spec.critic_hidden, 1],
        rng, out_gain=1.0,
    )
    identifier = Identifier(store, spec.d_z, list(spec.slot_cardinalities), rng)
    return Models(store, encoder, identifier, actor, critic, spec)


def models_from_checkpoint(path) -> tuple[Models, dict]:
    store, manifest = load_checkpoint(path)
    spec = ModelSpec.from_dict(manifest["meta"]["model_spec"])
    models = build_models(spec, seed=0)
    for name in models.store.names():
        models.store.params[name][:] = store.params[name]
        models.store.adam_m[name][:] = store.adam_m.get(name, 0.0)
        models.store.adam_v[name][:] = store.adam_v.get(name, 0.0)
    models.store.adam_t = dict(store.adam_t)
    models.store.version += 1
    return models, manifest


def build_env(env_name, peer_tuple: PeerTuple, rng, phys: PhysicsConfig | None = None,
              path_table=None):
    """Instantiate the environment bound to one peer tuple."""
    if env_name == ENV_KUHN:
        payload = peer_tuple.specs[0].payload
        return KuhnEnv(KuhnPeerParams(payload["xi"], payload["eta"]), rng)
    if env_name == ENV_PP:
        phys = phys or PhysicsConfig()
        predator, prey = peer_from_specs(peer_tuple.specs, path_table, phys)
        return PredPreyEnv(predator, prey, rng, phys)
    raise ValueError(f"unknown env {env_name!r}")


def clipped_surrogate_terms(ratio: np.ndarray, adv: np.ndarray, eps: float):
    """Per-transition clipped-surrogate loss and its d/d(ratio).

    loss = -min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv). Where the
    clipped branch is strictly smaller, the ratio sits outside the clip
    band and the derivative vanishes.
    """
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    loss = -np.minimum(unclipped, clipped)
    dratio = np.where(unclipped <= clipped, -adv, 0.0)
    return loss, dratio


def compute_gae(rewards, values, meta_dones, final_value, gamma, lam):
    """GAE over one env stream; the recursion resets only at meta-episode
    ends and bootstraps from ``final_value`` at batch truncation."""
    T = len(rewards)
    adv = np.zeros(T)
    next_adv = 0.0
    next_value = final_value
    for t in range(T - 1, -1, -1):
        live = 0.0 if meta_dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


@dataclass
class _Slot:
    """Per-peer-tuple rollout state."""

    env: object
    ctx: Context
    obs: np.ndarray
    true_idx: np.ndarray
    ep_return: float = 0.0


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    values_old: np.ndarray
    rewards: np.ndarray
    task_rewards: np.ndarray
    explore_rewards: np.ndarray
    dones: np.ndarray
    meta_dones: np.ndarray
    ctx_len: np.ndarray
    true_idx: np.ndarray
    record_ids: np.ndarray
    records: list[Context]
    stream_bounds: list[tuple[int, int]]
    final_values: np.ndarray
    episode_returns: list[float]
    c_end: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    pair_cache: dict | None = None  # record id -> materialized pair matrix


class Trainer:
    def __init__(
        self,
        pool: PoolSpec,
        config: PPOConfig,
        model_spec: ModelSpec,
        seed: int,
        phys: PhysicsConfig | None = None,
        path_table=None,
        diag_path=None,
        checkpoint_dir=None,
        extra_meta: dict | None = None,
    ):
        if model_spec.env != pool.env:
            raise ValueError("model spec and pool disagree on the environment")
        self.pool = pool
        self.cfg = config
        self.seed = seed
        self.models = build_models(model_spec, seed)
        self.schedule = RewardSchedule(
            c_init=config.c_init, decay_steps=config.c_decay_steps
        )
        self.policy_rng = rng_stream(seed, STREAM_POLICY)
        self.shuffle_rng = rng_stream(seed, STREAM_SHUFFLE)
        self.phys = phys
        self.path_table = path_table
        self.slots: list[_Slot] = []
        for i, peer in enumerate(pool.train):
            env = build_env(pool.env, peer, rng_stream(seed, STREAM_ENV, i), phys, path_table)
            self.slots.append(
                _Slot(
                    env=env,
                    ctx=Context(config.n_eps),
                    obs=env.reset(),
                    true_idx=np.asarray(peer.indices, dtype=int),
                )
            )
        self.global_step = 0
        self.diag_path = diag_path
        self.checkpoint_dir = checkpoint_dir
        self.extra_meta = extra_meta or {}
        self._diag_writer = None
        self._next_checkpoint = (
            config.checkpoint_interval if config.checkpoint_interval else None
        )

    # ------------------------------------------------------------------
    # rollout
    # ------------------------------------------------------------------

    def _embed(self, slot_ids) -> np.ndarray:
        m = self.models
        means, rows = [], []
        for pos, i in enumerate(slot_ids):
            vec = m.encoder.mean_vector(m.store, self.slots[i].ctx)
            if vec is not None:
                means.append(vec)
                rows.append(pos)
        z = np.zeros((len(slot_ids), m.spec.d_z))
        if means:
            out, _ = m.encoder.g.forward(m.store, np.stack(means))
            z[rows] = out
        return z

    def collect_batch(self) -> Batch:
        cfg, m = self.cfg, self.models
        n_env = len(self.slots)
        streams = [
            {k: [] for k in (
                "obs", "actions", "logp", "values", "rewards", "task", "re",
                "dones", "meta_dones", "ctx_len", "record",
            )}
            for _ in range(n_env)
        ]
        episode_returns: list[float] = []
        collected = 0
        c_val = self.schedule.coeff(self.global_step)
        while collected < cfg.batch_size:
            take = min(n_env, cfg.batch_size - collected)
            active = list(range(take))
            obs_mat = np.stack([self.slots[i].obs for i in active])
            z = self._embed(active)
            x = np.concatenate([obs_mat, z], axis=1)
            logits, _ = m.actor.forward(m.store, x)
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            actions = categorical_sample(probs, self.policy_rng.random(take))
            logp = logp_all[np.arange(take), actions]
            values, _ = m.critic.forward(m.store, x)
            posts = m.identifier.posteriors(m.store, z)
            true_idx = np.stack([self.slots[i].true_idx for i in active])
            r_e = exploration_reward(posts, true_idx)

            outcomes = []
            for row, i in enumerate(active):
                slot = self.slots[i]
                out = slot.env.step(int(actions[row]))
                c_val = self.schedule.coeff(self.global_step)
                self.global_step += 1
                slot.ep_return += out.task_reward
                s = streams[i]
                s["obs"].append(slot.obs)
                s["actions"].append(int(actions[row]))
                s["logp"].append(float(logp[row]))
                s["values"].append(float(values[row, 0]))
                s["task"].append(out.task_reward)
                s["re"].append(float(r_e[row]))
                s["rewards"].append(out.task_reward + c_val * float(r_e[row]))
                s["dones"].append(out.episode_done)
                s["meta_dones"].append(False)
                s["ctx_len"].append(slot.ctx.n_pairs)
                s["record"].append(slot.ctx)
                outcomes.append(out)

            # Append the acted-on pairs to every active context in one f pass.
            pair_mat = np.zeros((take, m.spec.obs_dim + m.spec.n_actions))
            pair_mat[:, : m.spec.obs_dim] = obs_mat
            pair_mat[np.arange(take), m.spec.obs_dim + actions] = 1.0
            f_outs = m.encoder.f_batch(m.store, pair_mat)
            for row, i in enumerate(active):
                self.slots[i].ctx.append(pair_mat[row], f_outs[row], m.store.version)

            done_rows = [r for r, out in enumerate(outcomes) if out.episode_done]
            if done_rows:
                term_mat = np.zeros((len(done_rows), m.spec.obs_dim + m.spec.n_actions))
                for j, row in enumerate(done_rows):
                    term_mat[j, : m.spec.obs_dim] = outcomes[row].next_observation
                f_term = m.encoder.f_batch(m.store, term_mat)
                for j, row in enumerate(done_rows):
                    i = active[row]
                    slot = self.slots[i]
                    slot.ctx.close(term_mat[j], f_term[j], m.store.version)
                    episode_returns.append(slot.ep_return)
                    slot.ep_return = 0.0
                    if slot.ctx.n_complete >= cfg.n_eps:
                        streams[i]["meta_dones"][-1] = True
                        slot.ctx = Context(cfg.n_eps)
                    slot.obs = slot.env.reset()
            for row, i in enumerate(active):
                if not outcomes[row].episode_done:
                    self.slots[i].obs = outcomes[row].next_observation
            collected += take

        # Bootstrap values for truncated meta-episodes.
        obs_mat = np.stack([s.obs for s in self.slots])
        z = self._embed(range(n_env))
        x = np.concatenate([obs_mat, z], axis=1)
        final_values, _ = m.critic.forward(m.store, x)

        return self._flatten(streams, final_values[:, 0], episode_returns, c_val)

    def _flatten(self, streams, final_values, episode_returns, c_end) -> Batch:
        records: list[Context] = []
        record_index: dict[int, int] = {}
        flat = {k: [] for k in (
            "obs", "actions", "logp", "values", "rewards", "task", "re",
            "dones", "meta_dones", "ctx_len", "record_ids", "true_idx",
        )}
        stream_bounds = []
        for i, s in enumerate(streams):
            start = len(flat["actions"])
            for k in ("obs", "actions", "logp", "values", "rewards", "task",
                      "re", "dones", "meta_dones", "ctx_len"):
                flat[k].extend(s[k])
            for rec in s["record"]:
                rid = id(rec)
                if rid not in record_index:
                    record_index[rid] = len(records)
                    records.append(rec)
                flat["record_ids"].append(record_index[rid])
            flat["true_idx"].extend([self.slots[i].true_idx] * len(s["actions"]))
            stream_bounds.append((start, len(flat["actions"])))
        return Batch(
            obs=np.asarray(flat["obs"]),
            actions=np.asarray(flat["actions"], dtype=int),
            logp_old=np.asarray(flat["logp"]),
            values_old=np.asarray(flat["values"]),
            rewards=np.asarray(flat["rewards"]),
            task_rewards=np.asarray(flat["task"]),
            explore_rewards=np.asarray(flat["re"]),
            dones=np.asarray(flat["dones"], dtype=bool),
            meta_dones=np.asarray(flat["meta_dones"], dtype=bool),
            ctx_len=np.asarray(flat["ctx_len"], dtype=int),
            true_idx=np.asarray(flat["true_idx"], dtype=int),
            record_ids=np.asarray(flat["record_ids"], dtype=int),
            records=records,
            stream_bounds=stream_bounds,
            final_values=np.asarray(final_values),
            episode_returns=episode_returns,
            c_end=c_end,
        )

    def add_gae(self, batch: Batch) -> None:
        cfg = self.cfg
        adv = np.zeros(len(batch.actions))
        for i, (start, stop) in enumerate(batch.stream_bounds):
            adv[start:stop] = compute_gae(
                batch.rewards[start:stop],
                batch.values_old[start:stop],
                batch.meta_dones[start:stop],
                batch.final_values[i],
                cfg.gamma,
                cfg.gae_lambda,
            )
        batch.advantages = adv
        batch.returns = adv + batch.values_old

    # ------------------------------------------------------------------
    # update
    # ------------------------------------------------------------------

    def minibatch_loss(self, batch: Batch, idxs: np.ndarray, adv: np.ndarray,
                       aux_only: bool = False, compute_grads: bool = True):
        """Joint loss (and gradients) on one minibatch of transitions.

        ``idxs`` must keep each meta-episode's transitions grouped so the
        per-pair embeddings are computed once per record.
        """
        cfg, m = self.cfg, self.models
        store = m.store
        n = len(idxs)
        grads = store.zero_grads() if compute_grads else None

        # Re-encode context prefixes: one f pass over the concatenated pair
        # matrices of every record present, then per-record prefix sums.
        rec_rows: dict[int, list[int]] = {}
        for pos, t in enumerate(idxs):
            if batch.ctx_len[t] > 0:
                rec_rows.setdefault(batch.record_ids[t], []).append(pos)
        means, caches, row_order = [], [], []
        f_tape = None
        if rec_rows:
            if batch.pair_cache is None:
                batch.pair_cache = {}
            mats = []
            for rid in rec_rows:
                mat = batch.pair_cache.get(rid)
                if mat is None:
                    mat = np.asarray(batch.records[rid].pairs)
                    batch.pair_cache[rid] = mat
                mats.append(mat)
            u_all, f_tape = m.encoder.f.forward(store, np.vstack(mats))
            offset = 0
            for (rid, rows), mat in zip(rec_rows.items(), mats):
                u = u_all[offset : offset + len(mat)]
                offset += len(mat)
                ns = batch.ctx_len[idxs[rows]]
                mvec, cache = prefix_mean_forward(
                    u, np.asarray(batch.records[rid].bounds, dtype=int), ns
                )
                means.append(mvec)
                caches.append((cache, len(mat), len(rows)))
                row_order.extend(rows)
        z = np.zeros((n, m.spec.d_z))
        g_tape = None
        if means:
            m_all = np.vstack(means)
            z_ne, g_tape = m.encoder.g.forward(store, m_all)
            z[row_order] = z_ne
        dz = np.zeros_like(z)

        # Auxiliary identification loss over the same minibatch.
        idx_true = batch.true_idx[idxs]
        logits_slots = m.identifier.logits(store, z)
        aux_terms = np.zeros(n)
        acc_terms = np.zeros(n)
        dlogits_slots = []
        n_slots = m.identifier.n_slots
        for j, logits_j in enumerate(logits_slots):
            logp_j = log_softmax(logits_j)
            rows = np.arange(n)
            aux_terms += -logp_j[rows, idx_true[:, j]] / n_slots
            acc_terms += (np.argmax(logits_j, axis=1) == idx_true[:, j]) / n_slots
            dl = np.exp(logp_j)
            dl[rows, idx_true[:, j]] -= 1.0
            dlogits_slots.append(dl * (cfg.aux_weight / (n_slots * n)))
        aux_loss_val = float(aux_terms.mean())
        aux_acc = float(acc_terms.mean())

        diag = {"aux_loss": aux_loss_val, "aux_accuracy": aux_acc}
        total = cfg.aux_weight * aux_loss_val

        if compute_grads:
            dz += m.identifier.backward(store, z, dlogits_slots, grads)

        if not aux_only:
            x = np.concatenate([batch.obs[idxs], z], axis=1)
            logits, actor_tape = m.actor.forward(store, x)
            logp_all = log_softmax(logits)
            rows = np.arange(n)
            logp_new = logp_all[rows, batch.actions[idxs]]
            ratio = np.exp(logp_new - batch.logp_old[idxs])
            adv_mb = adv[idxs]
            pg_terms, dratio = clipped_surrogate_terms(ratio, adv_mb, cfg.clip_eps)
            pg_loss = float(pg_terms.mean())

            values, critic_tape = m.critic.forward(store, x)
            v_err = values[:, 0] - batch.returns[idxs]
            v_loss = float(np.mean(v_err**2))

            ent = categorical_entropy(logits)
            ent_mean = float(ent.mean())

            total += pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent_mean
            diag.update(entropy=ent_mean, value_loss=v_loss, pg_loss=pg_loss)

            if compute_grads:
                # d(pg)/d(logits): through logp of the taken action.
                dlogp = (dratio * ratio) / n
                probs = np.exp(logp_all)
                dlogits = -probs * dlogp[:, None]
                dlogits[rows, batch.actions[idxs]] += dlogp
                # entropy bonus
                dlogits -= (cfg.entropy_coef / n) * entropy_grad(logits)
                dx = m.actor.backward(store, actor_tape, dlogits, grads)
                dvalues = np.zeros_like(values)
                dvalues[:, 0] = 2.0 * cfg.value_coef * v_err / n
                dx += m.critic.backward(store, critic_tape, dvalues, grads)
                dz += dx[:, m.spec.obs_dim :]
        else:
            diag.update(entropy=float("nan"), value_loss=float("nan"), pg_loss=float("nan"))

        if compute_grads and means:
            dm = m.encoder.g.backward(store, g_tape, dz[row_order], grads)
            du_parts = []
            offset = 0
            for cache, n_pairs, n_rows in caches:
                du_parts.append(
                    prefix_mean_backward(cache, dm[offset : offset + n_rows])
                )
                offset += n_rows
            m.encoder.f.backward(store, f_tape, np.vstack(du_parts), grads)

        if not np.isfinite(total):
            raise TrainerAbort(
                f"non-finite loss at step {self.global_step}: {diag}"
            )
        return total, grads, diag

    def _minibatch_plan(self, batch: Batch):
        """Partition meta-episode groups into balanced minibatches."""
        groups: dict[int, list[int]] = {}
        for t, rid in enumerate(batch.record_ids):
            groups.setdefault(rid, []).append(t)
        group_list = [np.asarray(v, dtype=int) for v in groups.values()]
        order = self.shuffle_rng.permutation(len(group_list))
        n_bins = min(self.cfg.n_minibatches, len(group_list))
        bins = [[] for _ in range(n_bins)]
        fill = [0] * n_bins
        for gi in order:
            b = int(np.argmin(fill))
            bins[b].append(group_list[gi])
            fill[b] += len(group_list[gi])
        return [np.concatenate(b) for b in bins if b]

    def update(self, batch: Batch, aux_only: bool = False) -> dict:
        cfg, m = self.cfg, self.models
        if not aux_only and batch.advantages is None:
            self.add_gae(batch)
        adv = batch.advantages
        if adv is not None and cfg.advantage_norm and not aux_only:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        if adv is None:
            adv = np.zeros(len(batch.actions))

        if aux_only:
            names = m.encoder.param_names() + m.identifier.param_names()
        else:
            names = None  # every parameter
        adam = AdamConfig(lr=cfg.lr, clip=cfg.grad_clip)

        sums: dict[str, float] = {}
        count = 0
        for _ in range(cfg.update_epochs):
            for idxs in self._minibatch_plan(batch):
                _, grads, diag = self.minibatch_loss(batch, idxs, adv, aux_only)
                if names is not None:
                    grads = {k: grads[k] for k in names}
                m.store.adam_step(grads, adam)
                for k, v in diag.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
        out = {k: v / count for k, v in sums.items()}
        out["mean_task_return"] = (
            float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan")
        )
        out["mean_exploration_reward"] = float(batch.explore_rewards.mean())
        out["c"] = batch.c_end
        out["global_step"] = self.global_step
        return out

    # ------------------------------------------------------------------
    # driver
    # ------------------------------------------------------------------

    def _write_diag(self, row: dict) -> None:
        if self.diag_path is None:
            return
        new = not os.path.exists(self.diag_path)
        with open(self.diag_path, "a", newline="") as f:
            w = csv.writer(f)
            if new:
                w.writerow(DIAG_FIELDS)
            w.writerow(
                [format(row.get(k, float("nan")), ".17g") if k != "global_step"
                 else row["global_step"] for k in DIAG_FIELDS]
            )

    def _maybe_checkpoint(self) -> None:
        if self.checkpoint_dir is None or self._next_checkpoint is None:
            return
        if self.global_step >= self._next_checkpoint:
            self.save(os.path.join(self.checkpoint_dir, f"ckpt_{self.global_step}.bin"))
            self._next_checkpoint += self.cfg.checkpoint_interval

    def save(self, path) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        meta = {"model_spec": self.models.spec.to_dict(), **self.extra_meta}
        save_checkpoint(
            path, self.models.store, global_step=self.global_step, meta=meta
        )

    def warmup(self) -> None:
        """Train the encoder and identifier alone for the warmup budget."""
        target = self.cfg.warmup_steps
        while self.global_step < target:
            batch = self.collect_batch()
            row = self.update(batch, aux_only=True)
            self._write_diag(row)

    def train(self, progress=None) -> None:
        self.warmup()
        target = self.cfg.warmup_steps + self.cfg.total_steps
        while self.global_step < target:
            batch = self.collect_batch()
            row = self.update(batch)
            self._write_diag(row)
            self._maybe_checkpoint()
            if progress is not None:
                progress(row)
        if self.checkpoint_dir is not None:
            self.save(os.path.join(self.checkpoint_dir, "ckpt_final.bin"))

"""Online adaptation against fixed peers and its evaluation metrics.

Adaptation runs ``n_eps`` episodes against one peer tuple with the context
persisting across episodes, exercising the same append/close/clear paths
as training. The exploration reward is never added: episode returns are
pure task reward. Options cover the sudden-change protocol (peer swap at a
hidden episode index) and the return-drop change detector that clears the
context when triggered. A model trained with an ``n_ctx``-episode horizon
keeps at most ``n_ctx`` complete episodes of context and clears when that
fills, which matters when evaluating beyond the training horizon.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .context import Context
from .core import STREAM_ENV, STREAM_EVAL, STREAM_POLICY, rng_stream
from .nn import categorical_sample, log_softmax
from .pools import PeerTuple, PoolSpec
from .trainer import Models, build_env


@dataclass(frozen=True)
class ChangeDetectorConfig:
    c_th: float

    def __post_init__(self):
        if not 0.0 <= self.c_th <= 1.0:
            raise ValueError("c_th must lie in [0, 1]")


def detect_change(returns: list[float], c_th: float) -> bool:
    """Flag a peer change at the latest episode i iff
    R_i < c_th * max_{j<=i} R_j + (1 - c_th) * min_{j<=i} R_j.

    The extrema include the current return, exactly as specified: with
    c_th = 0 the rule never fires, with c_th = 1 it fires on any drop
    below the running maximum, and a strict new minimum trips it for
    every positive c_th.
    """
    if not returns:
        raise ValueError("need at least one episode return")
    r = returns[-1]
    hi = max(returns)
    lo = min(returns)
    return r < c_th * hi + (1.0 - c_th) * lo


@dataclass
class MetaEpisodeReport:
    peer_id: int
    seed: int
    returns: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    detections: list[bool] = field(default_factory=list)

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))


def run_adaptation(
    models: Models,
    env,
    n_eps: int,
    policy_rng: np.random.Generator,
    n_ctx: int | None = None,
    switch_at: int | None = None,
    switch_peer: PeerTuple | None = None,
    phys=None,
    path_table=None,
    c_th: float | None = None,
    peer_id: int = 0,
    seed: int = 0,
    embedding_sink: list | None = None,
    ctx: Context | None = None,
) -> MetaEpisodeReport:
    """Algorithm-2 style adaptation run; returns per-episode task returns.

    ``switch_at`` (1-based) swaps in ``switch_peer`` from that episode on,
    hidden from the agent. ``c_th`` enables the change detector, clearing
    the context on detection. Passing ``ctx`` lets callers warm-start or
    inspect the context; its capacity then overrides ``n_ctx`` clearing.
    """
    m = models
    n_ctx = n_ctx if n_ctx is not None else m.spec.n_eps
    if ctx is None:
        ctx = Context(n_ctx)
    else:
        n_ctx = ctx.capacity
    report = MetaEpisodeReport(peer_id=peer_id, seed=seed)
    for episode in range(1, n_eps + 1):
        if switch_at is not None and episode == switch_at:
            env.set_peer(_peer_payload(m.spec.env, switch_peer, phys, path_table))
        obs = env.reset()
        ep_return = 0.0
        steps = 0
        done = False
        while not done:
            z = m.encoder.encode(m.store, ctx)
            x = np.concatenate([obs, z])[None]
            logits, _ = m.actor.forward(m.store, x)
            probs = np.exp(log_softmax(logits))
            action = int(categorical_sample(probs, policy_rng.random(1))[0])
            if embedding_sink is not None:
                embedding_sink.append((peer_id, episode, steps + 1, z.copy()))
            out = env.step(action)
            m.encoder.append_step(m.store, ctx, obs, action)
            ep_return += out.task_reward
            steps += 1
            obs = out.next_observation
            done = out.episode_done
        m.encoder.close_episode(m.store, ctx, obs)
        report.returns.append(ep_return)
        report.lengths.append(steps)

        # Training-time context mechanics: clear once n_ctx episodes fill.
        if ctx.n_complete >= n_ctx:
            ctx.clear()
        detected = False
        if c_th is not None:
            detected = detect_change(report.returns, c_th)
            if detected:
                ctx.clear()
        report.detections.append(detected)
    return report


def _peer_payload(env_name, peer_tuple, phys, path_table):
    """Native peer object for ``Env.set_peer``."""
    from .kuhn import KuhnPeerParams
    from .pools import ENV_KUHN
    from .predprey import peer_from_specs, PhysicsConfig

    if env_name == ENV_KUHN:
        p = peer_tuple.specs[0].payload
        return KuhnPeerParams(p["xi"], p["eta"])
    return peer_from_specs(peer_tuple.specs, path_table, phys or PhysicsConfig())


def adaptation_runs(
    models: Models,
    pool: PoolSpec,
    side: str,
    n_eps: int,
    seeds: list[int],
    n_ctx: int | None = None,
    phys=None,
    path_table=None,
    c_th: float | None = None,
    switch_at: int | None = None,
    workers: int = 1,
) -> list[MetaEpisodeReport]:
    """One adaptation run per (peer, seed), deterministic per pair.

    With ``switch_at`` set, the run starts against the indexed peer and
    switches to the next tuple in the pool (cyclically) at that episode.
    Worker count never affects results: runs are independent and results
    are assembled in (peer, seed) order.
    """
    peers = pool.train if side == "train" else pool.test
    jobs = []
    for peer_idx, peer in enumerate(peers):
        for seed in seeds:
            switch_peer = (
                peers[(peer_idx + 1) % len(peers)] if switch_at is not None else None
            )
            jobs.append(
                (models, pool.env, peer, peer_idx, seed, n_eps, n_ctx,
                 switch_at, switch_peer, phys, path_table, c_th)
            )
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool_exec:
        return list(pool_exec.map(_run_job, jobs))


def _run_job(job) -> MetaEpisodeReport:
    (models, env_name, peer, peer_idx, seed, n_eps, n_ctx, switch_at,
     switch_peer, phys, path_table, c_th) = job
    env = build_env(
        env_name, peer, rng_stream(seed, STREAM_EVAL, peer_idx, STREAM_ENV),
        phys, path_table,
    )
    policy_rng = rng_stream(seed, STREAM_EVAL, peer_idx, STREAM_POLICY)
    return run_adaptation(
        models, env, n_eps, policy_rng, n_ctx=n_ctx,
        switch_at=switch_at, switch_peer=switch_peer,
        phys=phys, path_table=path_table, c_th=c_th,
        peer_id=peer_idx, seed=seed,
    )


@dataclass
class WindowedMetrics:
    window: int
    per_window_mean: np.ndarray
    per_window_std: np.ndarray
    overall_mean: float
    overall_std: float
    partial_last_window: bool


def windowed_metrics(reports: list[MetaEpisodeReport], window: int) -> WindowedMetrics:
    """Per-window mean returns averaged over runs, plus the overall mean.

    The standard deviations are across runs of the per-run means. A last
    window shorter than ``window`` is kept and flagged.
    """
    if not reports:
        raise ValueError("no reports")
    n_eps = len(reports[0].returns)
    if any(len(r.returns) != n_eps for r in reports):
        raise ValueError("reports have unequal episode counts")
    if not 1 <= window <= n_eps:
        raise ValueError("window must be in [1, n_eps]")
    n_windows = math.ceil(n_eps / window)
    mat = np.array([r.returns for r in reports])  # (runs, n_eps)
    win_means = np.stack(
        [mat[:, w * window : (w + 1) * window].mean(axis=1) for w in range(n_windows)],
        axis=1,
    )  # (runs, n_windows)
    run_means = mat.mean(axis=1)
    return WindowedMetrics(
        window=window,
        per_window_mean=win_means.mean(axis=0),
        per_window_std=win_means.std(axis=0),
        overall_mean=float(run_means.mean()),
        overall_std=float(run_means.std()),
        partial_last_window=(n_eps % window != 0),
    )


def cross_horizon(
    models_by_nctx: dict[int, list[Models]],
    n_eps_list: list[int],
    pool: PoolSpec,
    seeds: list[int],
    side: str = "test",
    phys=None,
    path_table=None,
) -> dict[tuple[int, int], tuple[float, float]]:
    """Mean return matrix over testing horizons and training horizons.

    A model trained with context size n_ctx keeps its context for at most
    n_ctx episodes during testing, clearing when that many complete, and
    runs on until n_eps episodes elapse. Cell values are mean +/- std over
    the provided models (training seeds) of the pool-mean episodic return.
    """
    table = {}
    for n_eps in n_eps_list:
        for n_ctx, model_list in models_by_nctx.items():
            per_model = []
            for models in model_list:
                reports = adaptation_runs(
                    models, pool, side, n_eps, seeds, n_ctx=n_ctx,
                    phys=phys, path_table=path_table,
                )
                per_model.append(np.mean([r.mean_return for r in reports]))
            table[(n_eps, n_ctx)] = (
                float(np.mean(per_model)),
                float(np.std(per_model)),
            )
    return table


def write_results_csv(path, env_name, checkpoint, reports: list[MetaEpisodeReport]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["env", "checkpoint", "peer_id", "seed", "episode_index", "return",
             "detected_change_flag"]
        )
        for r in reports:
            for i, (ret, det) in enumerate(zip(r.returns, r.detections), start=1):
                w.writerow(
                    [env_name, checkpoint, r.peer_id, r.seed, i,
                     format(ret, ".17g"), int(det)]
                )


def write_summary_csv(path, metrics: WindowedMetrics):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window_index", "episodes", "mean_return", "std_return"])
        for i, (mu, sd) in enumerate(
            zip(metrics.per_window_mean, metrics.per_window_std)
        ):
            first = i * metrics.window + 1
            w.writerow([i, first, format(mu, ".17g"), format(sd, ".17g")])
        w.writerow(["overall", "", format(metrics.overall_mean, ".17g"),
                    format(metrics.overall_std, ".17g")])


def export_embeddings(
    path,
    models: Models,
    pool: PoolSpec,
    side: str,
    n_eps: int,
    seed: int,
    phys=None,
    path_table=None,
) -> None:
    """Raw per-step context embeddings for offline analysis."""
    peers = pool.train if side == "train" else pool.test
    rows = []
    for peer_idx, peer in enumerate(peers):
        env = build_env(
            pool.env, peer, rng_stream(seed, STREAM_EVAL, peer_idx, STREAM_ENV),
            phys, path_table,
        )
        sink: list = []
        run_adaptation(
            models, env, n_eps,
            rng_stream(seed, STREAM_EVAL, peer_idx, STREAM_POLICY),
            phys=phys, path_table=path_table, peer_id=peer_idx, seed=seed,
            embedding_sink=sink,
        )
        rows.extend(sink)
    d_z = models.spec.d_z
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["peer_id", "episode_index", "step_index"]
            + [f"z_{i}" for i in range(d_z)]
        )
        for peer_id, ep, step, z in rows:
            w.writerow([peer_id, ep, step] + [format(v, ".17g") for v in z])

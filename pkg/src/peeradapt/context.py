"""Cross-episode context: buffer, set encoder, peer identifier, rewards.

The ego agent's context is the sequence of its own (observation, action)
pairs over the episodes of the current meta-episode; terminal observations
are appended with an all-zero action vector when an episode closes, so
end-of-episode reveals reach the encoder. The encoder maps a context of
any size to a fixed vector by a two-level mean: per-episode means of a
learned pair embedding, averaged over episodes, then passed through a
second network. The empty context encodes to the zero vector directly.

A linear softmax head per peer slot turns the embedding into posterior
distributions over the training pool; their mean probability on the true
peers is the exploration reward mixed into the task reward on a linearly
decaying coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MLP, ParamStore, log_softmax, orthogonal, softmax

_STALE = object()


@dataclass(frozen=True)
class EncoderSpec:
    obs_dim: int
    n_actions: int
    f_hidden: tuple[int, ...]
    g_hidden: tuple[int, ...]
    d_z: int

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.n_actions


class Context:
    """Episode-structured pair buffer with cached encoder sums.

    ``pairs`` holds every pair in arrival order; ``bounds`` holds the pair
    counts at which episodes sealed. The cache keeps the sum of per-episode
    means over sealed episodes plus the running sum of the open episode,
    so re-encoding after an append is O(d_z) given the pair's embedding.
    The cache is tagged with the parameter version it was built against
    and recomputed transparently when parameters have changed.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1 episode")
        self.capacity = capacity
        self.pairs: list[np.ndarray] = []
        self.bounds: list[int] = []
        self.sum_means: np.ndarray | None = None
        self.partial_sum: np.ndarray | None = None
        self.partial_len = 0
        self.cache_version = _STALE

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_complete(self) -> int:
        return len(self.bounds)

    @property
    def n_episodes(self) -> int:
        """Episode count as the encoder sees it (open episode included)."""
        return self.n_complete + (1 if self.partial_open else 0)

    @property
    def partial_open(self) -> bool:
        last = self.bounds[-1] if self.bounds else 0
        return self.n_pairs > last

    def _push(self, pair: np.ndarray, f_out: np.ndarray | None, version) -> None:
        if not self.pairs:
            self.cache_version = version if f_out is not None else _STALE
            self.sum_means = None
            self.partial_sum = None
            self.partial_len = 0
        elif f_out is None or version != self.cache_version:
            self.cache_version = _STALE
        self.pairs.append(pair)
        if self.cache_version is not _STALE:
            if self.partial_sum is None:
                self.partial_sum = f_out.copy()
            else:
                self.partial_sum = self.partial_sum + f_out
            self.partial_len += 1

    def append(self, pair: np.ndarray, f_out=None, version=_STALE) -> None:
        if self.n_complete >= self.capacity:
            raise RuntimeError(
                f"context already holds {self.capacity} complete episodes"
            )
        self._push(pair, f_out, version)

    def close(self, pair: np.ndarray, f_out=None, version=_STALE) -> None:
        """Append the terminal pair, then seal the current episode."""
        if self.n_complete >= self.capacity:
            raise RuntimeError(
                f"context already holds {self.capacity} complete episodes"
            )
        self._push(pair, f_out, version)
        if self.cache_version is not _STALE:
            mean = self.partial_sum / self.partial_len
            self.sum_means = mean if self.sum_means is None else self.sum_means + mean
            self.partial_sum = None
            self.partial_len = 0
        self.bounds.append(self.n_pairs)

    def clear(self) -> None:
        self.pairs = []
        self.bounds = []
        self.sum_means = None
        self.partial_sum = None
        self.partial_len = 0
        self.cache_version = _STALE


class ContextEncoder:
    """Two-level mean encoder: z = g(mean over episodes of per-episode
    mean of f(obs, action one-hot))."""

    def __init__(self, store: ParamStore, spec: EncoderSpec, rng: np.random.Generator):
        self.spec = spec
        self.f = MLP(store, "enc_f", [spec.input_dim, *spec.f_hidden, spec.d_z], rng)
        self.g = MLP(store, "enc_g", [spec.d_z, *spec.g_hidden, spec.d_z], rng)

    def param_names(self) -> list[str]:
        return self.f.param_names() + self.g.param_names()

    def pair_input(self, obs: np.ndarray, action: int | None) -> np.ndarray:
        """Concatenate an observation with a one-hot action; ``None`` marks
        a terminal observation and yields the all-zero action block."""
        v = np.zeros(self.spec.input_dim)
        v[: self.spec.obs_dim] = obs
        if action is not None:
            v[self.spec.obs_dim + action] = 1.0
        return v

    def f_batch(self, store: ParamStore, pairs: np.ndarray) -> np.ndarray:
        out, _ = self.f.forward(store, pairs)
        return out

    def append_step(self, store: ParamStore, ctx: Context, obs, action: int) -> None:
        pair = self.pair_input(obs, action)
        f_out = self.f_batch(store, pair[None])[0]
        ctx.append(pair, f_out, store.version)

    def close_episode(self, store: ParamStore, ctx: Context, terminal_obs) -> None:
        pair = self.pair_input(terminal_obs, None)
        f_out = self.f_batch(store, pair[None])[0]
        ctx.close(pair, f_out, store.version)

    def refresh(self, store: ParamStore, ctx: Context) -> None:
        """Rebuild the cached sums from raw pairs under current parameters."""
        if not ctx.pairs:
            ctx.cache_version = store.version
            return
        u = self.f_batch(store, np.asarray(ctx.pairs))
        sum_means = None
        start = 0
        for end in ctx.bounds:
            mean = u[start:end].sum(axis=0) / (end - start)
            sum_means = mean if sum_means is None else sum_means + mean
            start = end
        ctx.sum_means = sum_means
        ctx.partial_len = ctx.n_pairs - start
        ctx.partial_sum = (
            u[start:].sum(axis=0) if ctx.partial_len else None
        )
        ctx.cache_version = store.version

    def mean_vector(self, store: ParamStore, ctx: Context) -> np.ndarray | None:
        """The two-level mean feeding g, or None for an empty context."""
        if ctx.n_pairs == 0:
            return None
        if ctx.cache_version != store.version:
            self.refresh(store, ctx)
        m = ctx.sum_means
        if ctx.partial_len:
            part = ctx.partial_sum / ctx.partial_len
            m = part if m is None else m + part
        return m / ctx.n_episodes

    def encode(self, store: ParamStore, ctx: Context) -> np.ndarray:
        m = self.mean_vector(store, ctx)
        if m is None:
            return np.zeros(self.spec.d_z)
        z, _ = self.g.forward(store, m[None])
        return z[0]


class Identifier:
    """One linear softmax head per peer slot over the context embedding."""

    def __init__(
        self,
        store: ParamStore,
        d_z: int,
        cardinalities: list[int],
        rng: np.random.Generator,
    ):
        self.d_z = d_z
        self.cardinalities = list(cardinalities)
        for j, k in enumerate(self.cardinalities):
            store.create(f"ident.W{j}", orthogonal(rng, (d_z, k), 1.0))
            store.create(f"ident.b{j}", np.zeros(k))

    @property
    def n_slots(self) -> int:
        return len(self.cardinalities)

    def param_names(self) -> list[str]:
        out = []
        for j in range(self.n_slots):
            out += [f"ident.W{j}", f"ident.b{j}"]
        return out

    def logits(self, store: ParamStore, z: np.ndarray) -> list[np.ndarray]:
        z = np.atleast_2d(z)
        return [
            z @ store[f"ident.W{j}"] + store[f"ident.b{j}"]
            for j in range(self.n_slots)
        ]

    def posteriors(self, store: ParamStore, z: np.ndarray) -> list[np.ndarray]:
        return [softmax(l) for l in self.logits(store, z)]

    def backward(self, store: ParamStore, z, dlogits: list[np.ndarray], grads):
        z = np.atleast_2d(z)
        dz = np.zeros_like(z)
        for j, dl in enumerate(dlogits):
            grads[f"ident.W{j}"] += z.T @ dl
            grads[f"ident.b{j}"] += dl.sum(axis=0)
            dz += dl @ store[f"ident.W{j}"].T
        return dz


def aux_loss(posteriors: list[np.ndarray], indices) -> np.ndarray:
    """Mean cross-entropy over slots: (1/m) sum_j CE(dist_j, i_j)."""
    indices = np.atleast_2d(np.asarray(indices, dtype=int))
    total = None
    for j, dist in enumerate(posteriors):
        dist = np.atleast_2d(dist)
        idx = indices[:, j]
        if np.any(idx < 0) or np.any(idx >= dist.shape[1]):
            raise ValueError(f"slot {j}: true index out of range")
        term = -np.log(dist[np.arange(len(idx)), idx])
        total = term if total is None else total + term
    return total / len(posteriors)


def exploration_reward(posteriors: list[np.ndarray], indices) -> np.ndarray:
    """Mean posterior probability assigned to the true peers, in [0, 1]."""
    indices = np.atleast_2d(np.asarray(indices, dtype=int))
    total = None
    for j, dist in enumerate(posteriors):
        dist = np.atleast_2d(dist)
        idx = indices[:, j]
        if np.any(idx < 0) or np.any(idx >= dist.shape[1]):
            raise ValueError(f"slot {j}: true index out of range")
        term = dist[np.arange(len(idx)), idx]
        total = term if total is None else total + term
    return total / len(posteriors)


@dataclass(frozen=True)
class RewardSchedule:
    """Linear decay of the exploration coefficient: c_init down to 0 over
    ``decay_steps`` environment steps."""

    c_init: float
    decay_steps: int

    def __post_init__(self):
        if self.c_init < 0:
            raise ValueError("c_init must be >= 0")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be >= 1")

    def coeff(self, step: int) -> float:
        return self.c_init * max(0.0, 1.0 - step / self.decay_steps)


def mixed_reward(
    task_reward: float,
    explore_reward: float,
    step: int,
    schedule: RewardSchedule,
    adaptation: bool = False,
) -> float:
    """Training-time reward r + c(step) * r_e; during online adaptation the
    exploration term is never added."""
    if adaptation:
        return task_reward
    return task_reward + schedule.coeff(step) * explore_reward


def prefix_mean_forward(u: np.ndarray, bounds: np.ndarray, ns: np.ndarray):
    """Two-level means of many prefixes of one meta-episode at once.

    ``u`` holds the pair embeddings f(o, a) of the whole meta-episode in
    order, ``bounds`` the pair counts at episode seals, and ``ns`` the
    per-transition prefix lengths (every entry must describe a non-empty
    context). One embedding per pair is shared across all prefixes via
    cumulative sums. Returns the (T, d_z) mean matrix plus the cache that
    ``prefix_mean_backward`` consumes.
    """
    bounds = np.asarray(bounds, dtype=int)
    ns = np.asarray(ns, dtype=int)
    d_z = u.shape[1]
    pref = np.vstack([np.zeros(d_z), np.cumsum(u, axis=0)])

    starts = np.concatenate([[0], bounds[:-1]]) if len(bounds) else bounds
    seg_len = bounds - starts
    if len(bounds):
        seg_means = (pref[bounds] - pref[starts]) / seg_len[:, None]
        cmeans = np.vstack([np.zeros(d_z), np.cumsum(seg_means, axis=0)])
    else:
        cmeans = np.zeros((1, d_z))

    k = np.searchsorted(bounds, ns, side="right")
    if len(bounds):
        last = np.where(k > 0, bounds[np.maximum(k - 1, 0)], 0)
    else:
        last = np.zeros_like(ns)
    plen = ns - last
    n_eps = k + (plen > 0)
    if np.any(n_eps < 1):
        raise ValueError("prefix_mean_forward got an empty prefix")

    m = cmeans[k].copy()
    has_partial = plen > 0
    if has_partial.any():
        m[has_partial] += (
            pref[ns[has_partial]] - pref[last[has_partial]]
        ) / plen[has_partial][:, None]
    m /= n_eps[:, None]
    cache = (bounds, seg_len, k, last, plen, ns, n_eps, len(u), d_z)
    return m, cache


def prefix_mean_backward(cache, dm: np.ndarray) -> np.ndarray:
    """d(loss)/d(pair embeddings) given d(loss)/d(prefix means)."""
    bounds, seg_len, k, last, plen, ns, n_eps, n_pairs, d_z = cache
    w = dm / n_eps[:, None]
    du = np.zeros((n_pairs, d_z))

    n_seg = len(bounds)
    if n_seg:
        # Segment e receives 1/T_e of every prefix that contains it whole.
        bucket = np.zeros((n_seg + 1, d_z))
        np.add.at(bucket, k, w)
        tail = bucket[::-1].cumsum(axis=0)[::-1]  # tail[e] = sum_{k >= e}
        seg_grad = tail[1:] / seg_len[:, None]
        du[: bounds[-1]] = np.repeat(seg_grad, seg_len, axis=0)

    has_partial = plen > 0
    if has_partial.any():
        v = w[has_partial] / plen[has_partial][:, None]
        diff = np.zeros((n_pairs + 1, d_z))
        np.add.at(diff, last[has_partial], v)
        np.add.at(diff, ns[has_partial], -v)
        du += np.cumsum(diff[:-1], axis=0)
    return du


def encode_prefix_means(
    encoder: ContextEncoder,
    store: ParamStore,
    pairs: np.ndarray,
    bounds: np.ndarray,
    ns: np.ndarray,
):
    """Convenience wrapper: f evaluation plus ``prefix_mean_forward``."""
    u, tape = encoder.f.forward(store, pairs)
    m, cache = prefix_mean_forward(u, bounds, ns)
    return m, (tape, cache)


def backward_prefix_means(
    encoder: ContextEncoder, store: ParamStore, cache, dm: np.ndarray, grads
) -> None:
    """Chain d(loss)/d(mean) back through the shared f evaluations."""
    tape, inner = cache
    du = prefix_mean_backward(inner, dm)
    encoder.f.backward(store, tape, du, grads)

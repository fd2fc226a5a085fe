"""Context encoder and reward machinery, checked against naive oracles.

The batch oracle used throughout recomputes the two-level mean directly
from the raw episode structure, without touching the incremental cache or
the prefix-sum training path.
"""

import math

import numpy as np
import pytest

from peeradapt.core import rng_stream
from peeradapt.nn import ParamStore, fd_check_store
from peeradapt.context import (
    Context,
    ContextEncoder,
    EncoderSpec,
    Identifier,
    RewardSchedule,
    aux_loss,
    backward_prefix_means,
    encode_prefix_means,
    exploration_reward,
    mixed_reward,
)

SPEC = EncoderSpec(obs_dim=4, n_actions=3, f_hidden=(8,), g_hidden=(8,), d_z=5)


def make_encoder(seed=0):
    store = ParamStore()
    enc = ContextEncoder(store, SPEC, rng_stream(seed, 0))
    return store, enc


def two_level_mean_oracle(store, enc, episodes, partial):
    """Naive reference: mean of per-episode means of f, partial included."""
    sums = []
    for ep in episodes + ([partial] if partial else []):
        outs = [enc.f_batch(store, p[None])[0] for p in ep]
        sums.append(sum(outs) / len(outs))
    return sum(sums) / len(sums)


def random_context(store, enc, rng, capacity=6):
    ctx = Context(capacity)
    episodes, partial = [], []
    n_ep = int(rng.integers(0, capacity))
    for _ in range(n_ep):
        ep = []
        for _ in range(int(rng.integers(1, 5))):
            obs = rng.standard_normal(SPEC.obs_dim)
            act = int(rng.integers(SPEC.n_actions))
            enc.append_step(store, ctx, obs, act)
            ep.append(enc.pair_input(obs, act))
        tobs = rng.standard_normal(SPEC.obs_dim)
        enc.close_episode(store, ctx, tobs)
        ep.append(enc.pair_input(tobs, None))
        episodes.append(ep)
    for _ in range(int(rng.integers(0, 4))):
        obs = rng.standard_normal(SPEC.obs_dim)
        act = int(rng.integers(SPEC.n_actions))
        enc.append_step(store, ctx, obs, act)
        partial.append(enc.pair_input(obs, act))
    return ctx, episodes, partial


def test_empty_context_encodes_to_zero_without_g():
    store, enc = make_encoder()
    # Bias g so that g(0) != 0; the empty context must bypass it.
    store.params["enc_g.b1"][:] = 1.0
    ctx = Context(capacity=3)
    assert np.array_equal(enc.encode(store, ctx), np.zeros(SPEC.d_z))


def test_single_pair_is_g_of_f():
    store, enc = make_encoder()
    ctx = Context(capacity=3)
    obs = rng_stream(1, 0).standard_normal(SPEC.obs_dim)
    enc.append_step(store, ctx, obs, 2)
    z = enc.encode(store, ctx)
    f_out = enc.f_batch(store, enc.pair_input(obs, 2)[None])
    want, _ = enc.g.forward(store, f_out)
    assert np.allclose(z, want[0], atol=1e-12, rtol=0)


def test_two_level_mean_differs_from_flat_mean():
    store, enc = make_encoder()
    rng = rng_stream(2, 0)
    ctx = Context(capacity=3)
    # One sealed episode of length 1 and an open episode of length 3.
    pairs = []
    obs = rng.standard_normal(SPEC.obs_dim)
    enc.close_episode(store, ctx, obs)  # single terminal pair
    pairs.append(enc.pair_input(obs, None))
    partial = []
    for _ in range(3):
        obs = rng.standard_normal(SPEC.obs_dim)
        enc.append_step(store, ctx, obs, 0)
        partial.append(enc.pair_input(obs, 0))

    m = enc.mean_vector(store, ctx)
    outs = enc.f_batch(store, np.asarray(pairs + partial))
    want = 0.5 * (outs[0] + outs[1:].mean(axis=0))
    flat = outs.mean(axis=0)
    assert np.allclose(m, want, atol=1e-12, rtol=0)
    assert not np.allclose(m, flat, atol=1e-6)


def test_incremental_matches_batch_recompute():
    store, enc = make_encoder(seed=3)
    rng = rng_stream(3, 1)
    checked = 0
    for _ in range(1000):
        ctx, episodes, partial = random_context(store, enc, rng)
        if ctx.n_pairs == 0:
            assert np.array_equal(enc.encode(store, ctx), np.zeros(SPEC.d_z))
            continue
        incremental = enc.mean_vector(store, ctx)
        oracle = two_level_mean_oracle(store, enc, episodes, partial)
        assert np.allclose(incremental, oracle, atol=1e-12, rtol=0)

        # Forcing a cache rebuild from raw pairs agrees too.
        ctx.cache_version = object()
        enc.refresh(store, ctx)
        assert np.allclose(enc.mean_vector(store, ctx), oracle, atol=1e-12, rtol=0)
        checked += 1
    assert checked > 700


def test_permutation_invariance():
    store, enc = make_encoder(seed=4)
    rng = rng_stream(4, 1)
    for _ in range(50):
        ctx, episodes, partial = random_context(store, enc, rng)
        if ctx.n_pairs == 0:
            continue
        z = enc.encode(store, ctx)

        # Shuffle pairs within every episode and the order of complete
        # episodes; the two-level mean must not change.
        shuffled = Context(ctx.capacity)
        order = rng.permutation(len(episodes))
        for ep_idx in order:
            ep = episodes[ep_idx]
            inner = rng.permutation(len(ep))
            for i in inner[:-1]:
                shuffled.append(ep[i], enc.f_batch(store, ep[i][None])[0], store.version)
            shuffled.close(
                ep[inner[-1]], enc.f_batch(store, ep[inner[-1]][None])[0], store.version
            )
        for i in rng.permutation(len(partial)):
            shuffled.append(
                partial[i], enc.f_batch(store, partial[i][None])[0], store.version
            )
        z2 = enc.encode(store, shuffled)
        assert np.allclose(z, z2, atol=1e-12, rtol=0)


def test_capacity_and_clear():
    store, enc = make_encoder()
    ctx = Context(capacity=2)
    obs = np.zeros(SPEC.obs_dim)
    enc.close_episode(store, ctx, obs)
    enc.close_episode(store, ctx, obs)
    with pytest.raises(RuntimeError):
        enc.append_step(store, ctx, obs, 0)
    with pytest.raises(RuntimeError):
        enc.close_episode(store, ctx, obs)
    ctx.clear()
    assert ctx.n_pairs == 0 and ctx.n_complete == 0
    assert np.array_equal(enc.encode(store, ctx), np.zeros(SPEC.d_z))


def test_close_episode_uses_zero_action_block():
    store, enc = make_encoder()
    obs = np.arange(SPEC.obs_dim, dtype=float)
    pair = enc.pair_input(obs, None)
    assert np.array_equal(pair[SPEC.obs_dim :], np.zeros(SPEC.n_actions))
    pair2 = enc.pair_input(obs, 1)
    assert pair2[SPEC.obs_dim + 1] == 1.0 and pair2[SPEC.obs_dim :].sum() == 1.0


def test_identifier_uniform_at_zero_embedding():
    store = ParamStore()
    ident = Identifier(store, d_z=5, cardinalities=[40, 3], rng=rng_stream(5, 0))
    dists = ident.posteriors(store, np.zeros((1, 5)))
    assert np.allclose(dists[0], np.full((1, 40), 1 / 40), atol=1e-12)
    assert np.allclose(dists[1], np.full((1, 3), 1 / 3), atol=1e-12)


def test_identifier_normalization_and_shift_invariance():
    store = ParamStore()
    ident = Identifier(store, d_z=5, cardinalities=[7, 4], rng=rng_stream(6, 0))
    z = rng_stream(6, 1).standard_normal((10, 5))
    dists = ident.posteriors(store, z)
    for d in dists:
        assert np.allclose(d.sum(axis=1), 1.0, atol=1e-12)
    logits = ident.logits(store, z)
    from peeradapt.nn import softmax

    for l, d in zip(logits, dists):
        assert np.allclose(softmax(l + 5.0), d, atol=1e-12)


def test_aux_loss_examples():
    uniform40 = np.full((1, 40), 1 / 40)
    assert aux_loss([uniform40], [[7]])[0] == pytest.approx(math.log(40), abs=1e-12)

    sure = np.zeros((1, 5))
    sure[0, 3] = 1.0
    assert aux_loss([sure, sure, sure], [[3, 3, 3]])[0] == pytest.approx(0.0, abs=1e-12)

    def with_true_prob(p, k=4):
        d = np.full((1, k), (1 - p) / (k - 1))
        d[0, 0] = p
        return d

    loss = aux_loss(
        [with_true_prob(0.5), with_true_prob(0.25), with_true_prob(0.25)],
        [[0, 0, 0]],
    )[0]
    assert loss == pytest.approx((math.log(2) + math.log(4) + math.log(4)) / 3, abs=1e-12)
    assert loss == pytest.approx(1.1552, abs=1e-4)

    with pytest.raises(ValueError):
        aux_loss([uniform40], [[40]])


def test_exploration_reward_examples_and_bounds():
    uniform40 = np.full((1, 40), 1 / 40)
    assert exploration_reward([uniform40], [[0]])[0] == pytest.approx(0.025, abs=1e-15)

    sure = np.zeros((1, 3))
    sure[0, 1] = 1.0
    assert exploration_reward([sure], [[1]])[0] == 1.0

    probs = [np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]]), np.array([[0.25, 0.75]])]
    assert exploration_reward(probs, [[0, 0, 0]])[0] == pytest.approx(1 / 3, abs=1e-15)

    rng = rng_stream(7, 0)
    for _ in range(200):
        dists = []
        m = int(rng.integers(1, 4))
        for _ in range(m):
            k = int(rng.integers(2, 9))
            raw = rng.random(k) + 1e-9
            dists.append((raw / raw.sum())[None])
        idx = [[int(rng.integers(d.shape[1])) for d in dists]]
        r = exploration_reward(dists, idx)[0]
        assert 0.0 <= r <= 1.0


def test_reward_schedule_and_mixing():
    sched = RewardSchedule(c_init=0.01, decay_steps=4_000_000)
    assert sched.coeff(0) == 0.01
    assert sched.coeff(2_000_000) == pytest.approx(0.005, abs=1e-18)
    assert sched.coeff(4_000_000) == 0.0
    assert sched.coeff(9_000_000) == 0.0

    assert mixed_reward(1.5, 0.8, 0, sched) == pytest.approx(1.5 + 0.008)
    assert mixed_reward(1.5, 0.8, 0, sched, adaptation=True) == 1.5
    # A zeroed schedule leaves the task reward untouched.
    zero = RewardSchedule(c_init=0.0, decay_steps=10)
    assert mixed_reward(-2.0, 1.0, 3, zero) == -2.0
    with pytest.raises(ValueError):
        RewardSchedule(c_init=-0.1, decay_steps=10)


def _build_record(store, enc, rng, n_pairs=11, bounds=(3, 7)):
    pairs = rng.standard_normal((n_pairs, SPEC.input_dim))
    ns = np.arange(1, n_pairs + 1)
    return pairs, np.asarray(bounds), ns


def test_prefix_means_match_per_prefix_oracle():
    store, enc = make_encoder(seed=8)
    rng = rng_stream(8, 1)
    pairs, bounds, ns = _build_record(store, enc, rng)
    m, _ = encode_prefix_means(enc, store, pairs, bounds, ns)

    u = enc.f_batch(store, pairs)
    for i, n in enumerate(ns):
        segs = []
        start = 0
        for b in bounds:
            if b <= n:
                segs.append(u[start:b].mean(axis=0))
                start = b
        if n > start:
            segs.append(u[start:n].mean(axis=0))
        want = np.mean(segs, axis=0)
        assert np.allclose(m[i], want, atol=1e-12, rtol=0), f"prefix {n}"


def test_prefix_means_match_cached_context_path():
    # The training-time prefix encoding and the rollout-time cached context
    # must produce identical embeddings for the same history.
    store, enc = make_encoder(seed=9)
    rng = rng_stream(9, 1)
    ctx = Context(capacity=4)
    pairs = []
    ns = []
    bounds = []
    for ep in range(3):
        for t in range(ep + 1):
            ns.append(len(pairs))
            obs = rng.standard_normal(SPEC.obs_dim)
            act = int(rng.integers(SPEC.n_actions))
            if ns[-1] > 0:
                zs_cached = enc.encode(store, ctx)
                m_cached = enc.mean_vector(store, ctx)
            enc.append_step(store, ctx, obs, act)
            pairs.append(enc.pair_input(obs, act))
        tobs = rng.standard_normal(SPEC.obs_dim)
        enc.close_episode(store, ctx, tobs)
        pairs.append(enc.pair_input(tobs, None))
        bounds.append(len(pairs))

    keep = [i for i, n in enumerate(ns) if n > 0]
    m, _ = encode_prefix_means(
        enc, store, np.asarray(pairs), np.asarray(bounds), np.asarray(ns)[keep]
    )
    # Replay the cached path prefix by prefix.
    ctx2 = Context(capacity=4)
    row = 0
    idx = 0
    for ep in range(3):
        for t in range(ep + 1):
            if ctx2.n_pairs > 0:
                got = enc.mean_vector(store, ctx2)
                assert np.allclose(got, m[row], atol=1e-12, rtol=0)
                row += 1
            ctx2.append(pairs[idx], enc.f_batch(store, pairs[idx][None])[0], store.version)
            idx += 1
        ctx2.close(pairs[idx], enc.f_batch(store, pairs[idx][None])[0], store.version)
        idx += 1
    assert row == len(keep)


def test_prefix_means_with_no_completed_episode():
    # A meta-episode whose first episode is still open: all prefixes are
    # pure partial means.
    store, enc = make_encoder(seed=11)
    rng = rng_stream(11, 1)
    pairs = rng.standard_normal((6, SPEC.input_dim))
    ns = np.arange(1, 7)
    m, _ = encode_prefix_means(enc, store, pairs, np.array([], dtype=int), ns)
    u = enc.f_batch(store, pairs)
    for i, n in enumerate(ns):
        assert np.allclose(m[i], u[:n].mean(axis=0), atol=1e-12, rtol=0)


def test_prefix_gradient_matches_finite_differences():
    store, enc = make_encoder(seed=10)
    rng = rng_stream(10, 1)
    pairs, bounds, ns = _build_record(store, enc, rng, n_pairs=9, bounds=(2, 5))
    weights = rng.standard_normal((len(ns), SPEC.d_z))

    def loss(s):
        m, _ = encode_prefix_means(enc, s, pairs, bounds, ns)
        z, _ = enc.g.forward(s, m)
        return float((z * weights).sum())

    m, cache = encode_prefix_means(enc, store, pairs, bounds, ns)
    z, g_tape = enc.g.forward(store, m)
    grads = store.zero_grads()
    dm = enc.g.backward(store, g_tape, weights, grads)
    backward_prefix_means(enc, store, cache, dm, grads)

    fd = fd_check_store(loss, store)
    for name in store.names():
        assert np.allclose(grads[name], fd[name], rtol=1e-6, atol=1e-8), name

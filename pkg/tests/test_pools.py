import json

import pytest

from peeradapt.pools import (
    ENV_KUHN,
    ENV_PP,
    PeerSpec,
    PoolEnvMismatchError,
    PoolFormatError,
    PoolVersionError,
    check_pool_env,
    gen_kuhn_pool,
    gen_pp_pool,
    load_pool,
    save_pool,
)


def test_kuhn_pool_counts_and_ranges():
    pool = gen_kuhn_pool(40, 10, seed=7)
    assert pool.env == ENV_KUHN
    assert len(pool.train) == 40 and len(pool.test) == 10
    assert pool.slot_cardinalities == [40]
    for t in pool.train + pool.test:
        (spec,) = t.specs
        assert spec.kind == "kuhn_p2"
        assert 0.0 <= spec.payload["xi"] <= 1.0
        assert 0.0 <= spec.payload["eta"] <= 1.0
    # Train labels are positions; test tuples carry no labels.
    assert [t.indices for t in pool.train] == [(i,) for i in range(40)]
    assert all(t.indices is None for t in pool.test)


def test_kuhn_pool_deterministic_and_split_disjoint():
    a = gen_kuhn_pool(5, 5, seed=3)
    b = gen_kuhn_pool(5, 5, seed=3)
    assert a.train == b.train and a.test == b.test
    # Train and test substreams are disjoint: no shared parameter pairs.
    train_params = {(t.specs[0].payload["xi"], t.specs[0].payload["eta"]) for t in a.train}
    test_params = {(t.specs[0].payload["xi"], t.specs[0].payload["eta"]) for t in a.test}
    assert not train_params & test_params
    assert gen_kuhn_pool(5, 5, seed=4).train != a.train


def test_kuhn_pool_minimal_and_invalid_sizes():
    pool = gen_kuhn_pool(1, 1, seed=0)
    assert len(pool.train) == 1 and len(pool.test) == 1
    with pytest.raises(ValueError):
        gen_kuhn_pool(0, 1, seed=0)


def test_pp_pool_structure():
    pool = gen_pp_pool(seed=11)
    assert pool.env == ENV_PP
    assert len(pool.train) == 16 and len(pool.test) == 24
    # Tuples are distinct combinations.
    def key(t):
        return tuple((s.kind, tuple(sorted(s.payload.items()))) for s in t.specs)

    assert len({key(t) for t in pool.train}) == 16
    assert len({key(t) for t in pool.test}) == 24
    for t in pool.train:
        pred, prey0, prey1 = t.specs
        assert pred.kind == "pp_predator" and pred.payload["pref"] in (0, 1)
        for p in (prey0, prey1):
            assert p.kind == "pp_prey"
            assert 0 <= p.payload["path"] <= 3  # train paths only
    for t in pool.test:
        _, prey0, prey1 = t.specs
        for p in (prey0, prey1):
            assert 4 <= p.payload["path"] <= 7  # unseen test paths only


def test_pp_pool_slot_indices_consistent():
    pool = gen_pp_pool(seed=11)
    assert len(pool.slot_cardinalities) == 3
    assert pool.slot_cardinalities[0] == len(
        {t.specs[0].payload["pref"] for t in pool.train}
    )
    for j in range(3):
        for t in pool.train:
            assert 0 <= t.indices[j] < pool.slot_cardinalities[j]
    # Labels decode back to the underlying values.
    classes = [sorted({t.specs[0].payload["pref"] for t in pool.train})]
    classes += [
        sorted({t.specs[s].payload["path"] for t in pool.train}) for s in (1, 2)
    ]
    for t in pool.train:
        vals = (
            t.specs[0].payload["pref"],
            t.specs[1].payload["path"],
            t.specs[2].payload["path"],
        )
        assert tuple(classes[j][t.indices[j]] for j in range(3)) == vals


def test_pp_pool_default_cardinalities():
    # With 16 of 32 combinations sampled, the default seed exercises the
    # full label spaces.
    pool = gen_pp_pool(seed=0)
    assert pool.slot_cardinalities[0] == 2


def test_pool_round_trip(tmp_path):
    for pool in (gen_kuhn_pool(6, 3, seed=5), gen_pp_pool(seed=5)):
        path = tmp_path / f"{pool.env}.json"
        save_pool(pool, path)
        loaded = load_pool(path)
        assert loaded.env == pool.env
        assert loaded.seed == pool.seed
        assert loaded.slot_cardinalities == pool.slot_cardinalities
        assert loaded.train == pool.train
        assert loaded.test == pool.test


def test_pool_file_byte_identical_for_same_seed(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_pool(gen_kuhn_pool(40, 10, seed=7), p1)
    save_pool(gen_kuhn_pool(40, 10, seed=7), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pool_loading_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_pool(tmp_path / "missing.json")

    truncated = tmp_path / "truncated.json"
    save_pool(gen_kuhn_pool(3, 2, seed=1), truncated)
    truncated.write_text(truncated.read_text()[:40])
    with pytest.raises(PoolFormatError):
        load_pool(truncated)

    versioned = tmp_path / "versioned.json"
    save_pool(gen_kuhn_pool(3, 2, seed=1), versioned)
    doc = json.loads(versioned.read_text())
    doc["version"] = 99
    versioned.write_text(json.dumps(doc))
    with pytest.raises(PoolVersionError):
        load_pool(versioned)

    missing_field = tmp_path / "missing_field.json"
    doc = json.loads((tmp_path / "versioned.json").read_text())
    doc["version"] = 1
    del doc["slot_cardinalities"]
    missing_field.write_text(json.dumps(doc))
    with pytest.raises(PoolFormatError):
        load_pool(missing_field)


def test_pool_env_guard():
    pool = gen_kuhn_pool(3, 2, seed=1)
    check_pool_env(pool, ENV_KUHN)
    with pytest.raises(PoolEnvMismatchError):
        check_pool_env(pool, ENV_PP)


def test_peer_spec_payload_validation():
    with pytest.raises(ValueError):
        PeerSpec("kuhn_p2", {"xi": 0.5})
    with pytest.raises(ValueError):
        PeerSpec("alien", {"x": 1})

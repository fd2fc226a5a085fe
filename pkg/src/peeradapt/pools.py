"""Peer pool generation, per-slot index labels, and serialization.

A peer tuple holds one spec per peer slot. For Kuhn there is a single
opponent slot and every sampled (xi, eta) pair is its own identification
class, so the label space is the train pool itself. For the predator-prey
world the tuple is (predator preference, prey 0 path, prey 1 path) and
each slot is labelled by the index of its value among the distinct values
present in the train pool. Test tuples carry no labels: they are never
used for identifier supervision.

Pool files are JSON with full float round-trip precision; train and test
draws come from disjoint substreams of the pool seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import STREAM_POOL_TEST, STREAM_POOL_TRAIN, rng_stream

POOL_VERSION = 1

ENV_KUHN = "kuhn"
ENV_PP = "predator_prey_w"

N_TRAIN_PATHS = 4
N_TEST_PATHS = 4


class PoolFormatError(ValueError):
    """Structurally invalid pool file."""


class PoolVersionError(ValueError):
    """Pool file written by an incompatible format version."""


class PoolEnvMismatchError(ValueError):
    """Pool generated for a different environment kind."""


@dataclass(frozen=True)
class PeerSpec:
    kind: str  # kuhn_p2 | pp_predator | pp_prey
    payload: dict

    def __post_init__(self):
        valid = {
            "kuhn_p2": {"xi", "eta"},
            "pp_predator": {"pref"},
            "pp_prey": {"path", "speed"},
        }
        if self.kind not in valid:
            raise ValueError(f"unknown peer kind {self.kind!r}")
        if set(self.payload) != valid[self.kind]:
            raise ValueError(
                f"payload keys {sorted(self.payload)} invalid for {self.kind!r}"
            )


@dataclass(frozen=True)
class PeerTuple:
    specs: tuple[PeerSpec, ...]
    indices: tuple[int, ...] | None = None  # identification labels (train only)


@dataclass
class PoolSpec:
    env: str
    seed: int
    train: list[PeerTuple]
    test: list[PeerTuple]
    slot_cardinalities: list[int]

    @property
    def n_slots(self) -> int:
        return len(self.slot_cardinalities)


def gen_kuhn_pool(n_train: int, n_test: int, seed: int) -> PoolSpec:
    """Sample (xi, eta) i.i.d. uniform on the unit square."""
    if n_train < 1 or n_test < 1:
        raise ValueError("pool sizes must be >= 1")
    rng_train = rng_stream(seed, STREAM_POOL_TRAIN)
    rng_test = rng_stream(seed, STREAM_POOL_TEST)

    def draw(rng, n, labelled):
        out = []
        for i in range(n):
            xi, eta = rng.random(2)
            spec = PeerSpec("kuhn_p2", {"xi": float(xi), "eta": float(eta)})
            out.append(PeerTuple((spec,), (i,) if labelled else None))
        return out

    return PoolSpec(
        env=ENV_KUHN,
        seed=seed,
        train=draw(rng_train, n_train, labelled=True),
        test=draw(rng_test, n_test, labelled=False),
        slot_cardinalities=[n_train],
    )


def gen_pp_pool(
    seed: int, n_train: int = 16, n_test: int = 24, prey_speed: float = 0.08
) -> PoolSpec:
    """Sample distinct (preference, prey paths) combinations.

    Train tuples use train paths only (global path ids 0-3); test tuples
    use test paths only (ids 4-7), so every test prey policy is unseen.
    """
    max_combos = 2 * N_TRAIN_PATHS * N_TRAIN_PATHS
    if not 1 <= n_train <= max_combos or not 1 <= n_test <= max_combos:
        raise ValueError(f"pool sizes must be in [1, {max_combos}]")

    def combos(path_ids):
        return [
            (pref, p0, p1)
            for pref in range(2)
            for p0 in path_ids
            for p1 in path_ids
        ]

    def tuple_from(combo, labelled, classes=None):
        pref, p0, p1 = combo
        specs = (
            PeerSpec("pp_predator", {"pref": pref}),
            PeerSpec("pp_prey", {"path": p0, "speed": prey_speed}),
            PeerSpec("pp_prey", {"path": p1, "speed": prey_speed}),
        )
        if not labelled:
            return PeerTuple(specs)
        idx = tuple(classes[j].index(v) for j, v in enumerate((pref, p0, p1)))
        return PeerTuple(specs, idx)

    rng_train = rng_stream(seed, STREAM_POOL_TRAIN)
    rng_test = rng_stream(seed, STREAM_POOL_TEST)
    train_pool = combos(range(N_TRAIN_PATHS))
    test_pool = combos(range(N_TRAIN_PATHS, N_TRAIN_PATHS + N_TEST_PATHS))
    train_sel = [train_pool[i] for i in rng_train.choice(max_combos, n_train, replace=False)]
    test_sel = [test_pool[i] for i in rng_test.choice(max_combos, n_test, replace=False)]

    # Identification classes are the distinct values present per slot.
    classes = [sorted({c[j] for c in train_sel}) for j in range(3)]
    return PoolSpec(
        env=ENV_PP,
        seed=seed,
        train=[tuple_from(c, True, classes) for c in train_sel],
        test=[tuple_from(c, False) for c in test_sel],
        slot_cardinalities=[len(cl) for cl in classes],
    )


def save_pool(pool: PoolSpec, path) -> None:
    doc = {
        "version": POOL_VERSION,
        "env": pool.env,
        "seed": pool.seed,
        "slot_cardinalities": pool.slot_cardinalities,
        "train": [_tuple_to_doc(t) for t in pool.train],
        "test": [_tuple_to_doc(t) for t in pool.test],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _tuple_to_doc(t: PeerTuple) -> dict:
    doc = {"specs": [{"kind": s.kind, "payload": s.payload} for s in t.specs]}
    if t.indices is not None:
        doc["indices"] = list(t.indices)
    return doc


def _tuple_from_doc(doc: dict) -> PeerTuple:
    specs = tuple(PeerSpec(s["kind"], s["payload"]) for s in doc["specs"])
    idx = tuple(doc["indices"]) if "indices" in doc else None
    return PeerTuple(specs, idx)


def load_pool(path) -> PoolSpec:
    """Read a pool file; raises FileNotFoundError, PoolFormatError, or
    PoolVersionError as distinct failure modes."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise PoolFormatError(f"pool file is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "version" not in doc:
        raise PoolFormatError("pool file missing version field")
    if doc["version"] != POOL_VERSION:
        raise PoolVersionError(
            f"pool version {doc['version']} != supported {POOL_VERSION}"
        )
    try:
        return PoolSpec(
            env=doc["env"],
            seed=int(doc["seed"]),
            train=[_tuple_from_doc(t) for t in doc["train"]],
            test=[_tuple_from_doc(t) for t in doc["test"]],
            slot_cardinalities=[int(c) for c in doc["slot_cardinalities"]],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise PoolFormatError(f"malformed pool file: {e}") from e


def check_pool_env(pool: PoolSpec, expected_env: str) -> None:
    if pool.env != expected_env:
        raise PoolEnvMismatchError(
            f"pool was generated for env {pool.env!r}, expected {expected_env!r}"
        )

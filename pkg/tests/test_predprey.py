import math

import numpy as np
import pytest

from peeradapt.core import rng_stream
from peeradapt.predprey import (
    ACTION_NAMES,
    DEFAULT_TEST_PATHS,
    DEFAULT_TRAIN_PATHS,
    EGO,
    N_PREDATORS,
    OBS_DIM,
    PhysicsConfig,
    PredatorPrefPolicy,
    PredPreyEnv,
    PreyPathPolicy,
    World,
    build_ego_obs,
    peer_predator_step,
    predator_prey_reward,
    prey_step,
)

PHYS = PhysicsConfig()


def make_world(positions, velocities=None):
    positions = np.asarray(positions, dtype=np.float64)
    if velocities is None:
        velocities = np.zeros_like(positions)
    return World(positions, np.asarray(velocities, dtype=np.float64))


def straight_prey(points, speed=0.08):
    return PreyPathPolicy(np.asarray(points, dtype=np.float64), speed)


def make_env(seed=0, pref=0, paths=(0, 1), phys=PHYS):
    prey = [
        straight_prey(DEFAULT_TRAIN_PATHS[paths[0]], phys.prey_speed),
        straight_prey(DEFAULT_TRAIN_PATHS[paths[1]], phys.prey_speed),
    ]
    return PredPreyEnv(PredatorPrefPolicy(pref), prey, rng_stream(seed, 0), phys)


def test_reward_formula_example():
    w = make_world([[0, 0], [1, 0], [0, 1], [1, 1]])
    assert predator_prey_reward(w, PHYS) == pytest.approx(-0.2, abs=1e-15)


def test_reward_matches_brute_force_on_random_worlds():
    rng = rng_stream(1, 0)
    for _ in range(200):
        pos = rng.uniform(-1, 1, size=(4, 2))
        w = make_world(pos)
        got = predator_prey_reward(w, PHYS)
        want = 0.0
        for b in range(2, 4):
            best = math.inf
            for a in range(2):
                best = min(best, math.dist(pos[a], pos[b]))
            want -= 0.1 * best
        assert got == pytest.approx(want, abs=1e-12)


def test_visibility_boundary_exact():
    base = [[0.0, 0.0], [0.19, 0.0], [0.5, 0.5], [-0.5, -0.5]]
    obs = build_ego_obs(make_world(base), PHYS)
    assert obs[8] == 1.0 and obs[4] == pytest.approx(0.19)

    base[1] = [0.21, 0.0]
    obs = build_ego_obs(make_world(base), PHYS)
    assert obs[8] == 0.0
    assert np.array_equal(obs[4:8], np.zeros(4))

    base[1] = [0.2, 0.0]  # inclusive boundary
    obs = build_ego_obs(make_world(base), PHYS)
    assert obs[8] == 1.0


def test_tower_contact_grants_full_visibility():
    # Ego sits on a watchtower; a peer 0.9 away becomes visible.
    w = make_world([[0.8, 0.8], [-0.1, 0.8], [0.5, -0.5], [-0.5, 0.5]])
    obs = build_ego_obs(w, PHYS)
    assert obs[8] == 1.0
    assert obs[4] == pytest.approx(-0.9)
    # All flags (agents and landmarks) are raised.
    flags = [obs[4 + 5 * i + 4] for i in range(3)] + [
        obs[19 + 3 * i + 2] for i in range(6)
    ]
    assert all(f == 1.0 for f in flags)


def test_masking_never_leaks_and_is_idempotent():
    rng = rng_stream(2, 0)
    for _ in range(100):
        pos = rng.uniform(-1, 1, size=(4, 2))
        if any(
            np.linalg.norm(pos[EGO] - np.asarray(t)) <= PHYS.tower_contact_radius
            for t in PHYS.towers
        ):
            continue
        w = make_world(pos, rng.standard_normal((4, 2)))
        obs = build_ego_obs(w, PHYS)
        assert obs.shape == (OBS_DIM,)
        for i in range(1, 4):
            if np.linalg.norm(pos[i] - pos[EGO]) > PHYS.obs_radius:
                assert np.array_equal(obs[4 + 5 * (i - 1) : 4 + 5 * i], np.zeros(5))
        for j, lm in enumerate(PHYS.landmark_positions()):
            if np.linalg.norm(lm - pos[EGO]) > PHYS.obs_radius:
                assert np.array_equal(obs[19 + 3 * j : 22 + 3 * j], np.zeros(3))
        assert np.array_equal(obs, build_ego_obs(w, PHYS))


def test_prey_direction_reverses_at_endpoint():
    # Two-waypoint path of length L walked at speed s reverses after
    # ceil(L / s) steps.
    pol = straight_prey([[0.0, 0.0], [1.0, 0.0]], speed=0.3)
    s, d = 0.0, 1
    steps = 0
    while d == 1:
        s, d = pol.advance(s, d)
        steps += 1
    assert steps == math.ceil(1.0 / 0.3)
    assert d == -1


def test_prey_position_closed_form_before_turnaround():
    pol = straight_prey([[0.2, -0.4], [0.2, 0.6]], speed=0.07)
    s, d = 0.0, 1
    for k in range(1, 14):  # L / s ~ 14.3
        s, d = pol.advance(s, d)
        want = np.array([0.2, -0.4]) + k * 0.07 * np.array([0.0, 1.0])
        assert np.allclose(pol.point_at(s), want, atol=1e-12)
        assert d == 1


def test_prey_turns_corner_without_overshoot():
    # Waypoint exactly at a step boundary: next step proceeds along the
    # second segment with no residual loss.
    pol = straight_prey([[0.0, 0.0], [0.2, 0.0], [0.2, 0.2]], speed=0.1)
    s, d = 0.0, 1
    s, d = pol.advance(s, d)
    s, d = pol.advance(s, d)
    assert np.allclose(pol.point_at(s), [0.2, 0.0], atol=1e-12)
    s, d = pol.advance(s, d)
    assert np.allclose(pol.point_at(s), [0.2, 0.1], atol=1e-12)
    # prey_step from the current on-path position gives the same move.
    pol2 = straight_prey([[0.0, 0.0], [0.2, 0.0], [0.2, 0.2]], speed=0.1)
    pos = np.array([0.2, 0.0])
    vel = prey_step(pol2, pos)
    assert np.allclose(pos + vel, [0.2, 0.1], atol=1e-12)


def test_prey_stays_on_polyline():
    pol = straight_prey(DEFAULT_TRAIN_PATHS[3], speed=0.11)
    s, d = 0.0, 1
    for _ in range(200):
        s, d = pol.advance(s, d)
        p = pol.point_at(s)
        assert abs(pol.project(p) - s) < 1e-9


def test_peer_predator_chase_examples():
    # Target directly to the right -> move right.
    w = make_world([[0.9, 0.9], [0.0, 0.0], [0.5, 0.0], [0.9, -0.9]])
    a = peer_predator_step(PredatorPrefPolicy(0), w, PHYS)
    assert ACTION_NAMES[a] == "right"

    # Target at the predator's own position -> stand still.
    w = make_world([[0.9, 0.9], [0.5, 0.5], [0.5, 0.5], [0.9, -0.9]])
    a = peer_predator_step(PredatorPrefPolicy(0), w, PHYS)
    assert ACTION_NAMES[a] == "stay"

    # Target up-right at 60 degrees: the vertical component dominates.
    offset = 0.4 * np.array([math.cos(math.radians(60)), math.sin(math.radians(60))])
    w = make_world([[0.9, 0.9], [0.0, 0.0], list(offset), [0.9, -0.9]])
    a = peer_predator_step(PredatorPrefPolicy(0), w, PHYS)
    assert ACTION_NAMES[a] == "up"

    # The preference slot selects which prey is chased.
    w = make_world([[0.9, 0.9], [0.0, 0.0], [0.5, 0.0], [-0.5, 0.0]])
    assert ACTION_NAMES[peer_predator_step(PredatorPrefPolicy(0), w, PHYS)] == "right"
    assert ACTION_NAMES[peer_predator_step(PredatorPrefPolicy(1), w, PHYS)] == "left"


def test_episode_never_exceeds_step_limit():
    env = make_env(seed=3)
    env.reset()
    steps = 0
    done = False
    while not done:
        out = env.step(0)
        steps += 1
        done = out.episode_done
    assert steps <= PHYS.max_steps
    assert env.world.step_count <= PHYS.max_steps


def test_episode_ends_immediately_when_both_prey_touched():
    # Prey start at their path heads and advance 0.08 along them this
    # step: prey0 to (-0.52, 0.45), prey1 to (0.45, -0.52). Park the ego
    # next to prey0's landing spot and the peer predator (which chases
    # prey1) above prey1's; both prey get touched in the same step.
    env = make_env(seed=3, pref=1, paths=(0, 1))
    env.reset()
    env.world.positions[0] = [-0.52, 0.46]
    env.world.positions[1] = [0.45, -0.51]
    env.world.velocities[:] = 0.0
    out = env.step(0)
    assert env.world.touched.all()
    assert out.episode_done
    assert env.world.step_count < PHYS.max_steps
    with pytest.raises(RuntimeError):
        env.step(0)


def test_mid_episode_reward_matches_formula():
    env = make_env(seed=4)
    env.reset()
    out = env.step(2)
    if not out.episode_done:
        w = env.world
        want = predator_prey_reward(w, PHYS)
        assert out.task_reward == pytest.approx(want, abs=1e-15)


def test_step_rejects_bad_action_and_terminal():
    env = make_env(seed=5)
    env.reset()
    with pytest.raises(ValueError):
        env.step(5)
    done = False
    while not done:
        done = env.step(0).episode_done
    with pytest.raises(RuntimeError):
        env.step(0)


def test_trajectories_bit_identical_for_same_seed():
    def run(seed):
        env = make_env(seed=seed)
        policy = rng_stream(seed, 9)
        frames = []
        for _ in range(3):
            obs = env.reset()
            frames.append(obs.copy())
            done = False
            while not done:
                out = env.step(int(policy.integers(5)))
                frames.append(out.next_observation.copy())
                frames.append(np.array([out.task_reward]))
                done = out.episode_done
        return np.concatenate(frames)

    a, b = run(11), run(11)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, run(12))


def test_observation_dimension_accounting():
    # 4 (ego) + 3 agents x 5 + 6 landmarks x 3 = 37.
    assert 4 + 3 * 5 + 6 * 3 == OBS_DIM
    assert len(PHYS.towers) == 4 and len(PHYS.landmarks) == 2
    assert len(DEFAULT_TRAIN_PATHS) == 4 and len(DEFAULT_TEST_PATHS) == 4

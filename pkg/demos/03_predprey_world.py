"""Predator-prey world mechanics: masked views, watchtowers, capture.

Drives the ego predator with a simple script - head for a watchtower,
then chase whatever became visible - and narrates what the 37-d masked
observation contains at each phase.

Run: python demos/03_predprey_world.py
"""

import numpy as np

from peeradapt.core import rng_stream
from peeradapt.pools import gen_pp_pool
from peeradapt.predprey import (
    ACTION_NAMES,
    DEFAULT_TEST_PATHS,
    DEFAULT_TRAIN_PATHS,
    PhysicsConfig,
    PredPreyEnv,
    peer_from_specs,
)

phys = PhysicsConfig()
pool = gen_pp_pool(seed=3)
peer = pool.train[0]
predator, prey = peer_from_specs(
    peer.specs, DEFAULT_TRAIN_PATHS + DEFAULT_TEST_PATHS, phys
)
print(f"peer tuple: predator prefers prey {predator.target_prey}, "
      f"prey paths {[peer.specs[i].payload['path'] for i in (1, 2)]}")

env = PredPreyEnv(predator, prey, rng_stream(5, 0), phys)
obs = env.reset()
print(f"\nego starts at ({obs[0]:+.2f}, {obs[1]:+.2f}); "
      f"visible agents: {[i for i in range(3) if obs[4 + 5*i + 4] > 0]}")


def flags(o):
    agents = [int(o[4 + 5 * i + 4]) for i in range(3)]
    landmarks = [int(o[19 + 3 * j + 2]) for j in range(6)]
    return agents, landmarks


def toward(o, target):
    # Greedy scripted controller: biggest-axis move toward a point.
    dx, dy = target[0] - o[0], target[1] - o[1]
    if abs(dx) < 0.02 and abs(dy) < 0.02:
        return 0
    if abs(dx) >= abs(dy):
        return 2 if dx > 0 else 1
    return 4 if dy > 0 else 3


tower = np.array(phys.towers[0])
total = 0.0
for t in range(phys.max_steps):
    target = tower
    agents, landmarks = flags(obs)
    if agents[1] or agents[2]:
        # A prey is visible: chase the first visible one.
        prey_idx = 1 if agents[1] else 2
        base = 4 + 5 * prey_idx
        target = obs[0:2] + obs[base : base + 2]
    action = toward(obs, target)
    out = env.step(action)
    total += out.task_reward
    if t % 8 == 0 or out.episode_done:
        agents, landmarks = flags(out.next_observation)
        print(f"step {t+1:>2}: {ACTION_NAMES[action]:<5} reward {out.task_reward:+.3f} "
              f"agent flags {agents} landmark flags {landmarks}")
    obs = out.next_observation
    if out.episode_done:
        break

print(f"\nepisode ended after {env.world.step_count} steps, "
      f"prey touched: {[bool(x) for x in env.world.touched]}, return {total:+.2f}")
print("reward each step is -0.1 * sum over prey of distance to the nearest predator")

"""Predator-prey particle world with watchtowers and a masked ego view.

Two predators (the first is the ego agent) chase two prey on the square
[-1, 1]^2. Prey follow fixed back-and-forth polyline paths; the peer
predator greedily chases its preferred prey under full observability.
The ego agent sees only entities within its observation radius unless it
is in contact with a watchtower, which grants full visibility. All
predators share the cover-all-prey reward -c * sum_b min_a d(a, b); an
episode ends when every prey has been touched at least once or after the
step limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Env, StepOutcome

N_ACTIONS = 5
OBS_DIM = 37

# Action order: stand still, then the four axis moves.
ACTION_VECS = np.array(
    [[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]
)
_ACTION_TUPLES = tuple((float(a[0]), float(a[1])) for a in ACTION_VECS)
ACTION_NAMES = ("stay", "left", "right", "down", "up")

N_PREDATORS = 2
N_PREY = 2
EGO = 0

# Default path patterns, reconstructed shapes: the published figure only
# depicts them graphically, so these coordinates are shipped defaults and
# overridable through the experiment config. Ids 0-3 train, 4-7 test.
DEFAULT_TRAIN_PATHS = [
    [[-0.6, 0.45], [0.6, 0.45]],
    [[0.45, -0.6], [0.45, 0.6]],
    [[-0.6, -0.6], [0.6, 0.6]],
    [[-0.6, 0.6], [0.0, 0.0], [0.6, 0.6]],
]
DEFAULT_TEST_PATHS = [
    [[-0.6, -0.45], [0.6, -0.45]],
    [[-0.45, -0.6], [-0.45, 0.6]],
    [[-0.6, 0.6], [0.6, -0.6]],
    [[-0.6, -0.6], [0.0, 0.0], [0.6, -0.6]],
]


@dataclass(frozen=True)
class PhysicsConfig:
    """Integration and geometry constants (particle-world conventions)."""

    dt: float = 0.1
    damping: float = 0.25
    accel: float = 5.0
    max_speed: float = 1.0
    body_radius: float = 0.05
    tower_contact_radius: float = 0.1
    obs_radius: float = 0.2
    reward_coef: float = 0.1
    max_steps: int = 40
    prey_speed: float = 0.08  # arc distance per step
    towers: tuple = ((0.8, 0.8), (0.8, -0.8), (-0.8, 0.8), (-0.8, -0.8))
    landmarks: tuple = ((0.0, 0.35), (0.0, -0.35))

    @property
    def touch_distance(self) -> float:
        return 2.0 * self.body_radius

    def landmark_positions(self) -> np.ndarray:
        return np.array(list(self.towers) + list(self.landmarks))


@dataclass
class PreyPathPolicy:
    """Back-and-forth motion along a waypoint polyline at fixed arc speed."""

    waypoints: np.ndarray
    speed: float
    direction: int = 1

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")
        seg = np.diff(self.waypoints, axis=0)
        self.seg_lengths = np.sqrt((seg**2).sum(axis=1))
        if np.any(self.seg_lengths <= 0):
            raise ValueError("degenerate path segment")
        self.length = float(self.seg_lengths.sum())

    def point_xy(self, s: float) -> tuple[float, float]:
        """Point at arc length s from the first waypoint, as scalars."""
        s = min(max(s, 0.0), self.length)
        acc = 0.0
        n = len(self.seg_lengths)
        for i in range(n):
            seg_len = self.seg_lengths[i]
            if s <= acc + seg_len or i == n - 1:
                t = (s - acc) / seg_len
                x0, y0 = self.waypoints[i]
                x1, y1 = self.waypoints[i + 1]
                return (1 - t) * x0 + t * x1, (1 - t) * y0 + t * y1
            acc += seg_len
        x, y = self.waypoints[-1]
        return float(x), float(y)

    def point_at(self, s: float) -> np.ndarray:
        return np.array(self.point_xy(s))

    def project(self, pos: np.ndarray) -> float:
        """Arc length of the closest polyline point to ``pos``."""
        pos = np.asarray(pos, dtype=np.float64)
        best_s, best_d = 0.0, np.inf
        acc = 0.0
        for i, seg_len in enumerate(self.seg_lengths):
            a, b = self.waypoints[i], self.waypoints[i + 1]
            t = np.clip(np.dot(pos - a, b - a) / seg_len**2, 0.0, 1.0)
            p = (1 - t) * a + t * b
            d = np.linalg.norm(pos - p)
            if d < best_d:
                best_d, best_s = d, acc + t * seg_len
            acc += seg_len
        return best_s

    def advance(self, s: float, direction: int) -> tuple[float, int]:
        """One step of arc motion with reflection at both endpoints."""
        s = s + direction * self.speed
        while s < 0.0 or s > self.length:
            if s > self.length:
                s = 2 * self.length - s
            else:
                s = -s
            direction = -direction
        return s, direction


def prey_step(policy: PreyPathPolicy, position: np.ndarray) -> np.ndarray:
    """Velocity command (displacement for this step) from the current
    on-path position; flips ``policy.direction`` in place at endpoints."""
    s = policy.project(position)
    new_s, new_dir = policy.advance(s, policy.direction)
    policy.direction = new_dir
    return policy.point_at(new_s) - policy.point_at(s)


@dataclass(frozen=True)
class PredatorPrefPolicy:
    """Peer predator that always chases one preferred prey."""

    target_prey: int

    def __post_init__(self):
        if not 0 <= self.target_prey < N_PREY:
            raise ValueError("target prey index out of range")


@dataclass
class World:
    positions: np.ndarray  # (4, 2): ego, peer predator, prey0, prey1
    velocities: np.ndarray  # (4, 2)
    step_count: int = 0
    touched: np.ndarray = field(default_factory=lambda: np.zeros(N_PREY, dtype=bool))


def _integrate_xy(px, py, vx, vy, action: int, phys: PhysicsConfig):
    """One particle step in scalars: damped velocity, acceleration, clip."""
    ax, ay = _ACTION_TUPLES[action]
    damp = 1.0 - phys.damping
    vx = vx * damp + ax * phys.accel * phys.dt
    vy = vy * damp + ay * phys.accel * phys.dt
    speed = math.hypot(vx, vy)
    if speed > phys.max_speed:
        scale = phys.max_speed / speed
        vx *= scale
        vy *= scale
    return px + vx * phys.dt, py + vy * phys.dt, vx, vy


def integrate(pos, vel, action: int, phys: PhysicsConfig):
    """One particle step: damped velocity, acceleration, speed clip."""
    px, py, vx, vy = _integrate_xy(pos[0], pos[1], vel[0], vel[1], action, phys)
    return np.array([px, py]), np.array([vx, vy])


def peer_predator_step(policy: PredatorPrefPolicy, world: World, phys: PhysicsConfig) -> int:
    """Discrete move that maximally reduces distance to the target prey's
    current position (one simulated step; ties keep the lowest action id)."""
    tx, ty = world.positions[N_PREDATORS + policy.target_prey]
    px, py = world.positions[1]
    vx, vy = world.velocities[1]
    best_a, best_d = 0, math.inf
    for a in range(N_ACTIONS):
        nx, ny, _, _ = _integrate_xy(px, py, vx, vy, a, phys)
        d = math.hypot(nx - tx, ny - ty)
        if d < best_d:
            best_a, best_d = a, d
    return best_a


def predator_prey_reward(world: World, phys: PhysicsConfig) -> float:
    total = 0.0
    p = world.positions
    for b in range(N_PREDATORS, N_PREDATORS + N_PREY):
        bx, by = p[b]
        best = math.inf
        for a in range(N_PREDATORS):
            d = math.hypot(bx - p[a][0], by - p[a][1])
            if d < best:
                best = d
        total += best
    return -phys.reward_coef * total


def build_ego_obs(world: World, phys: PhysicsConfig) -> np.ndarray:
    """Masked 37-d ego view; watchtower contact reveals everything."""
    ex, ey = world.positions[EGO]
    r_tower = phys.tower_contact_radius
    at_tower = any(math.hypot(ex - tx, ey - ty) <= r_tower for tx, ty in phys.towers)
    r_obs = phys.obs_radius

    obs = np.zeros(OBS_DIM)
    obs[0] = ex
    obs[1] = ey
    obs[2:4] = world.velocities[EGO]
    cursor = 4
    for i in range(1, N_PREDATORS + N_PREY):
        x, y = world.positions[i]
        if at_tower or math.hypot(x - ex, y - ey) <= r_obs:
            obs[cursor] = x - ex
            obs[cursor + 1] = y - ey
            obs[cursor + 2 : cursor + 4] = world.velocities[i]
            obs[cursor + 4] = 1.0
        cursor += 5
    for lx, ly in tuple(phys.towers) + tuple(phys.landmarks):
        if at_tower or math.hypot(lx - ex, ly - ey) <= r_obs:
            obs[cursor] = lx - ex
            obs[cursor + 1] = ly - ey
            obs[cursor + 2] = 1.0
        cursor += 3
    return obs


class PredPreyEnv(Env):
    """Single-ego stepping contract over the particle world.

    Peer agents (one preference-driven predator, two path-following prey)
    advance inside ``step``. Prey are kinematic: they move along their
    polylines by ``speed`` per step and report displacement/dt as their
    velocity.
    """

    obs_dim = OBS_DIM
    n_actions = N_ACTIONS

    def __init__(
        self,
        predator: PredatorPrefPolicy,
        prey_policies: list[PreyPathPolicy],
        rng: np.random.Generator,
        phys: PhysicsConfig | None = None,
    ):
        if len(prey_policies) != N_PREY:
            raise ValueError(f"expected {N_PREY} prey policies")
        self.predator = predator
        self.prey_policies = prey_policies
        self.rng = rng
        self.phys = phys or PhysicsConfig()
        self.world: World | None = None
        self._prey_arc: list[float] = []
        self._prey_dir: list[int] = []
        self._done = True

    def set_peer(self, peer) -> None:
        predator, prey_policies = peer
        self.predator = predator
        self.prey_policies = prey_policies

    def reset(self) -> np.ndarray:
        positions = np.zeros((N_PREDATORS + N_PREY, 2))
        positions[:N_PREDATORS] = self.rng.uniform(-1, 1, size=(N_PREDATORS, 2))
        self._prey_arc = []
        self._prey_dir = []
        for b, pol in enumerate(self.prey_policies):
            self._prey_arc.append(0.0)
            self._prey_dir.append(pol.direction)
            positions[N_PREDATORS + b] = pol.point_at(0.0)
        self.world = World(positions, np.zeros_like(positions))
        self._done = False
        return build_ego_obs(self.world, self.phys)

    def step(self, action: int) -> StepOutcome:
        if self.world is None:
            raise RuntimeError("step called before reset")
        if self._done:
            raise RuntimeError("step called on a terminal episode")
        self._check_action(action)
        w, phys = self.world, self.phys

        peer_action = peer_predator_step(self.predator, w, phys)
        for idx, act in ((EGO, action), (1, peer_action)):
            px, py, vx, vy = _integrate_xy(
                w.positions[idx][0], w.positions[idx][1],
                w.velocities[idx][0], w.velocities[idx][1], act, phys,
            )
            w.positions[idx][0] = px
            w.positions[idx][1] = py
            w.velocities[idx][0] = vx
            w.velocities[idx][1] = vy
        for b, pol in enumerate(self.prey_policies):
            ox, oy = pol.point_xy(self._prey_arc[b])
            self._prey_arc[b], self._prey_dir[b] = pol.advance(
                self._prey_arc[b], self._prey_dir[b]
            )
            nx, ny = pol.point_xy(self._prey_arc[b])
            row = N_PREDATORS + b
            w.positions[row][0] = nx
            w.positions[row][1] = ny
            w.velocities[row][0] = (nx - ox) / phys.dt
            w.velocities[row][1] = (ny - oy) / phys.dt

        w.step_count += 1
        for b in range(N_PREY):
            if not w.touched[b]:
                bx, by = w.positions[N_PREDATORS + b]
                for a in range(N_PREDATORS):
                    if math.hypot(bx - w.positions[a][0], by - w.positions[a][1]) <= phys.touch_distance:
                        w.touched[b] = True
                        break

        reward = predator_prey_reward(w, phys)
        done = bool(w.touched.all()) or w.step_count >= phys.max_steps
        self._done = done
        return StepOutcome(build_ego_obs(w, phys), reward, done)


def peer_from_specs(specs, path_table: list, phys: PhysicsConfig):
    """Build native peer policies from generic pool payloads.

    ``specs`` is a 3-slot tuple (pp_predator, pp_prey, pp_prey) whose
    payloads carry the preference index and global path ids into
    ``path_table``.
    """
    pred_spec, *prey_specs = specs
    predator = PredatorPrefPolicy(int(pred_spec.payload["pref"]))
    prey = [
        PreyPathPolicy(
            np.asarray(path_table[int(s.payload["path"])], dtype=np.float64),
            float(s.payload.get("speed", phys.prey_speed)),
        )
        for s in prey_specs
    ]
    return predator, prey

"""Shared contracts for partially observable episodic games.

Every environment exposes a single learning (ego) agent. All other agents
are rule-based peers whose moves are resolved inside ``step``, so the ego
agent only ever sees its own decision points. Episodes are grouped into
meta-episodes of ``n_eps`` consecutive episodes against one fixed peer
tuple; returns are accumulated over the whole concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Fixed role tags for deriving independent RNG substreams from one master
# seed. Streams are counter-based (Philox), so results do not depend on
# scheduling or worker count.
STREAM_ENV = 0
STREAM_POLICY = 1
STREAM_SHUFFLE = 2
STREAM_INIT = 3
STREAM_POOL_TRAIN = 4
STREAM_POOL_TEST = 5
STREAM_EVAL = 6


def rng_stream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent Philox stream identified by (master_seed, *path)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class StepOutcome:
    """Result of advancing the environment by one ego decision."""

    next_observation: np.ndarray
    task_reward: float
    episode_done: bool


class Env:
    """Base class for single-ego-agent environments.

    Subclasses set ``obs_dim`` and ``n_actions`` and implement ``reset`` /
    ``step``. ``step`` must raise ``RuntimeError`` when called on a terminal
    episode and ``ValueError`` for an out-of-range action id.
    """

    obs_dim: int
    n_actions: int

    def reset(self) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: int) -> StepOutcome:
        raise NotImplementedError

    def set_peer(self, peer_specs) -> None:
        """Swap in a new peer tuple (takes effect on the next reset)."""
        raise NotImplementedError

    def _check_action(self, action: int) -> None:
        if not 0 <= action < self.n_actions:
            raise ValueError(
                f"action id {action} out of range [0, {self.n_actions})"
            )


def cumulative_step(completed_lengths: list[int], t: int) -> int:
    """Position of step ``t`` of the current episode in the concatenated
    meta-episode: ``t`` plus the lengths of all completed episodes."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    if any(length < 1 for length in completed_lengths):
        raise ValueError("episode lengths must be >= 1")
    return t + sum(completed_lengths)


@dataclass
class MetaEpisodeClock:
    """Tracks (episode n, step t) within a meta-episode of ``n_eps`` episodes.

    ``episode_index`` and ``step_in_episode`` are 1-based. The clock resets
    itself once ``n_eps`` episodes complete.
    """

    n_eps: int
    episode_index: int = 1
    step_in_episode: int = 1
    completed_lengths: list[int] = field(default_factory=list)

    @property
    def cumulative(self) -> int:
        return cumulative_step(self.completed_lengths, self.step_in_episode)

    def advance(self, episode_done: bool) -> None:
        """Advance past the step that just executed."""
        if episode_done:
            self.completed_lengths.append(self.step_in_episode)
            self.episode_index += 1
            self.step_in_episode = 1
            if len(self.completed_lengths) >= self.n_eps:
                self.reset()
        else:
            self.step_in_episode += 1

    def reset(self) -> None:
        self.episode_index = 1
        self.step_in_episode = 1
        self.completed_lengths = []

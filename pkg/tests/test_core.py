import numpy as np
import pytest

from peeradapt.core import MetaEpisodeClock, cumulative_step, rng_stream


def test_cumulative_step_examples():
    assert cumulative_step([3, 4], 2) == 9
    assert cumulative_step([], 1) == 1
    assert cumulative_step([2, 2, 2], 2) == 8


def test_cumulative_step_validation():
    with pytest.raises(ValueError):
        cumulative_step([], 0)
    with pytest.raises(ValueError):
        cumulative_step([0], 1)


def test_cumulative_steps_increase_by_one_across_boundaries():
    # Walking a meta-episode of episodes with lengths 3, 1, 4 step by step,
    # the concatenated step index must increase by exactly 1 every step.
    lengths = [3, 1, 4]
    seen = []
    done_lengths = []
    for length in lengths:
        for t in range(1, length + 1):
            seen.append(cumulative_step(done_lengths, t))
        done_lengths.append(length)
    assert seen == list(range(1, sum(lengths) + 1))


def test_meta_episode_clock_resets_after_n_eps():
    clock = MetaEpisodeClock(n_eps=2)
    assert (clock.episode_index, clock.step_in_episode) == (1, 1)
    clock.advance(episode_done=False)
    assert clock.cumulative == 2
    clock.advance(episode_done=True)   # episode 1 had length 2
    assert clock.episode_index == 2
    assert clock.cumulative == 3
    clock.advance(episode_done=True)   # episode 2 complete -> full reset
    assert (clock.episode_index, clock.step_in_episode) == (1, 1)
    assert clock.completed_lengths == []


def test_rng_streams_independent_and_reproducible():
    a1 = rng_stream(123, 0, 5).random(4)
    a2 = rng_stream(123, 0, 5).random(4)
    b = rng_stream(123, 0, 6).random(4)
    c = rng_stream(124, 0, 5).random(4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)

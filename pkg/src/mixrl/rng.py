"""Seed derivation.

Every random stream in a run descends from one root seed plus a tuple of
stream ids (a counter-style spawn key), so full runs reproduce across
machines. Stream ids are part of the on-disk reproducibility contract:
changing them changes every derived stream.
"""

import numpy as np

STREAM_INIT = 0    # network weight initialisation
STREAM_WORKER = 1  # (STREAM_WORKER, worker_id): action sampling in trainers
STREAM_EVAL = 2    # (STREAM_EVAL, episode_index): action sampling in rollouts
STREAM_ENV = 3     # (STREAM_ENV, instance_id): per-instance environment seeds


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Independent PCG64 generator for (seed, *stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


def derive_seed(seed: int, *stream: int) -> int:
    """A 63-bit integer derived from (seed, *stream), for seeding sub-systems
    that want a plain int (e.g. environment instances)."""
    state = np.random.SeedSequence(seed, spawn_key=stream).generate_state(1, np.uint64)
    return int(state[0] >> 1)

"""
Named RNG substreams.

One master seed is split into independent numpy generators, one per
concern, so that changing how many draws one concern makes (e.g. the
buffer under a different method) never shifts another (e.g. data order).

Stream ids are fixed integers; new names must take new ids.
"""

from dataclasses import dataclass, field

import numpy as np

from cl_errors import UsageError

STREAM_IDS = {
    "init": 0,        # model initialization
    "data": 1,        # synthetic data, per-epoch shuffles
    "buffer": 2,      # reservoir decisions and replay draws
    "transforms": 3,  # permutations, rotation angles, class shuffles
    "subsample": 4,   # per-task training caps
}


def substream_seed(master_seed: int, name: str) -> np.random.SeedSequence:
    """SeedSequence for one named stream of a master seed."""
    if name not in STREAM_IDS:
        raise UsageError(f"unknown RNG stream '{name}', expected one of {sorted(STREAM_IDS)}")
    return np.random.SeedSequence([int(master_seed), STREAM_IDS[name]])


def substream(master_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master_seed, name))


def substream_int(master_seed: int, name: str) -> int:
    """Integer seed derived from a named stream (for APIs taking plain ints)."""
    return int(substream_seed(master_seed, name).generate_state(1)[0])


@dataclass
class RngStreams:
    """All named generators for one run"""
    master_seed: int
    generators: dict = field(default_factory=dict)

    def __post_init__(self):
        self.generators = {name: substream(self.master_seed, name) for name in STREAM_IDS}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self.generators:
            raise UsageError(f"unknown RNG stream '{name}'")
        return self.generators[name]

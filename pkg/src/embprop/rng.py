"""Named random sub-streams derived from a single run seed."""
import numpy as np

STREAMS = {
    "init": 0,
    "shuffle": 1,
    "negatives": 2,
    "neighbors": 3,
    "splits": 4,
    "removal": 5,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for sub-stream ``name`` of ``seed``; ``extra`` distinguishes repeated uses."""
    return np.random.default_rng([int(seed), STREAMS[name], *map(int, extra)])

"""Counter-based random streams.

Every (purpose, client) pair gets its own Philox stream derived from the master
seed through ``SeedSequence`` spawn keys, so a client's draws never depend on
how many draws other clients made or in which order they ran.
"""

import numpy as np

PURPOSES = {"problem": 0, "init": 1, "batch": 2, "probe": 3}


def stream(seed: int, purpose: str, client: int = 0) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(seed, spawn_key=(PURPOSES[purpose], client))
    return np.random.Generator(np.random.Philox(ss))


def client_streams(seed: int, purpose: str, n_clients: int) -> tuple:
    return tuple(stream(seed, purpose, i) for i in range(n_clients))

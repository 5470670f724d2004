"""Counter-based random streams keyed by (master seed, t, replication, purpose).

Each stream is an independent Philox generator, so adding replications or
time steps never reshuffles the draws of existing ones.
"""

import numpy as np

PURPOSES = {"x": 0, "v": 1, "omega": 2, "mc": 3}


def stream(master_seed: int, *key: int, purpose: str = "x") -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key) + (PURPOSES[purpose],))
    return np.random.Generator(np.random.Philox(ss))

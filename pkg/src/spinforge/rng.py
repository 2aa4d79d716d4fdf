"""Counter-based random substreams.

Every stochastic component derives its generator from (seed, key...),
never from call order, so results are bit-reproducible regardless of
worker count or evaluation order.  Philox is counter-based; SeedSequence
spawn keys give stable, collision-free stream separation.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))

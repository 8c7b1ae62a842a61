"""Named sub-seeds derived from one user seed.

``sub_seed(seed, stream, counter)`` hashes the triple
``(seed, STREAMS[stream], counter)`` through :class:`numpy.random.SeedSequence`
and returns the first 32-bit word, so every random draw in a run is a pure
function of the top-level seed, the stream name and a counter (repetition
index).
"""

from __future__ import annotations

import numpy as np

STREAMS = {"split": 1, "cv": 2, "conformal": 3, "synth": 4}


def sub_seed(seed: int, stream: str, counter: int = 0) -> int:
    words = [int(seed) & 0xFFFFFFFF, STREAMS[stream], int(counter)]
    return int(np.random.SeedSequence(words).generate_state(1)[0])

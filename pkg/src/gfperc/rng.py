"""Reproducible random-number streams for parallel Monte Carlo.

Every replicate owns a private counter-based Philox stream derived from
(root seed, stream id, replicate index), so a run parallelized over any
number of workers consumes exactly the same random numbers as a serial
run. Stream ids separate independent sub-experiments of one command
(e.g. the cells of a sweep).
"""

from __future__ import annotations

import numpy as np

__all__ = ["replicate_rng", "stream_label"]


def replicate_rng(seed: int, stream: int = 0, replicate: int = 0) -> np.random.Generator:
    """Generator for one replicate of one stream, independent of all others."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(replicate)))
    return np.random.Generator(np.random.Philox(ss))


def stream_label(seed: int, stream: int) -> str:
    """Human-readable stream id recorded in MCEstimate.seed_stream."""
    return f"{seed}/{stream}"

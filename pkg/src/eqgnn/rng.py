"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib
from contextlib import contextmanager

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name`` under root ``seed``.

    Streams are keyed by name rather than creation order, so adding a
    consumer never shifts the draws seen by another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


@contextmanager
def deterministic(enabled: bool = True):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield

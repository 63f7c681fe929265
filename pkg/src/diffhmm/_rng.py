"""Seeded substreams for Monte Carlo work split into fixed blocks.

Runs are grouped into blocks of ``BLOCK`` consecutive indices.  Block ``k``
of stream ``name`` always draws from the Philox generator keyed by
``(seed, name, k)``, so results do not depend on how blocks are spread over
threads.  Outputs are concatenated in block order.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

BLOCK = 4096

T = TypeVar("T")


def substream(seed: int, name: str, block: int) -> np.random.Generator:
    tag = zlib.crc32(name.encode())
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, int(block)))
    return np.random.Generator(np.random.Philox(ss))


def run_blocks(
    fn: Callable[[np.random.Generator, int, int], T],
    n: int,
    seed: int,
    name: str,
    threads: int = 1,
    block: int = BLOCK,
) -> list[T]:
    """Call ``fn(rng, start, count)`` per block and return results in order."""
    starts = list(range(0, n, block))
    jobs = [(k, s, min(block, n - s)) for k, s in enumerate(starts)]

    def work(job):
        k, s, c = job
        return fn(substream(seed, name, k), s, c)

    if threads == 0:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(jobs) <= 1:
        return [work(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(work, jobs))

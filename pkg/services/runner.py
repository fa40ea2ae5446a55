import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

from config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def split_blocks(count: int, block_size: int) -> List[range]:
    """Contiguous index blocks; the cut depends only on count and block_size"""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [range(start, min(start + block_size, count)) for start in range(0, count, block_size)]


def run_blocks(func: Callable[[Sequence[T], int], List[R]], items: Sequence[T],
               threads: int = 1, block_size: int = None) -> List[R]:
    """
    Apply func(block_items, block_start) to fixed-size blocks of items.

    Blocks run concurrently on up to `threads` workers and results are
    concatenated in block order, so the output never depends on the worker count.
    """
    block_size = block_size or settings.block_size
    blocks = split_blocks(len(items), block_size)
    jobs = [([items[i] for i in block], block.start) for block in blocks]

    if threads <= 1 or len(jobs) <= 1:
        parts = [func(chunk, start) for chunk, start in jobs]
    else:
        logger.debug(f"Running {len(jobs)} blocks on {threads} workers")
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(lambda job: func(*job), jobs))

    results: List[R] = []
    for part in parts:
        results.extend(part)
    return results


def run_indexed(func: Callable[[int], R], count: int, threads: int = 1) -> List[R]:
    """func(0), ..., func(count - 1) on a worker pool, returned in index order"""
    if threads <= 1 or count <= 1:
        return [func(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, range(count)))

# services/runner.py

import asyncio
from dataclasses import dataclass
from typing import Any, Callable, Generic, List, Optional, Sequence, TypeVar

from loguru import logger

from config import config

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class Outcome(Generic[T, R]):
    item: T
    value: Optional[R] = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class WorkerPool:
    """
    Bounded thread pool over independent jobs.

    Results come back in input order whatever the completion order, and a
    failing job becomes an Outcome with ``error`` set instead of cancelling
    its siblings.
    """

    def __init__(self, workers: Optional[int] = None):
        self.workers = max(1, workers or config.WORKERS)

    async def _run_one(self, semaphore: asyncio.Semaphore, func: Callable[[T], R], item: T) -> Outcome:
        async with semaphore:
            try:
                value = await asyncio.to_thread(func, item)
                return Outcome(item, value)
            except Exception as e:
                logger.warning(f"job {item!r} failed: {e}")
                return Outcome(item, error=e)

    async def map_async(self, func: Callable[[T], R], items: Sequence[T]) -> List[Outcome]:
        semaphore = asyncio.Semaphore(self.workers)
        return await asyncio.gather(*(self._run_one(semaphore, func, item) for item in items))

    def map(self, func: Callable[[T], R], items: Sequence[T]) -> List[Outcome]:
        items = list(items)
        if self.workers == 1:
            outcomes = []
            for item in items:
                try:
                    outcomes.append(Outcome(item, func(item)))
                except Exception as e:
                    logger.warning(f"job {item!r} failed: {e}")
                    outcomes.append(Outcome(item, error=e))
            return outcomes
        return asyncio.run(self.map_async(func, items))


def run_all(func: Callable[[Any], Any], items: Sequence[Any], workers: Optional[int] = None) -> List[Outcome]:
    return WorkerPool(workers).map(func, items)

import logging
import multiprocessing as mp
import os

from beartype import beartype
from beartype.typing import Any, Callable, Dict, Iterable, List, Optional

from ...components.exceptions import StigTrendConfigError, StigTrendRuntimeError
from ..base import BackendBase

logger = logging.getLogger(__name__)


@beartype
class ProcessBackend(BackendBase):
    """Process pool. Tasks and their results must be picklable."""

    def __init__(self, jobs: Optional[int] = None) -> None:
        self.jobs = jobs if jobs is not None else os.cpu_count() or 1
        if self.jobs < 1:
            raise StigTrendConfigError(f"jobs must be >= 1, got {self.jobs}")
        self.pool = None

    def to_dict(self) -> Dict[str, Any]:
        return {"jobs": self.jobs}

    @classmethod
    def from_dict(cls, params: Dict[str, Any]) -> "ProcessBackend":
        try:
            return cls(jobs=params.get("jobs"))
        except (TypeError, ValueError) as e:
            raise StigTrendConfigError(f"Invalid process backend params: {e}") from e

    def initialize(self) -> None:
        if self.pool is not None:
            return
        logger.debug(f"Starting process pool with {self.jobs} workers")
        try:
            self.pool = mp.get_context("spawn").Pool(processes=self.jobs)
        except OSError as e:
            raise StigTrendRuntimeError(
                "Process pool initialization failed", details=str(e)
            ) from e

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        if self.pool is None:
            self.initialize()
        items = list(items)
        chunksize = max(1, len(items) // (4 * self.jobs))
        return self.pool.map(fn, items, chunksize=chunksize)

    def teardown(self) -> None:
        if self.pool is not None:
            self.pool.close()
            self.pool.join()
            self.pool = None

    def __getstate__(self) -> dict:
        state = super().__getstate__()
        state["pool"] = None
        return state

    def __setstate__(self, state: dict) -> None:
        super().__setstate__(state)
        self.pool = None

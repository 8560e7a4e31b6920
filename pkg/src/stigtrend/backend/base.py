import logging
from abc import ABC, abstractmethod

from beartype import beartype
from beartype.typing import Any, Callable, Dict, Iterable, List

logger = logging.getLogger(__name__)


@beartype
class BackendBase(ABC):
    """Base abstract class for execution backends.

    ``map`` must return results in input order so that runs stay reproducible
    whatever the degree of parallelism.
    """

    @abstractmethod
    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]: ...
    @abstractmethod
    def initialize(self) -> None: ...
    @abstractmethod
    def teardown(self) -> None: ...
    @abstractmethod
    def to_dict(self) -> Dict[str, Any]: ...
    @classmethod
    @abstractmethod
    def from_dict(cls, params: Dict[str, Any]) -> "BackendBase": ...

    def __enter__(self) -> "BackendBase":
        self.initialize()
        return self

    def __exit__(self, *exc: object) -> None:
        self.teardown()

    def __getstate__(self) -> dict:
        return self.__dict__.copy()

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)

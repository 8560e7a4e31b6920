import logging

from beartype import beartype
from beartype.typing import Any, Callable, Dict, Iterable, List

from ..base import BackendBase

logger = logging.getLogger(__name__)


@beartype
class SerialBackend(BackendBase):
    def to_dict(self) -> Dict[str, Any]:
        return {}

    @classmethod
    def from_dict(cls, params: Dict[str, Any]) -> "SerialBackend":
        return cls()

    def initialize(self) -> None:
        logger.debug("Serial backend ready")

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        return [fn(item) for item in items]

    def teardown(self) -> None:
        pass

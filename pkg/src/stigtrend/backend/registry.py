import logging

from beartype import beartype
from beartype.typing import Dict, Optional, Type

from ..components.exceptions import StigTrendConfigError
from .backends.process import ProcessBackend
from .backends.serial import SerialBackend
from .base import BackendBase

logger = logging.getLogger(__name__)

BACKEND_REGISTRY: Dict[str, Type[BackendBase]] = {
    "serial": SerialBackend,
    "process": ProcessBackend,
}


@beartype
def make_backend(name: str = "process", jobs: Optional[int] = None) -> BackendBase:
    """``jobs == 1`` always resolves to the serial backend."""
    if name not in BACKEND_REGISTRY:
        raise StigTrendConfigError(
            f"Unknown backend type: {name}", details=f"known: {sorted(BACKEND_REGISTRY)}"
        )
    if jobs is not None and jobs < 1:
        raise StigTrendConfigError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1:
        name = "serial"
    backend = BACKEND_REGISTRY[name].from_dict({"jobs": jobs} if jobs is not None else {})
    logger.debug(f"Using {name} backend: {backend.to_dict()}")
    return backend

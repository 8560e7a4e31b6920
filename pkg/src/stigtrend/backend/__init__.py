from .base import BackendBase
from .registry import BACKEND_REGISTRY, make_backend

__all__ = ["BACKEND_REGISTRY", "BackendBase", "make_backend"]

import logging
import os
from pathlib import Path

from appdirs import user_data_dir
from beartype import beartype
from beartype.typing import Any, Dict, List, Optional, Tuple

from .exceptions import StigTrendConfigError
from .utils import load_env_vars_config, suggest_field

logger = logging.getLogger(__name__)

APP_NAME = "stigtrend"
ENV_PREFIX = "STIGTREND_"


@beartype
class TrendConfig:
    """Environment-backed settings. Pass ``env_vars`` explicitly in tests.

    Known variables and their defaults come from ``configurations/env_vars.yaml``.
    """

    def __init__(self, env_vars: Optional[Dict[str, str]] = None) -> None:
        self.env_vars = dict(env_vars) if env_vars is not None else os.environ.copy()
        self.env_config = load_env_vars_config()
        self.documented: Dict[str, Dict[str, Any]] = {
            entry["key"]: entry for section in self.env_config.values() for entry in section
        }

    def get_env_var(
        self,
        key: str,
        default: Optional[str] = None,
        raise_if_missing: bool = False,
    ) -> Optional[str]:
        value = self.env_vars.get(key)
        if value is None or value == "":
            if raise_if_missing:
                raise StigTrendConfigError(f"Missing required env var: {key}")
            return default
        return value

    def default_for(self, key: str) -> Optional[str]:
        entry = self.documented.get(key)
        if entry is None or entry.get("default") is None:
            return None
        return str(entry["default"])

    def _setting(self, key: str) -> Optional[str]:
        entry = self.documented.get(key, {})
        return self.get_env_var(
            key, self.default_for(key), raise_if_missing=bool(entry.get("required"))
        )

    def describe(self) -> List[Tuple[str, str, str]]:
        """``(key, effective value, description)`` for every documented variable."""
        rows = []
        for key, entry in self.documented.items():
            value = self.get_env_var(key)
            if value is None:
                default = self.default_for(key)
                value = f"(default: {default})" if default is not None else "(unset)"
            rows.append((key, value, str(entry.get("description", ""))))
        return rows

    def unknown_env_vars(self) -> List[Tuple[str, Optional[str]]]:
        """Set ``STIGTREND_*`` variables that nothing reads, with the likely intended name."""
        return [
            (key, suggest_field(key, self.documented))
            for key in sorted(self.env_vars)
            if key.startswith(ENV_PREFIX) and key not in self.documented
        ]

    @property
    def data_dir(self) -> Path:
        override = self._setting("STIGTREND_DATA_DIR")
        return Path(override) if override else Path(user_data_dir(APP_NAME))

    @property
    def log_level(self) -> str:
        return (self._setting("STIGTREND_LOG_LEVEL") or "WARNING").upper()

    @property
    def backend(self) -> str:
        return (self._setting("STIGTREND_BACKEND") or "process").lower()

    @property
    def jobs(self) -> int:
        raw = self._setting("STIGTREND_JOBS")
        if raw is None:
            return os.cpu_count() or 1
        try:
            jobs = int(raw)
        except ValueError as e:
            raise StigTrendConfigError(
                f"STIGTREND_JOBS must be an integer, got '{raw}'"
            ) from e
        if jobs < 1:
            raise StigTrendConfigError(f"STIGTREND_JOBS must be >= 1, got {jobs}")
        return jobs

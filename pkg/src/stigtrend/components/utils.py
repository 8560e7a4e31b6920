import logging
from pathlib import Path

import numpy as np
import yaml
from beartype import beartype
from beartype.typing import Any, Dict, Iterable, Mapping, Optional
from rich.console import Console
from rich.logging import RichHandler
from thefuzz import process

from .exceptions import StigTrendConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent.parent / "configurations"


def _load_yaml(name: str) -> Dict[str, Any]:
    yaml_path = CONFIG_DIR / name
    if not yaml_path.exists():
        raise RuntimeError(f"{name} not found at {yaml_path}")
    with open(yaml_path) as f:
        return yaml.safe_load(f)


@beartype
def load_defaults() -> Dict[str, Any]:
    return _load_yaml("defaults.yaml")


@beartype
def load_env_vars_config() -> Dict[str, Any]:
    return _load_yaml("env_vars.yaml")


@beartype
def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for the stream named by ``keys``."""
    state = np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint32)
    return int(state[0])


@beartype
def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@beartype
def suggest_field(name: str, choices: Iterable[str]) -> Optional[str]:
    choices = list(choices)
    if not choices:
        return None
    match = process.extractOne(name, choices, score_cutoff=60)
    return match[0] if match else None


@beartype
def check_fields(
    data: Mapping[str, Any],
    allowed: Iterable[str],
    context: str,
    required: Iterable[str] = (),
) -> None:
    """Reject unknown keys (with a did-you-mean hint) and missing required keys."""
    allowed = list(allowed)
    for key in data:
        if key not in allowed:
            hint = suggest_field(str(key), allowed)
            details = f"did you mean '{hint}'?" if hint else None
            raise StigTrendConfigError(f"Unknown field '{key}' in {context}", details)
    for key in required:
        if key not in data:
            raise StigTrendConfigError(f"Missing required field '{key}' in {context}")


@beartype
def configure_logging(level: str = "WARNING", console: Optional[Console] = None) -> None:
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise StigTrendConfigError(f"Unknown log level: {level}")
    logging.basicConfig(
        level=numeric,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console or Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )
    logger.debug(f"Logging configured at {level.upper()}")

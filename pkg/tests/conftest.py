import json
from pathlib import Path

import numpy as np
import pytest
from beartype.typing import Any, Dict

from stigtrend.components.series import LabeledCorpus
from stigtrend.datagen import CorpusSpec, synthesize_labeled
from stigtrend.pipeline import FixedSettings, PipelineParams


def segment(start: int, end: int, slope_class: int, magnitude: float = 0.01) -> Dict[str, Any]:
    return {
        "start_step": start,
        "end_step": end,
        "slope_class": slope_class,
        "slope_magnitude": magnitude,
    }


SMALL_SPEC: Dict[str, Any] = {
    "lag": 12,
    "noise": 0.01,
    "series": [
        {"region_id": "up", "count": 3, "segments": [segment(0, 47, 1)]},
        {"region_id": "down", "count": 2, "segments": [segment(0, 47, -1)]},
        {"region_id": "flat", "count": 1, "segments": [segment(0, 47, 0)]},
    ],
}


@pytest.fixture
def fast_fixed() -> FixedSettings:
    """Coarse grid and short lag so pipeline runs stay fast."""
    return FixedSettings(lag=12, bins=100, warmup=0, intensity=1.0, skip_points=3)


@pytest.fixture
def expert_params() -> PipelineParams:
    return PipelineParams.expert(FixedSettings())


@pytest.fixture
def small_corpus() -> LabeledCorpus:
    """Six labeled series of 48 steps (three rising, two falling, one flat)."""
    return synthesize_labeled(CorpusSpec.from_dict(SMALL_SPEC), seed=7)


@pytest.fixture
def small_spec_path(tmp_path: Path) -> Path:
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SMALL_SPEC))
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)

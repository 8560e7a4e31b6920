"""Series-level domain types shared by the pipeline, generators and evaluation."""

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np
from beartype import beartype
from beartype.typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .exceptions import StigTrendDataError

logger = logging.getLogger(__name__)


class TrendClass(IntEnum):
    DECREASE = -1
    STABLE = 0
    INCREASE = 1

    @classmethod
    def from_sign(cls, value: float) -> "TrendClass":
        if value > 0:
            return cls.INCREASE
        if value < 0:
            return cls.DECREASE
        return cls.STABLE


class Indicator(str, Enum):
    S = "S"
    R = "R"
    U = "U"
    SYNTHETIC = "synthetic"

    @classmethod
    def parse(cls, raw: str) -> "Indicator":
        for member in cls:
            if member.value.lower() == raw.strip().lower():
                return member
        raise StigTrendDataError(
            f"Unknown indicator '{raw}'", details=f"expected one of {[m.value for m in cls]}"
        )


@beartype
@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Monthly samples of one indicator for one region, values in [0, 1]."""

    region_id: str
    indicator: Indicator
    steps: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        steps = np.asarray(self.steps, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if steps.ndim != 1 or steps.shape != values.shape:
            raise StigTrendDataError(
                f"Series {self.key}: steps and values must be 1-D and equally long"
            )
        if len(steps) > 1 and not np.all(np.diff(steps) == 1):
            raise StigTrendDataError(
                f"Series {self.key}: step indices must increase with unit stride"
            )
        if len(values) and (
            not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0
        ):
            raise StigTrendDataError(
                f"Series {self.key}: values must lie in [0, 1] (normalize first)"
            )
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "values", values)

    @property
    def key(self) -> Tuple[str, str]:
        return (self.region_id, self.indicator.value)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_values(
        cls,
        values: Sequence[float] | np.ndarray,
        region_id: str = "r0",
        indicator: Indicator = Indicator.SYNTHETIC,
        start_step: int = 0,
    ) -> "TimeSeries":
        values = np.asarray(values, dtype=np.float64)
        steps = np.arange(start_step, start_step + len(values), dtype=np.int64)
        return cls(region_id=region_id, indicator=indicator, steps=steps, values=values)


@beartype
@dataclass(frozen=True, eq=False)
class LabeledSeries:
    series: TimeSeries
    labels: Dict[int, TrendClass] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.labels:
            return
        first, last = int(self.series.steps[0]), int(self.series.steps[-1])
        outside = [s for s in self.labels if s < first or s > last]
        if outside:
            raise StigTrendDataError(
                f"Series {self.series.key}: {len(outside)} label steps fall outside "
                f"the series range [{first}, {last}]"
            )


@beartype
class LabeledCorpus:
    """Ordered collection of labeled series. Order is significant for splits."""

    def __init__(self, entries: Optional[List[LabeledSeries]] = None) -> None:
        self.entries: List[LabeledSeries] = list(entries or [])
        keys = [e.series.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise StigTrendDataError("Corpus contains duplicate (region_id, indicator) series")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LabeledSeries]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> LabeledSeries:
        return self.entries[index]

    @property
    def keys(self) -> List[Tuple[str, str]]:
        return [e.series.key for e in self.entries]

    def subset(self, indices: Sequence[int]) -> "LabeledCorpus":
        return LabeledCorpus([self.entries[int(i)] for i in indices])

    def for_indicator(self, indicator: Optional[Indicator]) -> "LabeledCorpus":
        if indicator is None:
            return self
        return LabeledCorpus([e for e in self.entries if e.series.indicator == indicator])

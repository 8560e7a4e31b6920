"""Normalized, labeled corpora: min-max scaling, monthly granulation and synthetic trends.

Ground truth for synthetic series comes from the noiseless latent signal: the label
at step ``t`` is the sign of ``latent(t) - latent(t - lag)`` when that difference
leaves the stability band, and 0 otherwise. Noise never changes a label.
"""

import logging
from dataclasses import dataclass

import numpy as np
import polars as pl
from beartype import beartype
from beartype.typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .components.exceptions import (
    DegenerateNormalizationError,
    StigTrendConfigError,
    StigTrendDataError,
)
from .components.series import (
    Indicator,
    LabeledCorpus,
    LabeledSeries,
    TimeSeries,
    TrendClass,
)
from .components.utils import check_fields, derive_rng, load_defaults

logger = logging.getLogger(__name__)

MONTHS_PER_YEAR = 12

# Stream namespaces under the master seed.
_TEMPLATE_STREAM = 0
_RANDOM_STREAM = 1
_GROUP_STREAM = 2


@beartype
def normalize_minmax(raw: Sequence[float] | np.ndarray) -> np.ndarray:
    values = np.asarray(raw, dtype=np.float64)
    if len(values) == 0:
        raise DegenerateNormalizationError("Cannot normalize an empty series")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise DegenerateNormalizationError(
            "Cannot normalize a constant series", details=f"every value is {lo}"
        )
    return (values - lo) / (hi - lo)


def _unit_interval(values: np.ndarray) -> np.ndarray:
    """Min-max scaled values; a flat signal sits at 0.5."""
    try:
        return normalize_minmax(values)
    except DegenerateNormalizationError:
        return np.full(len(values), 0.5)


@beartype
def lag_labels(
    latent: np.ndarray, steps: np.ndarray, lag: int, stability_band: float
) -> Dict[int, TrendClass]:
    labels: Dict[int, TrendClass] = {}
    for t in range(lag, len(latent)):
        diff = float(latent[t] - latent[t - lag])
        trend = TrendClass.from_sign(diff) if abs(diff) > stability_band else TrendClass.STABLE
        labels[int(steps[t])] = trend
    return labels


# -- segments -------------------------------------------------------------------


@beartype
@dataclass(frozen=True)
class TrendSegment:
    """Inclusive step range with a constant per-step slope."""

    start_step: int
    end_step: int
    slope_class: TrendClass
    slope_magnitude: float = 0.01

    def __post_init__(self) -> None:
        if self.end_step < self.start_step:
            raise StigTrendConfigError(
                f"Segment end_step {self.end_step} precedes start_step {self.start_step}"
            )
        if self.slope_magnitude < 0.0:
            raise StigTrendConfigError("slope_magnitude must be >= 0")

    @property
    def slope(self) -> float:
        return int(self.slope_class) * self.slope_magnitude

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_step": self.start_step,
            "end_step": self.end_step,
            "slope_class": int(self.slope_class),
            "slope_magnitude": self.slope_magnitude,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrendSegment":
        check_fields(
            data,
            ("start_step", "end_step", "slope_class", "slope_magnitude"),
            "segment",
            required=("start_step", "end_step", "slope_class"),
        )
        try:
            return cls(
                start_step=int(data["start_step"]),
                end_step=int(data["end_step"]),
                slope_class=TrendClass(int(data["slope_class"])),
                slope_magnitude=float(data.get("slope_magnitude", 0.01)),
            )
        except (TypeError, ValueError) as e:
            raise StigTrendConfigError(f"Malformed segment: {e}") from e


@beartype
def check_segments(segments: Sequence[TrendSegment]) -> int:
    """Validate that segments tile ``[0, length)`` and return the length."""
    if not segments:
        raise StigTrendConfigError("A series needs at least one segment")
    if segments[0].start_step != 0:
        raise StigTrendConfigError("The first segment must start at step 0")
    for prev, nxt in zip(segments, segments[1:]):
        if nxt.start_step != prev.end_step + 1:
            raise StigTrendConfigError(
                f"Segments must be contiguous: {prev.end_step} is followed by {nxt.start_step}"
            )
    return segments[-1].end_step + 1


@beartype
def latent_signal(segments: Sequence[TrendSegment]) -> np.ndarray:
    length = check_segments(segments)
    slopes = np.zeros(length)
    for segment in segments:
        slopes[segment.start_step : segment.end_step + 1] = segment.slope
    latent = np.zeros(length)
    latent[1:] = np.cumsum(slopes[1:])
    return latent


@beartype
def random_segments(
    rng: np.random.Generator,
    length: int,
    n_segments: int,
    magnitude_range: Tuple[float, float],
    stable_probability: float,
) -> List[TrendSegment]:
    n_segments = max(1, min(n_segments, length))
    cuts = sorted(int(c) for c in rng.choice(np.arange(1, length), size=n_segments - 1, replace=False))
    bounds = [0, *cuts, length]
    segments = []
    for start, stop in zip(bounds, bounds[1:]):
        if rng.random() < stable_probability:
            trend = TrendClass.STABLE
        else:
            trend = TrendClass.INCREASE if rng.random() < 0.5 else TrendClass.DECREASE
        magnitude = float(rng.uniform(*magnitude_range))
        segments.append(TrendSegment(start, stop - 1, trend, magnitude))
    return segments


# -- corpus spec ----------------------------------------------------------------


@beartype
@dataclass(frozen=True)
class SeriesTemplate:
    region_id: str
    segments: Tuple[TrendSegment, ...]
    indicator: Indicator = Indicator.SYNTHETIC
    count: int = 1

    def __post_init__(self) -> None:
        check_segments(self.segments)
        if self.count < 1:
            raise StigTrendConfigError(f"Series '{self.region_id}': count must be >= 1")

    @property
    def length(self) -> int:
        return self.segments[-1].end_step + 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "region_id": self.region_id,
            "indicator": self.indicator.value,
            "count": self.count,
            "segments": [s.to_dict() for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SeriesTemplate":
        check_fields(
            data, ("region_id", "indicator", "count", "segments"), "series", required=("region_id", "segments")
        )
        return cls(
            region_id=str(data["region_id"]),
            segments=tuple(TrendSegment.from_dict(s) for s in data["segments"]),
            indicator=Indicator.parse(str(data.get("indicator", "synthetic"))),
            count=int(data.get("count", 1)),
        )


@beartype
@dataclass(frozen=True)
class RandomSeriesSpec:
    """Series with randomly drawn segment layouts (mixed trends)."""

    count: int
    length: int = 180
    min_segments: int = 1
    max_segments: int = 3
    min_magnitude: float = 0.002
    max_magnitude: float = 0.02
    stable_probability: float = 0.25
    indicator: Indicator = Indicator.SYNTHETIC
    region_prefix: str = "syn"

    def __post_init__(self) -> None:
        if self.count < 1 or self.length < 2:
            raise StigTrendConfigError("random: count must be >= 1 and length >= 2")
        if not (1 <= self.min_segments <= self.max_segments):
            raise StigTrendConfigError("random: need 1 <= min_segments <= max_segments")
        if not (0.0 <= self.min_magnitude <= self.max_magnitude):
            raise StigTrendConfigError("random: need 0 <= min_magnitude <= max_magnitude")
        if not (0.0 <= self.stable_probability <= 1.0):
            raise StigTrendConfigError("random: stable_probability must lie in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": self.count,
            "length": self.length,
            "min_segments": self.min_segments,
            "max_segments": self.max_segments,
            "min_magnitude": self.min_magnitude,
            "max_magnitude": self.max_magnitude,
            "stable_probability": self.stable_probability,
            "indicator": self.indicator.value,
            "region_prefix": self.region_prefix,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RandomSeriesSpec":
        defaults = cls(count=1)
        check_fields(data, defaults.to_dict().keys(), "random", required=("count",))
        merged = {**defaults.to_dict(), **data}
        try:
            return cls(
                count=int(merged["count"]),
                length=int(merged["length"]),
                min_segments=int(merged["min_segments"]),
                max_segments=int(merged["max_segments"]),
                min_magnitude=float(merged["min_magnitude"]),
                max_magnitude=float(merged["max_magnitude"]),
                stable_probability=float(merged["stable_probability"]),
                indicator=Indicator.parse(str(merged["indicator"])),
                region_prefix=str(merged["region_prefix"]),
            )
        except (TypeError, ValueError) as e:
            raise StigTrendConfigError(f"Malformed random series spec: {e}") from e


@beartype
@dataclass(frozen=True)
class AnnualGroupStats:
    """Per-year mean and standard deviation of one group of regions."""

    group_id: str
    years: Tuple[Tuple[float, float], ...]
    indicator: Indicator = Indicator.SYNTHETIC

    def __post_init__(self) -> None:
        if not self.years:
            raise StigTrendDataError(f"Group '{self.group_id}' has no yearly statistics")
        for mu, sigma in self.years:
            if not (np.isfinite(mu) and np.isfinite(sigma)):
                raise StigTrendDataError(f"Group '{self.group_id}': statistics must be finite")
            if sigma < 0.0:
                raise StigTrendDataError(f"Group '{self.group_id}': sigma must be >= 0")

    @property
    def means(self) -> np.ndarray:
        return np.array([mu for mu, _ in self.years])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "group_id": self.group_id,
            "indicator": self.indicator.value,
            "years": [{"mu": mu, "sigma": sigma} for mu, sigma in self.years],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AnnualGroupStats":
        check_fields(data, ("group_id", "indicator", "years"), "group", required=("group_id", "years"))
        years = []
        for row in data["years"]:
            check_fields(row, ("mu", "sigma"), "group year", required=("mu", "sigma"))
            years.append((float(row["mu"]), float(row["sigma"])))
        return cls(
            group_id=str(data["group_id"]),
            years=tuple(years),
            indicator=Indicator.parse(str(data.get("indicator", "synthetic"))),
        )


@beartype
@dataclass(frozen=True)
class CorpusSpec:
    series: Tuple[SeriesTemplate, ...] = ()
    random: Optional[RandomSeriesSpec] = None
    groups: Tuple[AnnualGroupStats, ...] = ()
    noise: float = 0.02
    stability_band: float = 0.05
    lag: int = 24

    def __post_init__(self) -> None:
        if not self.series and self.random is None and not self.groups:
            raise StigTrendConfigError("Corpus spec needs 'series', 'random' or 'groups'")
        if self.noise < 0.0 or self.stability_band < 0.0:
            raise StigTrendConfigError("noise and stability_band must be >= 0")
        if self.lag < 1:
            raise StigTrendConfigError(f"lag must be >= 1, got {self.lag}")
        lengths = [t.length for t in self.series]
        lengths += [self.random.length] if self.random else []
        lengths += [len(g.years) * MONTHS_PER_YEAR for g in self.groups]
        if min(lengths) <= self.lag:
            raise StigTrendConfigError(
                f"Every series must be longer than lag={self.lag}, shortest is {min(lengths)}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "series": [t.to_dict() for t in self.series],
            "random": self.random.to_dict() if self.random else None,
            "groups": [g.to_dict() for g in self.groups],
            "noise": self.noise,
            "stability_band": self.stability_band,
            "lag": self.lag,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorpusSpec":
        check_fields(data, ("series", "random", "groups", "noise", "stability_band", "lag"), "corpus spec")
        defaults = load_defaults()
        try:
            return cls(
                series=tuple(SeriesTemplate.from_dict(s) for s in data.get("series") or ()),
                random=RandomSeriesSpec.from_dict(data["random"]) if data.get("random") else None,
                groups=tuple(AnnualGroupStats.from_dict(g) for g in data.get("groups") or ()),
                noise=float(data.get("noise", defaults["datagen"]["noise"])),
                stability_band=float(data.get("stability_band", defaults["datagen"]["stability_band"])),
                lag=int(data.get("lag", defaults["fixed"]["lag"])),
            )
        except (TypeError, ValueError, KeyError) as e:
            raise StigTrendConfigError(f"Malformed corpus spec: {e}") from e


# -- generators -----------------------------------------------------------------


@beartype
def labeled_from_latent(
    latent: np.ndarray,
    rng: np.random.Generator,
    region_id: str,
    indicator: Indicator,
    noise: float,
    lag: int,
    stability_band: float,
) -> LabeledSeries:
    latent = _unit_interval(latent)
    observed = np.clip(latent + rng.normal(0.0, noise, size=len(latent)), 0.0, 1.0) if noise else latent
    series = TimeSeries.from_values(observed, region_id=region_id, indicator=indicator)
    return LabeledSeries(series, lag_labels(latent, series.steps, lag, stability_band))


@beartype
def synthesize_labeled(spec: CorpusSpec, seed: int = 0) -> LabeledCorpus:
    """Build a corpus from every source in ``spec``; each series has its own RNG stream."""
    entries: List[LabeledSeries] = []
    index = 0
    for template in spec.series:
        latent = latent_signal(template.segments)
        for k in range(template.count):
            region_id = template.region_id if template.count == 1 else f"{template.region_id}-{k:03d}"
            rng = derive_rng(seed, _TEMPLATE_STREAM, index)
            entries.append(
                labeled_from_latent(
                    latent, rng, region_id, template.indicator, spec.noise, spec.lag, spec.stability_band
                )
            )
            index += 1

    if spec.random is not None:
        r = spec.random
        for i in range(r.count):
            rng = derive_rng(seed, _RANDOM_STREAM, i)
            n_segments = int(rng.integers(r.min_segments, r.max_segments + 1))
            segments = random_segments(
                rng, r.length, n_segments, (r.min_magnitude, r.max_magnitude), r.stable_probability
            )
            entries.append(
                labeled_from_latent(
                    latent_signal(segments),
                    rng,
                    f"{r.region_prefix}-{i:03d}",
                    r.indicator,
                    spec.noise,
                    spec.lag,
                    spec.stability_band,
                )
            )

    if spec.groups:
        entries.extend(synthesize_granulated(spec.groups, spec.lag, spec.stability_band, seed))

    logger.info(f"Synthesized {len(entries)} labeled series (seed={seed})")
    return LabeledCorpus(entries)


@beartype
def monthly_samples(stats: AnnualGroupStats, rng: np.random.Generator) -> np.ndarray:
    """Twelve draws per year from Normal(mu/12, sigma^2/12), before any scaling."""
    samples = [
        rng.normal(mu / MONTHS_PER_YEAR, np.sqrt(sigma**2 / MONTHS_PER_YEAR), size=MONTHS_PER_YEAR)
        for mu, sigma in stats.years
    ]
    return np.concatenate(samples)


@beartype
def monthly_from_annual(
    stats: AnnualGroupStats, rng: np.random.Generator, region_id: Optional[str] = None
) -> TimeSeries:
    raw = monthly_samples(stats, rng)
    try:
        values = np.clip(normalize_minmax(raw), 0.0, 1.0)
    except DegenerateNormalizationError:
        logger.warning(f"Group {stats.group_id}: monthly samples are constant, using 0.5")
        values = np.full(len(raw), 0.5)
    return TimeSeries.from_values(values, region_id=region_id or stats.group_id, indicator=stats.indicator)


@beartype
def synthesize_granulated(
    groups: Sequence[AnnualGroupStats], lag: int, stability_band: float, seed: int = 0
) -> List[LabeledSeries]:
    """One monthly series per group, labeled from the annual-mean step function."""
    entries = []
    for i, stats in enumerate(groups):
        series = monthly_from_annual(stats, derive_rng(seed, _GROUP_STREAM, i))
        latent = _unit_interval(np.repeat(stats.means, MONTHS_PER_YEAR))
        entries.append(LabeledSeries(series, lag_labels(latent, series.steps, lag, stability_band)))
    return entries


ANNUAL_COLUMNS = ("region_id", "group_id", "year", "value")


@beartype
def annual_group_stats_from_frame(
    frame: pl.DataFrame, indicator: Indicator = Indicator.SYNTHETIC
) -> List[AnnualGroupStats]:
    """Per-group, per-year mean and population standard deviation across regions."""
    missing = [c for c in ANNUAL_COLUMNS if c not in frame.columns]
    if missing:
        raise StigTrendDataError(f"Annual table is missing columns: {missing}")
    stats = (
        frame.group_by(["group_id", "year"])
        .agg(
            pl.col("value").mean().alias("mu"),
            pl.col("value").std(ddof=0).alias("sigma"),
        )
        .sort(["group_id", "year"])
    )
    groups = []
    for (group_id,), rows in stats.group_by(["group_id"], maintain_order=True):
        years = rows["year"].to_list()
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise StigTrendDataError(f"Group '{group_id}': years must be consecutive")
        groups.append(
            AnnualGroupStats(
                group_id=str(group_id),
                years=tuple(
                    (float(mu), float(sigma or 0.0))
                    for mu, sigma in zip(rows["mu"].to_list(), rows["sigma"].to_list())
                ),
                indicator=indicator,
            )
        )
    logger.debug(f"Computed annual statistics for {len(groups)} groups")
    return groups

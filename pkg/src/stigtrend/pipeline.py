"""Marker-based stigmergy pipeline: unbias -> mark -> trail -> prototype -> dissimilarity.

One normalized series goes in, a sequence of trend classes comes out. The track lives
on a uniform grid of ``bins`` cells over [0, 1]; marks and prototypes are isosceles
triangles sampled at the cell centers and clipped at the domain edges.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from beartype import beartype
from beartype.typing import Any, Dict, List, Mapping, Optional, Sequence
from numpy.lib.stride_tricks import sliding_window_view

from .components.exceptions import (
    DegenerateTrackError,
    InsufficientDataError,
    InvalidParameterError,
)
from .components.series import TimeSeries, TrendClass
from .components.utils import check_fields, load_defaults

logger = logging.getLogger(__name__)

# Similarities closer than this to the best one count as ties (smallest center wins).
SIMILARITY_TIE_TOLERANCE = 1e-12

GENOME_FIELDS = (
    "marking.alpha",
    "marking.beta",
    "epsilon",
    "theta",
    "prototyping.alpha",
    "prototyping.beta",
    "dissimilarity.alpha",
    "dissimilarity.beta",
)


@beartype
@dataclass(frozen=True)
class SmfParams:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < self.beta):
            raise InvalidParameterError(
                f"s-shaped thresholds need 0 <= alpha < beta, got ({self.alpha}, {self.beta})"
            )

    @property
    def midpoint(self) -> float:
        return (self.alpha + self.beta) / 2.0

    def scaled(self, factor: float) -> "SmfParams":
        return SmfParams(self.alpha * factor, self.beta * factor)

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], context: str = "smf") -> "SmfParams":
        check_fields(data, ("alpha", "beta"), context, required=("alpha", "beta"))
        try:
            return cls(alpha=float(data["alpha"]), beta=float(data["beta"]))
        except (TypeError, ValueError) as e:
            raise InvalidParameterError(f"Non-numeric threshold in {context}") from e


@beartype
def smf(x: float, p: SmfParams) -> float:
    """Standard piecewise-quadratic s-shaped function, 0 below alpha, 1 above beta."""
    if x <= p.alpha:
        return 0.0
    if x >= p.beta:
        return 1.0
    t = (x - p.alpha) / (p.beta - p.alpha)
    if x <= p.midpoint:
        return 2.0 * t * t
    return 1.0 - 2.0 * (t - 1.0) ** 2


@beartype
def smf_array(x: np.ndarray, p: SmfParams) -> np.ndarray:
    t = (x - p.alpha) / (p.beta - p.alpha)
    rising = np.where(x <= p.midpoint, 2.0 * t * t, 1.0 - 2.0 * (t - 1.0) ** 2)
    return np.where(x <= p.alpha, 0.0, np.where(x >= p.beta, 1.0, rising))


@lru_cache(maxsize=16)
def bin_centers(bins: int) -> np.ndarray:
    grid = (np.arange(bins, dtype=np.float64) + 0.5) / bins
    grid.setflags(write=False)
    return grid


def _triangle(grid: np.ndarray, center: float, half_base: float, height: float) -> np.ndarray:
    return height * np.clip(1.0 - np.abs(grid - center) / half_base, 0.0, None)


@beartype
@dataclass(frozen=True)
class Mark:
    center: float
    half_base: float
    height: float = 1.0

    def __post_init__(self) -> None:
        if self.half_base <= 0.0 or self.height < 0.0:
            raise InvalidParameterError(
                f"Mark needs half_base > 0 and height >= 0, got ({self.half_base}, {self.height})"
            )

    def sample(self, grid: np.ndarray) -> np.ndarray:
        return _triangle(grid, self.center, self.half_base, self.height)


@beartype
@dataclass(frozen=True, eq=False)
class Track:
    """Intensity field over [0, 1]; ``step`` counts the deposits made so far."""

    intensities: np.ndarray
    step: int = 0

    @classmethod
    def empty(cls, bins: int) -> "Track":
        return cls(np.zeros(bins, dtype=np.float64), 0)

    @property
    def bins(self) -> int:
        return len(self.intensities)

    @property
    def apex(self) -> float:
        return float(self.intensities.max()) if self.bins else 0.0


@beartype
@dataclass(frozen=True)
class Prototype:
    center: float
    half_base: float
    height: float

    def sample(self, grid: np.ndarray) -> np.ndarray:
        return _triangle(grid, self.center, self.half_base, self.height)


@beartype
def saturation_height(intensity: float, theta: float) -> float:
    """Asymptotic apex under constant reinforcement, ``I / (1 - theta)``."""
    if not (0.0 <= theta < 1.0):
        raise InvalidParameterError(f"theta must lie in [0, 1), got {theta}")
    return intensity / (1.0 - theta)


@beartype
@dataclass(frozen=True)
class FixedSettings:
    """Settings that are not tuned by the optimizer."""

    lag: int = 24
    bins: int = 1000
    warmup: int = 1
    intensity: float = 1.0
    skip_points: int = 3

    def __post_init__(self) -> None:
        if self.lag < 1:
            raise InvalidParameterError(f"lag must be >= 1, got {self.lag}")
        if self.bins < 100:
            raise InvalidParameterError(f"bins must be >= 100, got {self.bins}")
        if self.warmup < 0 or self.skip_points < 0:
            raise InvalidParameterError("warmup and skip_points must be >= 0")
        if self.intensity <= 0.0:
            raise InvalidParameterError(f"intensity must be > 0, got {self.intensity}")

    @classmethod
    def from_defaults(cls, **overrides: Any) -> "FixedSettings":
        fixed = dict(load_defaults()["fixed"])
        fixed.update({k: v for k, v in overrides.items() if v is not None})
        return cls(
            lag=int(fixed["lag"]),
            bins=int(fixed["bins"]),
            warmup=int(fixed["warmup"]),
            intensity=float(fixed["intensity"]),
            skip_points=int(fixed["skip_points"]),
        )


@beartype
@dataclass(frozen=True)
class PipelineParams:
    """The eight tunable parameters plus the fixed settings of one pipeline.

    ``prototyping`` thresholds are stored as fractions of the saturation height, so
    their range is (0, 1) whatever theta is; ``prototyping_absolute`` gives them in
    intensity units.
    """

    marking: SmfParams
    epsilon: float
    theta: float
    prototyping: SmfParams
    dissimilarity: SmfParams
    lag: int = 24
    bins: int = 1000
    warmup: int = 1
    intensity: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 < self.theta < 1.0):
            raise InvalidParameterError(f"theta must lie in (0, 1), got {self.theta}")
        for name in ("marking", "prototyping", "dissimilarity"):
            if getattr(self, name).beta > 1.0:
                raise InvalidParameterError(f"{name}.beta must be <= 1")
        # Reuses FixedSettings validation for lag/bins/warmup/intensity.
        FixedSettings(self.lag, self.bins, self.warmup, self.intensity)

    @property
    def i_max(self) -> float:
        return saturation_height(self.intensity, self.theta)

    @property
    def prototyping_absolute(self) -> SmfParams:
        return self.prototyping.scaled(self.i_max)

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                self.marking.alpha,
                self.marking.beta,
                self.epsilon,
                self.theta,
                self.prototyping.alpha,
                self.prototyping.beta,
                self.dissimilarity.alpha,
                self.dissimilarity.beta,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_vector(
        cls, vector: Sequence[float] | np.ndarray, fixed: Optional[FixedSettings] = None
    ) -> "PipelineParams":
        """Decode a genome. Each (alpha, beta) pair is ordered so that alpha < beta."""
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (8,):
            raise InvalidParameterError(f"Expected an 8-vector, got shape {v.shape}")
        fixed = fixed or FixedSettings()
        return cls(
            marking=_ordered_pair(v[0], v[1]),
            epsilon=float(v[2]),
            theta=float(v[3]),
            prototyping=_ordered_pair(v[4], v[5]),
            dissimilarity=_ordered_pair(v[6], v[7]),
            lag=fixed.lag,
            bins=fixed.bins,
            warmup=fixed.warmup,
            intensity=fixed.intensity,
        )

    @classmethod
    def expert(cls, fixed: Optional[FixedSettings] = None) -> "PipelineParams":
        expert = load_defaults()["expert"]
        fixed = fixed or FixedSettings.from_defaults()
        return cls.from_dict(
            {
                **expert,
                "lag": fixed.lag,
                "bins": fixed.bins,
                "warmup": fixed.warmup,
                "intensity": fixed.intensity,
            }
        )

    def with_fixed(self, fixed: FixedSettings) -> "PipelineParams":
        return replace(
            self,
            lag=fixed.lag,
            bins=fixed.bins,
            warmup=fixed.warmup,
            intensity=fixed.intensity,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "marking": self.marking.to_dict(),
            "epsilon": self.epsilon,
            "theta": self.theta,
            "prototyping": self.prototyping.to_dict(),
            "dissimilarity": self.dissimilarity.to_dict(),
            "lag": self.lag,
            "bins": self.bins,
            "warmup": self.warmup,
            "intensity": self.intensity,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineParams":
        check_fields(
            data,
            ("marking", "epsilon", "theta", "prototyping", "dissimilarity", "lag", "bins", "warmup", "intensity"),
            "pipeline params",
            required=("marking", "epsilon", "theta", "prototyping", "dissimilarity"),
        )
        defaults = FixedSettings()
        try:
            return cls(
                marking=SmfParams.from_dict(data["marking"], "marking"),
                epsilon=float(data["epsilon"]),
                theta=float(data["theta"]),
                prototyping=SmfParams.from_dict(data["prototyping"], "prototyping"),
                dissimilarity=SmfParams.from_dict(data["dissimilarity"], "dissimilarity"),
                lag=int(data.get("lag", defaults.lag)),
                bins=int(data.get("bins", defaults.bins)),
                warmup=int(data.get("warmup", defaults.warmup)),
                intensity=float(data.get("intensity", defaults.intensity)),
            )
        except (TypeError, ValueError) as e:
            raise InvalidParameterError(f"Malformed pipeline params: {e}") from e


def _ordered_pair(a: float, b: float, gap: float = 1e-6) -> SmfParams:
    lo, hi = sorted((float(a), float(b)))
    lo = max(lo, 0.0)
    hi = min(hi, 1.0)
    if hi - lo < gap:
        if hi + gap <= 1.0:
            hi = lo + gap
        else:
            lo = hi - gap
    return SmfParams(lo, hi)


@beartype
@dataclass(frozen=True)
class Classification:
    step: int
    trend: TrendClass
    delta: float
    degenerate: bool = False


# -- operations ---------------------------------------------------------------


@beartype
def release_mark(value: float, params: PipelineParams) -> Mark:
    return Mark(center=value, half_base=params.epsilon, height=params.intensity)


@beartype
def trail_step(track: Track, mark: Mark, theta: float) -> Track:
    """Evaporate (retain a ``theta`` share of) the track, then add the new mark."""
    grid = bin_centers(track.bins)
    return Track(theta * track.intensities + mark.sample(grid), track.step + 1)


@beartype
def unbias_track(track: Track, p: SmfParams, i_max: float) -> Track:
    """Pointwise ``I_max * smf(T, p)``; ``p`` is in intensity units."""
    return Track(i_max * smf_array(track.intensities, p), track.step)


@beartype
def grid_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two non-negative sampled shapes."""
    union = float(np.maximum(a, b).sum())
    if union == 0.0:
        return 0.0
    return float(np.minimum(a, b).sum()) / union


@beartype
def shape_similarity(a: Prototype, b: Prototype) -> float:
    """Closed-form Jaccard of two congruent isosceles triangles."""
    if not (math.isclose(a.half_base, b.half_base) and math.isclose(a.height, b.height)):
        raise InvalidParameterError("shape_similarity needs congruent prototypes")
    eps, h = a.half_base, a.height
    d = abs(a.center - b.center)
    if d >= 2.0 * eps:
        return 0.0
    intersection = h * (2.0 * eps - d) ** 2 / (4.0 * eps)
    return intersection / (2.0 * eps * h - intersection)


@beartype
def delta_p(current: Prototype, previous: Prototype) -> float:
    if current.center == previous.center:
        return 0.0
    direction = 1.0 if current.center > previous.center else -1.0
    return (1.0 - shape_similarity(current, previous)) * direction


@beartype
def classify(delta: float, p: SmfParams) -> TrendClass:
    if smf(abs(delta), p) >= 0.5:
        return TrendClass.from_sign(delta)
    return TrendClass.STABLE


@beartype
class PrototypeFitter:
    """Exhaustive search of the prototype center over all grid cell centers.

    For the candidate at cell ``i`` the similarity is ``sum(min) / sum(max)`` between
    the clipped prototype and the track; ``sum(max)`` is obtained as
    ``sum(P_i) + sum(T) - sum(min)``.
    """

    def __init__(self, bins: int, epsilon: float, height: float) -> None:
        self.bins = bins
        self.epsilon = epsilon
        self.height = height
        self.grid = bin_centers(bins)
        self.half_width = min(int(math.ceil(epsilon * bins)), bins - 1)
        offsets = np.arange(-self.half_width, self.half_width + 1, dtype=np.float64)
        self.kernel = height * np.clip(1.0 - np.abs(offsets) / (epsilon * bins), 0.0, None)
        inside = self._pad(np.ones(bins))
        self.prototype_mass = sliding_window_view(inside, len(self.kernel)) @ self.kernel

    def _pad(self, values: np.ndarray) -> np.ndarray:
        return np.pad(values, self.half_width)

    def similarities(self, unbiased: np.ndarray) -> np.ndarray:
        support = np.flatnonzero(unbiased > 0.0)
        if len(support) == 0:
            return np.zeros(self.bins)
        lo, hi = int(support[0]), int(support[-1])
        width = hi - lo + 1
        first = max(0, lo - self.half_width)
        last = min(self.bins - 1, hi + self.half_width)
        if (last - first + 1) * width >= self.bins * len(self.kernel):
            return self._dense_similarities(unbiased)
        # Candidates whose triangle misses [lo, hi] have zero overlap.
        segment = unbiased[lo : hi + 1]
        kernel_windows = sliding_window_view(np.pad(self.kernel, width), width)
        candidates = np.arange(first, last + 1)
        overlap = np.minimum(
            kernel_windows[lo - candidates + self.half_width + width], segment
        ).sum(axis=1)
        sims = np.zeros(self.bins)
        union = self.prototype_mass[candidates] + float(unbiased.sum()) - overlap
        sims[candidates] = overlap / union
        return sims

    def _dense_similarities(self, unbiased: np.ndarray) -> np.ndarray:
        windows = sliding_window_view(self._pad(unbiased), len(self.kernel))
        overlap = np.minimum(windows, self.kernel).sum(axis=1)
        union = self.prototype_mass + float(unbiased.sum()) - overlap
        return overlap / union

    def fit(self, unbiased: Track) -> Prototype:
        if unbiased.bins != self.bins:
            raise InvalidParameterError(
                f"Track has {unbiased.bins} bins, fitter expects {self.bins}"
            )
        if not np.any(unbiased.intensities > 0.0):
            raise DegenerateTrackError(f"Unbiased track is empty at step {unbiased.step}")
        sims = self.similarities(unbiased.intensities)
        best = int(np.flatnonzero(sims >= sims.max() - SIMILARITY_TIE_TOLERANCE)[0])
        return Prototype(
            center=float(self.grid[best]), half_base=self.epsilon, height=self.height
        )


@beartype
def fit_prototype(unbiased: Track, params: PipelineParams) -> Prototype:
    return PrototypeFitter(unbiased.bins, params.epsilon, params.i_max).fit(unbiased)


@beartype
class StigmergyPipeline:
    """Runs the whole chain for one series. Holds no state between ``run`` calls."""

    def __init__(self, params: PipelineParams) -> None:
        self.params = params
        self.i_max = params.i_max
        self.prototyping = params.prototyping_absolute
        self.fitter = PrototypeFitter(params.bins, params.epsilon, self.i_max)

    def prototypes(self, series: TimeSeries) -> List[Optional[Prototype]]:
        """Prototype at every step (``None`` where the unbiased track is empty)."""
        track = Track.empty(self.params.bins)
        out: List[Optional[Prototype]] = []
        for raw in series.values:
            value = smf(float(raw), self.params.marking)
            track = trail_step(track, release_mark(value, self.params), self.params.theta)
            unbiased = unbias_track(track, self.prototyping, self.i_max)
            try:
                out.append(self.fitter.fit(unbiased))
            except DegenerateTrackError:
                out.append(None)
        return out

    def run(self, series: TimeSeries) -> List[Classification]:
        lag, warmup = self.params.lag, self.params.warmup
        if len(series) <= lag + warmup:
            raise InsufficientDataError(
                f"Series {series.key} has {len(series)} samples, needs more than {lag + warmup}",
                details=f"lag={lag}, warmup={warmup}",
            )
        ring: deque = deque(maxlen=lag + 1)
        results: List[Classification] = []
        degenerate = 0
        for t, prototype in enumerate(self.prototypes(series)):
            ring.append(prototype)
            if t < warmup + lag:
                continue
            step = int(series.steps[t])
            previous = ring[0]
            if prototype is None or previous is None:
                degenerate += 1
                results.append(Classification(step, TrendClass.STABLE, 0.0, True))
                continue
            delta = delta_p(prototype, previous)
            results.append(
                Classification(step, classify(delta, self.params.dissimilarity), delta)
            )
        if degenerate:
            logger.debug(f"Series {series.key}: {degenerate} degenerate comparison steps")
        return results


@beartype
def run_pipeline(series: TimeSeries, params: PipelineParams) -> List[Classification]:
    return StigmergyPipeline(params).run(series)

"""Repeated-holdout evaluation: splits, trials, confusion matrices and the F x CR grid.

A trial is one random split of the corpus by series. Each trial is repeated with
fresh optimizer seeds on the same split; the expert parameters are scored once per
trial on the same test set so the two can be compared directly.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np
import polars as pl
from beartype import beartype
from beartype.typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
from scipy import stats as scipy_stats

from .backend import BackendBase
from .components.exceptions import InsufficientDataError, StigTrendConfigError
from .components.series import LabeledCorpus, TimeSeries
from .components.utils import derive_seed
from .optimizer import (
    Bounds,
    DEConfig,
    OptimizationResult,
    mse,
    optimize,
    scored_pairs,
)
from .pipeline import Classification, FixedSettings, PipelineParams, StigmergyPipeline

logger = logging.getLogger(__name__)

# Seed namespaces for split and optimizer streams.
_SPLIT_STREAM = 0
_FIT_STREAM = 1


@beartype
def split(
    corpus: LabeledCorpus, train_fraction: float = 0.2, seed: int = 0
) -> Tuple[LabeledCorpus, LabeledCorpus]:
    """Random partition by series; both sides keep corpus order."""
    n = len(corpus)
    if n < 5:
        raise InsufficientDataError(f"Splitting needs at least 5 series, got {n}")
    if not (0.0 < train_fraction <= 1.0):
        raise StigTrendConfigError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    n_train = max(1, int(np.floor(n * train_fraction + 0.5)))
    if n_train >= n:
        raise InsufficientDataError(
            f"train_fraction={train_fraction} leaves an empty test set for {n} series"
        )
    order = np.random.default_rng(seed).permutation(n)
    train_idx = sorted(int(i) for i in order[:n_train])
    test_idx = sorted(int(i) for i in order[n_train:])
    return corpus.subset(train_idx), corpus.subset(test_idx)


@beartype
def confusion_matrix(pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class, both ordered -1, 0, +1."""
    matrix = np.zeros((3, 3), dtype=np.int64)
    for truth, pred in pairs:
        matrix[truth + 1, pred + 1] += 1
    return matrix


@beartype
def mse_from_confusion(matrix: np.ndarray) -> float:
    total = int(matrix.sum())
    if total == 0:
        raise InsufficientDataError("Confusion matrix is empty")
    idx = np.arange(3)
    weights = (idx[:, None] - idx[None, :]) ** 2
    return float((matrix * weights).sum() / total)


@beartype
def confidence_interval(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, float]:
    """Mean and Student-t half-width; the half-width is 0 for one value or zero spread."""
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 0:
        raise InsufficientDataError("No values to summarize")
    mean = float(arr.mean())
    if len(arr) < 2 or np.ptp(arr) == 0.0:
        return mean, 0.0
    sem = float(scipy_stats.sem(arr))
    low, high = scipy_stats.t.interval(confidence, len(arr) - 1, loc=mean, scale=sem)
    return mean, float(high - mean)


# -- models ---------------------------------------------------------------------


class TrendModel(ABC):
    """Something that can be fitted on a labeled corpus and classify a series."""

    name: str = "model"

    @abstractmethod
    def fit(self, train: LabeledCorpus, seed: int) -> None: ...

    @abstractmethod
    def predict(self, series: TimeSeries) -> List[Classification]: ...

    def params_vector(self) -> List[float]:
        return []

    def history(self) -> List[float]:
        return []


@beartype
class FixedParamsModel(TrendModel):
    name = "fixed"

    def __init__(self, params: PipelineParams) -> None:
        self.params = params
        self._pipeline = StigmergyPipeline(params)

    def fit(self, train: LabeledCorpus, seed: int) -> None:
        pass

    def predict(self, series: TimeSeries) -> List[Classification]:
        return self._pipeline.run(series)

    def params_vector(self) -> List[float]:
        return [float(x) for x in self.params.to_vector()]


@beartype
class StigmergyModel(TrendModel):
    """Pipeline whose parameters are tuned by DE on the training corpus."""

    name = "de"

    def __init__(
        self,
        config: DEConfig,
        fixed: Optional[FixedSettings] = None,
        bounds: Optional[Bounds] = None,
        backend: Optional[BackendBase] = None,
    ) -> None:
        self.config = config
        self.fixed = fixed or FixedSettings.from_defaults()
        self.bounds = bounds
        self.backend = backend
        self.result: Optional[OptimizationResult] = None
        self._pipeline: Optional[StigmergyPipeline] = None

    def fit(self, train: LabeledCorpus, seed: int) -> None:
        self.result = optimize(
            train, replace(self.config, seed=seed), self.bounds, self.fixed, self.backend
        )
        params = PipelineParams.from_vector(self.result.best.vector, self.fixed)
        self._pipeline = StigmergyPipeline(params)

    def predict(self, series: TimeSeries) -> List[Classification]:
        if self._pipeline is None:
            raise RuntimeError("StigmergyModel.predict called before fit")
        return self._pipeline.run(series)

    def params_vector(self) -> List[float]:
        if self._pipeline is None:
            return []
        return [float(x) for x in self._pipeline.params.to_vector()]

    def history(self) -> List[float]:
        return list(self.result.history) if self.result else []


@beartype
def score(model: TrendModel, corpus: LabeledCorpus, skip_points: int = 3) -> Tuple[float, np.ndarray]:
    """MSE and confusion matrix of ``model`` over every scored point of ``corpus``."""
    pairs: List[Tuple[int, int]] = []
    for entry in corpus:
        pairs.extend(scored_pairs(entry.labels, model.predict(entry.series), skip_points))
    return mse(pairs), confusion_matrix(pairs)


# -- trials ---------------------------------------------------------------------


@beartype
@dataclass
class TrialReport:
    trial_id: int
    repetition: int
    train_mse: float
    test_mse: float
    confusion: List[List[int]]
    params_used: List[float]
    expert_test_mse: Optional[float] = None
    n_train: int = 0
    n_test: int = 0
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trial_id": self.trial_id,
            "repetition": self.repetition,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "confusion": self.confusion,
            "params_used": self.params_used,
            "expert_test_mse": self.expert_test_mse,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "history": self.history,
        }


@beartype
@dataclass
class TrialSummary:
    reports: List[TrialReport]
    confidence: float = 0.95
    extra: Dict[str, Any] = field(default_factory=dict)

    def trial_ids(self) -> List[int]:
        return sorted({r.trial_id for r in self.reports})

    def trial_means(self, attribute: str = "test_mse") -> List[float]:
        means = []
        for trial_id in self.trial_ids():
            values = [getattr(r, attribute) for r in self.reports if r.trial_id == trial_id]
            means.append(float(np.mean(values)))
        return means

    def test_interval(self) -> Tuple[float, float]:
        return confidence_interval(self.trial_means("test_mse"), self.confidence)

    @property
    def mean_test_mse(self) -> float:
        return float(np.mean([r.test_mse for r in self.reports]))

    @property
    def std_test_mse(self) -> float:
        values = [r.test_mse for r in self.reports]
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    @property
    def mean_expert_mse(self) -> Optional[float]:
        values = [r.expert_test_mse for r in self.reports if r.expert_test_mse is not None]
        return float(np.mean(values)) if values else None

    def per_trial_table(self) -> pl.DataFrame:
        """Mean and standard deviation per trial over its repetitions."""
        rows = []
        for trial_id in self.trial_ids():
            reports = [r for r in self.reports if r.trial_id == trial_id]
            train = [r.train_mse for r in reports]
            test = [r.test_mse for r in reports]
            expert = [r.expert_test_mse for r in reports if r.expert_test_mse is not None]
            rows.append(
                {
                    "trial": trial_id,
                    "train_mse_mean": float(np.mean(train)),
                    "train_mse_std": float(np.std(train, ddof=1)) if len(train) > 1 else 0.0,
                    "test_mse_mean": float(np.mean(test)),
                    "test_mse_std": float(np.std(test, ddof=1)) if len(test) > 1 else 0.0,
                    "expert_test_mse": float(np.mean(expert)) if expert else None,
                }
            )
        return pl.DataFrame(
            rows,
            schema={
                "trial": pl.Int64,
                "train_mse_mean": pl.Float64,
                "train_mse_std": pl.Float64,
                "test_mse_mean": pl.Float64,
                "test_mse_std": pl.Float64,
                "expert_test_mse": pl.Float64,
            },
        )

    def to_dict(self) -> Dict[str, Any]:
        mean, half_width = self.test_interval()
        return {
            "reports": [r.to_dict() for r in self.reports],
            "aggregate": {
                "test_mse_mean": mean,
                "test_mse_std": self.std_test_mse,
                "confidence": self.confidence,
                "ci_half_width": half_width,
                "ci_low": mean - half_width,
                "ci_high": mean + half_width,
                "expert_test_mse_mean": self.mean_expert_mse,
            },
            **self.extra,
        }


@beartype
def run_trials(
    corpus: LabeledCorpus,
    model_factory: Callable[[], TrendModel],
    n_trials: int = 5,
    repetitions: int = 5,
    train_fraction: float = 0.2,
    seed: int = 0,
    expert: Optional[PipelineParams] = None,
    skip_points: int = 3,
    confidence: float = 0.95,
    on_report: Optional[Callable[[TrialReport], None]] = None,
) -> TrialSummary:
    if n_trials < 1 or repetitions < 1:
        raise StigTrendConfigError("n_trials and repetitions must be >= 1")
    reports: List[TrialReport] = []
    for trial_id in range(n_trials):
        train, test = split(corpus, train_fraction, derive_seed(seed, _SPLIT_STREAM, trial_id))
        expert_mse = None
        if expert is not None:
            expert_mse, _ = score(FixedParamsModel(expert), test, skip_points)
        for repetition in range(repetitions):
            model = model_factory()
            model.fit(train, derive_seed(seed, _FIT_STREAM, trial_id, repetition))
            train_mse, _ = score(model, train, skip_points)
            test_mse, confusion = score(model, test, skip_points)
            report = TrialReport(
                trial_id=trial_id,
                repetition=repetition,
                train_mse=train_mse,
                test_mse=test_mse,
                confusion=confusion.tolist(),
                params_used=model.params_vector(),
                expert_test_mse=expert_mse,
                n_train=len(train),
                n_test=len(test),
                history=model.history(),
            )
            logger.info(
                f"Trial {trial_id} repetition {repetition}: train {train_mse:.4f}, test {test_mse:.4f}"
            )
            reports.append(report)
            if on_report:
                on_report(report)
    return TrialSummary(reports, confidence)


@beartype
@dataclass
class GridStudy:
    F_values: List[float]
    CR_values: List[float]
    cells: Dict[Tuple[float, float], TrialSummary]

    def cell_table(self) -> pl.DataFrame:
        rows = []
        for (F, CR), summary in sorted(self.cells.items()):
            mean, half_width = summary.test_interval()
            rows.append({"F": F, "CR": CR, "mean": mean, "ci_half_width": half_width})
        return pl.DataFrame(rows)

    def layout_table(self) -> pl.DataFrame:
        """Rows are CR values, columns F values, cells read ``mean ± half-width``."""
        rows = []
        for CR in self.CR_values:
            row: Dict[str, Any] = {"CR": CR}
            for F in self.F_values:
                mean, half_width = self.cells[(F, CR)].test_interval()
                row[f"F={F}"] = f"{mean:.4f} ± {half_width:.4f}"
            rows.append(row)
        return pl.DataFrame(rows)

    def ranking(self) -> List[Tuple[float, float]]:
        """Cells ordered from lowest to highest mean test MSE."""
        return sorted(self.cells, key=lambda cell: self.cells[cell].test_interval()[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "F_values": self.F_values,
            "CR_values": self.CR_values,
            "cells": [
                {"F": F, "CR": CR, **summary.to_dict()["aggregate"]}
                for (F, CR), summary in sorted(self.cells.items())
            ],
        }


@beartype
def grid_study(
    corpus: LabeledCorpus,
    base_config: DEConfig,
    F_values: Sequence[float] = (0.4, 0.6, 0.8),
    CR_values: Sequence[float] = (0.3, 0.6, 0.9),
    model_builder: Optional[Callable[[DEConfig], TrendModel]] = None,
    **trial_kwargs: Any,
) -> GridStudy:
    """``run_trials`` once per (F, CR) cell, all cells sharing the same splits and seeds."""
    build = model_builder or (lambda cfg: StigmergyModel(cfg))
    cells: Dict[Tuple[float, float], TrialSummary] = {}
    for F in F_values:
        for CR in CR_values:
            config = replace(base_config, F=float(F), CR=float(CR))
            logger.info(f"Grid cell F={F}, CR={CR}")
            cells[(float(F), float(CR))] = run_trials(
                corpus, lambda cfg=config: build(cfg), **trial_kwargs
            )
    return GridStudy([float(f) for f in F_values], [float(c) for c in CR_values], cells)

"""Differential Evolution (rand-to-best/1, binomial crossover) over the pipeline genome."""

import logging
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from beartype import beartype
from beartype.typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .backend import BackendBase
from .backend.backends.serial import SerialBackend
from .components.exceptions import (
    EmptyCorpusError,
    InvalidParameterError,
    StigTrendConfigError,
)
from .components.series import LabeledCorpus, TrendClass
from .components.utils import check_fields, load_defaults
from .pipeline import (
    GENOME_FIELDS,
    Classification,
    FixedSettings,
    PipelineParams,
    StigmergyPipeline,
)

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


@beartype
@dataclass(frozen=True, eq=False)
class Bounds:
    low: np.ndarray
    high: np.ndarray
    names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.ndim != 1 or low.shape != high.shape:
            raise InvalidParameterError("Bounds need equally long 1-D low/high arrays")
        if not np.all(low < high):
            raise InvalidParameterError("Every bound needs low < high")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return len(self.low)

    def clamp(self, vector: np.ndarray) -> np.ndarray:
        return np.clip(vector, self.low, self.high)

    def contains(self, vector: np.ndarray) -> bool:
        return bool(np.all(vector >= self.low) and np.all(vector <= self.high))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    @classmethod
    def box(cls, dim: int, low: float, high: float) -> "Bounds":
        return cls(np.full(dim, low), np.full(dim, high))

    @classmethod
    def default(cls) -> "Bounds":
        """Genome bounds; prototyping thresholds are fractions of I_max."""
        rows = load_defaults()["genome_bounds"]
        names = tuple(row["name"] for row in rows)
        if names != GENOME_FIELDS:
            raise StigTrendConfigError(f"genome_bounds must list {GENOME_FIELDS} in order")
        return cls(
            np.array([row["low"] for row in rows], dtype=np.float64),
            np.array([row["high"] for row in rows], dtype=np.float64),
            names,
        )


@beartype
@dataclass(frozen=True, eq=False)
class Candidate:
    vector: np.ndarray
    fitness: Optional[float] = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@beartype
@dataclass(frozen=True)
class DEConfig:
    population_size: int = 20
    F: float = 0.6
    CR: float = 0.6
    generations: int = 30
    seed: int = 0
    injected: Tuple[Tuple[float, ...], ...] = ()
    inject_expert: bool = False

    def __post_init__(self) -> None:
        if self.population_size < 4:
            raise StigTrendConfigError(
                f"population_size must be >= 4, got {self.population_size}"
            )
        if not (0.0 <= self.F <= 2.0):
            raise StigTrendConfigError(f"F must lie in [0, 2], got {self.F}")
        if not (0.0 <= self.CR <= 1.0):
            raise StigTrendConfigError(f"CR must lie in [0, 1], got {self.CR}")
        if self.generations < 0:
            raise StigTrendConfigError(f"generations must be >= 0, got {self.generations}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "population_size": self.population_size,
            "F": self.F,
            "CR": self.CR,
            "generations": self.generations,
            "seed": self.seed,
            "injected": [list(v) for v in self.injected],
            "inject_expert": self.inject_expert,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DEConfig":
        fields = ("population_size", "F", "CR", "generations", "seed", "injected", "inject_expert")
        check_fields(data, fields, "DE config")
        merged = {**load_defaults()["de"], **data}
        try:
            return cls(
                population_size=int(merged["population_size"]),
                F=float(merged["F"]),
                CR=float(merged["CR"]),
                generations=int(merged["generations"]),
                seed=int(merged["seed"]),
                injected=tuple(
                    tuple(float(x) for x in vector) for vector in merged.get("injected") or ()
                ),
                inject_expert=bool(merged.get("inject_expert", False)),
            )
        except (TypeError, ValueError) as e:
            raise StigTrendConfigError(f"Malformed DE config: {e}") from e

    @classmethod
    def from_defaults(cls, **overrides: Any) -> "DEConfig":
        return cls.from_dict({k: v for k, v in overrides.items() if v is not None})


@beartype
@dataclass(frozen=True, eq=False)
class OptimizationResult:
    best: Candidate
    history: List[float]
    mean_history: List[float] = field(default_factory=list)
    evaluations: int = 0

    def to_dict(self, fixed: Optional[FixedSettings] = None) -> Dict[str, Any]:
        report: Dict[str, Any] = {
            "best_vector": [float(x) for x in self.best.vector],
            "best_fitness": self.best.fitness,
            "history": self.history,
            "mean_history": self.mean_history,
            "evaluations": self.evaluations,
        }
        if fixed is not None:
            report["params"] = PipelineParams.from_vector(self.best.vector, fixed).to_dict()
        return report


# -- fitness -------------------------------------------------------------------


@beartype
def scored_pairs(
    labels: Mapping[int, TrendClass],
    predictions: Sequence[Classification],
    skip_points: int = 3,
) -> List[Tuple[int, int]]:
    """(truth, prediction) for every labeled comparison point after the first skipped ones."""
    return [
        (int(labels[c.step]), int(c.trend))
        for c in predictions[skip_points:]
        if c.step in labels
    ]


@beartype
def mse(pairs: Sequence[Tuple[int, int]]) -> float:
    if not pairs:
        raise EmptyCorpusError("No scored comparison points")
    return sum((truth - pred) ** 2 for truth, pred in pairs) / len(pairs)


@beartype
def predict_corpus(
    corpus: LabeledCorpus, params: PipelineParams
) -> List[List[Classification]]:
    pipeline = StigmergyPipeline(params)
    return [pipeline.run(entry.series) for entry in corpus]


@beartype
def fitness_mse(
    vector: np.ndarray, corpus: LabeledCorpus, fixed: Optional[FixedSettings] = None
) -> float:
    """Mean squared class residual over all scored points of all series."""
    if len(corpus) == 0:
        raise EmptyCorpusError("Cannot compute fitness on an empty corpus")
    fixed = fixed or FixedSettings()
    params = PipelineParams.from_vector(vector, fixed)
    pairs: List[Tuple[int, int]] = []
    for entry, predictions in zip(corpus, predict_corpus(corpus, params)):
        pairs.extend(scored_pairs(entry.labels, predictions, fixed.skip_points))
    return mse(pairs)


# -- operators -----------------------------------------------------------------


@beartype
def rand_to_best(
    x_r1: np.ndarray, x_best: np.ndarray, x_r2: np.ndarray, x_r3: np.ndarray, F: float
) -> np.ndarray:
    return x_r1 + F * (x_best - x_r1) + F * (x_r2 - x_r3)


@beartype
def mutate(
    population: Sequence[Candidate],
    target_idx: int,
    best_idx: int,
    F: float,
    rng: np.random.Generator,
    bounds: Optional[Bounds] = None,
) -> np.ndarray:
    if len(population) < 4:
        raise StigTrendConfigError(
            f"Mutation needs a population of at least 4, got {len(population)}"
        )
    others = [i for i in range(len(population)) if i != target_idx]
    r1, r2, r3 = (int(i) for i in rng.choice(others, size=3, replace=False))
    mutant = rand_to_best(
        population[r1].vector,
        population[best_idx].vector,
        population[r2].vector,
        population[r3].vector,
        F,
    )
    return bounds.clamp(mutant) if bounds is not None else mutant


@beartype
def crossover_binomial(
    target: np.ndarray, mutant: np.ndarray, CR: float, rng: np.random.Generator
) -> np.ndarray:
    """Take each component from the mutant with probability CR; one always is."""
    j_rand = int(rng.integers(len(target)))
    take = rng.random(len(target)) < CR
    take[j_rand] = True
    return np.where(take, mutant, target)


@beartype
def select(target: Candidate, trial: Candidate) -> Candidate:
    """Lower fitness wins; a tie keeps the trial."""
    if target.fitness is None or trial.fitness is None:
        raise InvalidParameterError("select needs two evaluated candidates")
    return trial if trial.fitness <= target.fitness else target


# -- driver --------------------------------------------------------------------


@beartype
class DifferentialEvolution:
    """Synchronous DE: a whole generation of trials is built, then evaluated, then selected.

    All random numbers are drawn in the driver process, so the result depends only on
    the seed and never on how the backend schedules evaluations.
    """

    def __init__(
        self,
        objective: Objective,
        bounds: Bounds,
        config: DEConfig,
        backend: Optional[BackendBase] = None,
        on_generation: Optional[Callable[[int, float], None]] = None,
    ) -> None:
        self.objective = objective
        self.bounds = bounds
        self.config = config
        self.backend = backend or SerialBackend()
        self.on_generation = on_generation
        self.evaluations = 0

    def _evaluate(self, vectors: List[np.ndarray]) -> List[Candidate]:
        fitnesses = self.backend.map(self.objective, vectors)
        self.evaluations += len(vectors)
        return [Candidate(v, float(f)) for v, f in zip(vectors, fitnesses)]

    def _initial_vectors(self, rng: np.random.Generator) -> List[np.ndarray]:
        n = self.config.population_size
        raw = [np.asarray(v, dtype=np.float64) for v in self.config.injected][:n]
        for vector in raw:
            if vector.shape != (self.bounds.dim,):
                raise StigTrendConfigError(
                    f"Injected vector has shape {vector.shape}, expected ({self.bounds.dim},)"
                )
        injected = [self.bounds.clamp(vector) for vector in raw]
        random_part = list(self.bounds.sample(rng, n - len(injected)))
        logger.debug(f"Initial population: {len(injected)} injected, {len(random_part)} random")
        return injected + random_part

    def run(self) -> OptimizationResult:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        population = self._evaluate(self._initial_vectors(rng))
        best = min(population, key=lambda c: c.fitness)
        history = [best.fitness]
        mean_history = [float(np.mean([c.fitness for c in population]))]
        if self.on_generation:
            self.on_generation(0, best.fitness)

        for generation in range(1, cfg.generations + 1):
            best_idx = int(np.argmin([c.fitness for c in population]))
            trials = []
            for i, target in enumerate(population):
                mutant = mutate(population, i, best_idx, cfg.F, rng, self.bounds)
                trials.append(crossover_binomial(target.vector, mutant, cfg.CR, rng))
            evaluated = self._evaluate(trials)
            population = [select(t, u) for t, u in zip(population, evaluated)]
            generation_best = min(population, key=lambda c: c.fitness)
            if generation_best.fitness < best.fitness:
                best = generation_best
            history.append(best.fitness)
            mean_history.append(float(np.mean([c.fitness for c in population])))
            logger.debug(f"Generation {generation}: best {best.fitness:.6f}")
            if self.on_generation:
                self.on_generation(generation, best.fitness)

        logger.info(
            f"DE finished after {cfg.generations} generations, {self.evaluations} evaluations, "
            f"best fitness {best.fitness:.6f}"
        )
        return OptimizationResult(best, history, mean_history, self.evaluations)


@beartype
def optimize(
    corpus: LabeledCorpus,
    config: DEConfig,
    bounds: Optional[Bounds] = None,
    fixed: Optional[FixedSettings] = None,
    backend: Optional[BackendBase] = None,
    on_generation: Optional[Callable[[int, float], None]] = None,
) -> OptimizationResult:
    """Tune the eight pipeline parameters on ``corpus`` by minimizing ``fitness_mse``."""
    if len(corpus) == 0:
        raise EmptyCorpusError("Cannot optimize on an empty corpus")
    bounds = bounds or Bounds.default()
    fixed = fixed or FixedSettings.from_defaults()
    if config.inject_expert:
        expert = tuple(float(x) for x in PipelineParams.expert(fixed).to_vector())
        config = DEConfig(
            population_size=config.population_size,
            F=config.F,
            CR=config.CR,
            generations=config.generations,
            seed=config.seed,
            injected=(expert, *config.injected),
        )
    objective = partial(fitness_mse, corpus=corpus, fixed=fixed)
    return DifferentialEvolution(objective, bounds, config, backend, on_generation).run()

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import polars as pl
from beartype import beartype
from beartype.typing import Any, Dict, List, Optional, Sequence, Tuple

from ..datagen import normalize_minmax
from ..pipeline import Classification
from .config import TrendConfig
from .exceptions import StigTrendConfigError, StigTrendDataError
from .series import Indicator, LabeledCorpus, LabeledSeries, TimeSeries, TrendClass

logger = logging.getLogger(__name__)

SERIES_FILE = "series.csv"
LABELS_FILE = "labels.csv"

SERIES_SCHEMA = {"region_id": pl.Utf8, "indicator": pl.Utf8, "step": pl.Int64, "value": pl.Float64}
LABELS_SCHEMA = {"region_id": pl.Utf8, "indicator": pl.Utf8, "step": pl.Int64, "label": pl.Int64}

# Fixed precision keeps rewritten files byte-identical.
FLOAT_PRECISION = 12


def manifest_name(command: str) -> str:
    return f"{command}.manifest.json"


@beartype
@dataclass
class RunManifest:
    command: str
    seed: Optional[int]
    config_paths: Dict[str, str] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    settings: Dict[str, Any] = field(default_factory=dict)
    version: str = ""
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )
    wall_time_s: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@beartype
class DataIO:
    """File formats of the tool: series/labels/classes CSVs and JSON documents."""

    def __init__(self, config: Optional[TrendConfig] = None) -> None:
        self.config = config or TrendConfig()

    def resolve(self, path: Optional[Path], default_name: str) -> Path:
        """``path`` as given, or ``default_name`` under the configured data directory."""
        return path if path is not None else self.config.data_dir / default_name

    # -- JSON -------------------------------------------------------------------

    def read_json(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise StigTrendConfigError(f"File not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise StigTrendConfigError(f"Invalid JSON in {path}: {e}") from e
        except OSError as e:
            raise StigTrendConfigError(f"Cannot read {path}: {e}") from e
        if not isinstance(data, dict):
            raise StigTrendConfigError(f"{path} must hold a JSON object")
        return data

    def write_json(self, data: Dict[str, Any], path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")
        logger.debug(f"Wrote {path}")
        return path

    def write_manifest(self, manifest: RunManifest, out_dir: Path) -> Path:
        """One manifest per command, so commands sharing a directory do not collide."""
        return self.write_json(manifest.to_dict(), out_dir / manifest_name(manifest.command))

    # -- CSV readers ------------------------------------------------------------

    def _read_csv(self, path: Path, schema: Dict[str, Any]) -> pl.DataFrame:
        if not path.exists():
            raise StigTrendDataError(f"File not found: {path}")
        try:
            frame = pl.read_csv(path, schema_overrides=schema, null_values=["", "NA", "null"])
        except (pl.exceptions.PolarsError, OSError) as e:
            raise StigTrendDataError(f"Failed to parse CSV {path}: {e}") from e
        missing = [c for c in schema if c not in frame.columns]
        if missing:
            raise StigTrendDataError(f"{path} is missing columns: {missing}")
        if frame.select(list(schema)).null_count().sum_horizontal().item() > 0:
            raise StigTrendDataError(f"{path} contains empty cells")
        return frame

    def read_series(self, path: Path, normalize: bool = False) -> List[TimeSeries]:
        """One TimeSeries per (region_id, indicator), in order of first appearance."""
        frame = self._read_csv(path, SERIES_SCHEMA)
        series = []
        for (region_id, indicator), rows in frame.group_by(
            ["region_id", "indicator"], maintain_order=True
        ):
            rows = rows.sort("step")
            values = rows["value"].to_numpy()
            if normalize:
                values = normalize_minmax(values)
            series.append(
                TimeSeries(
                    region_id=str(region_id),
                    indicator=Indicator.parse(str(indicator)),
                    steps=rows["step"].to_numpy(),
                    values=values,
                )
            )
        logger.info(f"Read {len(series)} series from {path}")
        return series

    def read_labels(self, path: Path) -> Dict[Tuple[str, str], Dict[int, TrendClass]]:
        frame = self._read_csv(path, LABELS_SCHEMA)
        bad = frame.filter(~pl.col("label").is_in([-1, 0, 1]))
        if bad.height:
            raise StigTrendDataError(f"{path}: labels must be -1, 0 or 1")
        labels: Dict[Tuple[str, str], Dict[int, TrendClass]] = {}
        for (region_id, indicator), rows in frame.group_by(
            ["region_id", "indicator"], maintain_order=True
        ):
            key = (str(region_id), Indicator.parse(str(indicator)).value)
            labels[key] = {
                int(s): TrendClass(int(c)) for s, c in zip(rows["step"], rows["label"])
            }
        return labels

    def read_corpus(self, corpus_dir: Path) -> LabeledCorpus:
        series = self.read_series(corpus_dir / SERIES_FILE)
        labels = self.read_labels(corpus_dir / LABELS_FILE)
        unlabeled = [s.key for s in series if s.key not in labels]
        if unlabeled:
            raise StigTrendDataError(
                f"{len(unlabeled)} series in {corpus_dir} have no labels",
                details=f"first: {unlabeled[0]}",
            )
        return LabeledCorpus([LabeledSeries(s, labels[s.key]) for s in series])

    def read_annual(self, path: Path) -> pl.DataFrame:
        return self._read_csv(
            path,
            {"region_id": pl.Utf8, "group_id": pl.Utf8, "year": pl.Int64, "value": pl.Float64},
        )

    # -- CSV writers ------------------------------------------------------------

    def _write_csv(self, frame: pl.DataFrame, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.write_csv(path, float_precision=FLOAT_PRECISION)
        logger.debug(f"Wrote {frame.height} rows to {path}")
        return path

    def write_series(self, series: Sequence[TimeSeries], path: Path) -> Path:
        frame = pl.DataFrame(
            {
                "region_id": [s.region_id for s in series for _ in range(len(s))],
                "indicator": [s.indicator.value for s in series for _ in range(len(s))],
                "step": np.concatenate([s.steps for s in series]) if series else [],
                "value": np.concatenate([s.values for s in series]) if series else [],
            },
            schema=SERIES_SCHEMA,
        )
        return self._write_csv(frame, path)

    def write_labels(self, corpus: LabeledCorpus, path: Path) -> Path:
        rows = [
            (e.series.region_id, e.series.indicator.value, step, int(label))
            for e in corpus
            for step, label in sorted(e.labels.items())
        ]
        frame = pl.DataFrame(rows, schema=LABELS_SCHEMA, orient="row")
        return self._write_csv(frame, path)

    def write_corpus(self, corpus: LabeledCorpus, out_dir: Path) -> Dict[str, Path]:
        return {
            "series": self.write_series([e.series for e in corpus], out_dir / SERIES_FILE),
            "labels": self.write_labels(corpus, out_dir / LABELS_FILE),
        }

    def write_classes(
        self, results: Sequence[Tuple[TimeSeries, Sequence[Classification]]], path: Path
    ) -> Path:
        """Classification timelines: ``region_id,indicator,step,class,delta,flag``."""
        rows = [
            (
                series.region_id,
                series.indicator.value,
                c.step,
                int(c.trend),
                float(c.delta),
                "degenerate" if c.degenerate else "",
            )
            for series, classes in results
            for c in classes
        ]
        frame = pl.DataFrame(
            rows,
            schema={
                "region_id": pl.Utf8,
                "indicator": pl.Utf8,
                "step": pl.Int64,
                "class": pl.Int64,
                "delta": pl.Float64,
                "flag": pl.Utf8,
            },
            orient="row",
        )
        return self._write_csv(frame, path)

    def write_history(
        self, history: Sequence[float], mean_history: Sequence[float], path: Path
    ) -> Path:
        frame = pl.DataFrame(
            {
                "generation": list(range(len(history))),
                "best_fitness": [float(x) for x in history],
                "mean_fitness": [float(x) for x in mean_history] or [None] * len(history),
            },
            schema={"generation": pl.Int64, "best_fitness": pl.Float64, "mean_fitness": pl.Float64},
        )
        return self._write_csv(frame, path)

    def write_table(self, frame: pl.DataFrame, path: Path) -> Path:
        return self._write_csv(frame, path)


def _plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays become Python numbers and lists."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

import polars as pl
import typer
from beartype import beartype
from beartype.typing import Annotated, Any, Dict, Iterator, List, Optional
from rich.console import Console
from rich.progress import Progress
from rich.table import Table

from . import __version__
from .backend import make_backend
from .components.config import TrendConfig
from .components.data_io import DataIO, RunManifest
from .components.exceptions import StigTrendError
from .components.series import Indicator, LabeledCorpus
from .components.utils import configure_logging, load_defaults
from .datagen import CorpusSpec, annual_group_stats_from_frame, synthesize_labeled
from .evaluation import (
    FixedParamsModel,
    StigmergyModel,
    TrendModel,
    grid_study,
    run_trials,
)
from .optimizer import DEConfig, optimize
from .pipeline import FixedSettings, PipelineParams, StigmergyPipeline

logger = logging.getLogger(__name__)
console = Console()


@contextmanager
def _exit_on_error() -> Iterator[None]:
    """Print library errors and exit with the code of their family."""
    try:
        yield
    except StigTrendError as e:
        logger.debug(f"{type(e).__name__}: {e}", exc_info=True)
        console.print(f"[red]❌ {e}[/red]")
        raise typer.Exit(code=e.exit_code) from e


def _sibling(path: Path, tag: str, ext: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{ext}")


@beartype
class TrendCLI:
    @classmethod
    def get_app(cls) -> typer.Typer:
        app = typer.Typer(
            help="Stigmergy-based trend detection tuned by Differential Evolution.",
            add_completion=False,
            pretty_exceptions_show_locals=False,
            rich_markup_mode="markdown",
        )
        app.command(help="Generate a labeled synthetic corpus from a corpus spec.")(cls.gen)
        app.command(help="Tune pipeline parameters with DE on a labeled corpus.")(cls.train)
        app.command(help="Classify every series of a CSV with fixed parameters.")(cls.run)
        app.command(help="Repeated-holdout evaluation, optionally over the F x CR grid.")(
            cls.eval
        )
        app.command(help="Display the resolved configuration.")(cls.status)
        return app

    @classmethod
    def _setup(cls, log_level: Optional[str]) -> TrendConfig:
        config = TrendConfig()
        with _exit_on_error():
            configure_logging(log_level or config.log_level)
        return config

    @classmethod
    def _fixed(cls, lag: Optional[int], bins: Optional[int]) -> FixedSettings:
        return FixedSettings.from_defaults(lag=lag, bins=bins)

    @classmethod
    def _de_config(cls, data_io: DataIO, path: Optional[Path], seed: Optional[int]) -> DEConfig:
        de_config = DEConfig.from_dict(data_io.read_json(path)) if path else DEConfig.from_defaults()
        return replace(de_config, seed=seed) if seed is not None else de_config

    @classmethod
    def _corpus(cls, data_io: DataIO, corpus_dir: Path, indicator: Optional[str]) -> LabeledCorpus:
        corpus = data_io.read_corpus(corpus_dir)
        if indicator:
            corpus = corpus.for_indicator(Indicator.parse(indicator))
            logger.info(f"Restricted corpus to indicator {indicator}: {len(corpus)} series")
        return corpus

    @classmethod
    def gen(
        cls,
        spec: Annotated[Path, typer.Argument(help="Corpus spec JSON.")],
        out_dir: Annotated[
            Optional[Path],
            typer.Option("--out", "-o", help="Output directory (defaults to the data dir)."),
        ] = None,
        seed: Annotated[int, typer.Option("--seed", "-s", help="Master seed.")] = 0,
        annual: Annotated[
            Optional[Path],
            typer.Option(
                "--annual",
                help="CSV of annual values (region_id,group_id,year,value) granulated into groups.",
            ),
        ] = None,
        indicator: Annotated[
            Optional[str], typer.Option("--indicator", help="Indicator of the --annual groups.")
        ] = None,
        log_level: Annotated[Optional[str], typer.Option("--log-level")] = None,
    ) -> None:
        config = cls._setup(log_level)
        data_io = DataIO(config)
        out_dir = data_io.resolve(out_dir, "corpus")
        started = time.perf_counter()
        with _exit_on_error():
            spec_data = data_io.read_json(spec)
            if annual:
                groups = annual_group_stats_from_frame(
                    data_io.read_annual(annual),
                    Indicator.parse(indicator) if indicator else Indicator.SYNTHETIC,
                )
                logger.info(f"Read {len(groups)} annual groups from {annual}")
                spec_data = {
                    **spec_data,
                    "groups": [*(spec_data.get("groups") or []), *(g.to_dict() for g in groups)],
                }
            corpus_spec = CorpusSpec.from_dict(spec_data)
            console.print(f"[turquoise4]💬 Generating corpus into {out_dir}...[/turquoise4]")
            corpus = synthesize_labeled(corpus_spec, seed)
            written = data_io.write_corpus(corpus, out_dir)
            data_io.write_manifest(
                RunManifest(
                    command="gen",
                    seed=seed,
                    config_paths={"spec": str(spec)},
                    inputs={"annual": str(annual)} if annual else {},
                    outputs={k: str(v) for k, v in written.items()},
                    settings={"spec": corpus_spec.to_dict()},
                    version=__version__,
                    wall_time_s=time.perf_counter() - started,
                ),
                out_dir,
            )
        console.print(f"[green]✅ Wrote {len(corpus)} labeled series to {out_dir}.[/green]")

    @classmethod
    def train(
        cls,
        corpus_dir: Annotated[Path, typer.Argument(help="Directory with series.csv and labels.csv.")],
        de: Annotated[Optional[Path], typer.Option("--de", help="DE config JSON.")] = None,
        out: Annotated[
            Optional[Path], typer.Option("--out", "-o", help="Output params JSON.")
        ] = None,
        seed: Annotated[Optional[int], typer.Option("--seed", "-s", help="Overrides the DE seed.")] = None,
        jobs: Annotated[Optional[int], typer.Option("--jobs", "-j", help="Worker processes.")] = None,
        lag: Annotated[Optional[int], typer.Option("--lag", help="Comparison lag in steps.")] = None,
        bins: Annotated[Optional[int], typer.Option("--bins", help="Track grid resolution.")] = None,
        indicator: Annotated[Optional[str], typer.Option("--indicator", help="Only this indicator.")] = None,
        log_level: Annotated[Optional[str], typer.Option("--log-level")] = None,
    ) -> None:
        config = cls._setup(log_level)
        data_io = DataIO(config)
        out = out or corpus_dir / "params.json"
        started = time.perf_counter()
        with _exit_on_error():
            fixed = cls._fixed(lag, bins)
            de_config = cls._de_config(data_io, de, seed)
            corpus = cls._corpus(data_io, corpus_dir, indicator)
            with (
                make_backend(config.backend, config.jobs if jobs is None else jobs) as backend,
                Progress(console=console, transient=True) as progress,
            ):
                task = progress.add_task("[cyan]Evolving...", total=de_config.generations + 1)
                result = optimize(
                    corpus,
                    de_config,
                    fixed=fixed,
                    backend=backend,
                    on_generation=lambda g, best: progress.update(
                        task, advance=1, description=f"[cyan]Generation {g}: best {best:.4f}"
                    ),
                )
            params = PipelineParams.from_vector(result.best.vector, fixed)
            report_path = _sibling(out, "report", ".json")
            history_path = _sibling(out, "history", ".csv")
            data_io.write_json(params.to_dict(), out)
            data_io.write_json(
                {**result.to_dict(fixed), "de_config": de_config.to_dict(), "fixed": asdict(fixed)},
                report_path,
            )
            data_io.write_history(result.history, result.mean_history, history_path)
            data_io.write_manifest(
                RunManifest(
                    command="train",
                    seed=de_config.seed,
                    config_paths={"de": str(de)} if de else {},
                    inputs={"corpus": str(corpus_dir)},
                    outputs={
                        "params": str(out),
                        "report": str(report_path),
                        "history": str(history_path),
                    },
                    settings={
                        "de_config": de_config.to_dict(),
                        "fixed": asdict(fixed),
                        "indicator": indicator,
                        "backend": backend.to_dict(),
                    },
                    version=__version__,
                    wall_time_s=time.perf_counter() - started,
                ),
                out.parent,
            )
        console.print(
            f"[green]✅ Best fitness {result.best.fitness:.6f} after "
            f"{result.evaluations} evaluations; params saved to {out}.[/green]"
        )

    @classmethod
    def run(
        cls,
        series_csv: Annotated[Path, typer.Argument(help="Series CSV: region_id,indicator,step,value.")],
        params: Annotated[
            Optional[Path],
            typer.Option("--params", "-p", help="Params JSON (defaults to the expert values)."),
        ] = None,
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output classes CSV.")] = None,
        lag: Annotated[Optional[int], typer.Option("--lag", help="Overrides the params lag.")] = None,
        bins: Annotated[Optional[int], typer.Option("--bins", help="Overrides the params bins.")] = None,
        normalize: Annotated[
            bool, typer.Option("--normalize", help="Min-max normalize each series first.")
        ] = False,
        indicator: Annotated[Optional[str], typer.Option("--indicator", help="Only this indicator.")] = None,
        log_level: Annotated[Optional[str], typer.Option("--log-level")] = None,
    ) -> None:
        config = cls._setup(log_level)
        data_io = DataIO(config)
        out = out or series_csv.with_name("classes.csv")
        started = time.perf_counter()
        with _exit_on_error():
            if params:
                pipeline_params = PipelineParams.from_dict(data_io.read_json(params))
            else:
                pipeline_params = PipelineParams.expert(cls._fixed(None, None))
            if lag is not None or bins is not None:
                pipeline_params = replace(
                    pipeline_params,
                    lag=lag if lag is not None else pipeline_params.lag,
                    bins=bins if bins is not None else pipeline_params.bins,
                )
            series = data_io.read_series(series_csv, normalize=normalize)
            if indicator:
                wanted = Indicator.parse(indicator)
                series = [s for s in series if s.indicator == wanted]
            pipeline = StigmergyPipeline(pipeline_params)
            results = [(s, pipeline.run(s)) for s in series]
            data_io.write_classes(results, out)
            data_io.write_manifest(
                RunManifest(
                    command="run",
                    seed=None,
                    config_paths={"params": str(params)} if params else {},
                    inputs={"series": str(series_csv)},
                    outputs={"classes": str(out)},
                    settings={"params": pipeline_params.to_dict(), "normalize": normalize},
                    version=__version__,
                    wall_time_s=time.perf_counter() - started,
                ),
                out.parent,
            )

        table = Table(title="[bold green]Trend classes[/bold green]")
        for column in ("Series", "−1", "0", "+1", "Degenerate"):
            table.add_column(column, style="cyan" if column == "Series" else "magenta")
        for s, classes in results:
            counts = [sum(1 for c in classes if int(c.trend) == k) for k in (-1, 0, 1)]
            degenerate = sum(1 for c in classes if c.degenerate)
            table.add_row(f"{s.region_id}/{s.indicator.value}", *map(str, counts), str(degenerate))
        console.print(table)
        console.print(f"[green]✅ Classes for {len(results)} series saved to {out}.[/green]")

    @classmethod
    def eval(
        cls,
        corpus_dir: Annotated[Path, typer.Argument(help="Directory with series.csv and labels.csv.")],
        de: Annotated[Optional[Path], typer.Option("--de", help="DE config JSON.")] = None,
        params: Annotated[
            Optional[Path], typer.Option("--params", "-p", help="Evaluate these params without DE.")
        ] = None,
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Report JSON.")] = None,
        expert: Annotated[
            bool, typer.Option("--expert", help="Evaluate the expert defaults without DE.")
        ] = False,
        grid: Annotated[bool, typer.Option("--grid", help="Run the F x CR grid study.")] = False,
        trials: Annotated[Optional[int], typer.Option("--trials", help="Random splits.")] = None,
        repetitions: Annotated[
            Optional[int], typer.Option("--repetitions", help="Repetitions per split.")
        ] = None,
        train_fraction: Annotated[
            Optional[float], typer.Option("--train-fraction", help="Share of series used for training.")
        ] = None,
        seed: Annotated[int, typer.Option("--seed", "-s", help="Master seed.")] = 0,
        jobs: Annotated[Optional[int], typer.Option("--jobs", "-j", help="Worker processes.")] = None,
        lag: Annotated[Optional[int], typer.Option("--lag", help="Comparison lag in steps.")] = None,
        bins: Annotated[Optional[int], typer.Option("--bins", help="Track grid resolution.")] = None,
        indicator: Annotated[Optional[str], typer.Option("--indicator", help="Only this indicator.")] = None,
        log_level: Annotated[Optional[str], typer.Option("--log-level")] = None,
    ) -> None:
        config = cls._setup(log_level)
        data_io = DataIO(config)
        out = out or corpus_dir / "report.json"
        defaults = load_defaults()
        protocol = defaults["protocol"]
        started = time.perf_counter()
        with _exit_on_error():
            fixed = cls._fixed(lag, bins)
            de_config = cls._de_config(data_io, de, seed)
            corpus = cls._corpus(data_io, corpus_dir, indicator)
            expert_params = PipelineParams.expert(fixed)
            trial_kwargs: Dict[str, Any] = {
                "n_trials": int(protocol["n_trials"]) if trials is None else trials,
                "repetitions": (
                    int(protocol["repetitions"]) if repetitions is None else repetitions
                ),
                "train_fraction": (
                    float(protocol["train_fraction"]) if train_fraction is None else train_fraction
                ),
                "seed": seed,
                "expert": expert_params,
                "skip_points": fixed.skip_points,
                "confidence": float(protocol["confidence"]),
            }
            fixed_params: Optional[PipelineParams] = None
            if params:
                fixed_params = PipelineParams.from_dict(data_io.read_json(params)).with_fixed(fixed)
            elif expert:
                fixed_params = expert_params
            mode = "grid" if grid else "fixed" if fixed_params else "de"
            outputs: Dict[str, str] = {"report": str(out)}

            with make_backend(config.backend, config.jobs if jobs is None else jobs) as backend:

                def build(cfg: DEConfig) -> TrendModel:
                    if fixed_params is not None:
                        return FixedParamsModel(fixed_params)
                    return StigmergyModel(cfg, fixed, backend=backend)

                if grid:
                    console.print("[turquoise4]💬 Running the F x CR grid study...[/turquoise4]")
                    study = grid_study(
                        corpus,
                        de_config,
                        [float(f) for f in defaults["grid"]["F"]],
                        [float(c) for c in defaults["grid"]["CR"]],
                        model_builder=build,
                        **trial_kwargs,
                    )
                    report = study.to_dict()
                    grid_csv = _sibling(out, "grid", ".csv")
                    cells_csv = _sibling(out, "grid_cells", ".csv")
                    data_io.write_table(study.layout_table(), grid_csv)
                    data_io.write_table(study.cell_table(), cells_csv)
                    outputs.update({"grid": str(grid_csv), "grid_cells": str(cells_csv)})
                    cls._print_grid(study.layout_table())
                else:
                    total = trial_kwargs["n_trials"] * trial_kwargs["repetitions"]
                    with Progress(console=console, transient=True) as progress:
                        task = progress.add_task("[cyan]Trials...", total=total)
                        summary = run_trials(
                            corpus,
                            lambda: build(de_config),
                            on_report=lambda _: progress.update(task, advance=1),
                            **trial_kwargs,
                        )
                    report = summary.to_dict()
                    trials_csv = _sibling(out, "trials", ".csv")
                    data_io.write_table(summary.per_trial_table(), trials_csv)
                    outputs["trials"] = str(trials_csv)
                    if mode == "de":
                        history_csv = _sibling(out, "history", ".csv")
                        data_io.write_table(cls._history_frame(summary.reports), history_csv)
                        outputs["history"] = str(history_csv)
                    cls._print_summary(report["aggregate"])

            report["mode"] = mode
            report["de_config"] = de_config.to_dict()
            report["fixed"] = asdict(fixed)
            data_io.write_json(report, out)
            data_io.write_manifest(
                RunManifest(
                    command="eval",
                    seed=seed,
                    config_paths={
                        k: str(v) for k, v in {"de": de, "params": params}.items() if v
                    },
                    inputs={"corpus": str(corpus_dir)},
                    outputs=outputs,
                    settings={
                        "mode": mode,
                        "protocol": {k: v for k, v in trial_kwargs.items() if k != "expert"},
                        "de_config": de_config.to_dict(),
                        "fixed": asdict(fixed),
                        "indicator": indicator,
                    },
                    version=__version__,
                    wall_time_s=time.perf_counter() - started,
                ),
                out.parent,
            )
        console.print(f"[green]✅ Report saved to {out}.[/green]")

    @staticmethod
    def _history_frame(reports: List[Any]) -> pl.DataFrame:
        rows = [
            {
                "trial": r.trial_id,
                "repetition": r.repetition,
                "generation": g,
                "best_fitness": float(f),
            }
            for r in reports
            for g, f in enumerate(r.history)
        ]
        return pl.DataFrame(
            rows,
            schema={
                "trial": pl.Int64,
                "repetition": pl.Int64,
                "generation": pl.Int64,
                "best_fitness": pl.Float64,
            },
        )

    @staticmethod
    def _print_summary(aggregate: Dict[str, Any]) -> None:
        table = Table(title="[bold green]Repeated holdout[/bold green]")
        table.add_column("Key", style="cyan")
        table.add_column("Value", style="magenta")
        table.add_row("Test MSE (mean)", f"{aggregate['test_mse_mean']:.4f}")
        table.add_row("Test MSE (std)", f"{aggregate['test_mse_std']:.4f}")
        table.add_row(
            f"{aggregate['confidence']:.0%} CI",
            f"[{aggregate['ci_low']:.4f}, {aggregate['ci_high']:.4f}]",
        )
        expert = aggregate.get("expert_test_mse_mean")
        if expert is not None:
            table.add_row("Expert test MSE", f"{expert:.4f}")
        console.print(table)

    @staticmethod
    def _print_grid(frame: pl.DataFrame) -> None:
        table = Table(title="[bold green]Test MSE by F (columns) and CR (rows)[/bold green]")
        for column in frame.columns:
            table.add_column(column, style="cyan" if column == "CR" else "magenta")
        for row in frame.iter_rows():
            table.add_row(*map(str, row))
        console.print(table)

    @classmethod
    def status(
        cls,
        verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Show env vars.")] = False,
    ) -> None:
        try:
            config = TrendConfig()
            defaults = load_defaults()
            table = Table(title="[bold green]stigtrend Status[/bold green]")
            table.add_column("Key", style="cyan")
            table.add_column("Value", style="magenta")
            table.add_row("Version", __version__)
            table.add_row("Data dir", str(config.data_dir))
            table.add_row("Backend", config.backend)
            table.add_row("Jobs", str(config.jobs))
            table.add_row("Log level", config.log_level)
            for key, value in defaults["fixed"].items():
                table.add_row(f"fixed.{key}", str(value))
            for key, value in defaults["de"].items():
                table.add_row(f"de.{key}", str(value))
            console.print(table)
            if verbose:
                env_table = Table(
                    title="[bold green]Environment Variables (STIGTREND_*)[/bold green]"
                )
                env_table.add_column("Key", style="cyan")
                env_table.add_column("Value", style="magenta")
                env_table.add_column("Description")
                for key, value, description in config.describe():
                    env_table.add_row(key, value, description)
                console.print(env_table)
                for key, hint in config.unknown_env_vars():
                    suggestion = f", did you mean {hint}?" if hint else ""
                    console.print(f"[yellow]⚠️ {key} is not used{suggestion}[/yellow]")
        except StigTrendError as e:
            console.print(f"[red]❌ Error getting status: {e}[/red]")
            logger.error(f"Status failed: {e}")
            raise typer.Exit(code=e.exit_code) from e


def main() -> None:
    TrendCLI.get_app()()

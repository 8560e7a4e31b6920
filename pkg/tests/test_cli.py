import json
import re
from pathlib import Path

import polars as pl
import pytest
from beartype.typing import Dict, List
from typer.testing import CliRunner

from stigtrend.cli import TrendCLI

runner = CliRunner()
app = TrendCLI.get_app()

FAST = ["--lag", "12", "--bins", "100"]
TINY_DE = {"population_size": 4, "generations": 1, "seed": 0}


def _strip_ansi_codes(text: str) -> str:
    ansi_escape = re.compile(r"\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])")
    return ansi_escape.sub("", text)


@pytest.fixture
def env(tmp_path: Path) -> Dict[str, str]:
    """Serial backend and a private data directory."""
    return {"STIGTREND_BACKEND": "serial", "STIGTREND_DATA_DIR": str(tmp_path / "data")}


@pytest.fixture
def corpus_dir(tmp_path: Path, small_spec_path: Path, env: Dict[str, str]) -> Path:
    out = tmp_path / "corpus"
    result = runner.invoke(app, ["gen", str(small_spec_path), "--out", str(out), "--seed", "7"], env=env)
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def de_path(tmp_path: Path) -> Path:
    path = tmp_path / "de.json"
    path.write_text(json.dumps(TINY_DE))
    return path


def invoke(args: List[str], env: Dict[str, str]) -> object:
    return runner.invoke(app, args, env=env)


class TestGen:
    """Corpus generation."""

    def test_writes_corpus(self, corpus_dir: Path) -> None:
        """Test gen writes both CSVs and a manifest."""
        assert (corpus_dir / "series.csv").exists()
        assert (corpus_dir / "labels.csv").exists()
        manifest = json.loads((corpus_dir / "gen.manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert manifest["seed"] == 7
        assert pl.read_csv(corpus_dir / "series.csv")["region_id"].n_unique() == 6

    def test_deterministic(
        self, tmp_path: Path, small_spec_path: Path, corpus_dir: Path, env: Dict[str, str]
    ) -> None:
        """Test the same spec and seed produce identical files."""
        again = tmp_path / "again"
        result = invoke(["gen", str(small_spec_path), "-o", str(again), "-s", "7"], env)
        assert result.exit_code == 0
        for name in ("series.csv", "labels.csv"):
            assert (again / name).read_bytes() == (corpus_dir / name).read_bytes()

    def test_malformed_spec(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test a misspelled field exits with the config code and names the field."""
        spec = tmp_path / "bad.json"
        spec.write_text(json.dumps({"series": [{"region_id": "r", "segmnts": []}]}))
        result = invoke(["gen", str(spec), "-o", str(tmp_path / "out")], env)
        assert result.exit_code == 2
        assert "segmnts" in _strip_ansi_codes(result.output)

    def test_missing_spec(self, tmp_path: Path, env: Dict[str, str]) -> None:
        result = invoke(["gen", str(tmp_path / "none.json"), "-o", str(tmp_path / "out")], env)
        assert result.exit_code == 2

    def test_annual_groups(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test --annual granulates each group of an annual CSV into one labeled series."""
        rows = [
            f"{region},{group},{year},{base + 0.1 * k + offset}\n"
            for group, base in (("north", 0.2), ("south", 0.6))
            for region, offset in (("a", 0.0), ("b", 0.02))
            for k, year in enumerate((2001, 2002, 2003))
        ]
        annual = tmp_path / "annual.csv"
        annual.write_text("region_id,group_id,year,value\n" + "".join(rows))
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"lag": 12}))
        out = tmp_path / "corpus"
        result = invoke(
            ["gen", str(spec), "-o", str(out), "--annual", str(annual), "--indicator", "U"], env
        )
        assert result.exit_code == 0, result.output
        series = pl.read_csv(out / "series.csv")
        assert series["region_id"].unique(maintain_order=True).to_list() == ["north", "south"]
        assert set(series["indicator"].to_list()) == {"U"}
        assert series.height == 2 * 36
        manifest = json.loads((out / "gen.manifest.json").read_text())
        assert manifest["inputs"] == {"annual": str(annual)}

    def test_annual_gap(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test an annual CSV with a missing year exits with the data code."""
        annual = tmp_path / "annual.csv"
        annual.write_text("region_id,group_id,year,value\na,g,2001,0.1\na,g,2003,0.2\n")
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"lag": 12}))
        result = invoke(["gen", str(spec), "-o", str(tmp_path / "o"), "--annual", str(annual)], env)
        assert result.exit_code == 3

    def test_binary_spec(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test a spec that is not UTF-8 exits with the config code."""
        spec = tmp_path / "spec.json"
        spec.write_bytes(b"\xff\xfe")
        result = invoke(["gen", str(spec), "-o", str(tmp_path / "out")], env)
        assert result.exit_code == 2


class TestRun:
    """Classification with fixed parameters."""

    def write_series(self, path: Path, length: int, value: float = 0.5) -> Path:
        rows = "".join(f"c,S,{t},{value}\n" for t in range(length))
        path.write_text("region_id,indicator,step,value\n" + rows)
        return path

    def test_constant_series_is_stable(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test a constant series is classified stable at every step after lag and warmup."""
        series = self.write_series(tmp_path / "in.csv", 40)
        result = invoke(["run", str(series), *FAST], env)
        assert result.exit_code == 0, result.output
        classes = pl.read_csv(tmp_path / "classes.csv")
        assert classes["step"].to_list() == list(range(13, 40))
        assert set(classes["class"].to_list()) == {0}
        assert (tmp_path / "run.manifest.json").exists()

    def test_short_series(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test a series no longer than the lag exits with the data code."""
        series = self.write_series(tmp_path / "in.csv", 12)
        result = invoke(["run", str(series), *FAST], env)
        assert result.exit_code == 3

    def test_raw_values_need_normalize(self, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test values outside [0, 1] are rejected unless --normalize is given."""
        path = tmp_path / "raw.csv"
        rows = "".join(f"c,U,{t},{10 + t}\n" for t in range(30))
        path.write_text("region_id,indicator,step,value\n" + rows)
        assert invoke(["run", str(path), *FAST], env).exit_code == 3
        result = invoke(["run", str(path), *FAST, "--normalize", "-o", str(tmp_path / "o.csv")], env)
        assert result.exit_code == 0, result.output
        classes = pl.read_csv(tmp_path / "o.csv")["class"].to_list()
        assert classes.count(1) > len(classes) / 2
        assert -1 not in classes

    def test_indicator_filter(self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test --indicator drops other indicators."""
        out = tmp_path / "none.csv"
        result = invoke(["run", str(corpus_dir / "series.csv"), *FAST, "--indicator", "S", "-o", str(out)], env)
        assert result.exit_code == 0, result.output
        assert pl.read_csv(out).height == 0


class TestTrain:
    """DE tuning from the command line."""

    def test_train_then_run(
        self, corpus_dir: Path, de_path: Path, tmp_path: Path, env: Dict[str, str]
    ) -> None:
        """Test train writes params usable by run."""
        params = tmp_path / "params.json"
        result = invoke(
            ["train", str(corpus_dir), "--de", str(de_path), "-o", str(params), "-j", "1", *FAST],
            env,
        )
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "params_report.json").read_text())
        assert report["evaluations"] == 8
        assert len(report["history"]) == 2
        assert pl.read_csv(tmp_path / "params_history.csv").height == 2
        assert (tmp_path / "train.manifest.json").exists()

        result = invoke(["run", str(corpus_dir / "series.csv"), "-p", str(params)], env)
        assert result.exit_code == 0, result.output
        assert (corpus_dir / "classes.csv").exists()

    def test_train_reproducible(
        self, corpus_dir: Path, de_path: Path, tmp_path: Path, env: Dict[str, str]
    ) -> None:
        """Test two runs with the same seed write the same params."""
        outputs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            result = invoke(
                ["train", str(corpus_dir), "--de", str(de_path), "-o", str(out), "-s", "3", *FAST],
                env,
            )
            assert result.exit_code == 0, result.output
            outputs.append(out.read_text())
        assert outputs[0] == outputs[1]

    def test_empty_corpus(
        self, corpus_dir: Path, de_path: Path, tmp_path: Path, env: Dict[str, str]
    ) -> None:
        """Test filtering away every series exits with the data code."""
        result = invoke(
            ["train", str(corpus_dir), "--de", str(de_path), "--indicator", "S", *FAST], env
        )
        assert result.exit_code == 3

    def test_bad_de_config(self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test an invalid DE config exits with the config code."""
        de = tmp_path / "de.json"
        de.write_text(json.dumps({"population_size": 2}))
        result = invoke(["train", str(corpus_dir), "--de", str(de), *FAST], env)
        assert result.exit_code == 2

    def test_injected_vector_wrong_length(
        self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]
    ) -> None:
        """Test a short injected vector exits with the config code."""
        de = tmp_path / "de.json"
        de.write_text(json.dumps({**TINY_DE, "injected": [[0.1, 0.2, 0.3]]}))
        result = invoke(["train", str(corpus_dir), "--de", str(de), *FAST], env)
        assert result.exit_code == 2
        assert "shape" in _strip_ansi_codes(result.output)


class TestEval:
    """Repeated holdout from the command line."""

    def test_expert(self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test evaluating the expert parameters needs no DE."""
        out = tmp_path / "report.json"
        result = invoke(
            [
                "eval", str(corpus_dir), "--expert", "--trials", "2", "--repetitions", "1",
                "--train-fraction", "0.5", "-o", str(out), *FAST,
            ],
            env,
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["mode"] == "fixed"
        assert len(report["reports"]) == 2
        assert 0.0 <= report["aggregate"]["test_mse_mean"] <= 4.0
        assert pl.read_csv(tmp_path / "report_trials.csv").height == 2
        assert (tmp_path / "eval.manifest.json").exists()

    def test_de(self, corpus_dir: Path, de_path: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test DE mode writes per-generation histories."""
        out = tmp_path / "report.json"
        result = invoke(
            [
                "eval", str(corpus_dir), "--de", str(de_path), "--trials", "1",
                "--repetitions", "2", "--train-fraction", "0.5", "-o", str(out), *FAST,
            ],
            env,
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["mode"] == "de"
        assert report["aggregate"]["expert_test_mse_mean"] is not None
        assert pl.read_csv(tmp_path / "report_history.csv").height == 4

    def test_grid(self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test the grid study reports every F x CR cell."""
        out = tmp_path / "grid.json"
        result = invoke(
            [
                "eval", str(corpus_dir), "--grid", "--expert", "--trials", "2",
                "--repetitions", "1", "--train-fraction", "0.5", "-o", str(out), *FAST,
            ],
            env,
        )
        assert result.exit_code == 0, result.output
        assert len(json.loads(out.read_text())["cells"]) == 9
        layout = pl.read_csv(tmp_path / "grid_grid.csv")
        assert layout.shape == (3, 4)
        assert pl.read_csv(tmp_path / "grid_grid_cells.csv").height == 9

    def test_pipeline_reproducible(
        self, tmp_path: Path, small_spec_path: Path, de_path: Path, env: Dict[str, str]
    ) -> None:
        """Test gen, train and eval with one seed write the same bytes on a second run."""
        names = (
            "corpus/series.csv",
            "corpus/labels.csv",
            "params.json",
            "params_report.json",
            "params_history.csv",
            "report.json",
            "report_trials.csv",
            "tuned.json",
            "tuned_trials.csv",
            "tuned_history.csv",
        )
        outputs = []
        for name in ("first", "second"):
            base = tmp_path / name
            corpus = base / "corpus"
            steps = [
                ["gen", str(small_spec_path), "-o", str(corpus), "-s", "5"],
                ["train", str(corpus), "--de", str(de_path), "-o", str(base / "params.json"), "-s", "5", *FAST],
                [
                    "eval", str(corpus), "-p", str(base / "params.json"), "--trials", "2",
                    "--repetitions", "1", "--train-fraction", "0.5", "-o", str(base / "report.json"),
                    "-s", "5", *FAST,
                ],
                [
                    "eval", str(corpus), "--de", str(de_path), "--trials", "1", "--repetitions", "2",
                    "--train-fraction", "0.5", "-o", str(base / "tuned.json"), "-s", "5", *FAST,
                ],
            ]
            for args in steps:
                result = invoke(args, env)
                assert result.exit_code == 0, result.output
            outputs.append({n: (base / n).read_bytes() for n in names})
        assert outputs[0] == outputs[1]

    @pytest.mark.parametrize(
        "option", [["--trials", "0"], ["--repetitions", "0"], ["--train-fraction", "0"], ["-j", "0"]]
    )
    def test_explicit_zero_rejected(
        self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str], option: List[str]
    ) -> None:
        """Test a zero option is validated rather than replaced by the default."""
        result = invoke(
            ["eval", str(corpus_dir), "--expert", *option, "-o", str(tmp_path / "r.json"), *FAST],
            env,
        )
        assert result.exit_code == 2
        assert not (tmp_path / "r.json").exists()

    def test_too_few_series(self, corpus_dir: Path, tmp_path: Path, env: Dict[str, str]) -> None:
        """Test a corpus that cannot be split exits with the data code."""
        result = invoke(["eval", str(corpus_dir), "--expert", "--indicator", "S", *FAST], env)
        assert result.exit_code == 3


class TestStatus:
    def test_status(self, env: Dict[str, str]) -> None:
        result = invoke(["status", "--verbose"], env)
        assert result.exit_code == 0
        assert "serial" in _strip_ansi_codes(result.output)

    def test_status_flags_misspelled_variable(self, env: Dict[str, str]) -> None:
        """Test verbose status points at STIGTREND_* variables nothing reads."""
        result = invoke(["status", "--verbose"], {**env, "STIGTREND_BAKEND": "serial"})
        assert result.exit_code == 0
        output = _strip_ansi_codes(result.output)
        assert "STIGTREND_BAKEND is not used" in output
        assert "did you mean STIGTREND_BACKEND" in output

import logging

import numpy as np
import polars as pl
import pytest

from stigtrend.components.exceptions import (
    DegenerateNormalizationError,
    StigTrendConfigError,
    StigTrendDataError,
)
from stigtrend.components.series import Indicator, TrendClass
from stigtrend.datagen import (
    AnnualGroupStats,
    CorpusSpec,
    RandomSeriesSpec,
    SeriesTemplate,
    TrendSegment,
    annual_group_stats_from_frame,
    latent_signal,
    monthly_from_annual,
    monthly_samples,
    normalize_minmax,
    synthesize_granulated,
    synthesize_labeled,
)
from stigtrend.pipeline import FixedSettings, PipelineParams, run_pipeline


def rising_then_falling(length: int = 120) -> CorpusSpec:
    half = length // 2
    template = SeriesTemplate(
        region_id="peak",
        segments=(
            TrendSegment(0, half - 1, TrendClass.INCREASE, 0.01),
            TrendSegment(half, length - 1, TrendClass.DECREASE, 0.01),
        ),
    )
    return CorpusSpec(series=(template,), noise=0.02, lag=24)


class TestNormalize:
    """Min-max normalization."""

    def test_affine_map(self) -> None:
        """Test [2, 4, 6] maps to [0, 0.5, 1]."""
        np.testing.assert_allclose(normalize_minmax([2.0, 4.0, 6.0]), [0.0, 0.5, 1.0])

    def test_identity_range(self) -> None:
        """Test [0, 1] is unchanged."""
        np.testing.assert_allclose(normalize_minmax([0.0, 1.0]), [0.0, 1.0])

    def test_constant_series(self) -> None:
        """Test a constant series cannot be normalized."""
        with pytest.raises(DegenerateNormalizationError):
            normalize_minmax([5.0, 5.0, 5.0])


class TestGranulation:
    """Monthly samples from annual group statistics."""

    def test_zero_variance_samples(self, rng: np.random.Generator) -> None:
        """Test sigma = 0 gives twelve samples of exactly mu / 12."""
        stats = AnnualGroupStats("g", ((0.6, 0.0),))
        np.testing.assert_allclose(monthly_samples(stats, rng), np.full(12, 0.05), atol=1e-15)

    def test_deterministic(self) -> None:
        """Test the same seed gives the same monthly series."""
        stats = AnnualGroupStats("g", tuple((0.1 * y, 0.05) for y in range(1, 6)))
        a = monthly_from_annual(stats, np.random.default_rng(3))
        b = monthly_from_annual(stats, np.random.default_rng(3))
        np.testing.assert_array_equal(a.values, b.values)
        assert len(a) == 60
        assert a.values.min() == 0.0 and a.values.max() == 1.0

    def test_negative_sigma_rejected(self) -> None:
        """Test negative standard deviations are rejected."""
        with pytest.raises(StigTrendDataError):
            AnnualGroupStats("g", ((0.5, -0.1),))

    def test_constant_group_falls_back(self, rng: np.random.Generator, caplog: pytest.LogCaptureFixture) -> None:
        """Test a group without spread gives a flat series at 0.5 and a warning."""
        stats = AnnualGroupStats("flat", ((0.6, 0.0), (0.6, 0.0)))
        with caplog.at_level(logging.WARNING, logger="stigtrend.datagen"):
            series = monthly_from_annual(stats, rng)
        np.testing.assert_array_equal(series.values, np.full(24, 0.5))
        assert "constant" in caplog.text

    def test_rising_means_classified_increasing(self, rng: np.random.Generator) -> None:
        """Test year means rising from 0.2 to 0.8 over 15 years are mostly classified +1."""
        means = np.linspace(0.2, 0.8, 15)
        stats = AnnualGroupStats("g", tuple((float(mu), 0.002) for mu in means))
        series = monthly_from_annual(stats, rng)
        results = run_pipeline(series, PipelineParams.expert(FixedSettings()))
        rising = sum(1 for r in results if r.trend == TrendClass.INCREASE)
        assert rising > len(results) / 2

    def test_granulated_labels(self) -> None:
        """Test groups are labeled from their annual means."""
        stats = AnnualGroupStats("g", tuple((float(mu), 0.01) for mu in np.linspace(0.2, 0.8, 10)))
        [entry] = synthesize_granulated([stats], lag=24, stability_band=0.05, seed=0)
        assert set(entry.labels.values()) == {TrendClass.INCREASE}
        assert min(entry.labels) == 24

    def test_stats_from_frame(self) -> None:
        """Test per-group, per-year mean and population standard deviation."""
        frame = pl.DataFrame(
            {
                "region_id": ["a", "b", "a", "b", "c"],
                "group_id": ["g1", "g1", "g1", "g1", "g2"],
                "year": [2000, 2000, 2001, 2001, 2000],
                "value": [1.0, 3.0, 2.0, 2.0, 7.0],
            }
        )
        groups = annual_group_stats_from_frame(frame, Indicator.S)
        assert [g.group_id for g in groups] == ["g1", "g2"]
        assert groups[0].years == ((2.0, 1.0), (2.0, 0.0))
        assert groups[1].years == ((7.0, 0.0),)
        assert groups[0].indicator == Indicator.S

    def test_stats_from_frame_gap(self) -> None:
        """Test missing years are rejected."""
        frame = pl.DataFrame(
            {"region_id": ["a", "a"], "group_id": ["g", "g"], "year": [2000, 2002], "value": [1.0, 2.0]}
        )
        with pytest.raises(StigTrendDataError, match="consecutive"):
            annual_group_stats_from_frame(frame)


class TestSynthesizeLabeled:
    """Labeled corpora from trend segments."""

    def test_flat_segment(self) -> None:
        """Test a flat segment is labeled stable everywhere."""
        template = SeriesTemplate("flat", (TrendSegment(0, 59, TrendClass.STABLE),))
        corpus = synthesize_labeled(CorpusSpec(series=(template,)), seed=0)
        assert set(corpus[0].labels.values()) == {TrendClass.STABLE}

    def test_rising_segment(self) -> None:
        """Test a rising segment is labeled +1 from the lag on."""
        template = SeriesTemplate("up", (TrendSegment(0, 119, TrendClass.INCREASE, 0.01),))
        corpus = synthesize_labeled(CorpusSpec(series=(template,)), seed=0)
        labels = corpus[0].labels
        assert sorted(labels) == list(range(24, 120))
        assert set(labels.values()) == {TrendClass.INCREASE}

    def test_rise_then_fall(self) -> None:
        """Test a peak gives +1, then a stable transition band, then -1."""
        labels = synthesize_labeled(rising_then_falling(), seed=0)[0].labels
        sequence = [int(labels[s]) for s in sorted(labels)]
        assert sequence[0] == 1 and sequence[-1] == -1
        assert 0 in sequence
        assert all(b <= a for a, b in zip(sequence, sequence[1:]))
        assert labels[71] == TrendClass.STABLE

    def test_noise_never_changes_labels(self) -> None:
        """Test labels depend only on the latent signal."""
        noisy = rising_then_falling()
        quiet = CorpusSpec(series=noisy.series, noise=0.0, lag=24)
        assert synthesize_labeled(noisy, 0)[0].labels == synthesize_labeled(quiet, 9)[0].labels

    def test_values_in_unit_interval(self) -> None:
        """Test noisy values stay in [0, 1]."""
        spec = CorpusSpec(random=RandomSeriesSpec(count=10, length=90), noise=0.2, lag=24)
        for entry in synthesize_labeled(spec, seed=4):
            assert entry.series.values.min() >= 0.0
            assert entry.series.values.max() <= 1.0

    def test_same_seed_same_corpus(self) -> None:
        """Test generation is a function of spec and seed."""
        spec = CorpusSpec(random=RandomSeriesSpec(count=5, length=60), lag=24)
        a, b, c = (synthesize_labeled(spec, seed=s) for s in (1, 1, 2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.series.values, y.series.values)
            assert x.labels == y.labels
        assert not all(np.array_equal(x.series.values, y.series.values) for x, y in zip(a, c))

    def test_template_count(self) -> None:
        """Test a template with a count yields that many distinct series."""
        template = SeriesTemplate("r", (TrendSegment(0, 59, TrendClass.INCREASE),), count=3)
        corpus = synthesize_labeled(CorpusSpec(series=(template,)), seed=0)
        assert corpus.keys == [("r-000", "synthetic"), ("r-001", "synthetic"), ("r-002", "synthetic")]
        assert not np.array_equal(corpus[0].series.values, corpus[1].series.values)

    def test_latent_signal(self) -> None:
        """Test the latent signal integrates segment slopes."""
        latent = latent_signal(
            [
                TrendSegment(0, 2, TrendClass.INCREASE, 1.0),
                TrendSegment(3, 4, TrendClass.DECREASE, 0.5),
            ]
        )
        np.testing.assert_allclose(latent, [0.0, 1.0, 2.0, 1.5, 1.0])


class TestCorpusSpec:
    """Corpus spec validation."""

    def test_gaps_rejected(self) -> None:
        """Test non-contiguous segments are rejected."""
        with pytest.raises(StigTrendConfigError, match="contiguous"):
            SeriesTemplate(
                "r",
                (TrendSegment(0, 9, TrendClass.STABLE), TrendSegment(11, 40, TrendClass.STABLE)),
            )

    def test_series_shorter_than_lag(self) -> None:
        """Test series no longer than the lag are rejected."""
        template = SeriesTemplate("r", (TrendSegment(0, 9, TrendClass.STABLE),))
        with pytest.raises(StigTrendConfigError, match="lag"):
            CorpusSpec(series=(template,), lag=24)

    def test_empty_spec(self) -> None:
        """Test a spec without any source is rejected."""
        with pytest.raises(StigTrendConfigError):
            CorpusSpec.from_dict({})

    def test_misspelled_field(self) -> None:
        """Test an unknown field is named with a suggestion."""
        data = {"series": [{"region_id": "r", "segmnts": []}]}
        with pytest.raises(StigTrendConfigError, match="segmnts") as excinfo:
            CorpusSpec.from_dict(data)
        assert "did you mean 'segments'" in str(excinfo.value)

    def test_from_dict_round_trip(self) -> None:
        """Test a spec survives to_dict/from_dict."""
        spec = CorpusSpec(
            series=rising_then_falling().series,
            random=RandomSeriesSpec(count=2, length=40),
            groups=(AnnualGroupStats("g", ((0.3, 0.1), (0.4, 0.1), (0.5, 0.1))),),
            lag=12,
        )
        assert CorpusSpec.from_dict(spec.to_dict()) == spec

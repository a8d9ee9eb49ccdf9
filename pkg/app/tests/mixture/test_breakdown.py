import math
from fractions import Fraction

import numpy as np
import pytest

from app.core.errors import HypothesisViolatedError, InvalidArgumentError
from app.mixture.breakdown import (
    bic_condition,
    bic_gross_outlier_breakdown,
    bic_no_breakdown_certificate,
    diverging_outlier_demo,
    empirical_contamination_probe,
    empirical_outlier_threshold,
    f_max,
    gross_outlier_size,
    improper_noise_certificate,
    match_components,
    separation_decomposition_check,
    single_outlier_breaks,
)
from app.mixture.calibrate import nsd
from app.mixture.families import Normal, StudentT, family_from_spec
from app.schemas import (
    Dataset,
    EstimatedOrder,
    FitConfig,
    FixedOrder,
    ImproperNoise,
    MixtureParams,
    NoNoise,
    RangeUniform,
    ReportKind,
)
from app.tests.conftest import NOISE_LEVEL, SIGMA0
from app.tests.utils.data import two_nsd


def params(pis: list[float], locations: list[float], scales: list[float]) -> MixtureParams:
    return MixtureParams.from_arrays(pis, locations, scales, sigma0=SIGMA0)


class TestImproperNoiseCertificate:
    """Lower bound for the breakdown point with improper noise"""

    def test_two_clusters(self, two_clusters: Dataset, cfg: FitConfig):
        """One added point is covered, two are not: bound 1/51"""
        report = improper_noise_certificate(
            two_clusters, 2, Normal(), NOISE_LEVEL, SIGMA0, cfg, g_max=5
        )
        assert report.kind is ReportKind.IMPROPER_NOISE_CERT
        first, second = report.rows[0], report.rows[1]
        competitor = report.details["competitor_loglik"]
        assert first.value + competitor == pytest.approx(-111.7, abs=0.3)
        assert second.value + competitor == pytest.approx(-122.4, abs=0.3)
        assert first.holds
        assert not second.holds
        assert report.g_star == 1
        assert report.bound == Fraction(1, 51)
        assert report.minimal_breakdown == Fraction(2, 52)
        assert report.f_max == pytest.approx(f_max(Normal(), SIGMA0))

    def test_noise_level_must_be_below_peak(self, two_clusters: Dataset, cfg: FitConfig):
        """b >= f(0)/sigma0 violates the hypothesis"""
        with pytest.raises(HypothesisViolatedError):
            improper_noise_certificate(two_clusters, 2, Normal(), 20.0, SIGMA0, cfg)

    def test_needs_two_components(self, two_clusters: Dataset, cfg: FitConfig):
        """There is no competitor for s = 1"""
        with pytest.raises(InvalidArgumentError):
            improper_noise_certificate(two_clusters, 1, Normal(), NOISE_LEVEL, SIGMA0, cfg)


class TestBicCertificates:
    """BIC no-breakdown and gross outlier results"""

    def test_condition_values(self, two_clusters: Dataset, cfg: FitConfig):
        """The condition is positive for one point and negative for two"""
        report = bic_no_breakdown_certificate(
            two_clusters, 2, Normal(), NoNoise(), SIGMA0, cfg, g_max=4
        )
        assert report.kind is ReportKind.BIC_NO_BREAK_CERT
        assert report.rows[0].value == pytest.approx(3.37, abs=0.2)
        assert report.rows[1].value == pytest.approx(-7.56, abs=0.2)
        assert report.g_star == 1
        assert report.bound == Fraction(1, 51)
        assert report.details["s"] == 2

    def test_order_defaults_to_bic_choice(self, two_clusters: Dataset, cfg: FitConfig):
        """Without s the certificate uses the BIC-selected order"""
        report = bic_no_breakdown_certificate(
            two_clusters, None, Normal(), NoNoise(), SIGMA0, cfg, g_max=2
        )
        assert report.details["s"] == 2

    def test_gross_outliers(self, two_clusters: Dataset, cfg: FitConfig):
        """Hundreds of thousands of gross outliers are needed"""
        report = bic_gross_outlier_breakdown(
            two_clusters, 2, Normal(), NoNoise(), SIGMA0, cfg
        )
        assert report.kind is ReportKind.BIC_GROSS_OUTLIER_CERT
        assert report.breakdown
        assert report.g_star > 650_000
        assert report.bound == Fraction(report.g_star, 50 + report.g_star)

    def test_gross_outlier_size_arithmetic(self):
        """n + g must exceed exp(2 (L_s - L_r) / 3)"""
        g, exponents = gross_outlier_size({1: 0.0, 2: 9.0}, 2, 50)
        assert exponents == {1: pytest.approx(6.0)}
        assert g == math.floor(math.exp(6.0)) + 1 - 50 == 354

    def test_gross_outlier_size_uses_easiest_order(self):
        """The order that is cheapest to reach decides, and g is at least 1"""
        logliks = {1: 0.0, 2: 30.0, 3: 31.5}
        g, exponents = gross_outlier_size(logliks, 3, 1)
        assert exponents == {1: pytest.approx(10.5), 2: pytest.approx(1.0)}
        assert g == 2
        assert gross_outlier_size(logliks, 3, 10)[0] == 1

    def test_gross_outlier_size_beyond_float_range(self):
        """Counts above the float range are exact integers"""
        g, exponents = gross_outlier_size({1: 0.0, 2: 1200.0}, 2, 50)
        assert exponents == {1: pytest.approx(800.0)}
        assert math.log(g + 50) == pytest.approx(800.0)
        assert g > 10**347
        with pytest.raises(InvalidArgumentError):
            gross_outlier_size({1: 0.0, 2: 1e5}, 2, 50)

    def test_condition_decreases_with_g(self):
        """More added points make the condition harder to meet"""
        logliks = {1: -119.73, 2: -99.65}
        values = [bic_condition(logliks, 2, 50, g)[0] for g in range(1, 20)]
        assert all(b < a for a, b in zip(values, values[1:], strict=False))

    def test_condition_is_minimum_over_orders(self):
        """The reported value is the smallest per-order term"""
        value, per_r = bic_condition({1: -50.0, 2: -30.0, 3: -29.0}, 3, 20, 1)
        assert set(per_r) == {1, 2}
        assert value == min(per_r.values())

    def test_range_noise_needs_peak_above_level(self, two_clusters: Dataset, cfg: FitConfig):
        """f(0)/sigma0 below 1/(xmax - xmin) violates the hypothesis"""
        regime = RangeUniform.from_dataset(two_clusters)
        with pytest.raises(HypothesisViolatedError):
            bic_no_breakdown_certificate(two_clusters, 2, Normal(), regime, 10.0, cfg)

    def test_improper_noise_rejected(self, two_clusters: Dataset, cfg: FitConfig):
        """BIC certificates are not defined for improper noise"""
        with pytest.raises(InvalidArgumentError):
            bic_no_breakdown_certificate(
                two_clusters, 2, Normal(), ImproperNoise(b=NOISE_LEVEL), SIGMA0, cfg
            )

    def test_needs_two_components(self, two_clusters: Dataset, cfg: FitConfig):
        """s = 1 has nothing to compare with"""
        with pytest.raises(InvalidArgumentError):
            bic_gross_outlier_breakdown(two_clusters, 1, Normal(), NoNoise(), SIGMA0, cfg)

    def test_s_must_maximize_bic(self, cfg: FitConfig):
        """A single NSD does not support two components"""
        with pytest.raises(HypothesisViolatedError):
            bic_no_breakdown_certificate(
                nsd(0.0, 1.0, 50), 2, Normal(), NoNoise(), SIGMA0, cfg
            )


class TestMatchComponents:
    """Pairing original and refit components inside their boxes"""

    def test_identical(self):
        """Every component matches itself"""
        original = params([0.5, 0.5], [0.0, 5.0], [1.0, 1.0])
        matches = match_components(original, original)
        assert matches is not None
        assert [(m.original, m.refit, m.distance) for m in matches] == [
            (0, 0, 0.0),
            (1, 1, 0.0),
        ]

    def test_reordered_and_extra_components(self):
        """Matching is injective and ignores surplus refit components"""
        original = params([0.5, 0.5], [0.0, 5.0], [1.0, 1.0])
        refit = params([0.3, 0.2, 0.5], [5.2, 40.0, -0.1], [1.1, 0.025, 0.9])
        matches = match_components(original, refit)
        assert matches is not None
        assert [(m.original, m.refit) for m in matches] == [(0, 2), (1, 0)]
        assert matches[0].distance == pytest.approx(0.1)

    def test_lost_order(self):
        """Fewer refit components cannot match"""
        original = params([0.5, 0.5], [0.0, 5.0], [1.0, 1.0])
        assert match_components(original, params([1.0], [2.5], [3.0])) is None

    @pytest.mark.parametrize(
        "refit",
        [
            params([0.5, 0.5], [0.0, 11.0], [1.0, 1.0]),
            params([0.5, 0.5], [0.0, 5.0], [1.0, 20.0]),
            params([0.98, 0.02], [0.0, 5.0], [1.0, 1.0]),
        ],
        ids=["location", "scale", "proportion"],
    )
    def test_leaving_the_box(self, refit: MixtureParams):
        """A component moved outside its box breaks the matching"""
        original = params([0.5, 0.5], [0.0, 5.0], [1.0, 1.0])
        assert match_components(original, refit) is None

    def test_shared_refit_component(self):
        """Two originals cannot share one refit component"""
        original = params([0.5, 0.5], [0.0, 1.0], [1.0, 1.0])
        refit = params([0.99, 0.01], [0.5, 100.0], [1.0, 1.0])
        assert match_components(original, refit) is None


class TestSeparation:
    """Far apart groups fit like separate samples"""

    def test_single_group(self, cfg: FitConfig):
        """One group is its own decomposition"""
        check = separation_decomposition_check(
            [nsd(0.0, 1.0, 10)], 100.0, 1, Normal(), SIGMA0, cfg
        )
        assert check.deviation == pytest.approx(0.0, abs=1e-6)
        assert check.best_split == (1,)

    def test_two_groups_far_apart(self, cfg: FitConfig):
        """At a large gap the union log-likelihood is the best split"""
        group = nsd(0.0, 1.0, 5)
        check = separation_decomposition_check(
            [group, group], 1000.0, 2, Normal(), SIGMA0, cfg
        )
        assert check.best_split == (1, 1)
        assert check.deviation < 1e-6

    def test_too_few_components(self, cfg: FitConfig):
        """Every group needs at least one component"""
        group = nsd(0.0, 1.0, 5)
        with pytest.raises(InvalidArgumentError):
            separation_decomposition_check([group, group], 1000.0, 1, Normal(), SIGMA0, cfg)


class TestDivergingOutliers:
    """Components taken by outliers follow them"""

    @pytest.mark.parametrize("y", [1e3, 1e6])
    def test_outlier_component_moves_away(
        self, two_clusters: Dataset, cfg: FitConfig, y: float
    ):
        """One component sits at the outlier, the others stay with the data"""
        demo = diverging_outlier_demo(
            two_clusters, 3, 1, y, Normal(), NoNoise(), SIGMA0, cfg
        )
        assert demo.outliers == (y,)
        assert len(demo.outlier_locations) == 1
        assert demo.outlier_locations[0] == pytest.approx(y, rel=1e-6)
        assert len(demo.other_locations) == 2
        for a in demo.other_locations:
            assert two_clusters.xmin <= a <= two_clusters.xmax

    def test_invalid_arguments(self, two_clusters: Dataset, cfg: FitConfig):
        """r must be below s and y above 1"""
        with pytest.raises(InvalidArgumentError):
            diverging_outlier_demo(two_clusters, 2, 2, 10.0, Normal(), NoNoise(), SIGMA0, cfg)
        with pytest.raises(InvalidArgumentError):
            diverging_outlier_demo(two_clusters, 3, 1, 0.5, Normal(), NoNoise(), SIGMA0, cfg)


class TestSeparatedBounds:
    """BIC bounds grow with the separation of the clusters"""

    def test_far_clusters(self, far_clusters: Dataset, cfg: FitConfig):
        """Clusters at 0 and 50 survive eleven added points"""
        report = bic_no_breakdown_certificate(
            far_clusters, 2, Normal(), NoNoise(), SIGMA0, cfg, g_max=20
        )
        assert report.g_star == 11
        assert report.minimal_breakdown == Fraction(12, 62)

    def test_tiny_clusters_far_apart(self, cfg: FitConfig):
        """Narrow clusters 100000 apart resist more than half contamination"""
        data = two_nsd(0.0, 100_000.0, var=1e-6)
        report = bic_no_breakdown_certificate(
            data, 2, Normal(), NoNoise(), SIGMA0, cfg, g_max=100
        )
        assert report.g_star == 57
        assert report.minimal_breakdown == Fraction(58, 108)
        assert report.minimal_breakdown > Fraction(1, 2)

    def test_cauchy_near_clusters(self, two_clusters: Dataset, cfg: FitConfig):
        """t1 components at 0 and 5 survive two added points"""
        report = bic_no_breakdown_certificate(
            two_clusters, 2, StudentT(1.0), NoNoise(), SIGMA0, cfg, g_max=6
        )
        assert report.details["s"] == 2
        assert report.g_star == 2
        assert report.minimal_breakdown == Fraction(3, 53)

    def test_cauchy_far_clusters(self, far_clusters: Dataset, cfg: FitConfig):
        """t1 components at 0 and 50 survive twelve added points"""
        report = bic_no_breakdown_certificate(
            far_clusters, 2, StudentT(1.0), NoNoise(), SIGMA0, cfg, g_max=20
        )
        assert report.g_star == 12
        assert report.minimal_breakdown == Fraction(13, 63)

    def test_improper_noise_far_clusters(self, far_clusters: Dataset, cfg: FitConfig):
        """Improper noise covers seven added points for clusters at 0 and 50"""
        report = improper_noise_certificate(
            far_clusters, 2, Normal(), NOISE_LEVEL, SIGMA0, cfg, g_max=12
        )
        assert report.g_star == 7
        assert report.minimal_breakdown == Fraction(8, 58)
        assert report.rows[6].value == pytest.approx(6.32, abs=0.3)
        assert report.rows[7].value == pytest.approx(-2.83, abs=0.3)


class TestContaminationProbe:
    """Refitting after adding points"""

    def test_nothing_added(self, two_clusters: Dataset, cfg: FitConfig):
        """An empty contamination is rejected"""
        with pytest.raises(InvalidArgumentError):
            empirical_contamination_probe(
                two_clusters, [], Normal(), NoNoise(), SIGMA0, cfg, FixedOrder(s=2)
            )

    def test_single_inlier_is_absorbed(self, far_clusters: Dataset, cfg: FitConfig):
        """One point at 25 between far clusters breaks nothing"""
        report = empirical_contamination_probe(
            far_clusters, [25.0], Normal(), NoNoise(), SIGMA0, cfg, FixedOrder(s=2)
        )
        assert report.kind is ReportKind.EMPIRICAL_INLIER
        assert report.breakdown is False
        assert report.verdict is not None
        assert report.verdict.broken_count == 0
        assert report.bound == Fraction(1, 51)

    def test_three_outliers_take_a_component(self, two_clusters: Dataset, cfg: FitConfig):
        """Three points at 50 capture a component, two end up as noise"""
        regime = ImproperNoise(b=NOISE_LEVEL)
        broken = empirical_contamination_probe(
            two_clusters, [50.0] * 3, Normal(), regime, SIGMA0, cfg, FixedOrder(s=2)
        )
        assert broken.kind is ReportKind.EMPIRICAL_OUTLIER
        assert broken.breakdown is True
        assert broken.refit is not None
        assert max(broken.refit.params.locations) == pytest.approx(50.0, abs=1e-6)
        assert broken.details["matches"] == []

        kept = empirical_contamination_probe(
            two_clusters, [50.0] * 2, Normal(), regime, SIGMA0, cfg, FixedOrder(s=2)
        )
        assert kept.breakdown is False
        assert len(kept.details["matches"]) == 2

    @pytest.mark.slow
    def test_inliers_merge_normal_clusters(self, two_clusters: Dataset, cfg: FitConfig):
        """Thirteen points between the NSDs leave BIC with one Normal component"""
        added = np.linspace(1.8, 3.2, 13).tolist()
        report = empirical_contamination_probe(
            two_clusters, added, Normal(), NoNoise(), SIGMA0, cfg, EstimatedOrder(s_max=4)
        )
        assert report.kind is ReportKind.EMPIRICAL_INLIER
        assert report.details["s_original"] == 2
        assert report.details["s_refit"] == 1
        assert report.breakdown is True

    @pytest.mark.slow
    def test_inliers_keep_cauchy_clusters(self, two_clusters: Dataset, cfg: FitConfig):
        """The same inliers give three t1 components instead"""
        added = np.linspace(1.8, 3.2, 13).tolist()
        report = empirical_contamination_probe(
            two_clusters, added, StudentT(1.0), NoNoise(), SIGMA0, cfg, EstimatedOrder(s_max=4)
        )
        assert report.details["s_refit"] == 3

    @pytest.mark.slow
    def test_small_cluster_breaks_without_parameter_breakdown(self, cfg: FitConfig):
        """Duplicating three points of a five point cluster splits it, parameters hold"""
        small = nsd(5.0, 1.0, 5).values
        data = two_nsd(0.0, 5.0, n1=45, n2=5)
        added = [small[0], small[0], small[3], small[3], small[4], small[4]]
        report = empirical_contamination_probe(
            data, added, Normal(), NoNoise(), SIGMA0, cfg, EstimatedOrder(s_max=6)
        )
        assert report.details["s_original"] == 2
        assert report.details["s_refit"] == 5
        assert report.breakdown is False
        assert report.verdict is not None
        by_size = {cluster.size: cluster for cluster in report.verdict.clusters}
        assert by_size[5].gamma_star == Fraction(4, 7)
        assert by_size[5].broke
        assert not by_size[45].broke

    @pytest.mark.slow
    def test_inliers_collapse_small_cluster(self, cfg: FitConfig):
        """Twelve points between a large and a small cluster leave one component"""
        data = two_nsd(0.0, 5.0, n1=45, n2=5)
        added = np.linspace(1.55, 3.55, 12).tolist()
        report = empirical_contamination_probe(
            data, added, Normal(), NoNoise(), SIGMA0, cfg, EstimatedOrder(s_max=4)
        )
        assert report.details["s_original"] == 2
        assert report.details["s_refit"] == 1
        assert report.breakdown is True

    def test_certified_point_does_not_break(self, two_clusters: Dataset, cfg: FitConfig):
        """A certificate covering one point agrees with refitting after a gross outlier"""
        regime = ImproperNoise(b=NOISE_LEVEL)
        certificate = improper_noise_certificate(
            two_clusters, 2, Normal(), NOISE_LEVEL, SIGMA0, cfg, g_max=2
        )
        assert certificate.g_star >= 1
        outlier = two_clusters.xmax + 1e6 * (two_clusters.xmax - two_clusters.xmin)
        report = empirical_contamination_probe(
            two_clusters, [outlier], Normal(), regime, SIGMA0, cfg, FixedOrder(s=2)
        )
        assert report.breakdown is False
        assert report.verdict is not None
        assert report.verdict.broken_count == 0


class TestOutlierThreshold:
    """Search for the smallest breaking outlier"""

    def test_needs_two_components(self, two_clusters: Dataset, cfg: FitConfig):
        """One component has nothing to break"""
        with pytest.raises(InvalidArgumentError):
            empirical_outlier_threshold(two_clusters, 1, Normal(), NoNoise(), SIGMA0, cfg)

    def test_no_breakdown_below_ceiling(self, two_clusters: Dataset, quick_cfg: FitConfig):
        """A low ceiling ends the search without a threshold"""
        search = empirical_outlier_threshold(
            two_clusters, 2, StudentT(3.0), NoNoise(), SIGMA0, quick_cfg, ceiling=20.0
        )
        assert not search.found
        assert search.threshold is None
        assert all(not probe.broke for probe in search.probes)

    @pytest.mark.slow
    def test_normal_threshold(self, two_clusters: Dataset, quick_cfg: FitConfig):
        """A single outlier near 15 merges the Normal clusters"""
        search = empirical_outlier_threshold(
            two_clusters, 2, Normal(), NoNoise(), SIGMA0, quick_cfg
        )
        assert search.found
        assert search.threshold is not None
        assert 13.0 <= search.threshold <= 18.0
        broken = [p.y for p in search.probes if p.broke]
        kept = [p.y for p in search.probes if not p.broke]
        assert min(broken) == search.threshold
        assert max(kept) < search.threshold

    @pytest.mark.slow
    def test_heavy_tails_resist_longer(self, two_clusters: Dataset, quick_cfg: FitConfig):
        """t3 needs a farther outlier than the Normal"""
        normal = empirical_outlier_threshold(
            two_clusters, 2, Normal(), NoNoise(), SIGMA0, quick_cfg
        )
        heavy = empirical_outlier_threshold(
            two_clusters, 2, StudentT(3.0), NoNoise(), SIGMA0, quick_cfg
        )
        assert normal.threshold is not None
        assert heavy.found
        assert heavy.threshold is not None
        assert heavy.threshold > normal.threshold

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "family, range_noise, expected, factor",
        [
            ("t:3", False, 800.0, 2.0),
            ("t:1", False, 3.8e6, 10.0),
            ("normal", True, 3.5e7, 10.0),
        ],
    )
    def test_threshold_magnitudes(
        self,
        two_clusters: Dataset,
        quick_cfg: FitConfig,
        family: str,
        range_noise: bool,
        expected: float,
        factor: float,
    ):
        """Heavy tails and range noise push the breaking outlier far out"""
        fam = family_from_spec(family)
        regime = RangeUniform.from_dataset(two_clusters) if range_noise else NoNoise()
        search = empirical_outlier_threshold(two_clusters, 2, fam, regime, SIGMA0, quick_cfg)
        assert search.found
        assert search.threshold is not None
        assert expected / factor <= search.threshold <= expected * factor

    @pytest.mark.slow
    @pytest.mark.parametrize("family", ["normal", "t:3"])
    def test_threshold_brackets_breakdown(
        self, two_clusters: Dataset, quick_cfg: FitConfig, family: str
    ):
        """The outlier breaks at 1.1 times the threshold and not at 0.9 times"""
        fam = family_from_spec(family)
        search = empirical_outlier_threshold(
            two_clusters, 2, fam, NoNoise(), SIGMA0, quick_cfg
        )
        assert search.threshold is not None
        above = single_outlier_breaks(
            two_clusters, 1.1 * search.threshold, 2, fam, NoNoise(), SIGMA0, quick_cfg
        )
        below = single_outlier_breaks(
            two_clusters, 0.9 * search.threshold, 2, fam, NoNoise(), SIGMA0, quick_cfg
        )
        assert above.broke
        assert not below.broke

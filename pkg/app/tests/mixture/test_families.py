import math

import numpy as np
import pytest
from scipy import integrate, stats

from app.core.errors import InvalidArgumentError
from app.mixture.families import (
    Family,
    FamilyName,
    HuberLF,
    Normal,
    StudentT,
    family_from_spec,
)
from app.schemas import MixtureParams

FAMILIES = [Normal(), StudentT(1.0), StudentT(3.0), HuberLF(1.345), HuberLF(0.5)]


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.spec)
class TestFamilyContract:
    """Properties shared by every base density"""

    def test_density_integrates_to_one(self, fam: Family):
        """The base density is normalized"""
        total, _ = integrate.quad(lambda z: float(fam.base(np.array([z]))[0]), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-7)

    def test_symmetric_and_unimodal(self, fam: Family):
        """f(z) = f(-z) and f decreases in |z|"""
        z = np.linspace(0.0, 20.0, 201)
        values = fam.base(z)
        assert np.allclose(values, fam.base(-z))
        assert np.all(np.diff(values) <= 0.0)
        assert np.all(values > 0.0)

    @pytest.mark.parametrize("p", [0.001, 0.025, 0.3, 0.5, 0.8, 0.999])
    def test_quantile_inverts_cdf(self, fam: Family, p: float):
        """cdf(quantile(p)) = p"""
        assert float(fam.cdf(np.array([fam.quantile(p)]))[0]) == pytest.approx(p, abs=1e-10)

    def test_cdf_matches_integrated_density(self, fam: Family):
        """The distribution function is the integral of the density"""
        for z in (-3.0, -1.0, 0.2, 2.5):
            area, _ = integrate.quad(
                lambda t: float(fam.base(np.array([t]))[0]), -np.inf, z
            )
            assert float(fam.cdf(np.array([z]))[0]) == pytest.approx(area, abs=1e-7)

    def test_mm_weights_are_psi_over_z(self, fam: Family):
        """Weights equal -(log f)'(z)/z, checked by finite differences"""
        z = np.array([-4.0, -1.5, -0.3, 0.7, 2.0, 6.0])
        h = 1e-6
        derivative = (fam.log_base(z + h) - fam.log_base(z - h)) / (2 * h)
        assert np.allclose(fam.mm_weights(z), -derivative / z, rtol=1e-5)

    def test_f0_is_mode_height(self, fam: Family):
        """f0 is the density at zero"""
        assert fam.f0 == pytest.approx(float(fam.base(np.zeros(1))[0]))


class TestFamilies:
    """Family-specific behavior and parsing"""

    def test_normal_mode_height(self):
        """f(0) = 1/sqrt(2 pi) for the Normal"""
        assert Normal().f0 == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))

    def test_student_t_matches_scipy(self):
        """The t density agrees with scipy.stats.t"""
        z = np.linspace(-10, 10, 41)
        for nu in (1.0, 3.0, 7.5):
            assert np.allclose(StudentT(nu).base(z), stats.t.pdf(z, df=nu))

    def test_student_t_rejects_small_degrees_of_freedom(self):
        """nu < 1 is not a valid family here"""
        with pytest.raises(InvalidArgumentError):
            StudentT(0.5)

    def test_huber_is_continuous_at_the_bend(self):
        """Density and distribution function are continuous at +-k"""
        fam = HuberLF(1.345)
        for edge in (-1.345, 1.345):
            below, above = fam.base(np.array([edge - 1e-9, edge + 1e-9]))
            assert below == pytest.approx(above, rel=1e-7)
            low, high = fam.cdf(np.array([edge - 1e-9, edge + 1e-9]))
            assert low == pytest.approx(high, abs=1e-8)

    def test_huber_rejects_nonpositive_k(self):
        """The bending constant must be positive"""
        with pytest.raises(InvalidArgumentError):
            HuberLF(0.0)

    def test_closed_form_only_for_normal(self):
        """Only the Normal has a closed-form weighted ML step"""
        assert Normal().closed_form_ml
        assert not StudentT().closed_form_ml
        assert not HuberLF().closed_form_ml

    @pytest.mark.parametrize(
        "spec, expected",
        [
            ("normal", Normal()),
            ("t", StudentT(3.0)),
            ("t:1", StudentT(1.0)),
            (" T:3 ", StudentT(3.0)),
            ("huber", HuberLF(1.345)),
            ("huber:2", HuberLF(2.0)),
        ],
    )
    def test_family_from_spec(self, spec: str, expected: Family):
        """Flag forms parse to the expected family"""
        assert family_from_spec(spec) == expected

    @pytest.mark.parametrize("spec", ["cauchy", "normal:1", "t:abc", "t:0.2", "huber:-1"])
    def test_family_from_spec_rejects(self, spec: str):
        """Unknown names and invalid parameters are argument errors"""
        with pytest.raises(InvalidArgumentError):
            family_from_spec(spec)

    def test_spec_round_trip(self):
        """A family's spec parses back to an equal family"""
        for fam in FAMILIES:
            assert family_from_spec(fam.spec) == fam
            assert family_from_spec(fam.spec).name is FamilyName(fam.spec.split(":")[0])

    def test_spec_keeps_exact_parameter(self):
        """Parameters survive the spec string without rounding"""
        fam = StudentT(1.23456789)
        assert family_from_spec(fam.spec).nu == 1.23456789
        assert fam != StudentT(1.23457)
        assert family_from_spec(HuberLF(1.3450001).spec).k == 1.3450001
        params = MixtureParams.from_arrays([1.0], [0.0], [1.0], sigma0=0.025, family=fam.spec)
        assert params.fam == fam

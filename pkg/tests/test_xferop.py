import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xferops.core import CellMeasure, DyadicGrid, EPS_FP, GridFunction, integrate, tv_distance
from xferops.errors import HarmonicZeroDivision, NotHarmonic
from xferops.maps import doubling, reflection, u_map
from xferops.xferop import (BranchIFS, BranchSystem, FilterDoubling, HaarDoubling, KernelG, MeanIntegral,
                            Normalized, UFamily, check_pullout, default_sigma, frozen_kernel,
                            from_descriptor, me2_kernel, normalize, random_cell_function)

seeds = st.integers(0, 2 ** 32 - 1)


def cos2pi(grid):
    return GridFunction.from_callable(grid, lambda x: np.cos(2 * np.pi * x))


def operators(level=8):
    g = DyadicGrid(level)
    return [HaarDoubling(g), FilterDoubling(g), MeanIntegral(g), UFamily(g, 0.3),
            KernelG(g, me2_kernel(), n_quad=64)]


class TestApply:
    def test_haar_one(self, g12):
        assert np.array_equal(HaarDoubling(g12).apply(GridFunction.constant(g12)).values, np.ones(g12.M))

    def test_haar_kills_cos(self, g12):
        out = HaarDoubling(g12).apply(cos2pi(DyadicGrid(13)))
        assert out.sup_norm() <= 1e-10

    def test_haar_definition(self, g10, rng):
        f = random_cell_function(DyadicGrid(11), rng)
        x = g10.midpoints
        want = 0.5 * (f.at(x / 2) + f.at((x + 1) / 2))
        assert np.array_equal(HaarDoubling(g10).apply(f).values, want)

    def test_filter_definition(self, g10, rng):
        f = random_cell_function(DyadicGrid(11), rng)
        x = g10.midpoints
        want = np.cos(np.pi * x / 2) ** 2 * f.at(x / 2) + np.sin(np.pi * x / 2) ** 2 * f.at((x + 1) / 2)
        assert np.allclose(FilterDoubling(g10).apply(f).values, want, atol=1e-15)

    def test_mean_integral_of_x(self, g12):
        x = GridFunction.from_callable(g12, lambda x: x)
        out = MeanIntegral(g12).apply(x)
        assert np.max(np.abs(out.values - (2 * g12.midpoints + 1) / 4)) <= 1.0 / g12.M

    def test_lift_controls_output_level(self, g10):
        R = HaarDoubling(g10)
        assert R.lift == 1
        assert R.apply(GridFunction.constant(DyadicGrid(13))).level == 12
        assert R.apply(GridFunction.constant(g10)).level == 10
        assert MeanIntegral(g10).lift == 0

    def test_frozen_kernel_equals_u_family(self, g10, rng):
        f = random_cell_function(g10, rng)
        a = KernelG(g10, frozen_kernel(0.3)).apply(f)
        b = UFamily(g10, 0.3).apply(f)
        assert np.allclose(a.values, b.values, atol=1e-15)

    def test_me2_kernel_approximates_mean_integral(self):
        g = DyadicGrid(8)
        f = GridFunction.from_callable(g, lambda x: np.sin(3 * x))
        a = KernelG(g, me2_kernel(), n_quad=1024).apply(f)
        b = MeanIntegral(g).apply(f)
        assert np.max(np.abs(a.values - b.values)) < 10.0 / g.M

    def test_rows_match_single_apply(self, g10, rng):
        R = FilterDoubling(g10)
        fs = [random_cell_function(DyadicGrid(11), rng) for _ in range(3)]
        rows, lvl = R.apply_rows(np.stack([f.values for f in fs]), 11)
        for f, r in zip(fs, rows):
            assert np.array_equal(R.apply(f).values, r)


class TestInvariants:
    @pytest.mark.parametrize("R", operators(), ids=lambda R: R.kind)
    def test_unital(self, R):
        assert R.unital

    @given(seeds, st.integers(0, 4))
    @settings(max_examples=25, deadline=None)
    def test_positivity(self, seed, which):
        R = operators()[which]
        r = np.random.default_rng(seed)
        f = GridFunction(DyadicGrid(9), r.random(512) * (r.random(512) > 0.5))
        assert np.min(R.apply(f).values) >= -EPS_FP

    @given(seeds, st.integers(0, 4))
    @settings(max_examples=20, deadline=None)
    def test_duality(self, seed, which):
        # int R f dlam = int f d(lam R)
        R = operators()[which]
        r = np.random.default_rng(seed)
        g = R.grid
        f = GridFunction(g, r.normal(size=g.M))
        lam = CellMeasure(g, r.random(g.M)).normalized()
        lhs = integrate(R.apply(f), lam)
        rhs = integrate(f, R.adjoint_measure(lam))
        tol = 1e-12 if R.lift else 10.0 / g.M
        assert abs(lhs - rhs) < tol

    def test_weights_sum_to_one(self):
        x = DyadicGrid(10).midpoints
        for R in (HaarDoubling(DyadicGrid(4)), FilterDoubling(DyadicGrid(4)), UFamily(DyadicGrid(4), 0.2)):
            assert np.allclose(R.system.weight_sum(x), 1.0, atol=1e-15)

    def test_stable_flag_checked(self):
        with pytest.raises(ValueError):
            BranchSystem(((0.25, 0.0), (0.75, 0.25)), (0.5, 0.5), doubling(), True)


class TestAdjoint:
    def test_haar_lebesgue(self, g12):
        lam = CellMeasure.lebesgue(g12)
        assert tv_distance(HaarDoubling(g12).adjoint_measure(lam), lam) < 1e-12

    def test_filter_dirac(self, g12):
        d0 = CellMeasure.dirac(g12, 0.0)
        out = FilterDoubling(g12).adjoint_measure(d0)
        assert out.atoms == ((0.0, 1.0),)

    def test_mean_integral_arcsine(self, g12):
        arc = CellMeasure.arcsine(g12)
        assert tv_distance(MeanIntegral(g12).adjoint_measure(arc), arc) <= 5.0 / g12.M

    def test_mass_preserved(self, g10, rng):
        lam = CellMeasure(g10, rng.random(g10.M), [(0.3, 0.2)])
        for R in operators(10):
            assert R.adjoint_measure(lam).total() == pytest.approx(lam.total(), rel=1e-12)


class TestPullOut:
    def test_haar_doubling(self, g12):
        assert check_pullout(HaarDoubling(g12), doubling(), seed=1).passed

    def test_filter_doubling(self, g12):
        rep = check_pullout(FilterDoubling(g12), doubling(), seed=1)
        assert rep.passed and rep.max_residual < 1e-12

    def test_mean_integral_fails(self, g12):
        rep = check_pullout(MeanIntegral(g12), reflection(), seed=1)
        assert not rep.passed and rep.max_residual > 0.05

    def test_u_family(self, g12):
        assert check_pullout(UFamily(g12, 0.25), u_map(0.25), seed=1).passed

    def test_report_dict(self, g10):
        d = check_pullout(HaarDoubling(g10), doubling(), trials=2, seed=0).to_dict()
        assert set(d) == {"max_residual", "tol", "pass", "trials", "sigma"}


class TestNormalize:
    def test_h_one_is_identity(self, g10, rng):
        R = FilterDoubling(g10)
        f = random_cell_function(DyadicGrid(11), rng)
        Rn = normalize(R, GridFunction.constant(g10))
        assert np.array_equal(Rn.apply(f).values, R.apply(f).values)

    def test_filter_one(self, g10):
        Rn = normalize(FilterDoubling(g10), GridFunction.constant(g10))
        assert np.max(np.abs(Rn.apply(GridFunction.constant(g10)).values - 1.0)) < 1e-15

    def test_harmonic_gives_unital(self, tilted):
        R, h, lam = tilted
        assert not R.unital
        Rn = normalize(R, h, lam)
        assert (Rn.apply(GridFunction.constant(R.grid)) - 1.0).sup_norm() < 1e-10

    def test_not_harmonic(self, tilted):
        R, h, lam = tilted
        with pytest.raises(NotHarmonic):
            normalize(R, h * h)
        with pytest.raises(NotHarmonic):
            normalize(R, h * 2.0, lam)
        with pytest.raises(NotHarmonic):
            normalize(R, h * -1.0)

    def test_zero_division(self, g10):
        h = GridFunction.from_callable(g10, lambda x: (x < 0.5).astype(float))
        with pytest.raises(HarmonicZeroDivision):
            Normalized(HaarDoubling(g10), h).apply(GridFunction.constant(g10))

    def test_zero_over_zero(self, g10):
        # h vanishes where R(f h) vanishes too: the 0/0 cells give 0
        h = GridFunction.from_callable(g10, lambda x: (x < 0.5).astype(float))
        R = BranchIFS(g10, BranchSystem(((0.5, 0.0),), (lambda x: (x < 0.5).astype(float),)))
        out = Normalized(R, h).apply(GridFunction.constant(g10))
        assert np.all(out.values[g10.M // 2:] == 0.0) and np.all(out.values[: g10.M // 2] == 1.0)


class TestDescriptors:
    @pytest.mark.parametrize("name", ["ex2m1", "ex2m2", "mean_integral", "me_kernel"])
    def test_fixture_round_trip(self, name):
        R = from_descriptor(name, 6)
        again = from_descriptor(R.to_descriptor(), 6)
        f = GridFunction.from_callable(DyadicGrid(7), lambda x: np.cos(5 * x))
        assert np.array_equal(R.apply(f).values, again.apply(f).values)

    def test_custom_branch_ifs(self):
        d = {"kind": "branch_ifs", "branches": [[0.5, 0.0], [0.5, 0.5]], "weights": [0.5, 0.5]}
        R = from_descriptor(d, 8)
        f = GridFunction.from_callable(DyadicGrid(9), lambda x: x)
        assert np.array_equal(R.apply(f).values, HaarDoubling(DyadicGrid(8)).apply(f).values)

    def test_filter_coefficients(self):
        r = 2 ** -0.5
        R = from_descriptor({"kind": "filter_doubling", "m0_coeffs": [r, r]}, 8)
        f = GridFunction.from_callable(DyadicGrid(9), lambda x: np.exp(x))
        assert np.allclose(R.apply(f).values, FilterDoubling(DyadicGrid(8)).apply(f).values, atol=1e-14)

    def test_degenerate_filter_is_haar(self):
        R = from_descriptor({"kind": "filter_doubling", "m0_coeffs": [1.0]}, 8)
        f = GridFunction.from_callable(DyadicGrid(9), lambda x: x ** 2)
        assert np.allclose(R.apply(f).values, HaarDoubling(DyadicGrid(8)).apply(f).values, atol=1e-15)

    @pytest.mark.parametrize("bad", ["nope", {"kind": "nope"}, {"no_kind": 1}, 3])
    def test_unknown(self, bad):
        with pytest.raises(ValueError):
            from_descriptor(bad, 6)

    def test_default_sigma(self, g10):
        assert default_sigma(HaarDoubling(g10)).name == "doubling"
        assert default_sigma(MeanIntegral(g10)).name == "reflection"

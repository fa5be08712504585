import math

import numpy as np
import pytest

from xferops import mra
from xferops.core import CellMeasure, DyadicGrid, GridFunction, inner
from xferops.errors import NonConvergentCascade, NotDecomposable
from xferops.maps import doubling, reflection
from xferops.pathspace import PathSpec
from xferops.xferop import FilterDoubling, HaarDoubling, MeanIntegral, random_cell_function, random_trig

G10 = DyadicGrid(10)


def e1(grid):
    return GridFunction.from_callable(grid, lambda x: np.exp(2j * np.pi * x))


@pytest.fixture(scope="module")
def haar():
    return PathSpec(HaarDoubling(G10), sigma=doubling())


@pytest.fixture(scope="module")
def filt():
    return PathSpec(FilterDoubling(G10), sigma=doubling())


class TestDecompose:
    def test_character_single_detail(self, haar):
        d = mra.decompose(haar, e1(G10), 1)
        assert d.base.sup_norm() < 1e-12
        assert np.allclose(d.details[0].values, e1(G10).refine(11).values, atol=1e-12)
        assert d.norm2() == pytest.approx(d.energies()[1], abs=1e-12)

    @pytest.mark.parametrize("spec_name", ["haar", "filt"])
    def test_constant(self, request, spec_name):
        spec = request.getfixturevalue(spec_name)
        d = mra.decompose(spec, GridFunction.constant(G10), 3)
        assert np.allclose(d.base.values, 1.0, atol=1e-12)
        assert all(g.sup_norm() < 1e-12 for g in d.details)

    def test_orthogonality_and_kernel(self, filt, rng):
        f = random_cell_function(G10, rng, complex_=True)
        d = mra.decompose(filt, f, 4)
        assert d.orthogonality() < 1e-9 * d.norm2()
        assert d.reconstruction_residual() < 1e-9
        assert max(d.kernel_residuals()) < 1e-9
        assert len(d.details) == 4 and [g.level for g in d.details] == [11, 12, 13, 14]

    def test_tilted(self, tilted, rng):
        R, h, lam = tilted
        spec = PathSpec(R, h, lam, doubling())
        d = mra.decompose(spec, random_cell_function(R.grid, rng), 3)
        assert d.orthogonality() < 1e-9 * d.norm2() and max(d.kernel_residuals()) < 1e-9

    def test_parseval_twenty(self, filt):
        rng = np.random.default_rng(3)
        worst = max(max(mra.parseval_n1(filt, random_trig(G10, rng, complex_=True))) for _ in range(20))
        assert worst < 1e-10

    def test_not_decomposable(self):
        with pytest.raises(NotDecomposable):
            mra.decompose(PathSpec(HaarDoubling(G10)), GridFunction.constant(G10), 1)
        spec = PathSpec(MeanIntegral(DyadicGrid(8)), sigma=reflection(), validate=False)
        with pytest.raises(NotDecomposable):
            mra.decompose(spec, GridFunction.constant(DyadicGrid(8)), 1)


class TestHaarExpansion:
    def test_constant(self, g12):
        exp = mra.haar_expand(GridFunction.constant(g12), 8)
        assert all(d.sup_norm() == 0.0 for d in exp.details)
        assert np.all(exp.tail.values == 1.0)

    def test_character(self, g12):
        f = e1(g12)
        exp = mra.haar_expand(f, 6)
        assert np.allclose(exp.details[0].values, f.values, atol=1e-12)
        assert all(d.sup_norm() < 1e-12 for d in exp.details[1:])
        assert exp.tail.sup_norm() < 1e-12

    def test_random_real(self, g12, rng):
        f = random_cell_function(g12, rng)
        lam = CellMeasure.lebesgue(g12)
        mean = np.mean(f.values)
        gaps = []
        for n_max in (2, 5, 8, 11):
            exp = mra.haar_expand(f, n_max)
            assert exp.parseval_residual() < 1e-9
            gaps.append(np.max(np.abs(exp.tail.values - mean)))
        assert gaps[-1] < 1e-12 and gaps == sorted(gaps, reverse=True)

    def test_kernel_and_levels(self, g12, rng):
        exp = mra.haar_expand(random_cell_function(g12, rng), 8)
        assert max(exp.kernel_residuals()) < 1e-12
        assert [d.level for d in exp.native] == list(range(12, 3, -1))
        assert len(exp.cumulative_energy()) == 9

    def test_projection_form_not_alt(self, g12, rng):
        exp = mra.haar_expand(random_trig(g12, rng, degree=20, complex_=True), 6)
        rows = mra.e1_form_diagnostic(exp)
        assert all(r["projection_form_ok"] for r in rows)
        live = [r for r, d in zip(rows, exp.details) if r["level"] >= 1 and d.sup_norm() > 1e-6]
        assert len(live) >= 3 and not any(r["alt_form_ok"] for r in live)

    def test_trig_split(self, g12, rng):
        exp = mra.haar_expand(random_cell_function(g12, rng), 5)
        for n, (c, s) in enumerate(mra.trig_split(exp)):
            d = exp.details[n].values
            x = g12.midpoints
            k = 2 ** n
            recon = c.values * np.cos(2 * np.pi * k * x) + s.values * np.sin(2 * np.pi * k * x)
            assert np.allclose(recon, d, atol=1e-12)


class TestFilters:
    def test_haar_filter_is_ex2m2(self, g12, rng):
        fo = mra.filter_operator(mra.haar_filter(), g12)
        f = random_cell_function(DyadicGrid(13), rng, complex_=True)
        assert np.max(np.abs(fo.apply(f).values - FilterDoubling(g12).apply(f).values)) < 1e-12

    def test_modulus(self):
        t = np.linspace(0, 1, 101)
        assert np.allclose(np.abs(mra.haar_filter().m0(t)) ** 2, 1 + np.cos(2 * np.pi * t))

    def test_unital(self, g10):
        for w in (mra.haar_filter(), mra.daubechies4()):
            assert w.is_qmf()
            out = mra.filter_operator(w, g10).apply(GridFunction.constant(g10))
            assert np.max(np.abs(out.values - 1.0)) < 1e-10

    def test_non_qmf_flagged(self, g10):
        w = mra.WaveletFilter((1.0, 1.0), 2)
        assert not w.is_qmf()
        assert not mra.filter_operator(w, g10).unital

    def test_degenerate_is_haar_doubling(self, g10, rng):
        fo = mra.filter_operator(mra.WaveletFilter((1.0,), 2), g10)
        f = random_cell_function(DyadicGrid(11), rng)
        assert np.allclose(fo.apply(f).values, HaarDoubling(g10).apply(f).values, atol=1e-15)

    def test_scale_three(self, g10):
        w = mra.WaveletFilter((1 / math.sqrt(3),) * 3, 3)
        assert w.is_qmf()
        R = mra.filter_operator(w, g10)
        assert R.unital and mra.scale_map(3).name == "scale3"

    def test_scale_must_be_two_or_more(self):
        with pytest.raises(ValueError):
            mra.WaveletFilter((1.0,), 1)


class TestCascade:
    def test_sinc(self):
        t = np.linspace(-8, 8, 1601)
        err = np.max(np.abs(np.abs(mra.cascade_fourier(mra.haar_filter(), t, 30)) - np.abs(np.sinc(t))))
        assert err < 1e-6

    def test_zero(self):
        assert mra.cascade_fourier(mra.daubechies4(), np.array([0.0]))[0] == 1.0

    def test_nonconvergent(self):
        with pytest.raises(NonConvergentCascade):
            mra.cascade_fourier(mra.WaveletFilter((1.0, 0.5), 2), np.zeros(3))

    def test_h_phi(self):
        rep = mra.h_phi_check(mra.haar_filter(), 10)
        assert rep.h_dev < 1e-4 and rep.fixed_point_residual < 1e-4

    def test_h_phi_without_tail_is_truncated(self):
        hp = mra.h_phi(mra.haar_filter(), DyadicGrid(8), tail=False)
        gap = np.max(np.abs(hp.values - 1.0))
        assert 1e-4 < gap <= 2.0 / (math.pi ** 2 * 64) + 1e-4

    def test_daubechies_h_phi(self):
        rep = mra.h_phi_check(mra.daubechies4(), 8)
        assert rep.h_dev < 1e-3 and rep.fixed_point_residual < 1e-3


class TestK0:
    def test_constant_and_character(self):
        one = np.array([0, 1.0, 0], dtype=complex)
        e = np.array([0, 0, 1.0], dtype=complex)
        rep = mra.k0_isometry_check(mra.haar_filter(), functions=[one, e], level=10)
        assert all(rep.passed)
        assert rep.lhs[0] == pytest.approx(1.0, abs=1e-3) and rep.rhs[0] == pytest.approx(1.0, abs=1e-3)

    def test_zero(self):
        rep = mra.k0_isometry_check(mra.haar_filter(), functions=[np.zeros(3)], level=8)
        assert rep.lhs == [0.0] and rep.rhs == [0.0]

    def test_raw_truncation_within_bound(self):
        rep = mra.k0_isometry_check(mra.haar_filter(), seed=1, level=10)
        for raw, r in zip(rep.lhs_truncated, rep.rhs):
            assert abs(raw - r) <= rep.tail_bound * 8
        assert all(rep.passed)

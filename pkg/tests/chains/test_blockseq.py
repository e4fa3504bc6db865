import numpy as np
import pytest
from scipy import linalg

from subexpq.chains import (
    MatrixSeq,
    RankOneTail,
    convolution_tail_limit_check,
    convolution_tails,
    convolve,
    nfold_geometric_sum,
    tails,
)
from subexpq.errors import HorizonError, ModelValidationError, UnstableChainError
from subexpq.heavytail import DiscreteDist


@pytest.fixture()
def rng():
    yield np.random.default_rng(20240101)


def brute_convolution(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1], b.shape[2]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i + j] += a[i] @ b[j]
    return out


class TestTails:
    def test_point_mass(self):
        bar, _ = tails(MatrixSeq([[[1.0]]], 0))
        np.testing.assert_array_equal(bar(np.arange(0, 10)), 0.0)
        assert bar([-1])[0, 0, 0] == 1.0

    def test_geometric_tail(self):
        s = MatrixSeq([[[0.5]]], 0, tail=RankOneTail([1.0], [1.0], DiscreteDist.geometric(0.5)))
        ks = np.arange(0, 40)
        np.testing.assert_allclose(s.overline(ks)[:, 0, 0], 0.5 ** (ks + 1.0), rtol=1e-12)
        np.testing.assert_allclose(s.double_overline(ks)[:, 0, 0], 0.5 ** (ks + 1.0), rtol=1e-12)
        assert s.total[0, 0] == pytest.approx(1.0)
        assert s.first_moment[0, 0] == pytest.approx(1.0)

    def test_brute_force(self, rng):
        blocks = rng.random((6, 2, 2))
        s = MatrixSeq(blocks, -2)
        ks = np.arange(-4, 6)
        bar = np.array([blocks[max(k + 3, 0):].sum(axis=0) for k in ks])
        dbar = np.array([sum((bar_l for l, bar_l in zip(ks, bar) if l > k), np.zeros((2, 2))) for k in ks])
        np.testing.assert_allclose(s.overline(ks), bar, atol=1e-14)
        np.testing.assert_allclose(s.double_overline(ks[2:]), dbar[2:], atol=1e-14)

    def test_negative_entries(self):
        with pytest.raises(ModelValidationError):
            MatrixSeq([[[-0.5]]], 0)

    def test_tail_shape(self):
        with pytest.raises(ModelValidationError):
            MatrixSeq([[[0.5, 0.5]]], 0, tail=RankOneTail([1.0, 1.0], [1.0], DiscreteDist.geometric(0.5)))

    def test_truncated_horizon(self):
        s = MatrixSeq([[[0.5]]], 0, residual_mass=[[0.5]])
        assert s.truncated
        assert s.mass_deficit == pytest.approx(0.5)
        with pytest.raises(HorizonError):
            s.overline([3])


class TestConvolve:
    def test_identity(self, rng):
        b = MatrixSeq(rng.random((5, 3, 3)), 1)
        c = convolve(MatrixSeq(np.eye(3)[None], 0), b)
        assert c.k_min == 1
        np.testing.assert_allclose(c.blocks, b.blocks)

    def test_scalar(self):
        c = convolve(MatrixSeq([[[0.5]], [[0.5]]], 0), MatrixSeq([[[0.5]], [[0.5]]], 0))
        np.testing.assert_allclose(c.blocks[:, 0, 0], [0.25, 0.5, 0.25])
        assert not c.truncated

    def test_brute_force(self, rng):
        a, b = rng.random((8, 3, 3)), rng.random((8, 3, 3))
        c = convolve(MatrixSeq(a, 0), MatrixSeq(b, -1))
        assert c.k_min == -1
        np.testing.assert_allclose(c.blocks, brute_convolution(a, b), atol=1e-14)

    def test_associative(self, rng):
        a, b, c = (MatrixSeq(rng.random((4, 2, 2)), 0) for _ in range(3))
        left = convolve(convolve(a, b), c)
        right = convolve(a, convolve(b, c))
        np.testing.assert_allclose(left.blocks, right.blocks, atol=1e-12)

    def test_horizon_tracks_residual(self, rng):
        a, b = MatrixSeq(rng.random((6, 2, 2)), 0), MatrixSeq(rng.random((6, 2, 2)), 0)
        full = convolve(a, b)
        cut = convolve(a, b, horizon=4)
        assert cut.truncated
        np.testing.assert_allclose(cut.blocks, full.blocks[:5], atol=1e-14)
        np.testing.assert_allclose(cut.residual_mass, full.blocks[5:].sum(axis=0), atol=1e-12)

    def test_tails_of_convolution(self, rng):
        a, b = MatrixSeq(rng.random((5, 2, 2)), 0), MatrixSeq(rng.random((7, 2, 2)), -2)
        ks = np.arange(-3, 10)
        np.testing.assert_allclose(convolution_tails(a, b, ks), convolve(a, b).overline(ks), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ModelValidationError):
            convolve(MatrixSeq(np.ones((1, 2, 3)), 0), MatrixSeq(np.ones((1, 2, 2)), 0))


class TestGeometricSum:
    def test_zero(self):
        F = nfold_geometric_sum(MatrixSeq(np.zeros((1, 2, 2)), 0))
        np.testing.assert_allclose(F.at(0), np.eye(2))
        np.testing.assert_allclose(F.blocks[1:], 0.0)

    def test_scalar(self):
        F = nfold_geometric_sum(MatrixSeq([[[0.0]], [[0.5]]], 0))
        np.testing.assert_allclose(F.blocks[:20, 0, 0], 0.5 ** np.arange(20), rtol=1e-12)
        assert F.blocks.sum() == pytest.approx(2.0, abs=1e-12)

    def test_random(self, rng):
        blocks = rng.random((4, 2, 2))
        radius = np.max(np.abs(linalg.eigvals(blocks.sum(axis=0))))
        r = MatrixSeq(blocks * 0.8 / radius, 0)
        F = nfold_geometric_sum(r, tol=1e-12)
        np.testing.assert_allclose(F.blocks.sum(axis=0), linalg.inv(np.eye(2) - r.total), atol=1e-10)
        K = F.k_max
        fixed = convolve(r, F, horizon=K).dense(0, K)
        fixed[0] += np.eye(2)
        np.testing.assert_allclose(F.blocks, fixed, atol=1e-12)

    def test_unstable(self):
        with pytest.raises(UnstableChainError, match="spectral radius"):
            nfold_geometric_sum(MatrixSeq([[[0.5]], [[0.5]]], 0))

    def test_radius_margin_follows_tol(self):
        r = MatrixSeq([[[0.0]], [[1.0 - 1e-6]]], 0)
        F = nfold_geometric_sum(r, max_level=10)
        assert F.at(10)[0, 0] == pytest.approx((1.0 - 1e-6) ** 10)
        with pytest.raises(UnstableChainError, match="spectral radius"):
            nfold_geometric_sum(r, tol=1e-5, max_level=10)


class TestConvolutionTailLimit:
    TEST_Y = DiscreteDist.zeta_pareto(2.5)

    def tailed(self):
        return MatrixSeq([[[0.5]]], 0, tail=RankOneTail([0.5], [1.0], self.TEST_Y))

    def test_finite_supports(self, rng):
        report = convolution_tail_limit_check(
            MatrixSeq(rng.random((3, 2, 2)), 0), MatrixSeq(rng.random((3, 2, 2)), 0), self.TEST_Y
        )
        np.testing.assert_array_equal(report.limit, 0.0)
        assert report.sup_deviation == 0.0

    def test_both_tailed(self):
        report = convolution_tail_limit_check(self.tailed(), self.tailed(), self.TEST_Y)
        assert report.limit[0, 0] == pytest.approx(1.0)
        assert report.deviations[-1] < 0.1
        assert report.trend < 0.0
        assert report.heuristic

    def test_one_finite_factor(self):
        finite = MatrixSeq([[[0.25]], [[0.5]]], 0)
        report = convolution_tail_limit_check(finite, self.tailed(), self.TEST_Y)
        assert report.limit[0, 0] == pytest.approx(0.75 * 0.5)
        assert report.deviations[-1] < 0.05

    def test_truncated_factor(self):
        with pytest.raises(ModelValidationError):
            convolution_tail_limit_check(
                MatrixSeq([[[0.5]]], 0, residual_mass=[[0.5]]), self.tailed(), self.TEST_Y
            )

import numpy as np
import pytest

from subexpq.chains import (
    Gig1Chain,
    MatrixSeq,
    boundary_vector,
    first_passage,
    level_independence_check,
    r_matrices,
    stationary,
    structural_constants,
    truncated_solve,
    validate,
)
from subexpq.chains.gig1core import SolutionMethod, first_passage_oracle, gth_stationary, phase_period
from subexpq.errors import (
    ModelValidationError,
    ReducibleChainError,
    StochasticityError,
    UnstableChainError,
)


def scalar_chain(down, stay, up, boundary=None):
    boundary = 1.0 - up if boundary is None else boundary
    return Gig1Chain(
        B0=[[boundary]],
        B_up=MatrixSeq([[[up]]], 1),
        B_down=[[[down]]],
        A=MatrixSeq([[[down]], [[stay]], [[up]]], -1),
    )


def random_chain(rng):
    """
    Positive blocks on levels -b..U, M <= 4, every row drifting downwards.
    """
    M = int(rng.integers(1, 5))
    b = int(rng.integers(1, 3))
    U = int(rng.integers(1, 11 - b))
    down = rng.random((b, M, M)) + 0.05
    stay = rng.random((M, M)) + 0.05
    up = rng.random((U, M, M)) + 0.05
    q_up = 0.5 / (U + 1)
    for part, share in ((down, 0.8 - q_up), (stay[None], 0.2), (up, q_up)):
        part *= share / part.sum(axis=(0, 2))[None, :, None]
    A = np.concatenate((down, stay[None], up))
    B_down = np.array([np.outer(A[: b - depth + 1].sum(axis=(0, 2)), np.full(M, 1.0 / M)) for depth in range(1, b + 1)])
    boundary = rng.random((3, M, M)) + 0.05
    boundary /= boundary.sum(axis=(0, 2))[None, :, None]
    return Gig1Chain(B0=boundary[0], B_up=MatrixSeq(boundary[1:], 1), B_down=B_down, A=MatrixSeq(A, -b))


class TestGig1Chain:
    def test_shapes(self, two_phase_mg1):
        assert two_phase_mg1.M0 == 2
        assert two_phase_mg1.M == 2
        assert two_phase_mg1.b_max == 1
        np.testing.assert_allclose(two_phase_mg1.B(-1), two_phase_mg1.B_down[0])

    def test_block_mismatch(self):
        with pytest.raises(ModelValidationError):
            Gig1Chain(
                B0=[[1.0]],
                B_up=MatrixSeq(np.zeros((1, 1, 2)), 1),
                B_down=[[[1.0]]],
                A=MatrixSeq([[[0.5]], [[0.5]]], -1),
            )

    def test_jump_below_boundary(self):
        with pytest.raises(ModelValidationError, match="deepest boundary jump"):
            Gig1Chain(
                B0=[[0.5]],
                B_up=MatrixSeq([[[0.5]]], 1),
                B_down=[[[0.5]]],
                A=MatrixSeq([[[0.2]], [[0.3]], [[0.5]]], -2),
            )

    def test_gth(self):
        P = np.array([[0.5, 0.5], [0.25, 0.75]])
        np.testing.assert_allclose(gth_stationary(P), [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)


class TestValidate:
    def test_scalar(self, birth_death):
        report = validate(birth_death)
        np.testing.assert_allclose(report.pi, [1.0])
        assert report.sigma == pytest.approx(-0.3, abs=1e-14)
        assert report.window_irreducible
        assert report.flags == ()

    def test_unstable(self):
        with pytest.raises(UnstableChainError, match="sigma"):
            validate(scalar_chain(0.4, 0.0, 0.6))

    def test_row_sums(self):
        with pytest.raises(StochasticityError):
            validate(scalar_chain(0.6, 0.1, 0.3, boundary=0.6))

    def test_reducible(self):
        eye = np.eye(2)
        chain = Gig1Chain(
            B0=0.7 * eye,
            B_up=MatrixSeq(0.3 * eye[None], 1),
            B_down=0.6 * eye[None],
            A=MatrixSeq(np.array([0.6 * eye, 0.1 * eye, 0.3 * eye]), -1),
        )
        with pytest.raises(ReducibleChainError):
            validate(chain)

    def test_heavy_tailed(self, pareto_chain):
        report = validate(pareto_chain)
        assert report.sigma < 0.0
        assert report.pi.sum() == pytest.approx(1.0)


class TestFirstPassage:
    def test_forced_descent(self):
        eye = np.eye(2)
        chain = Gig1Chain(B0=eye, B_up=MatrixSeq(np.zeros((1, 2, 2)), 1), B_down=eye[None], A=MatrixSeq(eye[None], -1))
        np.testing.assert_allclose(first_passage(chain).G, eye)

    def test_scalar(self, birth_death):
        fp = first_passage(birth_death)
        assert fp.G[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert fp.Phi0[0, 0] == pytest.approx(0.4, abs=1e-10)
        assert fp.L(1)[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_matches_oracle(self, two_phase_mg1):
        fp = first_passage(two_phase_mg1)
        oracle = first_passage_oracle(two_phase_mg1, 2, levels=400)
        np.testing.assert_allclose(fp.G, oracle, atol=1e-8)
        np.testing.assert_allclose(fp.G.sum(axis=1), 1.0, atol=1e-10)
        assert level_independence_check(two_phase_mg1, fp, levels=400) < 1e-8

    def test_heavy_tail(self, pareto_chain):
        fp = first_passage(pareto_chain)
        assert fp.G.shape == (2, 4)
        np.testing.assert_allclose(fp.G.sum(axis=1), 1.0, atol=1e-8)

    def test_oracle_level(self, two_phase_mg1):
        with pytest.raises(ModelValidationError):
            first_passage_oracle(two_phase_mg1, 1)


class TestRMatrices:
    def test_scalar(self, birth_death):
        fp = first_passage(birth_death)
        rm = r_matrices(birth_death, fp, 10)
        assert rm.R.at(1)[0, 0] == pytest.approx(0.5, abs=1e-10)
        np.testing.assert_allclose(rm.R.blocks[1:], 0.0, atol=1e-14)
        assert rm.radius == pytest.approx(0.5, abs=1e-10)

    def test_no_upward_jumps(self):
        chain = Gig1Chain(
            B0=[[0.5]],
            B_up=MatrixSeq([[[0.5]]], 1),
            B_down=[[[0.6]]],
            A=MatrixSeq([[[0.6]], [[0.4]]], -1),
        )
        rm = r_matrices(chain, first_passage(chain), 5)
        np.testing.assert_allclose(rm.R.blocks, 0.0)


class TestStationary:
    TEST_LEVELS = np.arange(1, 51)

    def test_boundary_vector(self, birth_death):
        bv = boundary_vector(birth_death, first_passage(birth_death))
        np.testing.assert_allclose(bv.x0, [1.0])

    def test_scalar(self, birth_death):
        sol = stationary(birth_death, 50)
        assert sol.method is SolutionMethod.MATRIX_ANALYTIC
        assert sol.x0[0] == pytest.approx(0.5, abs=1e-10)
        np.testing.assert_allclose(sol.x[:, 0], 0.5 ** (self.TEST_LEVELS + 1.0), atol=1e-10)
        np.testing.assert_allclose(sol.tail_mass(self.TEST_LEVELS), 0.5 ** (self.TEST_LEVELS + 1.0), atol=1e-10)
        assert sol.mass_deficit == pytest.approx(0.5 ** 51, abs=1e-10)

    def test_truncated_scalar(self, birth_death):
        sol = truncated_solve(birth_death, 200)
        assert sol.method is SolutionMethod.TRUNCATED
        np.testing.assert_allclose(sol.x[:50, 0], 0.5 ** (self.TEST_LEVELS + 1.0), atol=1e-10)
        assert sol.flags == ()

    def test_cross_method(self, two_phase_mg1):
        K = 400
        analytic = stationary(two_phase_mg1, K)
        truncated = truncated_solve(two_phase_mg1, K)
        tv = np.abs(analytic.x0 - truncated.x0).sum() + np.abs(analytic.x - truncated.x).sum()
        assert tv <= 1e-6
        total = analytic.x0.sum() + analytic.x.sum() + analytic.mass_deficit
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_heavy_tail(self, pareto_chain):
        sol = stationary(pareto_chain, 300)
        tails = sol.tail_mass(np.arange(0, 301))
        assert np.all(np.isfinite(tails))
        assert np.all(np.diff(tails) <= 1e-15)
        total = sol.x0.sum() + sol.x.sum() + sol.mass_deficit
        assert total == pytest.approx(1.0, abs=1e-9)
        assert sol.level(0) is sol.x0

    def test_truncated_deficit_flagged(self, pareto_chain):
        sol = truncated_solve(pareto_chain, 50)
        assert sol.mass_deficit > 1e-8
        assert sol.flags

    def test_truncation_too_low(self, pareto_chain):
        with pytest.raises(ModelValidationError):
            truncated_solve(pareto_chain, 3)


class TestStructuralConstants:
    def test_scalar(self, birth_death):
        report = validate(birth_death)
        fp = first_passage(birth_death)
        sc = structural_constants(birth_death, fp, r_matrices(birth_death, fp, 10), report)
        assert sc.sigma_prop1 == pytest.approx(-0.3, abs=1e-9)
        assert sc.period == 1
        np.testing.assert_allclose(sc.psi, [1.0], atol=1e-9)

    def test_landing_limit(self, two_phase_mg1):
        report = validate(two_phase_mg1)
        fp = first_passage(two_phase_mg1)
        sc = structural_constants(two_phase_mg1, fp, r_matrices(two_phase_mg1, fp, 50), report)
        assert sc.sigma_prop1 == pytest.approx(report.sigma, abs=1e-6)
        assert np.all(np.isfinite(sc.psi))
        assert sc.landing_errors[-1] < 1e-4
        assert sc.heuristic

    @pytest.mark.parametrize("seed", range(50))
    def test_random_drift(self, seed):
        chain = random_chain(np.random.default_rng(seed))
        M = chain.M
        A_total = chain.A.total
        system = np.vstack((A_total.T - np.eye(M), np.ones((1, M))))
        pi = np.linalg.lstsq(system, np.concatenate((np.zeros(M), [1.0])), rcond=None)[0]
        ks = np.arange(chain.A.k_min, chain.A.k_max + 1)
        sigma = float(pi @ np.tensordot(ks, chain.A.blocks, axes=1) @ np.ones(M))
        report = validate(chain)
        assert report.sigma == pytest.approx(sigma, abs=1e-10)
        assert report.sigma <= -0.3 + 1e-12
        fp = first_passage(chain)
        sc = structural_constants(chain, fp, r_matrices(chain, fp, 20), report, n_max=5)
        assert sc.sigma_prop1 == pytest.approx(report.sigma, abs=1e-6)

    def test_period(self):
        A = MatrixSeq([[[0.6]], [[0.0]], [[0.0]], [[0.0]], [[0.4]]], -2)
        assert phase_period(A) == 2

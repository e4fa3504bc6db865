"""
Subexponential tail asymptotics of the stationary distribution.

If the integrated tails of the A and B blocks behave like ``c P(Y > k)``
for a subexponential Y, then x-bar(k) / P(Y > k) tends to
``(x(0) c_B + x-bar(0) c_A) / (-sigma) * pi``.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg

from ..errors import AssumptionError, HorizonError, UnstableChainError
from ..heavytail import DiscreteDist, DiscreteKind, discretized_equilibrium, require_finite_mean
from .gig1core import _landing_sums

_SUBEXPONENTIAL = (DiscreteKind.ZETA_PARETO, DiscreteKind.INTERLEAVED, DiscreteKind.EQUILIBRIUM)


@dataclass(frozen=True, eq=False)
class TailCoefficients:
    """
    ``A-double-bar(k) e ~ c_A P(Y > k)`` and ``B-double-bar(k) e ~ c_B P(Y > k)``.
    Y is anything with a vectorized ``tail(k)``.
    """

    Y: object
    c_A: np.ndarray
    c_B: np.ndarray

    def __post_init__(self):
        c_A = np.asarray(self.c_A, dtype=float).ravel()
        c_B = np.asarray(self.c_B, dtype=float).ravel()
        if np.any(c_A < 0.0) or np.any(c_B < 0.0):
            raise AssumptionError("tail coefficients must be nonnegative")
        if not (c_A.any() or c_B.any()):
            raise AssumptionError("c_A and c_B are both zero: no subexponential tail to follow")
        object.__setattr__(self, "c_A", c_A)
        object.__setattr__(self, "c_B", c_B)
        kind = getattr(self.Y, "kind", None)
        if kind is not None and kind not in _SUBEXPONENTIAL:
            logger.warning(f"Reference law {self.Y.name} is accepted without a subexponential proof")

    def with_reference(self, Y):
        """
        The same coefficients against a reference tail asymptotically equal
        to the current one.
        """
        return TailCoefficients(Y, self.c_A, self.c_B)


@dataclass(frozen=True, eq=False)
class TailPrediction:
    prefactor: np.ndarray
    Y: object
    sigma: float
    flags: tuple = ()

    def predicted(self, ks):
        """
        Per-phase predicted x-bar(k), shape (len(ks), M)
        """
        return np.outer(self.Y.tail(np.asarray(ks)), self.prefactor)

    def predicted_mass(self, ks):
        return self.prefactor.sum() * self.Y.tail(np.asarray(ks))


def _rank_one_coefficient(seq, rows):
    if seq.truncated:
        raise AssumptionError("a truncated sequence carries no parametric tail")
    if seq.tail is None:
        return np.zeros(rows), None
    z = seq.tail.dist
    mean = require_finite_mean(z, "a parametric block tail")
    return seq.tail.v * seq.tail.w.sum() * mean, z


def coefficients_from_parametric(chain):
    """
    Exact c_A and c_B of a chain whose block tails are ``v w^T pmf_Z(k)``.

    Beyond the dense heads, A-double-bar(k) e = v (w^T e) E[Z] P(Z_de > k),
    so the reference law is the discretized equilibrium of Z.
    """
    c_A, z_A = _rank_one_coefficient(chain.A, chain.M)
    c_B, z_B = _rank_one_coefficient(chain.B_up, chain.M0)
    if z_A is None and z_B is None:
        raise AssumptionError(
            f"tail assumption unsatisfiable: chain {chain.name} has finite support, so c_A = c_B = 0"
        )
    if z_A is not None and z_B is not None and z_A.name != z_B.name:
        raise AssumptionError(f"A and B tails follow different laws: {z_A.name} and {z_B.name}")
    z = z_A if z_A is not None else z_B
    Y = discretized_equilibrium(z)
    logger.info(f"Tail coefficients of {chain.name}: reference {Y.name}")
    return TailCoefficients(Y, c_A, c_B)


def predict_tail(sol, tc, sigma, pi):
    if sigma >= 0.0:
        raise UnstableChainError(f"mean drift sigma = {sigma!r} >= 0: no stationary tail")
    scale = (sol.x0 @ tc.c_B + sol.xbar0 @ tc.c_A) / (-sigma)
    return TailPrediction(prefactor=scale * np.asarray(pi, dtype=float), Y=tc.Y, sigma=sigma)


@dataclass(frozen=True, eq=False)
class TailRatioReport:
    ks: np.ndarray
    true_tail: np.ndarray
    predicted_tail: np.ndarray
    ratios: np.ndarray
    phase_ratios: np.ndarray
    tol: float
    within_band: bool
    passed: bool
    preasymptotic_until: int
    trend: float

    def to_frame(self):
        return pd.DataFrame(
            {
                "k": self.ks,
                "true_tail": self.true_tail,
                "predicted_tail": self.predicted_tail,
                "ratio": self.ratios,
            }
        )


def ratio_window(lo, hi, points=40):
    return np.unique(np.geomspace(lo, hi, points).astype(np.int64))


def _settles(ratios, tol):
    inside = np.abs(ratios - 1.0) <= tol
    if not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    return 0 if outside.size == 0 else int(outside[-1]) + 1


def tail_ratio_report(sol, pred, k_window, tol=0.15):
    """
    x-bar(k) against the prediction over ``k_window`` (a (lo, hi) pair or an
    explicit array of levels).
    """
    window = np.asarray(k_window, dtype=np.int64)
    ks = ratio_window(*window) if window.size == 2 else np.unique(window)
    if ks.max() > sol.K:
        raise HorizonError(f"ratio window reaches {int(ks.max())} beyond the solution horizon {sol.K}")
    true_tail = sol.tail_mass(ks)
    predicted = pred.predicted_mass(ks)
    ratios = true_tail / predicted
    phase = pred.predicted(ks)
    phase_ratios = np.divide(
        sol.xbar[ks], phase, out=np.full(phase.shape, np.nan), where=phase > 1e-300
    )
    start = _settles(ratios, tol)
    passed = start is not None
    preasymptotic = int(ks[start]) if passed else int(ks[-1])
    if passed and start > 0:
        logger.info(f"Tail ratio preasymptotic up to k={preasymptotic}")
    trend = float(np.abs(ratios[-1] - 1.0) - np.abs(ratios[0] - 1.0))
    return TailRatioReport(
        ks=ks,
        true_tail=true_tail,
        predicted_tail=predicted,
        ratios=ratios,
        phase_ratios=phase_ratios,
        tol=tol,
        within_band=bool(np.all(np.abs(ratios - 1.0) <= tol)),
        passed=passed,
        preasymptotic_until=preasymptotic,
        trend=trend,
    )


def interleaved_fixture(U_de, check_at=10_000, tol=1e-3):
    """
    Y with P(Y > 2n) = P(U_de > 2n) and P(Y > 2n + 1) the mean of
    P(U_de > 2n) and P(U_de > 2n + 1), together with the largest gap of
    P(Y > k) / P(U_de > k) from 1 at k = check_at, check_at + 1.

    Raises :class:`AssumptionError` when that gap exceeds ``tol``: the base
    law is then not long-tailed enough for Y to be tail-equivalent to it.
    """
    Y = DiscreteDist.interleaved(U_de)
    ks = np.array([check_at, check_at + 1])
    gap = float(np.abs(Y.tail(ks) / U_de.tail(ks) - 1.0).max())
    logger.debug(f"Interleaved {U_de.name}: tail ratio off by {gap!r} at k={check_at}")
    if not gap <= tol:
        raise AssumptionError(
            f"interleaved {U_de.name} is not tail-equivalent to its base: ratio off by {gap!r} at k={check_at}"
        )
    return Y, gap


@dataclass(frozen=True, eq=False)
class OscillationReport:
    """
    A-bar(k) e / P(U > k) along even and odd levels for the formal
    sequence A-double-bar(k) e = c P(Y > k) with Y interleaved from U_de.
    """

    ks_even: np.ndarray
    ks_odd: np.ndarray
    even_ratios: np.ndarray
    odd_ratios: np.ndarray
    even_limit: float
    odd_limit: float
    even_error: float
    odd_error: float
    tol: float

    @property
    def passed(self):
        return self.even_error <= self.tol and self.odd_error <= self.tol


def oscillation_report(U_de, c=1.0, ks=None, tol=0.1):
    """
    U is recovered from U_de through P(U > k) = E[U] pmf_{U_de}(k) with
    E[U] = 1 / pmf_{U_de}(0).
    """
    Y = DiscreteDist.interleaved(U_de)
    if ks is None:
        ks = ratio_window(1_000, 100_000, 20)
    base = np.asarray(ks, dtype=np.int64)
    ks_even = 2 * (base // 2)
    ks_odd = ks_even + 1
    mean_U = 1.0 / U_de.pmf(0)

    def ratios(k):
        abar = c * Y.pmf(k)
        return abar / (mean_U * U_de.pmf(k))

    even, odd = ratios(ks_even), ratios(ks_odd)
    even_limit, odd_limit = 1.5 * c / mean_U, 0.5 * c / mean_U
    report = OscillationReport(
        ks_even=ks_even,
        ks_odd=ks_odd,
        even_ratios=even,
        odd_ratios=odd,
        even_limit=even_limit,
        odd_limit=odd_limit,
        even_error=float(abs(even[-1] / even_limit - 1.0)),
        odd_error=float(abs(odd[-1] / odd_limit - 1.0)),
        tol=tol,
    )
    logger.info(
        f"Oscillation of A-bar(k)e / P(U > k): even {even[-1]!r} (limit {even_limit!r}), "
        f"odd {odd[-1]!r} (limit {odd_limit!r})"
    )
    return report


@dataclass(frozen=True, eq=False)
class LemmaLimit:
    name: str
    ks: np.ndarray
    ratios: np.ndarray
    limit: np.ndarray
    deviations: np.ndarray

    @property
    def final_deviation(self):
        return float(self.deviations[-1])


@dataclass(frozen=True, eq=False)
class LemmaLimitsReport:
    """
    HEURISTIC: ratios over a finite window only suggest the limits.
    """

    limits: tuple
    heuristic: bool = True

    def __getitem__(self, name):
        for item in self.limits:
            if item.name == name:
                return item
        raise KeyError(name)


def _limit(name, ks, values, reference, limit):
    ratios = values / reference[:, None, None]
    scale = max(float(np.abs(limit).max()), 1e-300)
    deviations = np.abs(ratios - limit).max(axis=(1, 2)) / scale
    return LemmaLimit(name=name, ks=ks, ratios=ratios, limit=limit, deviations=deviations)


def lemma_limits_report(chain, sol, tc, ks=None):
    """
    Landing sums, R-bar, R0-bar and F-bar against their limits over ``ks``.
    Needs a matrix-analytic solution (its diagnostics hold the first
    passage bundle, the R matrices and the geometric sum).
    """
    diag = sol.diagnostics
    if not diag:
        raise AssumptionError("lemma limits need a matrix-analytic solution")
    fp, rm, F = diag["first_passage"], diag["r_matrices"], diag["geometric_sum"]
    sigma, pi = diag["sigma"], diag["pi"]
    M = chain.M
    if ks is None:
        ks = ratio_window(min(100, sol.K // 4), sol.K, 20)
    ks = np.asarray(ks, dtype=np.int64)
    if ks.max() > sol.K:
        raise HorizonError(f"lemma window reaches {int(ks.max())} beyond the solution horizon {sol.K}")
    reference = tc.Y.tail(ks)
    eye = np.eye(M)
    weight = pi @ (eye - rm.R_total)
    limits = []

    def landing(seq):
        return _landing_sums(seq.overline, seq.double_overline, ks, fp.U, fp.U_limit)[:, :, :M]

    ad, bd = landing(chain.A), landing(chain.B_up)
    limits.append(_limit("AL", ks, ad, reference, np.outer(tc.c_A, weight @ (eye - fp.Phi0)) / -sigma))
    limits.append(_limit("BL", ks, bd, reference, np.outer(tc.c_B, weight @ (eye - fp.Phi0)) / -sigma))
    r_bar = np.matmul(chain.A.overline(ks) + ad, rm.inverse)
    r0_bar = np.matmul(chain.B_up.overline(ks) + bd, rm.inverse)
    limits.append(_limit("R", ks, r_bar, reference, np.outer(tc.c_A, weight) / -sigma))
    limits.append(_limit("R0", ks, r0_bar, reference, np.outer(tc.c_B, weight) / -sigma))
    inverse = linalg.inv(eye - rm.R_total)
    limits.append(_limit("F", ks, F.overline(ks), reference, np.outer(inverse @ tc.c_A, pi) / -sigma))
    for item in limits:
        logger.debug(f"Lemma limit {item.name}: final deviation {item.final_deviation!r}")
    return LemmaLimitsReport(limits=tuple(limits))

"""
MAP/GI/1 queue under the (a, b)-bulk-service rule.

At a service completion with l customers waiting the server idles until
a customers are present when l < a, and otherwise takes min(l, b) of them.
Departure epochs form a GI/G/1-type chain whose boundary level groups the
original levels 0..b-1.
"""
import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import linalg

from ..chains.asymptotics import TailPrediction, ratio_window
from ..chains.blockseq import MatrixSeq, convolve
from ..chains.gig1core import Gig1Chain, stationary, validate
from ..errors import (
    AssumptionError,
    ConvergenceError,
    DistributionError,
    HorizonError,
    ModelValidationError,
    UnstableChainError,
)
from ..heavytail import SampledTail
from .bmapq import compute_kernels


@dataclass(frozen=True, eq=False)
class BulkModel:
    bmap: object
    service: object
    a: int
    b: int
    name: str = "bulk-queue"

    def __post_init__(self):
        if not self.bmap.single_arrivals:
            raise ModelValidationError(f"{self.bmap.name} has batch arrivals; bulk service takes a MAP")
        if int(self.a) != self.a or int(self.b) != self.b or not 1 <= self.a <= self.b:
            raise ModelValidationError(f"thresholds must be integers with 1 <= a <= b, got a={self.a}, b={self.b}")
        object.__setattr__(self, "a", int(self.a))
        object.__setattr__(self, "b", int(self.b))
        if not math.isfinite(self.service.mean) or self.service.mean <= 0.0:
            raise DistributionError(f"service law {self.service.name} needs a finite positive mean")
        if self.rho >= self.b:
            raise UnstableChainError(f"load rho = {self.rho!r} >= b = {self.b}: the queue is unstable")

    @property
    def h(self):
        return self.service.mean

    @property
    def rho(self):
        return self.bmap.lam * self.service.mean

    @property
    def D(self):
        return self.bmap.D.at(1)

    @property
    def M(self):
        return self.bmap.M


def arrival_step(m):
    """
    W = (-C)^{-1} D, the phase transition from one arrival to the next.
    """
    W = linalg.lu_solve(linalg.lu_factor(-m.bmap.C), m.D)
    drift = float(np.abs(W.sum(axis=1) - 1.0).max())
    if drift > 1e-10:
        raise ConvergenceError(f"(-C)^-1 D e differs from e by {drift!r}", residual=drift)
    logger.debug(f"(-C)^-1 D e = e holds to {drift!r}")
    return W


def _boundary_lift(m, W):
    # rows of the boundary: W^{a-l} for l < a, the identity for a <= l < b
    M = m.M
    lift = np.empty((m.b, M, M))
    power = np.eye(M)
    for l in range(m.a - 1, -1, -1):
        power = W @ power
        lift[l] = power
    lift[m.a:] = np.eye(M)
    return lift


def build_embedded(m, kernels):
    """
    The departure-epoch chain: boundary level 0 holds the original levels
    0..b-1, level n >= 1 the original level b - 1 + n.
    """
    P = kernels.P
    M, b = m.M, m.b
    if P.k_max < 2 * b:
        raise HorizonError(f"kernels to level {P.k_max} are too short for b = {b}")
    W = arrival_step(m)
    lift = _boundary_lift(m, W)
    head = P.dense(0, b - 1)
    B0 = np.einsum("lij,kjm->likm", lift, head).reshape(b * M, b * M)
    B_up = P.from_level(b).shifted(1).left_multiply(lift.reshape(b * M, M))
    B_down = np.zeros((b, M, b * M))
    for k in range(1, b + 1):
        for j in range(b - k + 1):
            col = k - 1 + j
            B_down[k - 1][:, col * M:(col + 1) * M] = head[j]
    chain = Gig1Chain(B0=B0, B_up=B_up, B_down=B_down, A=P.shifted(-b), name=m.name)
    logger.debug(f"Bulk chain {m.name}: boundary {b * M} phases, {b} downward blocks")
    return chain


def mean_cycle(m, y_plus):
    """
    eta = h + sum_{k<a} y+(k) sum_{l<a-k} W^l (-C)^{-1} e
    """
    W = arrival_step(m)
    u = linalg.solve(-m.bmap.C, np.ones(m.M))
    waits = np.empty((m.a, m.M))
    acc, term = np.zeros(m.M), u
    for l in range(m.a):
        acc = acc + term
        waits[l] = acc
        term = W @ term
    # level k waits for a - k arrivals
    eta = m.h + sum(float(y_plus[k] @ waits[m.a - k - 1]) for k in range(m.a))
    return eta


def time_stationary(m, y_plus, y_plus_tail, eta, Pe):
    """
    y(k) for 0 <= k <= K from the departure-epoch vector, together with
    y-bar(k). Pe must reach level K.
    """
    K = y_plus.shape[0] - 1
    if Pe.k_max < K:
        raise HorizonError(f"Pe to level {Pe.k_max} does not reach {K}")
    a, M = m.a, m.M
    W = arrival_step(m)
    lu = linalg.lu_factor(-m.bmap.C)
    y = np.zeros((K + 1, M))
    z = np.zeros(M)
    for k in range(a):
        z = z @ W + y_plus[k]
        y[k] = linalg.lu_solve(lu, z, trans=1) / eta
    u = z @ W + y_plus[a]
    scale = m.h / eta
    y[a:] = scale * (u @ Pe.dense(0, K - a))
    tail_u = u @ Pe.overline(np.arange(0, K - a + 1))
    if a + 1 <= K:
        upper = MatrixSeq(y_plus[a + 1:][:, None, :], a + 1)
        y[a + 1:] += scale * convolve(upper, Pe, horizon=K).dense(a + 1, K)[:, 0, :]
    ybar = np.zeros((K + 1, M))
    ybar[a:] = scale * (tail_u + y_plus_tail[a:] @ Pe.total)
    if a + 1 <= K:
        pe_bar = MatrixSeq(Pe.overline(np.arange(0, K + 1)), 0)
        ybar[a + 1:] += scale * convolve(upper, pe_bar, horizon=K).dense(a + 1, K)[:, 0, :]
    for k in range(a - 1, -1, -1):
        ybar[k] = ybar[k + 1] + y[k + 1]
    total = y.sum() + ybar[K].sum()
    if abs(total - 1.0) > 1e-8:
        logger.warning(f"Time-stationary mass of {m.name} is {total!r}, off by {total - 1.0!r}")
    return y, ybar


@dataclass(frozen=True, eq=False)
class BulkSolution:
    model: BulkModel
    kernels: object
    chain: Gig1Chain
    departure: object
    y_plus: np.ndarray
    y_plus_tail: np.ndarray
    eta: float
    y: np.ndarray
    y_tail: np.ndarray
    report: object

    @property
    def K(self):
        return self.y_plus.shape[0] - 1

    @property
    def mass_deficit(self):
        return float(self.y_plus_tail[-1].sum())

    @property
    def flags(self):
        return self.departure.flags

    @property
    def departure_tails(self):
        return LevelTails(self.y_plus_tail)

    @property
    def time_tails(self):
        return LevelTails(self.y_tail)


def _unfold(m, sol, K):
    # boundary phases come first, then levels b, b+1, ... of the embedded solution
    b, M = m.b, m.M
    y_plus = np.concatenate((sol.x0.reshape(b, M), sol.x[: K - b + 1]))
    deficit = sol.xbar[K - b + 1]
    above = np.cumsum(y_plus[::-1], axis=0)[::-1]
    y_plus_tail = np.concatenate((above[1:], np.zeros((1, M)))) + deficit
    return y_plus, y_plus_tail


def solve_bulk(m, K, tol=1e-12, margin=None, attempts=4):
    """
    Departure-epoch and time-stationary queue length to level K.
    """
    if K < m.b:
        raise HorizonError(f"levels K = {K} must reach b = {m.b}")
    margin = margin or max(256, K // 2)
    for _ in range(attempts):
        kernels = compute_kernels(m, K + margin + m.b)
        chain = build_embedded(m, kernels)
        try:
            report = validate(chain)
            gap = abs(report.sigma - (m.rho - m.b))
            if gap > 1e-8:
                logger.warning(f"Bulk drift {report.sigma!r} differs from rho - b by {gap!r}")
            departure = stationary(chain, K - m.b + 1, tol, report)
        except HorizonError as exc:
            margin *= 2
            logger.debug(f"Bulk kernel margin raised to {margin}: {exc}")
            continue
        y_plus, y_plus_tail = _unfold(m, departure, K)
        eta = mean_cycle(m, y_plus)
        y, y_tail = time_stationary(m, y_plus, y_plus_tail, eta, kernels.Pe)
        logger.info(f"Bulk queue {m.name}: eta = {eta!r}, h / eta = {m.h / eta!r}")
        return BulkSolution(
            model=m,
            kernels=kernels,
            chain=chain,
            departure=departure,
            y_plus=y_plus,
            y_plus_tail=y_plus_tail,
            eta=eta,
            y=y,
            y_tail=y_tail,
            report=report,
        )
    raise HorizonError(f"kernels still too short for a bulk solve to level {K}")


def bulk_tail_asymptotes(m, sol):
    """
    (departure-epoch, time-stationary) predictions:
    rho / (b - rho) varpi He-bar(k/lambda) and (h/eta) b / (b - rho) varpi He-bar(k/lambda).
    """
    if m.service.light_tailed:
        raise AssumptionError(f"service law {m.service.name} is light-tailed; the bulk asymptote needs a heavy tail")
    varpi = m.bmap.varpi
    Y = SampledTail(m.service.equilibrium(), m.bmap.lam)
    departure = TailPrediction(prefactor=m.rho / (m.b - m.rho) * varpi, Y=Y, sigma=m.rho - m.b)
    time = TailPrediction(
        prefactor=m.h / sol.eta * m.b / (m.b - m.rho) * varpi, Y=Y, sigma=m.rho - m.b
    )
    return departure, time


@dataclass(frozen=True, eq=False)
class EmbeddedTailReport:
    """
    A-double-bar(k) e and B-double-bar(k) e over rho He-bar(k/lambda). HEURISTIC.
    """

    ks: np.ndarray
    a_ratios: np.ndarray
    b_ratios: np.ndarray
    limit: float
    heuristic: bool = True


def embedded_tail_report(m, chain, ks=None):
    horizon = min(chain.A.k_max, chain.B_up.k_max)
    ks = ratio_window(10, horizon, 20) if ks is None else np.asarray(ks, dtype=np.int64)
    if ks.max() > horizon:
        raise HorizonError(f"embedded window reaches {int(ks.max())} beyond {horizon}")
    reference = SampledTail(m.service.equilibrium(), m.bmap.lam).tail(ks)
    a_ratios = chain.A.double_overline(ks) @ np.ones(m.M) / reference[:, None]
    b_ratios = chain.B_up.double_overline(ks) @ np.ones(m.M) / reference[:, None]
    return EmbeddedTailReport(ks=ks, a_ratios=a_ratios, b_ratios=b_ratios, limit=m.rho)


@dataclass(frozen=True, eq=False)
class LevelTails:
    """
    y-bar(k) for 0 <= k <= K, read like a stationary solution's tails.
    """

    xbar: np.ndarray

    @property
    def K(self):
        return self.xbar.shape[0] - 1

    def tail_mass(self, ks):
        return self.xbar[np.asarray(ks)].sum(axis=-1)

"""
BMAP/GI/1 queue.

The queue length at departures (and at arbitrary times) is the stationary
vector of an M/G/1-type chain whose blocks are the kernels
P(k) = integral of exp{(C + D^(z)) x} dH(x), taken coefficient-wise.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import networkx as nx
import numpy as np
from loguru import logger
from scipy import linalg

from ..chains.asymptotics import TailPrediction, ratio_window
from ..chains.blockseq import MatrixSeq, convolve
from ..chains.gig1core import Gig1Chain, gth_stationary, stationary, validate
from ..errors import (
    AssumptionError,
    ConvergenceError,
    DistributionError,
    HorizonError,
    ModelValidationError,
    ReducibleChainError,
    StochasticityError,
    UnstableChainError,
)
from ..heavytail import (
    DiscreteDist,
    SampledTail,
    ServiceKind,
    TailClass,
    class_diagnostic,
    discretized_equilibrium,
)

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 1_000_000


@dataclass(frozen=True, eq=False)
class Bmap:
    """
    Batch Markovian arrival process: C governs phase changes without
    arrivals, D(k) (k >= 1) those with a batch of k arrivals.
    """

    C: np.ndarray
    D: MatrixSeq
    name: str = "bmap"

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        object.__setattr__(self, "C", C)
        M = C.shape[0]
        if C.shape != (M, M) or self.D.shape != (M, M):
            raise ModelValidationError(f"C is {C.shape} and D(k) is {self.D.shape}: both must be {M}x{M}")
        if self.D.k_min < 1:
            raise ModelValidationError("D(k) starts at batch size 1")
        if self.D.truncated:
            raise ModelValidationError("D(k) must be finite or carry a parametric tail")
        if np.any(np.diag(C) >= 0.0):
            raise ModelValidationError("the diagonal of C must be negative")
        off = C - np.diag(np.diag(C))
        if np.any(off < 0.0):
            raise ModelValidationError("off-diagonal entries of C must be nonnegative")
        drift = np.abs((C + self.D.total).sum(axis=1)).max()
        if drift > 1e-12 * max(1.0, self.theta):
            raise StochasticityError(f"(C + sum_k D(k)) e deviates from 0 by {drift!r}")
        support = nx.DiGraph()
        support.add_nodes_from(range(M))
        rows, cols = np.nonzero(off + self.D.total > 0.0)
        support.add_edges_from(zip(rows.tolist(), cols.tolist()))
        if not nx.is_strongly_connected(support):
            raise ReducibleChainError(f"C + D of {self.name} is reducible")
        if self.lam <= 0.0:
            raise DistributionError(f"arrival rate of {self.name} is {self.lam!r}, not positive")

    @classmethod
    def poisson(cls, rate, name="poisson"):
        return cls([[-rate]], MatrixSeq([[[rate]]], 1), name=name)

    @classmethod
    def from_blocks(cls, C, D, tail=None, name="bmap"):
        """
        ``D`` lists D(1), D(2), ...; ``tail`` continues them as a rank-one
        parametric tail.
        """
        return cls(C, MatrixSeq(np.asarray(D, dtype=float), 1, tail=tail), name=name)

    @property
    def M(self):
        return self.C.shape[0]

    @cached_property
    def theta(self):
        return float(np.max(np.abs(np.diag(self.C))))

    @cached_property
    def generator(self):
        return self.C + self.D.total

    @cached_property
    def varpi(self):
        return gth_stationary(np.eye(self.M) + self.generator / self.theta)

    @cached_property
    def lam(self):
        """
        Mean arrival rate of customers
        """
        return float(self.varpi @ self.D.first_moment @ np.ones(self.M))

    @cached_property
    def lam_G(self):
        """
        Mean arrival rate of batches
        """
        return float(self.varpi @ self.D.total @ np.ones(self.M))

    @property
    def single_arrivals(self):
        return self.D.tail is None and self.D.k_max == 1


@dataclass(frozen=True, eq=False)
class QueueModel:
    bmap: Bmap
    service: object
    name: str = "bmap-queue"

    def __post_init__(self):
        if not math.isfinite(self.service.mean) or self.service.mean <= 0.0:
            raise DistributionError(f"service law {self.service.name} needs a finite positive mean")
        if self.rho >= 1.0:
            raise UnstableChainError(f"load rho = {self.rho!r} >= 1: the queue is unstable")

    @property
    def h(self):
        return self.service.mean

    @property
    def rho(self):
        return self.bmap.lam * self.service.mean


def batch_distributions(b):
    """
    (G, G_de): the batch size seen by the batch stream and its discretized
    equilibrium law, with P(G_de > k) = varpi D-double-bar(k) e / lambda.
    """
    if b.lam_G <= 0.0:
        raise DistributionError(f"batch rate of {b.name} is zero")
    e = np.ones(b.M)
    head = np.concatenate(([0.0], b.varpi @ b.D.blocks @ e / b.lam_G))
    if b.D.tail is None:
        G = DiscreteDist.finite(head)
    else:
        coefficient = float(b.varpi @ b.D.tail.v) * b.D.tail.w.sum() / b.lam_G
        G = DiscreteDist.spliced(head, coefficient, b.D.tail.dist)
    expected = b.lam / b.lam_G
    if abs(G.mean - expected) > 1e-10 * max(1.0, expected):
        raise ConvergenceError(
            f"mean batch size {G.mean!r} differs from lambda / lambda_G = {expected!r}",
            residual=abs(G.mean - expected),
        )
    return G, discretized_equilibrium(G)


def uniformize(b):
    """
    Lambda(0) = I + C / theta and Lambda(k) = D(k) / theta, stochastic in total.
    """
    theta = b.theta
    scale = np.eye(b.M) / theta
    blocks = np.concatenate(((np.eye(b.M) + b.C / theta)[None], b.D.blocks / theta))
    tail = None if b.D.tail is None else b.D.tail.left(scale)
    return MatrixSeq(blocks, 0, tail=tail)


# ---------------------------------------------------------------------------
# Kernels


@dataclass(frozen=True, eq=False)
class Kernels:
    P: MatrixSeq
    Pe: MatrixSeq
    method: str
    terms: int = 0

    @property
    def horizon(self):
        return self.P.k_max


def _closed_kernel(seq, total, moment):
    """
    A kernel head with the exact total and first moment of the full kernel.
    """
    head = seq.blocks
    K = head.shape[0] - 1
    residual = np.maximum(total - head.sum(axis=0), 0.0)
    moment_left = moment - np.tensordot(np.arange(K + 1), head, axes=1) - K * residual
    if moment_left.min() < -1e-9:
        raise ConvergenceError(
            f"kernel head to level {K} overshoots the first moment by {-moment_left.min()!r}"
        )
    return MatrixSeq(head, 0, residual_mass=residual, residual_moment=np.maximum(moment_left, 0.0))


def _resolvent_kernel(b, rate, K):
    """
    Exponential(rate) service: P(k) (rate I - C) = rate delta_k0 I + sum_j P(k - j) D(j).
    """
    M = b.M
    reach = K if b.D.tail is not None else min(K, b.D.k_max)
    D = b.D.dense(1, max(reach, 1))
    solve = linalg.inv(rate * np.eye(M) - b.C)
    P = np.zeros((K + 1, M, M))
    P[0] = rate * solve
    for k in range(1, K + 1):
        n = min(k, reach)
        P[k] = np.matmul(P[k - n:k][::-1], D[:n]).sum(axis=0) @ solve
    E = rate * linalg.inv(rate * np.eye(M) - b.generator)
    return P, E


def _erlang_moment(E, D1, rate, stages):
    # derivative at z = 1 of E(z)^stages with E(z)' = E D'(1) E / rate
    step = E @ D1 @ E / rate
    out = np.zeros_like(E)
    for j in range(stages):
        out += np.linalg.matrix_power(E, j) @ step @ np.linalg.matrix_power(E, stages - 1 - j)
    return out


def _series_kernel(lam_seq, varpi, service, theta, K, tol, max_terms):
    """
    sum_n gamma_n Lambda^{*n}(k) for k <= K; stops once the weight left,
    times the mass the next powers can still put on [0, K], is below ``tol``.
    Returns the head and its exact-in-the-limit total.
    """
    M = lam_seq.shape[0]
    reach = K if lam_seq.tail is not None else min(K, lam_seq.k_max)
    Lam = lam_seq.dense(0, reach)
    active = [j for j in range(reach + 1) if Lam[j].any()]
    Lam_total = lam_seq.total
    cap = min(max(2 * (K + 1), 256), max_terms)
    weights = service.poisson_weights(theta, cap)
    rest = service.poisson_tail(theta, np.arange(cap + 1))
    V = np.zeros((K + 1, M, M))
    V[0] = np.eye(M)
    T = np.eye(M)
    head = np.zeros_like(V)
    total = np.zeros((M, M))
    n = 0
    while True:
        if n > cap:
            if cap >= max_terms:
                raise ConvergenceError(
                    f"kernel series needs more than {max_terms} terms", residual=float(rest[-1])
                )
            cap = min(2 * cap, max_terms)
            weights = service.poisson_weights(theta, cap)
            rest = service.poisson_tail(theta, np.arange(cap + 1))
        head += weights[n] * V
        total += weights[n] * T
        live = float(V.sum(axis=(0, 2)).max())
        if rest[n] < tol or rest[n] * live < tol:
            break
        nonzero = np.flatnonzero(V.any(axis=(1, 2)))
        start = int(nonzero[0]) if nonzero.size else K + 1
        nxt = np.zeros_like(V)
        for j in active:
            if start + j > K:
                break
            nxt[start + j:] += np.matmul(V[start:K + 1 - j], Lam[j])
        V = nxt
        T = T @ Lam_total
        n += 1
    total += rest[n] * np.outer(np.ones(M), varpi)
    logger.debug(f"Kernel series for {service.name}: {n + 1} terms, weight left {rest[n]!r}")
    return head, total, n + 1


def compute_kernels(m, K, tol=SERIES_TOL, max_terms=SERIES_MAX_TERMS):
    """
    P(k) and Pe(k) for k <= K with their totals and the first moment of P.
    Exponential and Erlang service use exact resolvents, every other law
    the uniformized series.
    """
    b, H = m.bmap, m.service
    M = b.M
    D1 = b.D.first_moment
    kind = H.kind
    if kind is ServiceKind.EXPONENTIAL:
        rate = H.params["rate"]
        P, E = _resolvent_kernel(b, rate, K)
        moment = _erlang_moment(E, D1, rate, 1)
        kernel = _closed_kernel(MatrixSeq(P, 0), E, moment)
        result = Kernels(P=kernel, Pe=kernel, method="resolvent")
    elif kind is ServiceKind.ERLANG:
        rate, stages = H.params["rate"], H.params["shape"]
        P1, E = _resolvent_kernel(b, rate, K)
        stage = _closed_kernel(MatrixSeq(P1, 0), E, _erlang_moment(E, D1, rate, 1))
        powers = [stage]
        for _ in range(stages - 1):
            powers.append(convolve(powers[-1], stage, horizon=K))
        totals = [np.linalg.matrix_power(E, j) for j in range(1, stages + 1)]
        P = _closed_kernel(powers[-1], totals[-1], _erlang_moment(E, D1, rate, stages))
        mix_head = sum(p.blocks for p in powers) / stages
        mix_total = sum(totals) / stages
        Pe = MatrixSeq(mix_head, 0, residual_mass=np.maximum(mix_total - mix_head.sum(axis=0), 0.0))
        result = Kernels(P=P, Pe=Pe, method="resolvent")
    else:
        lam_seq = uniformize(b)
        head, total, terms = _series_kernel(lam_seq, b.varpi, H, b.theta, K, tol, max_terms)
        He = H.equilibrium()
        e_head, e_total, e_terms = _series_kernel(lam_seq, b.varpi, He, b.theta, K, tol, max_terms)
        Pe = MatrixSeq(e_head, 0, residual_mass=np.maximum(e_total - e_head.sum(axis=0), 0.0))
        P = _row_closure(head, total, m.h * Pe.total @ D1 @ np.ones(M))
        result = Kernels(P=P, Pe=Pe, method="uniformized-series", terms=terms + e_terms)
    logger.info(f"Kernels of {m.name} to level {K} by {result.method}")
    return result


def _row_closure(head, total, row_moment):
    """
    Residual moment known only through its row sums: spread each row like
    the residual mass of that row.
    """
    K = head.shape[0] - 1
    residual = np.maximum(total - head.sum(axis=0), 0.0)
    left = row_moment - np.tensordot(np.arange(K + 1), head, axes=1).sum(axis=1) - K * residual.sum(axis=1)
    if left.min() < -1e-9:
        raise ConvergenceError(f"kernel head overshoots the first moment by {-left.min()!r}")
    mass = residual.sum(axis=1, keepdims=True)
    shares = np.divide(residual, mass, out=np.zeros_like(residual), where=mass > 0.0)
    return MatrixSeq(
        head, 0, residual_mass=residual, residual_moment=shares * np.maximum(left, 0.0)[:, None]
    )


@dataclass(frozen=True, eq=False)
class PeIdentityReport:
    ks: np.ndarray
    residuals: np.ndarray
    sup: float
    bound: float


def check_pe_identity(m, kernels, K=None, bound=1e-9):
    """
    P-bar(k) e = h (Pe * D-bar)(k) e on 0 <= k <= K.
    """
    K = kernels.horizon if K is None else int(K)
    if K > kernels.horizon:
        raise HorizonError(f"identity check to {K} beyond the kernel horizon {kernels.horizon}")
    e = np.ones(m.bmap.M)
    ks = np.arange(0, K + 1)
    lhs = kernels.P.overline(ks) @ e
    d_bar = MatrixSeq(m.bmap.D.overline(ks), 0)
    rhs = m.h * convolve(kernels.Pe, d_bar, horizon=K).dense(0, K) @ e
    residuals = np.abs(lhs - rhs).max(axis=1)
    sup = float(residuals.max())
    logger.info(f"Pe identity on [0, {K}]: sup residual {sup!r}")
    if sup > bound:
        raise ConvergenceError(f"Pe identity residual {sup!r} exceeds {bound!r}", residual=sup)
    return PeIdentityReport(ks=ks, residuals=residuals, sup=sup, bound=bound)


def check_pe_stationarity(m, kernels, bound=1e-10):
    """
    varpi Pe^(1) = varpi
    """
    varpi = m.bmap.varpi
    gap = float(np.abs(varpi @ kernels.Pe.total - varpi).max())
    if gap > bound:
        raise ConvergenceError(f"varpi Pe(1) differs from varpi by {gap!r}", residual=gap)
    return gap


def embed_mg1(m, kernels):
    """
    A(k) = P(k + 1) for k >= -1, B(k) = P(k) for k >= 0 and B(-1) = P(0).
    """
    P = kernels.P
    chain = Gig1Chain(
        B0=P.at(0),
        B_up=P.from_level(1),
        B_down=P.at(0)[None],
        A=P.shifted(-1),
        name=m.name,
    )
    return chain


@dataclass(frozen=True, eq=False)
class QueueSolution:
    model: QueueModel
    kernels: Kernels
    chain: Gig1Chain
    solution: object
    report: object

    @property
    def sigma(self):
        return self.report.sigma


def solve_queue(m, K, tol=1e-12, margin=None, attempts=4):
    """
    Stationary queue length to level K through the embedded chain. The
    kernels reach beyond K by a margin that doubles whenever the solver
    asks for levels past it.
    """
    margin = margin or max(256, K // 2)
    for _ in range(attempts):
        kernels = compute_kernels(m, K + margin)
        chain = embed_mg1(m, kernels)
        try:
            report = validate(chain)
            gap = abs(report.sigma - (m.rho - 1.0))
            if gap > 1e-8:
                logger.warning(f"Embedded drift {report.sigma!r} differs from rho - 1 by {gap!r}")
            sol = stationary(chain, K, tol, report)
        except HorizonError as exc:
            margin *= 2
            logger.debug(f"Kernel margin raised to {margin}: {exc}")
            continue
        return QueueSolution(model=m, kernels=kernels, chain=chain, solution=sol, report=report)
    raise HorizonError(f"kernels to level {K + margin} still too short for a solve to {K}")


# ---------------------------------------------------------------------------
# Tail asymptotics


class Regime(Enum):
    """
    Which of batch sizes or service times drives the queue-length tail
    """

    LIGHT_BATCH = "light-batch-dominant"
    SERVICE = "service-dominant"
    CONSISTENT = "consistent-variation"
    MIXED = "mixed"


def corollary_prefactor(m, c):
    """
    varpi c / (1 - rho) * varpi for P-double-bar(k) e ~ c P(Y > k)
    """
    varpi = m.bmap.varpi
    return float(varpi @ np.asarray(c, dtype=float)) / (1.0 - m.rho) * varpi


def batch_tail_coefficient(b):
    """
    d~_G with D-double-bar(k) e ~ d~_G P(G_de > k), available when D(k)
    carries a rank-one tail.
    """
    if b.D.tail is None:
        return None
    v = b.D.tail.v
    return b.lam * v / float(b.varpi @ v)


def hazard_summable(spec, b):
    """
    Whether sum_k exp{Q(k)} D(k) converges. Decidable for finite support
    only; a parametric tail yields a HEURISTIC verdict.
    """
    if b.D.tail is None:
        return True, True
    z = b.D.tail.dist
    return bool(spec.summable(z)), False


def queue_tail_asymptote(m, regime, d_G=None, d_H=None, hazard=None):
    """
    Prefactor and reference tail of P(L > k, J = i) in the selected regime.
    Regime hypotheses are taken as assertions and recorded as flags.
    """
    regime = Regime(regime)
    b, H = m.bmap, m.service
    rho, varpi = m.rho, b.varpi
    flags = []
    if regime in (Regime.LIGHT_BATCH, Regime.MIXED):
        d_G = batch_tail_coefficient(b) if d_G is None else np.asarray(d_G, dtype=float)
        if d_G is None:
            raise AssumptionError(f"regime {regime.value} needs the batch tail coefficient d_G")
        if abs(float(varpi @ d_G) - b.lam) > 1e-8 * b.lam:
            raise AssumptionError(f"varpi d_G = {float(varpi @ d_G)!r} differs from lambda = {b.lam!r}")
        _, Y = batch_distributions(b)
        if regime is Regime.LIGHT_BATCH and not H.light_tailed:
            raise AssumptionError(f"service law {H.name} is heavy-tailed; the light-batch regime needs light tails")
        if regime is Regime.MIXED:
            flags.extend(_domination_flags(m, Y))
        prefactor = rho / (1.0 - rho) * varpi
    else:
        if H.light_tailed:
            raise AssumptionError(f"service law {H.name} is light-tailed; regime {regime.value} needs a heavy tail")
        Y = SampledTail(H.equilibrium(), b.lam)
        if regime is Regime.CONSISTENT:
            if d_H is None:
                raise AssumptionError("the consistent-variation regime needs the coefficient d_H")
            d_H = np.asarray(d_H, dtype=float)
            prefactor = (rho + m.h * float(varpi @ d_H)) / (1.0 - rho) * varpi
            flags.append("HEURISTIC: proportionality of D-double-bar(k) e to He-bar(k/lambda) is asserted")
        else:
            prefactor = rho / (1.0 - rho) * varpi
            if hazard is not None:
                holds, decided = hazard_summable(hazard, b)
                if not holds:
                    flags.append("hazard summability of D(k) fails")
                elif not decided:
                    flags.append("HEURISTIC: hazard summability of D(k) judged from its tail law")
    for flag in flags:
        logger.warning(f"{m.name}, regime {regime.value}: {flag}")
    return TailPrediction(prefactor=prefactor, Y=Y, sigma=rho - 1.0, flags=tuple(flags))


def _domination_flags(m, G_de, window=None):
    ks = ratio_window(100, 10_000, 12) if window is None else np.asarray(window)
    He = m.service.equilibrium()
    ratios = He.tail(ks / m.bmap.lam) / G_de.tail(ks)
    if np.all(np.diff(ratios) <= 0.0) and ratios[-1] < ratios[0]:
        return []
    return ["HEURISTIC: He-bar(k/lambda) = o(P(G_de > k)) is not apparent on the window"]


@dataclass(frozen=True, eq=False)
class KernelTailReport:
    """
    Kernel tails against He-bar(k/lambda). HEURISTIC.
    """

    ks: np.ndarray
    pe_ratios: np.ndarray
    pe_limit: np.ndarray
    p_double_ratios: np.ndarray
    p_double_limit: np.ndarray
    batch_ratios: np.ndarray = field(default=None)
    heuristic: bool = True


def kernel_tail_report(m, kernels, ks=None):
    b = m.bmap
    e = np.ones(b.M)
    if ks is None:
        ks = ratio_window(10, kernels.horizon, 20)
    ks = np.asarray(ks, dtype=np.int64)
    if ks.max() > kernels.horizon:
        raise HorizonError(f"kernel window reaches {int(ks.max())} beyond {kernels.horizon}")
    reference = SampledTail(m.service.equilibrium(), b.lam).tail(ks) if not m.service.light_tailed else None
    batch_ratios = None
    if b.D.tail is not None:
        _, G_de = batch_distributions(b)
        batch_ratios = np.abs(kernels.Pe.overline(ks)).max(axis=(1, 2)) / G_de.tail(ks)
    if reference is None:
        return KernelTailReport(
            ks=ks,
            pe_ratios=np.empty((0,)),
            pe_limit=np.outer(e, b.varpi),
            p_double_ratios=np.empty((0,)),
            p_double_limit=m.rho * e,
            batch_ratios=batch_ratios,
        )
    pe_ratios = kernels.Pe.overline(ks) / reference[:, None, None]
    p_double = kernels.P.double_overline(ks) @ e / reference[:, None]
    return KernelTailReport(
        ks=ks,
        pe_ratios=pe_ratios,
        pe_limit=np.outer(e, b.varpi),
        p_double_ratios=p_double,
        p_double_limit=m.rho * e,
        batch_ratios=batch_ratios,
    )


def service_membership(m, grid=None, mu=2.0):
    """
    HEURISTIC class diagnostic of He sampled at k / lambda
    """
    if grid is None:
        grid = ratio_window(10, 100_000, 30)
    return class_diagnostic(
        SampledTail(m.service.equilibrium(), m.bmap.lam), TailClass.HIGHER_ORDER_LONG_TAILED, grid, mu=mu
    )

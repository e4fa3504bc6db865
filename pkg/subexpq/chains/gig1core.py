"""
GI/G/1-type Markov chains without disasters.

Levels 1, 2, ... are homogeneous with blocks ``A(k)`` (``k >= -b_max``),
level 0 is the boundary with blocks ``B(0)``, ``B(k)`` (``k >= 1``) and
``B(-k)`` (``1 <= k <= b_max``). Downward jumps are bounded by ``b_max``.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np
from loguru import logger
from scipy import linalg

from ..errors import (
    ConvergenceError,
    ModelValidationError,
    ReducibleChainError,
    StochasticityError,
    UnstableChainError,
)
from .blockseq import MatrixSeq, convolution_tails, convolve, nfold_geometric_sum


@dataclass(frozen=True, eq=False)
class Gig1Chain:
    B0: np.ndarray
    B_up: MatrixSeq
    B_down: np.ndarray
    A: MatrixSeq
    name: str = "gig1"

    def __post_init__(self):
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        B_down = np.asarray(self.B_down, dtype=float)
        if B_down.ndim == 2:
            B_down = B_down[None]
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "B_down", B_down)
        m0, m = B0.shape[0], self.A.shape[0]
        if B0.shape != (m0, m0):
            raise ModelValidationError(f"B(0) must be square, got {B0.shape}")
        if self.A.shape != (m, m):
            raise ModelValidationError(f"A blocks must be square, got {self.A.shape}")
        if self.B_up.shape != (m0, m):
            raise ModelValidationError(f"B(k) blocks must be {m0}x{m}, got {self.B_up.shape}")
        if B_down.ndim != 3 or B_down.shape[1:] != (m, m0) or B_down.shape[0] == 0:
            raise ModelValidationError(f"B(-k) blocks must be {m}x{m0}, got {B_down.shape}")
        if self.B_up.k_min < 1:
            raise ModelValidationError("B(k) starts at level 1")
        if self.A.k_min < -self.b_max:
            raise ModelValidationError(
                f"A reaches level {self.A.k_min}, below the deepest boundary jump {-self.b_max}"
            )
        if np.any(B0 < 0.0) or np.any(B_down < 0.0):
            raise ModelValidationError("boundary blocks must be nonnegative")

    @property
    def M0(self):
        return self.B0.shape[0]

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def b_max(self):
        return self.B_down.shape[0]

    def B(self, k):
        if k == 0:
            return self.B0
        if k < 0:
            return self.B_down[-k - 1]
        return self.B_up.at(k)


def gth_stationary(P):
    """
    Stationary vector of an irreducible stochastic matrix by the
    Grassmann-Taksar-Heyman elimination (no subtractions).
    """
    P = np.array(P, dtype=float)
    n = P.shape[0]
    for k in range(n - 1, 0, -1):
        mass = P[k, :k].sum()
        if mass <= 0.0:
            raise ReducibleChainError(f"state {k} cannot reach the states before it")
        P[:k, k] /= mass
        P[:k, :k] += np.outer(P[:k, k], P[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ P[:k, k]
    return x / x.sum()


def _support_graph(matrix):
    graph = nx.DiGraph()
    graph.add_nodes_from(range(matrix.shape[0]))
    rows, cols = np.nonzero(matrix > 0.0)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


@dataclass(frozen=True, eq=False)
class ValidationReport:
    pi: np.ndarray
    sigma: float
    rowsum_error: float
    window_irreducible: bool
    flags: tuple = ()


def _rowsum_error(chain):
    e0 = np.ones(chain.M0)
    e = np.ones(chain.M)
    errors = [np.abs(chain.B0 @ e0 + chain.B_up.total @ e - 1.0).max()]
    errors.append(np.abs(chain.A.total @ e - 1.0).max())
    for depth in range(1, chain.b_max + 1):
        above = chain.A.overline([-depth])[0]
        errors.append(np.abs(chain.B(-depth) @ e0 + above @ e - 1.0).max())
    return float(max(errors))


def _window_irreducible(chain):
    # levels beyond the window are folded onto its top level
    b = chain.b_max
    top = 2 * (b + min(max(chain.A.k_max, 1), 16)) + 4
    M0, M = chain.M0, chain.M

    def node(level, phase):
        return (min(level, top), phase)

    graph = nx.DiGraph()
    graph.add_nodes_from((0, i) for i in range(M0))
    graph.add_nodes_from((lvl, i) for lvl in range(1, top + 1) for i in range(M))
    reach = top + 2
    reach_A = min(reach, chain.A.k_max) if chain.A.truncated else reach
    reach_B = min(reach, chain.B_up.k_max) if chain.B_up.truncated else reach
    for k in range(1, reach_B + 1):
        for i, j in zip(*np.nonzero(chain.B_up.at(k) > 0.0)):
            graph.add_edge((0, i), node(k, j))
    for i, j in zip(*np.nonzero(chain.B0 > 0.0)):
        graph.add_edge((0, i), (0, j))
    for level in range(1, top + 1):
        if level <= b:
            for i, j in zip(*np.nonzero(chain.B(-level) > 0.0)):
                graph.add_edge((level, i), (0, j))
        for k in range(max(chain.A.k_min, 1 - level), reach_A + 1):
            for i, j in zip(*np.nonzero(chain.A.at(k) > 0.0)):
                graph.add_edge((level, i), node(level + k, j))
    return nx.is_strongly_connected(graph)


def validate(chain, tol=1e-10):
    """
    Check stochasticity, irreducibility and stability; return pi and the mean drift.

    Raises :class:`StochasticityError`, :class:`ReducibleChainError` or
    :class:`UnstableChainError`.
    """
    error = _rowsum_error(chain)
    if error > tol:
        raise StochasticityError(f"row sums deviate from 1 by {error!r} (tolerance {tol!r})")
    A_total = chain.A.total
    if not nx.is_strongly_connected(_support_graph(A_total)):
        raise ReducibleChainError("the phase process A = sum_k A(k) is reducible")
    pi = gth_stationary(A_total)
    sigma = float(pi @ chain.A.first_moment @ np.ones(chain.M))
    if sigma >= 0.0:
        raise UnstableChainError(
            f"mean drift sigma = {sigma!r} >= 0: the chain is not positive recurrent"
        )
    flags = []
    window_ok = _window_irreducible(chain)
    if not window_ok:
        flags.append("HEURISTIC: transition graph on a folded level window is not strongly connected")
        logger.warning(f"Chain {chain.name}: folded level window is not strongly connected")
    logger.info(f"Chain {chain.name} validated: sigma={sigma!r}, row-sum error {error!r}")
    return ValidationReport(
        pi=pi, sigma=sigma, rowsum_error=error, window_irreducible=window_ok, flags=tuple(flags)
    )


# ---------------------------------------------------------------------------
# First passage


@dataclass(frozen=True, eq=False)
class FirstPassageBundle:
    """
    ``G`` is the block row [G(1) ... G(b)]. ``U[n]`` is the landing law
    (block d = landing d levels below the base) of a first passage below a
    base level started n levels above it, for n = 0..window.
    """

    G: np.ndarray
    Phi0: np.ndarray
    U: np.ndarray
    U_limit: np.ndarray
    window: int
    iterations: int
    residual: float
    b_max: int

    @property
    def M(self):
        return self.Phi0.shape[0]

    def G_block(self, k):
        M = self.M
        return self.G[:, (k - 1) * M:k * M]

    def landings(self, n_max):
        if n_max <= self.window:
            return self.U[: n_max + 1]
        return _landings(self.G, self.b_max, n_max)

    def L(self, m):
        """
        L(m) for m >= 1: from m levels above a level, the first visit at or
        below it lands exactly on it
        """
        return self.landings(m - 1)[m - 1][:, : self.M]


def _landings(G, b, n_max):
    M = G.shape[0]
    U = np.zeros((n_max + 1, M, b * M))
    blocks = [G[:, (j - 1) * M:j * M] for j in range(1, b + 1)]
    for n in range(n_max + 1):
        acc = U[n]
        for j, Gj in enumerate(blocks, start=1):
            if j <= n:
                acc += Gj @ U[n - j]
            else:
                depth = j - n
                acc[:, (depth - 1) * M:depth * M] += Gj
    return U


def _landing_sums(block_fn, tail_fn, offsets, U, U_limit):
    """
    sum_{m >= 1} S(s + m) U[m - 1] for every s in ``offsets``; terms beyond
    the stored window use the limiting landing law.
    """
    offsets = np.atleast_1d(np.asarray(offsets, dtype=np.int64))
    J = U.shape[0] - 1
    lo = int(offsets.min()) + 1
    S = block_fn(np.arange(lo, int(offsets.max()) + J + 2))
    out = np.zeros((offsets.size, S.shape[1], U.shape[2]))
    index = offsets - lo
    for m in range(1, J + 2):
        out += np.matmul(S[index + m], U[m - 1])
    out += np.matmul(tail_fn(offsets + J + 1), U_limit)
    return out


def first_passage(chain, tol=1e-12, window=None, max_iter=100_000, max_window=1 << 15):
    """
    G(k), Phi(0) and the landing laws by value iteration on the first-passage
    equations over a window of levels; the window doubles until the levels
    beyond it no longer matter at tolerance ``tol``.
    """
    M, b = chain.M, chain.b_max
    A = chain.A
    down = np.concatenate([A.at(-d) for d in range(1, b + 1)], axis=1)
    bounded = A.tail is None and not A.truncated
    if window is not None:
        J = int(window)
    elif bounded:
        J = max(A.k_max, 1)
    else:
        J = max(4 * b, 32)
    if A.truncated:
        J = min(J, A.k_max)
    G = np.zeros((M, b * M))
    iterations = 0
    delta = math.inf
    while True:
        up = A.dense(0, J)
        rest = A.overline([J])[0]
        for _ in range(max_iter):
            U = _landings(G, b, J)
            G_next = down + np.matmul(up, U).sum(axis=0) + rest @ U[J]
            delta = float(np.abs(G_next - G).max())
            G = G_next
            iterations += 1
            if delta < tol:
                break
        else:
            raise ConvergenceError(
                f"first passage did not converge within {max_iter} iterations", residual=delta
            )
        U = _landings(G, b, J)
        lags = range(1, min(J, 8) + 1)
        spread = max((float(np.abs(U[J] - U[J - j]).max()) for j in lags), default=0.0)
        remainder = float(rest.sum(axis=1).max()) * spread
        if bounded or window is not None or remainder < tol:
            break
        if A.truncated and J >= A.k_max:
            logger.warning(f"First passage window capped at the kernel horizon {J}")
            break
        if 2 * J > max_window:
            raise ConvergenceError(
                f"first passage window exceeded {max_window} levels", residual=remainder
            )
        J = min(2 * J, A.k_max) if A.truncated else 2 * J
        logger.debug(f"First passage window doubled to {J} (remainder {remainder!r})")
    U_limit = U[J]
    Phi0 = A.at(0) + _landing_sums(A.blocks_at, A.overline, [0], U, U_limit)[0][:, :M]
    stochastic = float(np.abs(G.sum(axis=1) - 1.0).max())
    logger.info(
        f"First passage converged: window {J}, {iterations} iterations, "
        f"|G e - e| = {stochastic!r}"
    )
    return FirstPassageBundle(
        G=G,
        Phi0=Phi0,
        U=U,
        U_limit=U_limit,
        window=J,
        iterations=iterations,
        residual=delta,
        b_max=b,
    )


def first_passage_oracle(chain, nu, levels=200):
    """
    [G(1) ... G(b)] below level ``nu`` by a direct absorbing-chain solve on
    levels nu..nu+levels (jumps beyond the top are folded onto it).
    Needs nu > b_max so that every landing level is homogeneous.
    """
    M, b = chain.M, chain.b_max
    if nu <= b:
        raise ModelValidationError(f"oracle level must exceed b_max={b}, got {nu}")
    size = (levels + 1) * M
    Q = np.zeros((size, size))
    R = np.zeros((size, b * M))
    for i in range(levels + 1):
        rows = slice(i * M, (i + 1) * M)
        for k in range(-b, levels - i + 1):
            target = i + k
            block = chain.A.at(k)
            if target < 0:
                depth = -target
                R[rows, (depth - 1) * M:depth * M] += block
            else:
                Q[rows, target * M:(target + 1) * M] += block
        Q[rows, levels * M:] += chain.A.overline([levels - i])[0]
    V = linalg.solve(np.eye(size) - Q, R)
    return V[:M]


# ---------------------------------------------------------------------------
# R matrices and the stationary vector


@dataclass(frozen=True, eq=False)
class RMatrices:
    R: MatrixSeq
    R0: MatrixSeq
    R_total: np.ndarray
    R0_total: np.ndarray
    radius: float
    inverse: np.ndarray


def _inverse_phi(fp):
    system = np.eye(fp.M) - fp.Phi0
    if np.linalg.cond(system) > 1e13:
        raise ConvergenceError("I - Phi(0) is numerically singular")
    return linalg.inv(system)


def r_matrices(chain, fp, K):
    """
    R(k) and R0(k) for 1 <= k <= K, plus their exact totals.
    """
    M = chain.M
    inverse = _inverse_phi(fp)
    ks = np.arange(1, K + 1)
    U, U_limit = fp.U, fp.U_limit

    def assemble(seq):
        landing = _landing_sums(seq.blocks_at, seq.overline, ks, U, U_limit)[:, :, :M]
        head = np.matmul(seq.blocks_at(ks) + landing, inverse)
        landing_total = _landing_sums(seq.overline, seq.double_overline, [0], U, U_limit)[0]
        total = (seq.overline([0])[0] + landing_total[:, :M]) @ inverse
        residual = np.maximum(total - head.sum(axis=0), 0.0)
        return MatrixSeq(head, 1, residual_mass=residual), total

    R, R_total = assemble(chain.A)
    R0, R0_total = assemble(chain.B_up)
    radius = float(np.max(np.abs(linalg.eigvals(R_total))))
    logger.info(f"R matrices to level {K}: spectral radius of R = {radius!r}")
    return RMatrices(R=R, R0=R0, R_total=R_total, R0_total=R0_total, radius=radius, inverse=inverse)


class TopBoundary(Enum):
    """
    How jumps beyond the last level of a finite window are handled
    """

    AUGMENT = "augment"
    CENSOR = "censor"


def _eliminate(chain, N, top, fp=None):
    """
    Block GTH elimination of levels 0, 1, ..., N-1 followed by back
    substitution. Only b_max rows below the pivot are ever touched.
    Returns the unnormalized level vectors x(0), ..., x(N).
    """
    M0, M, b = chain.M0, chain.M, chain.b_max
    A, B_up = chain.A, chain.B_up
    width = M0 + N * M

    def offset(level):
        return 0 if level == 0 else M0 + (level - 1) * M

    A_dense = A.dense(-b, N)
    if top is TopBoundary.AUGMENT:
        A_rest = A.overline(np.arange(0, N))
        B_rest = B_up.overline([N])[0]
    else:
        C_A = _landing_sums(A.blocks_at, A.overline, np.arange(0, N), fp.U, fp.U_limit)
        C_B = _landing_sums(B_up.blocks_at, B_up.overline, [N], fp.U, fp.U_limit)[0]

    def censored(row, landing):
        for d in range(1, b + 1):
            lvl = N + 1 - d
            row[:, offset(lvl):offset(lvl) + M] += landing[:, (d - 1) * M:d * M]

    def fresh_row(r):
        if r == 0:
            row = np.zeros((M0, width))
            row[:, :M0] = chain.B0
            row[:, M0:] = B_up.dense(1, N).transpose(1, 0, 2).reshape(M0, N * M)
            if top is TopBoundary.AUGMENT:
                row[:, offset(N):] += B_rest
            else:
                censored(row, C_B)
            return row
        row = np.zeros((M, width))
        lo = max(1, r - b)
        blocks = A_dense[lo - r + b:N - r + b + 1]
        row[:, offset(lo):] = blocks.transpose(1, 0, 2).reshape(M, -1)
        if r <= b:
            row[:, :M0] = chain.B(-r)
        if top is TopBoundary.AUGMENT:
            row[:, offset(N):] += A_rest[N - r]
        else:
            censored(row, C_A[N - r])
        return row

    active = {0: fresh_row(0)}
    pivots, columns = [], []
    for n in range(N):
        for r in range(n + 1, min(n + b, N) + 1):
            if r not in active:
                active[r] = fresh_row(r)
        row = active.pop(n)
        c0, c1 = offset(n), offset(n + 1)
        block = row[:, c0:c1]
        system = -block.copy()
        np.fill_diagonal(system, row[:, c1:].sum(axis=1) + block.sum(axis=1) - np.diag(block))
        pivot = linalg.inv(system)
        rest = pivot @ row[:, c1:]
        below = {}
        for r in range(n + 1, min(n + b, N) + 1):
            link = active[r][:, c0:c1].copy()
            below[r] = link
            active[r][:, c1:] += link @ rest
        pivots.append(pivot)
        columns.append(below)
    final = active[N][:, offset(N):]
    xs = [None] * (N + 1)
    xs[N] = gth_stationary(final / final.sum(axis=1, keepdims=True))
    for n in range(N - 1, -1, -1):
        acc = sum(xs[r] @ link for r, link in columns[n].items())
        xs[n] = acc @ pivots[n]
    return xs


@dataclass(frozen=True, eq=False)
class BoundaryVector:
    x0: np.ndarray
    window: int
    change: float


def boundary_vector(chain, fp, tol=1e-10, start=None, max_window=1 << 14):
    """
    Direction of x(0) from the chain censored on levels [0, N], exact up to
    the first-passage tolerance; N doubles until x(0) settles.
    """
    N = start or max(2 * chain.b_max + 2, 16)
    previous = None
    while True:
        x0 = _eliminate(chain, N, TopBoundary.CENSOR, fp)[0]
        x0 = x0 / x0.sum()
        if previous is not None:
            change = float(np.abs(x0 - previous).sum())
            if change < tol:
                logger.debug(f"Boundary vector settled on window {N} (change {change!r})")
                return BoundaryVector(x0=x0, window=N, change=change)
        if 2 * N > max_window:
            raise ConvergenceError(f"boundary vector did not settle within {max_window} levels")
        previous = x0
        N *= 2


class SolutionMethod(Enum):
    MATRIX_ANALYTIC = "matrix-analytic"
    TRUNCATED = "truncated-solve"


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """
    ``x[k - 1]`` holds x(k) for 1 <= k <= K and ``xbar[k]`` holds
    sum_{l > k} x(l) for 0 <= k <= K.
    """

    x0: np.ndarray
    x: np.ndarray
    xbar: np.ndarray
    mass_deficit: float
    method: SolutionMethod
    flags: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.x.shape[0]

    @property
    def xbar0(self):
        return self.xbar[0]

    def level(self, k):
        return self.x0 if k == 0 else self.x[k - 1]

    def level_mass(self):
        return np.concatenate(([self.x0.sum()], self.x.sum(axis=1)))

    def tail_mass(self, ks):
        return self.xbar[np.asarray(ks)].sum(axis=-1)


def stationary(chain, K, tol=1e-12, report=None):
    """
    x(k) = x(0) R0 * F(k) for k <= K and x-bar(0) = x(0) R0 (I - R)^{-1}.
    """
    report = report or validate(chain)
    fp = first_passage(chain, tol)
    rm = r_matrices(chain, fp, K)
    bv = boundary_vector(chain, fp)
    F = nfold_geometric_sum(rm.R, tol=tol, max_level=K)
    inverse = linalg.inv(np.eye(chain.M) - rm.R_total)
    x0 = bv.x0[None, :]
    y = rm.R0.left_multiply(x0)
    x = convolve(y, F, horizon=K)
    xbar0 = x0 @ rm.R0_total @ inverse
    norm = float(x0.sum() + xbar0.sum())
    xbar = convolution_tails(y, F, np.arange(0, K + 1))[:, 0, :] / norm
    levels = x.dense(1, K)[:, 0, :] / norm
    deficit = float(xbar[K].sum())
    flags = list(report.flags)
    gap = abs(float(xbar[0].sum()) - float(xbar0.sum()) / norm)
    if gap > 1e-10:
        flags.append(f"tail at level 0 differs from the closed form by {gap!r}")
    logger.info(f"Stationary solution to level {K}: mass deficit {deficit!r}")
    return StationarySolution(
        x0=bv.x0 / norm,
        x=levels,
        xbar=xbar,
        mass_deficit=deficit,
        method=SolutionMethod.MATRIX_ANALYTIC,
        flags=tuple(flags),
        diagnostics={
            "sigma": report.sigma,
            "pi": report.pi,
            "first_passage": fp,
            "r_matrices": rm,
            "geometric_sum": F,
            "boundary_window": bv.window,
        },
    )


def truncated_solve(chain, N, deficit_threshold=1e-8):
    """
    Stationary vector of the chain restricted to levels [0, N], jumps beyond
    N redirected to level N in the same phase. The reported mass deficit is
    the stationary flux through those redirected jumps.
    """
    if N < chain.b_max + 2:
        raise ModelValidationError(f"truncation level {N} must be at least b_max + 2")
    try:
        xs = _eliminate(chain, N, TopBoundary.AUGMENT)
    except (linalg.LinAlgError, ReducibleChainError) as exc:
        raise ConvergenceError(f"truncated system is singular: {exc}") from exc
    total = sum(x.sum() for x in xs)
    x0 = xs[0] / total
    levels = np.array(xs[1:]) / total
    rev = np.cumsum(levels[::-1], axis=0)[::-1]
    xbar = np.concatenate((rev, np.zeros((1, chain.M))))
    e = np.ones(chain.M)
    redirected = x0 @ chain.B_up.overline([N])[0] @ e
    overs = chain.A.overline(N - np.arange(1, N + 1)) @ e
    redirected += float(np.einsum("ki,ki->", levels, overs))
    flags = []
    if redirected > deficit_threshold:
        flags.append(f"truncation at {N} redirects {redirected!r} of the flux per step")
        logger.warning(f"Truncated solve at N={N}: redirected flux {redirected!r}")
    return StationarySolution(
        x0=x0,
        x=levels,
        xbar=xbar,
        mass_deficit=float(redirected),
        method=SolutionMethod.TRUNCATED,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Structural constants


@dataclass(frozen=True, eq=False)
class StructuralReport:
    sigma: float
    sigma_prop1: float
    psi: np.ndarray
    period: int
    landing_errors: np.ndarray
    heuristic: bool = True


def _phase_support(A):
    support = {}
    levels = range(A.k_min, A.k_max + 1)
    for k, block in zip(levels, A.blocks):
        for i, j in zip(*np.nonzero(block > 0.0)):
            support.setdefault((int(i), int(j)), set()).add(k)
    extra = None
    if A.tail is not None:
        extra = (A.tail.outer, (A.k_max + 1, A.k_max + 2))
    elif A.truncated:
        extra = (A.residual_mass, (A.k_max + 1,))
    if extra is not None:
        mask, ks = extra
        for i, j in zip(*np.nonzero(mask > 0.0)):
            support.setdefault((int(i), int(j)), set()).update(ks)
    return support


def phase_period(A):
    """
    Period of the Markov additive process driven by A: gcd of the level
    displacements of all phase cycles, via potentials on a BFS tree.
    HEURISTIC for truncated sequences, whose far support is unknown.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(range(A.shape[0]))
    for (i, j), shifts in _phase_support(A).items():
        graph.add_edge(i, j, shifts=sorted(shifts))
    if not nx.is_strongly_connected(graph):
        raise ReducibleChainError("phase support graph is not strongly connected")
    potential = {0: 0}
    for u, v in nx.bfs_edges(graph.to_undirected(as_view=True), 0):
        if graph.has_edge(u, v):
            potential[v] = potential[u] + graph.edges[u, v]["shifts"][0]
        else:
            potential[v] = potential[u] - graph.edges[v, u]["shifts"][0]
    period = 0
    for u, v, shifts in graph.edges(data="shifts"):
        for k in shifts:
            period = math.gcd(period, abs(potential[u] + k - potential[v]))
    return max(period, 1)


def structural_constants(chain, fp, rm, report, n_max=200):
    """
    sigma through the first-passage representation, the vector psi and the
    convergence of period-averaged L(n) towards e psi.
    """
    M, b = chain.M, chain.b_max
    e = np.ones(M)
    pi, sigma = report.pi, report.sigma
    moment = sum(k * fp.G_block(k) for k in range(1, b + 1)) @ e
    weight = pi @ (np.eye(M) - rm.R_total) @ (np.eye(M) - fp.Phi0)
    sigma_prop1 = float(-weight @ moment)
    if abs(sigma_prop1 - sigma) > 1e-6:
        raise ConvergenceError(
            f"drift from first passage {sigma_prop1!r} disagrees with direct drift {sigma!r}",
            residual=abs(sigma_prop1 - sigma),
        )
    psi = weight / (-sigma)
    if not np.all(np.isfinite(psi)):
        raise ConvergenceError("psi is not finite")
    tau = phase_period(chain.A)
    U = fp.landings((n_max + 1) * tau)
    limit = tau * np.outer(e, psi)
    errors = np.array(
        [
            np.abs(sum(U[n * tau + l - 1][:, :M] for l in range(tau)) - limit).max()
            for n in range(1, n_max + 1)
        ]
    )
    logger.info(f"Structural constants: sigma={sigma_prop1!r}, period {tau}")
    return StructuralReport(
        sigma=sigma, sigma_prop1=sigma_prop1, psi=psi, period=tau, landing_errors=errors
    )


def level_independence_check(chain, fp, levels=200):
    """
    Largest gap between the windowed G and the absorbing-chain oracle below
    the first two homogeneous levels.
    """
    b = chain.b_max
    return max(
        float(np.abs(first_passage_oracle(chain, nu, levels) - fp.G).max())
        for nu in (b + 1, b + 2)
    )

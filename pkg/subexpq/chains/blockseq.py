"""
Level-indexed families of nonnegative matrices.

A :class:`MatrixSeq` holds dense blocks on ``[k_min, k_max]`` and describes
what lies beyond ``k_max`` in one of two ways: a rank-one parametric tail
``v w^T pmf_Z(k)``, or (for sequences produced by truncated series) the
exact residual mass and first moment beyond the head.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from loguru import logger
from scipy import linalg

from ..errors import (
    ConvergenceError,
    DistributionError,
    HorizonError,
    ModelValidationError,
    UnstableChainError,
)
from ..heavytail import DiscreteDist, DiscreteKind


@dataclass(frozen=True, eq=False)
class RankOneTail:
    """
    Blocks ``v w^T pmf(k)`` for every level beyond the dense head.
    """

    v: np.ndarray
    w: np.ndarray
    dist: DiscreteDist

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if np.any(v < 0.0) or np.any(w < 0.0):
            raise ModelValidationError("rank-one tail vectors must be nonnegative")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @cached_property
    def outer(self):
        return np.outer(self.v, self.w)

    def left(self, matrix):
        return RankOneTail(matrix @ self.v, self.w, self.dist)


def _nonnegative(array, what):
    if array.size and array.min() < -1e-12:
        raise ModelValidationError(f"{what} has negative entries (min {array.min()!r})")
    return np.maximum(array, 0.0)


@dataclass(frozen=True, eq=False)
class MatrixSeq:
    blocks: np.ndarray
    k_min: int = 0
    tail: Optional[RankOneTail] = None
    residual_mass: Optional[np.ndarray] = None
    residual_moment: Optional[np.ndarray] = None

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim == 2:
            blocks = blocks[None]
        if blocks.ndim != 3 or blocks.shape[0] == 0:
            raise ModelValidationError("a matrix sequence needs a nonempty stack of 2-d blocks")
        object.__setattr__(self, "blocks", _nonnegative(blocks, "matrix sequence"))
        object.__setattr__(self, "k_min", int(self.k_min))
        rows, cols = blocks.shape[1:]
        if self.tail is not None:
            if self.tail.v.size != rows or self.tail.w.size != cols:
                raise ModelValidationError(
                    f"tail vectors of sizes {self.tail.v.size}, {self.tail.w.size} "
                    f"do not match blocks {rows}x{cols}"
                )
            if self.residual_mass is not None:
                raise ModelValidationError("a sequence has either a parametric tail or a residual")
        for name in ("residual_mass", "residual_moment"):
            value = getattr(self, name)
            if value is not None:
                value = _nonnegative(np.asarray(value, dtype=float).reshape(rows, cols), name)
                object.__setattr__(self, name, value)

    @property
    def shape(self):
        return self.blocks.shape[1:]

    @property
    def k_max(self):
        return self.k_min + self.blocks.shape[0] - 1

    @property
    def truncated(self):
        return self.residual_mass is not None

    @property
    def mass_deficit(self):
        if self.residual_mass is None:
            return 0.0
        return float(self.residual_mass.sum(axis=1).max())

    def _horizon(self, levels, what):
        if self.truncated and np.any(levels > self.k_max):
            raise HorizonError(
                f"{what} requested at level {int(levels.max())} beyond the horizon {self.k_max}"
            )

    # ---- blocks ----
    def blocks_at(self, ks):
        ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
        self._horizon(ks, "block")
        rows, cols = self.shape
        out = np.zeros((ks.size, rows, cols))
        inside = (ks >= self.k_min) & (ks <= self.k_max)
        out[inside] = self.blocks[ks[inside] - self.k_min]
        if self.tail is not None:
            beyond = ks > self.k_max
            if beyond.any():
                out[beyond] = self.tail.outer * self.tail.dist.pmf(ks[beyond])[:, None, None]
        return out

    def at(self, k):
        return self.blocks_at([k])[0]

    def dense(self, lo, hi):
        return self.blocks_at(np.arange(lo, hi + 1))

    # ---- sums ----
    @cached_property
    def total(self):
        out = self.blocks.sum(axis=0)
        if self.residual_mass is not None:
            out = out + self.residual_mass
        if self.tail is not None:
            out = out + self.tail.outer * self.tail.dist.tail(self.k_max)
        return out

    @cached_property
    def first_moment(self):
        levels = np.arange(self.k_min, self.k_max + 1)
        out = np.tensordot(levels, self.blocks, axes=1)
        if self.residual_mass is not None:
            if self.residual_moment is None:
                raise HorizonError("first moment of a truncated sequence without residual moment")
            out = out + self.k_max * self.residual_mass + self.residual_moment
        if self.tail is not None:
            z, top = self.tail.dist, self.k_max
            if not np.isfinite(z.mean):
                raise DistributionError(f"tail law {z.name} has infinite mean")
            out = out + self.tail.outer * ((top + 1) * z.tail(top) + z.double_tail(top))
        return out

    @cached_property
    def _bar_head(self):
        # index i <-> level k_min - 1 + i, up to k_max
        rev = np.cumsum(self.blocks[::-1], axis=0)[::-1]
        return np.concatenate((rev, np.zeros((1,) + self.shape)))

    @cached_property
    def _bar_floor(self):
        out = np.zeros(self.shape)
        if self.residual_mass is not None:
            out = out + self.residual_mass
        if self.tail is not None:
            out = out + self.tail.outer * self.tail.dist.tail(self.k_max)
        return out

    @cached_property
    def _dbar_head(self):
        bar = self._bar_head[1:] + self._bar_floor
        rev = np.cumsum(bar[::-1], axis=0)[::-1]
        return np.concatenate((rev, np.zeros((1,) + self.shape))) + self._dbar_top

    @cached_property
    def _dbar_top(self):
        out = np.zeros(self.shape)
        if self.residual_mass is not None:
            if self.residual_moment is None:
                raise HorizonError("double tail of a truncated sequence without residual moment")
            out = out + self.residual_moment - self.residual_mass
        if self.tail is not None:
            z = self.tail.dist
            dt = z.double_tail(self.k_max)
            if not np.isfinite(dt):
                raise DistributionError(f"tail law {z.name} is not summable twice")
            out = out + self.tail.outer * dt
        return out

    def overline(self, ks):
        """
        M-bar(k) = sum_{l > k} M(l), stacked over ``ks``
        """
        ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
        out = np.empty((ks.size,) + self.shape)
        low = ks < self.k_min - 1
        mid = ~low & (ks <= self.k_max)
        high = ks > self.k_max
        out[low] = self.total
        out[mid] = self._bar_head[ks[mid] - self.k_min + 1] + self._bar_floor
        if high.any():
            self._horizon(ks[high], "tail")
            if self.tail is None:
                out[high] = 0.0
            else:
                out[high] = self.tail.outer * self.tail.dist.tail(ks[high])[:, None, None]
        return out

    def double_overline(self, ks):
        """
        sum_{l > k} M-bar(l), stacked over ``ks``
        """
        ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
        out = np.empty((ks.size,) + self.shape)
        low = ks < self.k_min - 1
        mid = ~low & (ks <= self.k_max)
        high = ks > self.k_max
        if low.any():
            gap = (self.k_min - 1 - ks[low]).astype(float)
            out[low] = self._dbar_head[0] + gap[:, None, None] * self.total
        out[mid] = self._dbar_head[ks[mid] - self.k_min + 1]
        if high.any():
            self._horizon(ks[high], "double tail")
            if self.tail is None:
                out[high] = 0.0
            else:
                out[high] = self.tail.outer * self.tail.dist.double_tail(ks[high])[:, None, None]
        return out

    # ---- derived sequences ----
    def left_multiply(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        return MatrixSeq(
            np.matmul(matrix, self.blocks),
            self.k_min,
            tail=None if self.tail is None else self.tail.left(matrix),
            residual_mass=None if self.residual_mass is None else matrix @ self.residual_mass,
            residual_moment=None if self.residual_moment is None else matrix @ self.residual_moment,
        )

    def shifted(self, k_min):
        return MatrixSeq(
            self.blocks, k_min, self.tail, self.residual_mass, self.residual_moment
        )

    def from_level(self, lo):
        """
        The same sequence with every level below ``lo`` dropped
        """
        if lo <= self.k_min:
            return self
        if lo > self.k_max:
            raise HorizonError(f"level {lo} lies beyond the head ending at {self.k_max}")
        return MatrixSeq(
            self.blocks[lo - self.k_min:], lo, self.tail, self.residual_mass, self.residual_moment
        )


def tails(s):
    """
    The overline and double-overline accessors of ``s``
    """
    return s.overline, s.double_overline


def _check_inner(a, b):
    if a.shape[1] != b.shape[0]:
        raise ModelValidationError(
            f"inner dimensions do not agree: {a.shape} against {b.shape}"
        )


def convolve(a, b, horizon=None):
    """
    (a * b)(k) = sum_l a(k - l) b(l), exact on levels up to ``horizon``.

    Without a horizon, finite sequences are convolved completely and
    tailed ones on their heads. Whatever lies beyond the result's head is
    carried as its residual mass.
    """
    _check_inner(a, b)
    lo = a.k_min + b.k_min
    full = a.k_max + b.k_max
    exact = a.tail is None and b.tail is None and not a.truncated and not b.truncated
    hi = full if horizon is None else int(horizon)
    if hi < lo:
        raise HorizonError(f"horizon {hi} lies below the first level {lo}")
    a_blocks = a.dense(a.k_min, hi - b.k_min)
    b_blocks = b.dense(b.k_min, hi - a.k_min)
    out = np.zeros((hi - lo + 1, a.shape[0], b.shape[1]))
    for i, block in enumerate(a_blocks):
        span = hi - lo - i + 1
        if span <= 0:
            break
        out[i:i + span] += np.matmul(block, b_blocks[:span])
    if exact and hi >= full:
        return MatrixSeq(out[: full - lo + 1], lo)
    residual = convolution_tails(a, b, [hi])[0]
    logger.debug(f"Convolution truncated at level {hi} with residual mass {residual.sum()!r}")
    return MatrixSeq(out, lo, residual_mass=residual)


def convolution_tails(a, b, ks):
    """
    Tails of a * b at each level in ``ks``, summed without cancellation:
    sum_{i <= k - b.k_min} a(i) b-bar(k - i) + a-bar(k - b.k_min) sum_l b(l)
    """
    _check_inner(a, b)
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    base = a.k_min + b.k_min
    reach = int(ks.max()) - base
    out = np.zeros((ks.size, a.shape[0], b.shape[1]))
    if reach >= 0:
        a_blocks = a.dense(a.k_min, a.k_min + reach)
        b_bars = b.overline(np.arange(b.k_min, b.k_min + reach + 1))
        for n, k in enumerate(ks):
            span = int(k) - base + 1
            if span > 0:
                out[n] = np.matmul(a_blocks[:span], b_bars[span - 1::-1]).sum(axis=0)
    out += np.matmul(a.overline(ks - b.k_min), b.total)
    return out


def nfold_geometric_sum(r, tol=1e-12, max_level=None, max_iter=1_000_000):
    """
    F(k) = sum_n r^{*n}(k), the solution of F = delta_0 I + r * F.

    With ``max_level`` the head stops at that level; otherwise it grows
    until the mass left beyond it is below ``tol``.
    """
    rows, cols = r.shape
    if rows != cols:
        raise ModelValidationError("geometric sums need square blocks")
    if r.k_min < 0:
        raise ModelValidationError("geometric sums need a sequence on nonnegative levels")
    r_total = r.total
    radius = float(np.max(np.abs(linalg.eigvals(r_total))))
    if radius >= 1.0 - tol:
        raise UnstableChainError(
            f"spectral radius of R is {radius!r} >= 1: the chain is not positive recurrent"
        )
    eye = np.eye(rows)
    inverse = linalg.inv(eye - r_total)
    stay = linalg.inv(eye - r.at(0)) if r.k_min == 0 else eye
    cap = max_iter if max_level is None else int(max_level)
    if r.truncated and cap > r.k_max:
        raise HorizonError(f"geometric sum to level {cap} needs r beyond its horizon {r.k_max}")
    support = r.k_max if r.tail is None else None
    size = min(cap, 1024) + 1
    F = np.zeros((size, rows, rows))
    R = r.dense(0, size - 1)
    F[0] = stay
    partial = stay.copy()
    k = 0
    while k < cap:
        k += 1
        if k >= F.shape[0]:
            size = min(2 * F.shape[0], cap + 1)
            F = np.concatenate((F, np.zeros((size - F.shape[0], rows, rows))))
            R = r.dense(0, size - 1)
        n = k if support is None else min(k, support)
        acc = np.matmul(R[1:n + 1], F[k - n:k][::-1]).sum(axis=0)
        F[k] = stay @ acc
        partial += F[k]
        if max_level is None and np.abs(inverse - partial).sum(axis=1).max() <= tol:
            break
    else:
        if max_level is None:
            raise ConvergenceError(
                f"geometric sum did not reach tolerance {tol} within {cap} levels",
                residual=float(np.abs(inverse - partial).sum(axis=1).max()),
            )
    residual = np.maximum(inverse - partial, 0.0)
    logger.debug(f"Geometric sum to level {k}: residual mass {residual.sum(axis=1).max()!r}")
    return MatrixSeq(F[: k + 1], 0, residual_mass=residual)


@dataclass(frozen=True, eq=False)
class ConvolutionTailReport:
    """
    Ratios (M*N)-bar(k) / P(Y > k) against their limit M~ N + M N~.
    HEURISTIC: a window can only suggest convergence.
    """

    ks: np.ndarray
    ratios: np.ndarray
    limit: np.ndarray
    deviations: np.ndarray
    sup_deviation: float
    trend: float
    heuristic: bool = True


def _tail_limit(seq, reference):
    if seq.truncated:
        raise ModelValidationError("sequence has no parametric tail, only a truncation residual")
    if seq.tail is None:
        return np.zeros(seq.shape)
    if seq.tail.dist.name != reference.name:
        raise ModelValidationError(
            f"tail law {seq.tail.dist.name} is not the reference {reference.name}"
        )
    return seq.tail.outer


_SUBEXPONENTIAL_KINDS = (DiscreteKind.ZETA_PARETO, DiscreteKind.INTERLEAVED, DiscreteKind.EQUILIBRIUM)


def convolution_tail_limit_check(m, n, y, window=None):
    if y.kind not in _SUBEXPONENTIAL_KINDS:
        logger.warning(f"reference {y.name} is not subexponential by construction")
    if window is None:
        window = np.unique(np.geomspace(100, 10_000, 25).astype(np.int64))
    ks = np.asarray(window, dtype=np.int64)
    limit = _tail_limit(m, y) @ n.total + m.total @ _tail_limit(n, y)
    values = convolution_tails(m, n, ks)
    ratios = values / y.tail(ks)[:, None, None]
    deviations = np.abs(ratios - limit).max(axis=(1, 2))
    trend = float(deviations[-1] - deviations[0])
    return ConvolutionTailReport(
        ks=ks,
        ratios=ratios,
        limit=limit,
        deviations=deviations,
        sup_deviation=float(deviations.max()),
        trend=trend,
    )

"""
Distributions on the nonnegative integers and on the half line.

Parametric tails are kept analytically so that ``tail(k)`` stays exact at
levels far beyond anything a table could hold. Discrete laws are
:class:`DiscreteDist` values, service laws are :class:`ServiceDist` values.
Both are immutable.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
from loguru import logger
from scipy import integrate, special, stats

from .errors import ConvergenceError, DistributionError

# log-rate grid step of the gamma-mixture quadrature used for Pareto weights
_PARETO_STEP = 0.05
_PARETO_CHUNK = 256


class DiscreteKind(Enum):
    """
    Representations available for a :class:`DiscreteDist`
    """

    GEOMETRIC = "geometric"
    DETERMINISTIC = "deterministic"
    ZETA_PARETO = "zeta-pareto"
    FINITE = "finite-empirical"
    INTERLEAVED = "interleaved"
    SPLICED = "spliced"
    EQUILIBRIUM = "equilibrium"


def _as_levels(k):
    return np.asarray(k, dtype=np.int64)


def _unwrap(k, out):
    if np.ndim(k) == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """
    A distribution on {0, 1, 2, ...} with exact access to its tail.

    Use the class constructors rather than the raw fields:

    * ``geometric(p)``: pmf p(1-p)^k.
    * ``deterministic(n)``: all mass at n.
    * ``zeta_pareto(alpha, scale)``: tail (1 + k/scale)^(-alpha).
    * ``finite(pmf)``: an explicit table.
    * ``interleaved(base)``: tail equal to the base tail at even k and to
      the mean of its two neighbours at odd k.
    * ``spliced(head, coefficient, dist)``: a finite head followed by
      ``coefficient * dist.pmf(k)`` beyond it.
    """

    kind: DiscreteKind
    params: dict = field(default_factory=dict)
    table: Optional[np.ndarray] = None
    base: Optional["DiscreteDist"] = None

    @classmethod
    def geometric(cls, p):
        if not 0.0 < p <= 1.0:
            raise DistributionError(f"geometric parameter must lie in (0, 1], got {p}")
        return cls(DiscreteKind.GEOMETRIC, {"p": float(p)})

    @classmethod
    def deterministic(cls, n):
        if int(n) != n or n < 0:
            raise DistributionError(f"deterministic value must be a nonnegative integer, got {n}")
        return cls(DiscreteKind.DETERMINISTIC, {"n": int(n)})

    @classmethod
    def zeta_pareto(cls, alpha, scale=1.0):
        if alpha <= 0.0 or scale <= 0.0:
            raise DistributionError(
                f"zeta-pareto needs alpha > 0 and scale > 0, got {alpha}, {scale}"
            )
        return cls(DiscreteKind.ZETA_PARETO, {"alpha": float(alpha), "scale": float(scale)})

    @classmethod
    def finite(cls, pmf):
        pmf = np.asarray(pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise DistributionError("finite pmf must be a nonempty vector")
        if np.any(pmf < 0.0) or not np.all(np.isfinite(pmf)):
            raise DistributionError("finite pmf must be nonnegative and finite")
        total = pmf.sum()
        if abs(total - 1.0) > 1e-9:
            raise DistributionError(f"finite pmf sums to {total!r}, not 1")
        return cls(DiscreteKind.FINITE, table=pmf / total)

    @classmethod
    def interleaved(cls, base):
        if base.kind not in _STRIDE_KINDS:
            raise DistributionError(
                f"cannot interleave a {base.kind.value} law: no closed-form stride sums"
            )
        if not math.isfinite(base.mean):
            raise DistributionError("interleaving needs a base law with finite mean")
        return cls(DiscreteKind.INTERLEAVED, base=base)

    @classmethod
    def spliced(cls, head, coefficient, dist):
        head = np.asarray(head, dtype=float)
        if head.ndim != 1 or head.size == 0 or np.any(head < 0.0):
            raise DistributionError("spliced head must be a nonempty nonnegative vector")
        if coefficient < 0.0:
            raise DistributionError("spliced tail coefficient must be nonnegative")
        total = head.sum() + coefficient * dist.tail(head.size - 1)
        if abs(total - 1.0) > 1e-9:
            raise DistributionError(f"spliced law sums to {total!r}, not 1")
        return cls(
            DiscreteKind.SPLICED, {"coefficient": float(coefficient)}, table=head, base=dist
        )

    @property
    def name(self):
        if self.kind in (DiscreteKind.INTERLEAVED, DiscreteKind.EQUILIBRIUM):
            return f"{self.kind.value}({self.base.name})"
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.kind.value}({args})"

    # ---- tables for the finite parts ----
    @cached_property
    def _head_tails(self):
        # t[k] = sum_{k < l <= top} table[l], for k = -1 .. top
        rev = np.cumsum(self.table[::-1])[::-1]
        return np.concatenate((rev, [0.0]))

    @cached_property
    def _head_double_tails(self):
        # d[k] = sum_{k < l <= top} t[l], for k = -1 .. top
        t = self._head_tails[1:]
        rev = np.cumsum(t[::-1])[::-1]
        return np.concatenate((rev, [0.0]))

    @cached_property
    def _head_excess(self):
        d = self._head_double_tails[1:]
        rev = np.cumsum(d[::-1])[::-1]
        return np.concatenate((rev, [0.0]))

    @property
    def _top(self):
        return self.table.size - 1

    # ---- tails ----
    def tail(self, k):
        """
        P(Y > k), vectorized over integer ``k``
        """
        levels = _as_levels(k)
        out = np.ones(levels.shape)
        pos = levels >= 0
        out[pos] = self._tail_nonnegative(levels[pos])
        return _unwrap(k, out)

    def _tail_nonnegative(self, k):
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            return (1.0 - self.params["p"]) ** (k + 1)
        if kind is DiscreteKind.DETERMINISTIC:
            return (k < self.params["n"]).astype(float)
        if kind is DiscreteKind.ZETA_PARETO:
            return (1.0 + k / self.params["scale"]) ** (-self.params["alpha"])
        if kind is DiscreteKind.FINITE:
            top = self._top
            return np.where(k < top, self._head_tails[np.minimum(k, top) + 1], 0.0)
        if kind is DiscreteKind.INTERLEAVED:
            even = self.base.tail(k)
            odd = 0.5 * (self.base.tail(k - 1) + even)
            return np.where(k % 2 == 0, even, odd)
        if kind is DiscreteKind.SPLICED:
            top = self._top
            c = self.params["coefficient"]
            beyond = c * self.base.tail(np.maximum(k, top))
            head = self._head_tails[np.minimum(k, top) + 1]
            return np.where(k < top, head, 0.0) + beyond
        if kind is DiscreteKind.EQUILIBRIUM:
            return self.base.double_tail(k) / self.base.mean
        raise DistributionError(f"unknown kind {kind}")  # pragma: no cover

    def pmf(self, k):
        levels = _as_levels(k)
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            p = self.params["p"]
            out = np.where(levels >= 0, p * (1.0 - p) ** np.maximum(levels, 0), 0.0)
        elif kind is DiscreteKind.DETERMINISTIC:
            out = (levels == self.params["n"]).astype(float)
        elif kind is DiscreteKind.FINITE:
            top = self._top
            inside = (levels >= 0) & (levels <= top)
            out = np.where(inside, self.table[np.clip(levels, 0, top)], 0.0)
        elif kind is DiscreteKind.ZETA_PARETO:
            alpha, s = self.params["alpha"], self.params["scale"]
            prev = self.tail(levels - 1)
            step = np.where(levels > 0, 1.0 / (s + np.maximum(levels, 1) - 1.0), 1.0 / s)
            out = np.where(levels >= 0, -prev * np.expm1(-alpha * np.log1p(step)), 0.0)
        elif kind is DiscreteKind.EQUILIBRIUM:
            out = np.where(levels >= 0, self.base.tail(levels) / self.base.mean, 0.0)
        else:
            out = self.tail(levels - 1) - self.tail(levels)
        return _unwrap(k, np.asarray(out, dtype=float))

    def double_tail(self, k):
        """
        sum_{l > k} P(Y > l), vectorized over integer ``k``
        """
        levels = _as_levels(k)
        clipped = np.maximum(levels, -1)
        out = self._double_tail_from(clipped) + (clipped - levels)
        return _unwrap(k, np.asarray(out, dtype=float))

    def _double_tail_from(self, k):
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            p = self.params["p"]
            return (1.0 - p) ** (k + 2) / p
        if kind is DiscreteKind.DETERMINISTIC:
            return np.maximum(self.params["n"] - k - 1, 0).astype(float)
        if kind is DiscreteKind.ZETA_PARETO:
            alpha, s = self.params["alpha"], self.params["scale"]
            if alpha <= 1.0:
                return np.full(k.shape, np.inf)
            return s ** alpha * special.zeta(alpha, s + k + 1.0)
        if kind is DiscreteKind.FINITE:
            top = self._top
            return np.where(k < top, self._head_double_tails[np.minimum(k, top) + 1], 0.0)
        if kind is DiscreteKind.INTERLEAVED:
            return self._interleaved_double_tail(k)
        if kind is DiscreteKind.SPLICED:
            top = self._top
            c = self.params["coefficient"]
            head = self._head_double_tails[np.minimum(k, top) + 1]
            flat = (top - np.minimum(k, top)) * self.base.tail(top)
            beyond = self.base.double_tail(np.maximum(k, top))
            return np.where(k < top, head + c * flat, 0.0) + c * beyond
        if kind is DiscreteKind.EQUILIBRIUM:
            return self.base._excess(k) / self.base.mean
        raise DistributionError(f"unknown kind {kind}")  # pragma: no cover

    def _excess(self, k):
        """
        sum_{l > k} double_tail(l) for k >= -1
        """
        k = _as_levels(k)
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            p = self.params["p"]
            return (1.0 - p) ** (k + 3) / p ** 2
        if kind is DiscreteKind.DETERMINISTIC:
            m = np.maximum(self.params["n"] - k - 2, 0)
            return m * (m + 1) / 2.0
        if kind is DiscreteKind.ZETA_PARETO:
            alpha, s = self.params["alpha"], self.params["scale"]
            if alpha <= 2.0:
                return np.full(k.shape, np.inf)
            x = s + k + 2.0
            return s ** alpha * (special.zeta(alpha - 1.0, x) - (x - 1.0) * special.zeta(alpha, x))
        if kind is DiscreteKind.FINITE:
            top = self._top
            return np.where(k < top, self._head_excess[np.minimum(k, top) + 1], 0.0)
        if kind is DiscreteKind.SPLICED:
            top = self._top
            c = self.params["coefficient"]
            kk = np.minimum(k, top)
            span = top - kk
            flat_tail = span * (span - 1) / 2.0 * self.base.tail(top)
            flat_double = span * self.base.double_tail(top)
            head = self._head_excess[kk + 1]
            beyond = self.base._excess(np.maximum(k, top))
            return np.where(k < top, head + c * (flat_tail + flat_double), 0.0) + c * beyond
        raise DistributionError(
            f"second-order tail sums of a {kind.value} law are not available in closed form"
        )

    # ---- interleaving ----
    def _stride_sums(self, start):
        """
        (sum_j tail(start + 2j), sum_j (start + 2j) tail(start + 2j)) for start >= 0
        """
        start = np.asarray(start, dtype=float)
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            q = 1.0 - self.params["p"]
            first = q ** (start + 1.0)
            plain = first / (1.0 - q * q)
            weighted = first * (start / (1.0 - q * q) + 2.0 * q * q / (1.0 - q * q) ** 2)
            return plain, weighted
        if kind is DiscreteKind.DETERMINISTIC:
            count = np.maximum(np.ceil((self.params["n"] - start) / 2.0), 0.0)
            return count, count * start + count * (count - 1.0)
        if kind is DiscreteKind.ZETA_PARETO:
            alpha, s = self.params["alpha"], self.params["scale"]
            x = (s + start) / 2.0
            plain = (s / 2.0) ** alpha * special.zeta(alpha, x)
            if alpha <= 2.0:
                weighted = np.full(np.shape(x), np.inf)
            else:
                weighted = s ** alpha * 2.0 ** (1.0 - alpha) * special.zeta(alpha - 1.0, x) - s * plain
            return plain, weighted
        if kind is DiscreteKind.FINITE:
            tails = self._head_tails[1:]
            plain, weighted = [], []
            for st in np.atleast_1d(start).astype(int):
                idx = np.arange(st, tails.size, 2)
                plain.append(tails[idx].sum())
                weighted.append((idx * tails[idx]).sum())
            return np.reshape(plain, np.shape(start)), np.reshape(weighted, np.shape(start))
        raise DistributionError(f"no stride sums for {kind.value}")  # pragma: no cover

    def _interleaved_double_tail(self, k):
        first = k + 1
        even = first + (first % 2)
        odd = first + 1 - (first % 2)
        s_even, _ = self.base._stride_sums(even)
        s_before, _ = self.base._stride_sums(odd - 1)
        s_odd, _ = self.base._stride_sums(odd)
        return s_even + 0.5 * (s_before + s_odd)

    # ---- moments ----
    @cached_property
    def mean(self):
        if self.kind is DiscreteKind.FINITE:
            return float(np.arange(self.table.size) @ self.table)
        return float(self.double_tail(-1))

    @cached_property
    def second_moment(self):
        if self.kind is DiscreteKind.FINITE:
            levels = np.arange(self.table.size)
            return float(levels ** 2 @ self.table)
        if self.kind is DiscreteKind.INTERLEAVED:
            s0, w0 = self.base._stride_sums(0)
            _, w1 = self.base._stride_sums(1)
            weighted = 0.5 * (w0 + w1) + w0 + 0.5 * s0
            return float(2.0 * weighted + self.mean)
        return float(2.0 * self._excess(-1) + self.mean)

    # ---- sampling ----
    def sample(self, rng, size=None):
        kind = self.kind
        if kind is DiscreteKind.GEOMETRIC:
            return rng.geometric(self.params["p"], size) - 1
        if kind is DiscreteKind.DETERMINISTIC:
            return np.full(size, self.params["n"], dtype=np.int64) if size else self.params["n"]
        if kind is DiscreteKind.FINITE:
            return rng.choice(self.table.size, size=size, p=self.table)
        if kind is DiscreteKind.ZETA_PARETO:
            return self._zeta_inverse(1.0 - rng.random(size))
        if kind is DiscreteKind.SPLICED:
            return self._spliced_sample(rng, size)
        return self._inverse_tail(1.0 - rng.random(size))

    def _zeta_inverse(self, u, floor=-1):
        alpha, s = self.params["alpha"], self.params["scale"]
        k = np.ceil(s * (u ** (-1.0 / alpha) - 1.0))
        return np.maximum(k, floor + 1).astype(np.int64)

    def _spliced_sample(self, rng, size):
        top = self._top
        count = 1 if size is None else int(np.prod(size))
        head_mass = self.table.sum()
        u = 1.0 - rng.random(count)
        in_head = u <= head_mass
        out = np.empty(count, dtype=np.int64)
        cum = np.cumsum(self.table)
        out[in_head] = np.minimum(np.searchsorted(cum, u[in_head]), top)
        rest = ~in_head
        if rest.any():
            v = 1.0 - rng.random(int(rest.sum()))
            base = self.base
            scaled = v * base.tail(top)
            if base.kind is DiscreteKind.ZETA_PARETO:
                out[rest] = base._zeta_inverse(scaled, floor=top)
            else:
                out[rest] = np.maximum(base._inverse_tail(scaled), top + 1)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def _inverse_tail(self, u):
        # smallest k with tail(k) <= u, by vectorized bisection
        u = np.atleast_1d(np.asarray(u, dtype=float))
        hi = np.ones(u.shape, dtype=np.int64)
        for _ in range(62):
            grow = self.tail(hi) > u
            if not grow.any():
                break
            hi = np.where(grow, 2 * hi, hi)
        lo = np.full(u.shape, -1, dtype=np.int64)
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            below = self.tail(mid) <= u
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        return hi


_STRIDE_KINDS = (
    DiscreteKind.GEOMETRIC,
    DiscreteKind.DETERMINISTIC,
    DiscreteKind.ZETA_PARETO,
    DiscreteKind.FINITE,
)


def tail_and_moments(d):
    """
    Tail accessor, mean and second moment (``inf`` when it diverges) of ``d``
    """
    return d.tail, d.mean, d.second_moment


def require_finite_mean(d, what="this computation"):
    mean = d.mean
    if not math.isfinite(mean) or mean <= 0.0:
        raise DistributionError(f"{what} needs a law with finite positive mean, got {mean!r}")
    return mean


def discretized_equilibrium(d):
    """
    The law with pmf P(Y > k) / E[Y].
    """
    require_finite_mean(d, "the discretized equilibrium")
    if d.kind is DiscreteKind.GEOMETRIC:
        return DiscreteDist.geometric(d.params["p"])
    if d.kind is DiscreteKind.DETERMINISTIC:
        n = d.params["n"]
        return DiscreteDist.finite(np.full(n, 1.0 / n))
    if d.kind is DiscreteKind.FINITE:
        return DiscreteDist.finite(d._head_tails[1:-1] / d.mean)
    return DiscreteDist(DiscreteKind.EQUILIBRIUM, base=d)


# ---------------------------------------------------------------------------
# Continuous service laws


class ServiceKind(Enum):
    EXPONENTIAL = "exponential"
    ERLANG = "erlang"
    DETERMINISTIC = "deterministic"
    PARETO = "pareto"
    UNIFORM = "uniform"
    ERLANG_MIXTURE = "erlang-mixture"


@dataclass(frozen=True, eq=False)
class ServiceDist:
    """
    A nonnegative continuous law with H(0) = 0.

    ``pareto(alpha, scale)`` is the Lomax law with P(S > x) = (1 + x/scale)^(-alpha).
    Uniform and Erlang-mixture laws appear as equilibrium transforms of the
    deterministic and Erlang laws.
    """

    kind: ServiceKind
    params: dict = field(default_factory=dict)

    @classmethod
    def exponential(cls, rate):
        if rate <= 0.0:
            raise DistributionError(f"exponential rate must be positive, got {rate}")
        return cls(ServiceKind.EXPONENTIAL, {"rate": float(rate)})

    @classmethod
    def erlang(cls, shape, rate):
        if int(shape) != shape or shape < 1 or rate <= 0.0:
            raise DistributionError(f"erlang needs integer shape >= 1 and rate > 0, got {shape}, {rate}")
        return cls(ServiceKind.ERLANG, {"shape": int(shape), "rate": float(rate)})

    @classmethod
    def deterministic(cls, value):
        if value <= 0.0:
            raise DistributionError(f"deterministic service must be positive, got {value}")
        return cls(ServiceKind.DETERMINISTIC, {"value": float(value)})

    @classmethod
    def pareto(cls, alpha, scale, require_mean=True):
        if alpha <= 0.0 or scale <= 0.0:
            raise DistributionError(f"pareto needs alpha > 0 and scale > 0, got {alpha}, {scale}")
        if require_mean and alpha <= 1.0:
            raise DistributionError(f"pareto service with alpha={alpha} has infinite mean")
        return cls(ServiceKind.PARETO, {"alpha": float(alpha), "scale": float(scale)})

    @classmethod
    def pareto_with_mean(cls, alpha, mean):
        return cls.pareto(alpha, mean * (alpha - 1.0))

    @classmethod
    def uniform(cls, upper):
        if upper <= 0.0:
            raise DistributionError(f"uniform upper bound must be positive, got {upper}")
        return cls(ServiceKind.UNIFORM, {"upper": float(upper)})

    @classmethod
    def erlang_mixture(cls, weights, rate):
        weights = tuple(float(w) for w in weights)
        if any(w < 0.0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise DistributionError("erlang mixture weights must be a probability vector")
        return cls(ServiceKind.ERLANG_MIXTURE, {"weights": weights, "rate": float(rate)})

    @property
    def name(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.kind.value}({args})"

    @cached_property
    def mean(self):
        p = self.params
        kind = self.kind
        if kind is ServiceKind.EXPONENTIAL:
            return 1.0 / p["rate"]
        if kind is ServiceKind.ERLANG:
            return p["shape"] / p["rate"]
        if kind is ServiceKind.DETERMINISTIC:
            return p["value"]
        if kind is ServiceKind.PARETO:
            return p["scale"] / (p["alpha"] - 1.0) if p["alpha"] > 1.0 else math.inf
        if kind is ServiceKind.UNIFORM:
            return p["upper"] / 2.0
        j = np.arange(1, len(p["weights"]) + 1)
        return float(np.dot(p["weights"], j) / p["rate"])

    @property
    def light_tailed(self):
        return self.kind is not ServiceKind.PARETO

    def tail(self, x):
        """
        P(S > x), vectorized
        """
        xs = np.maximum(np.asarray(x, dtype=float), 0.0)
        p = self.params
        kind = self.kind
        if kind is ServiceKind.EXPONENTIAL:
            out = np.exp(-p["rate"] * xs)
        elif kind is ServiceKind.ERLANG:
            out = stats.gamma.sf(xs, p["shape"], scale=1.0 / p["rate"])
        elif kind is ServiceKind.DETERMINISTIC:
            out = (xs < p["value"]).astype(float)
        elif kind is ServiceKind.PARETO:
            out = (1.0 + xs / p["scale"]) ** (-p["alpha"])
        elif kind is ServiceKind.UNIFORM:
            out = np.clip(1.0 - xs / p["upper"], 0.0, 1.0)
        else:
            out = sum(
                w * stats.gamma.sf(xs, j, scale=1.0 / p["rate"])
                for j, w in enumerate(p["weights"], start=1)
            )
        out = np.where(np.asarray(x, dtype=float) < 0.0, 1.0, out)
        return float(out) if np.ndim(x) == 0 else out

    def equilibrium(self):
        """
        The integrated-tail law with density P(S > x) / h, in closed form.
        """
        p = self.params
        kind = self.kind
        if kind is ServiceKind.EXPONENTIAL:
            return self
        if kind is ServiceKind.ERLANG:
            r = p["shape"]
            return ServiceDist.erlang_mixture([1.0 / r] * r, p["rate"])
        if kind is ServiceKind.DETERMINISTIC:
            return ServiceDist.uniform(p["value"])
        if kind is ServiceKind.PARETO:
            if p["alpha"] <= 1.0:
                raise DistributionError("equilibrium transform needs a finite mean")
            return ServiceDist.pareto(p["alpha"] - 1.0, p["scale"], require_mean=False)
        raise DistributionError(f"no closed-form equilibrium for {kind.value}")

    def equilibrium_tail_quadrature(self, x):
        """
        (1/h) * integral_x^inf P(S > y) dy by adaptive quadrature
        """
        h = self.mean
        if not math.isfinite(h):
            raise DistributionError("equilibrium transform needs a finite mean")
        value, err = integrate.quad(self.tail, float(x), np.inf, epsrel=1e-10, epsabs=1e-300, limit=200)
        if not math.isfinite(value) or err > 1e-7 * max(abs(value), 1e-300):
            raise ConvergenceError(f"equilibrium quadrature failed at x={x}", residual=err)
        return value / h

    def sample(self, rng, size=None):
        p = self.params
        kind = self.kind
        if kind is ServiceKind.EXPONENTIAL:
            return rng.exponential(1.0 / p["rate"], size)
        if kind is ServiceKind.ERLANG:
            return rng.gamma(p["shape"], 1.0 / p["rate"], size)
        if kind is ServiceKind.DETERMINISTIC:
            return np.full(size, p["value"]) if size else p["value"]
        if kind is ServiceKind.PARETO:
            return p["scale"] * rng.pareto(p["alpha"], size)
        if kind is ServiceKind.UNIFORM:
            return rng.uniform(0.0, p["upper"], size)
        shapes = rng.choice(np.arange(1, len(p["weights"]) + 1), size=size, p=p["weights"])
        return rng.gamma(shapes, 1.0 / p["rate"])

    # ---- Poisson mixtures ----
    def poisson_weights(self, theta, n_max):
        """
        gamma_n = P(N(S) = n) for n = 0..n_max, N a Poisson process of rate theta
        """
        n = np.arange(int(n_max) + 1)
        return self._poisson_mixture(theta, n, tail=False)

    def poisson_tail(self, theta, n):
        """
        P(N(S) > n), vectorized over ``n``
        """
        ns = np.asarray(n)
        out = self._poisson_mixture(theta, np.atleast_1d(ns), tail=True)
        return float(out[0]) if ns.ndim == 0 else out

    def _poisson_mixture(self, theta, n, tail):
        p = self.params
        kind = self.kind
        if kind is ServiceKind.EXPONENTIAL:
            q = theta / (p["rate"] + theta)
            return q ** (n + 1) if tail else (1.0 - q) * q ** n
        if kind is ServiceKind.ERLANG:
            success = p["rate"] / (p["rate"] + theta)
            law = stats.nbinom(p["shape"], success)
            return law.sf(n) if tail else law.pmf(n)
        if kind is ServiceKind.DETERMINISTIC:
            law = stats.poisson(theta * p["value"])
            return law.sf(n) if tail else law.pmf(n)
        if kind is ServiceKind.UNIFORM:
            mu = theta * p["upper"]
            law = stats.poisson(mu)
            if tail:
                return law.sf(n) - (n + 1.0) / mu * law.sf(n + 1)
            return law.sf(n) / mu
        if kind is ServiceKind.ERLANG_MIXTURE:
            success = p["rate"] / (p["rate"] + theta)
            parts = [stats.nbinom(j, success) for j in range(1, len(p["weights"]) + 1)]
            return sum(w * (law.sf(n) if tail else law.pmf(n)) for w, law in zip(p["weights"], parts))
        return _pareto_mixture(p["alpha"], p["scale"], theta, n, tail)


def _pareto_mixture(alpha, scale, theta, n, tail):
    """
    Poisson weights of a Lomax law written as a gamma(alpha, rate=scale)
    mixture of exponential laws, integrated over the log-rate.
    """
    n = np.asarray(n, dtype=float)
    top = max(float(n.max()), 1.0)
    log_theta = math.log(theta)
    lo = min(math.log(alpha / scale), log_theta - math.log(top + 1.0)) - 40.0 / min(alpha, 1.0) - 5.0
    hi = math.log(60.0 * max(alpha, 1.0) / scale)
    t = np.arange(lo, hi, _PARETO_STEP)
    log_density = alpha * math.log(scale) - special.gammaln(alpha) + alpha * t - scale * np.exp(t)
    log_stay = log_theta - np.logaddexp(t, log_theta)
    log_leave = t - np.logaddexp(t, log_theta)
    out = np.empty(n.shape)
    chunks = np.array_split(np.arange(n.size), max(1, math.ceil(n.size / _PARETO_CHUNK)))
    for idx in chunks:
        m = n[idx][:, None]
        if tail:
            log_f = log_density + (m + 1.0) * log_stay
        else:
            log_f = log_density + log_leave + m * log_stay
        out[idx] = np.exp(special.logsumexp(log_f, axis=1) + math.log(_PARETO_STEP))
    if not np.all(np.isfinite(out)):
        raise ConvergenceError("pareto Poisson-mixture quadrature produced non-finite weights")
    logger.debug(f"Pareto mixture weights: {n.size} orders on {t.size} nodes")
    return out


def equilibrium_service(s):
    return s.equilibrium()


@dataclass(frozen=True, eq=False)
class SampledTail:
    """
    The discrete reference tail k -> P(S > k / rate) of a continuous law S.
    """

    service: ServiceDist
    rate: float

    @property
    def name(self):
        return f"{self.service.name} at k/{self.rate!r}"

    def tail(self, k):
        return self.service.tail(np.asarray(k, dtype=float) / self.rate)


# ---------------------------------------------------------------------------
# Hazard functions and class diagnostics


class HazardForm(Enum):
    POWER = "power"
    LOG_POWER = "log-power"


@dataclass(frozen=True)
class HazardCheck:
    nondecreasing: bool
    ratio_nonincreasing: bool
    x0: float
    heuristic: bool = True

    @property
    def passed(self):
        return self.nondecreasing and self.ratio_nonincreasing


@dataclass(frozen=True)
class HazardSpec:
    """
    A cumulative hazard Q with index alpha of a concave subexponential law:
    ``power`` is Q(x) = c * x^alpha, ``log-power`` is Q(x) = (log x)^beta.
    """

    form: HazardForm
    alpha: float
    c: float = 1.0
    beta: float = 2.0
    x0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DistributionError(f"hazard index must lie in (0, 1), got {self.alpha}")
        if self.form is HazardForm.POWER and self.c <= 0.0:
            raise DistributionError("power hazard needs c > 0")
        if self.form is HazardForm.LOG_POWER and self.beta <= 1.0:
            raise DistributionError("log-power hazard needs beta > 1")

    def q(self, x):
        x = np.asarray(x, dtype=float)
        if self.form is HazardForm.POWER:
            return self.c * x ** self.alpha
        return np.log(np.maximum(x, 1.0)) ** self.beta

    def sc_check(self, grid):
        grid = np.sort(np.asarray(grid, dtype=float))
        grid = grid[grid >= self.x0]
        if grid.size < 3:
            raise DistributionError("hazard check needs at least three grid points beyond x0")
        q = self.q(grid)
        ratio = q / grid ** self.alpha
        slack = 1e-12 * np.maximum(np.abs(ratio[:-1]), 1.0)
        return HazardCheck(
            nondecreasing=bool(np.all(np.diff(q) >= -1e-12)),
            ratio_nonincreasing=bool(np.all(np.diff(ratio) <= slack)),
            x0=self.x0,
        )

    def summable(self, d):
        """
        Whether sum_k exp{Q(k)} P(Z = k) converges. A geometric tail beats
        any hazard of index below 1; polynomial tails lose to every hazard here.
        """
        if d.kind in (DiscreteKind.FINITE, DiscreteKind.DETERMINISTIC, DiscreteKind.GEOMETRIC):
            return True
        if d.kind in (DiscreteKind.SPLICED, DiscreteKind.INTERLEAVED, DiscreteKind.EQUILIBRIUM):
            return self.summable(d.base)
        return False


class TailClass(Enum):
    LONG_TAILED = "L"
    HIGHER_ORDER_LONG_TAILED = "L^mu"
    CONSISTENT_VARIATION = "C"


@dataclass(frozen=True, eq=False)
class ClassDiagnostic:
    """
    Empirical ratios along a grid. HEURISTIC: never a membership proof.
    """

    klass: TailClass
    grid: np.ndarray
    ratios: np.ndarray
    limit_estimate: float
    verdict: str
    shifts: Optional[np.ndarray] = None
    heuristic: bool = True


_C_SHIFTS = (1.5, 1.2, 1.1, 1.05, 1.01, 1.001)


def class_diagnostic(d, klass, grid, y=1, xi=1.0, mu=2.0, tol=1e-3):
    grid = np.unique(np.asarray(grid, dtype=np.int64))
    if grid.size < 8 or grid[-1] < 100:
        raise DistributionError("diagnostic grid too short: need 8 points reaching at least 100")
    base = d.tail(grid)
    shifts = None
    if klass is TailClass.LONG_TAILED:
        ratios = d.tail(grid + y) / base
        target = 1.0
    elif klass is TailClass.HIGHER_ORDER_LONG_TAILED:
        back = np.floor(grid - xi * grid ** (1.0 - 1.0 / mu)).astype(np.int64)
        ratios = d.tail(back) / base
        target = 1.0
    else:
        upper = grid[grid.size // 2:]
        shifts = np.asarray(_C_SHIFTS)
        ratios = np.array(
            [np.min(d.tail(np.floor(v * upper).astype(np.int64)) / d.tail(upper)) for v in shifts]
        )
        target = 1.0
    estimate = float(ratios[-1])
    mid = float(ratios[ratios.size // 2])
    end_gap, mid_gap = abs(estimate - target), abs(mid - target)
    name = klass.value
    if not np.isfinite(estimate):
        verdict = "inconclusive"
    elif end_gap <= tol or (end_gap < mid_gap and end_gap <= 0.05):
        verdict = f"consistent with {name}"
    elif end_gap >= 0.1 and end_gap >= 0.5 * mid_gap:
        verdict = f"fails {name}"
    else:
        verdict = "inconclusive"
    logger.debug(f"Class diagnostic {name} for {d.name}: estimate {estimate!r}, {verdict}")
    return ClassDiagnostic(
        klass=klass, grid=grid, ratios=ratios, limit_estimate=estimate, verdict=verdict, shifts=shifts
    )

"""
Discrete-event simulation of the BMAP/GI/1 and MAP/GI/1 bulk-service
queues, used as an oracle independent of the matrix-analytic solvers.

Every replication owns four random streams derived from the master seed
as ``SeedSequence(seed, spawn_key=(replication, stream))``: 0 drives
arrival-phase jumps, 1 batch sizes, 2 service times and 3 the initial phase.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from ..chains.asymptotics import ratio_window
from ..errors import ConvergenceError, ModelValidationError, UnstableChainError
from ..heavytail import DiscreteDist
from .bmapq import _series_kernel, uniformize
from .bulkq import BulkModel

MIN_EVENTS = 100_000
_CHUNK = 4096


class Stream(IntEnum):
    ARRIVALS = 0
    BATCHES = 1
    SERVICES = 2
    INITIAL = 3


@dataclass(frozen=True)
class SimConfig:
    model: object
    events: int = MIN_EVENTS
    warmup: float = 0.1
    seed: int = 20240101
    replications: int = 4
    workers: int = 1
    event_log: Optional[str] = None

    def __post_init__(self):
        if self.events < MIN_EVENTS:
            raise ModelValidationError(f"event budget {self.events} is below {MIN_EVENTS}")
        if not 0.0 <= self.warmup < 1.0:
            raise ModelValidationError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.replications < 1:
            raise ModelValidationError("at least one replication is needed")
        if not 0 <= self.seed < 2 ** 64:
            raise ModelValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def rng(self, replication, stream):
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(replication, int(stream))))


@dataclass(frozen=True, eq=False)
class EmpiricalDist:
    """
    Replication-averaged probabilities per (level, phase) and their
    standard errors from the spread between replications.
    """

    probs: np.ndarray
    stderr_cells: np.ndarray
    stderr_levels: np.ndarray
    weight: float
    replications: int

    @classmethod
    def merge(cls, histograms, weights):
        levels = max(h.shape[0] for h in histograms)
        M = histograms[0].shape[1]
        stack = np.zeros((len(histograms), levels, M))
        for r, h in enumerate(histograms):
            total = h.sum()
            if total > 0.0:
                stack[r, : h.shape[0]] = h / total
        n = len(histograms)
        if n > 1:
            cells = stack.std(axis=0, ddof=1) / math.sqrt(n)
            rows = stack.sum(axis=2).std(axis=0, ddof=1) / math.sqrt(n)
        else:
            cells, rows = np.full(stack.shape[1:], np.nan), np.full(levels, np.nan)
        return cls(
            probs=stack.mean(axis=0),
            stderr_cells=cells,
            stderr_levels=rows,
            weight=float(sum(weights)),
            replications=n,
        )

    @property
    def levels(self):
        return self.probs.shape[0]

    def stderr(self, k, i=None):
        if k >= self.levels:
            return 0.0
        return float(self.stderr_levels[k] if i is None else self.stderr_cells[k, i])

    def level_probs(self, K=None):
        out = self.probs.sum(axis=1)
        if K is None:
            return out
        padded = np.zeros(K + 1)
        padded[: min(K + 1, out.size)] = out[: K + 1]
        return padded

    def level_stderr(self, K):
        padded = np.zeros(K + 1)
        padded[: min(K + 1, self.levels)] = self.stderr_levels[: K + 1]
        return padded


@dataclass(frozen=True, eq=False)
class Replication:
    time_hist: np.ndarray
    departure_hist: np.ndarray
    observed_time: float
    departures: int
    cycle_mean: float
    violations: int
    conservation_errors: int


@dataclass(frozen=True, eq=False)
class SimResult:
    time: EmpiricalDist
    departure: EmpiricalDist
    eta: float
    eta_stderr: float
    violations: int
    conservation_errors: int
    config: SimConfig = field(repr=False)

    def __iter__(self):
        return iter((self.time, self.departure))


class _Buffered:
    """
    Draws from a generator in chunks.
    """

    __slots__ = ("_draw", "_buffer", "_next")

    def __init__(self, draw):
        self._draw = draw
        self._buffer = draw(_CHUNK)
        self._next = 0

    def __call__(self):
        if self._next == self._buffer.size:
            self._buffer = self._draw(_CHUNK)
            self._next = 0
        value = self._buffer[self._next]
        self._next += 1
        return value


class _ArrivalProcess:
    """
    Phase jumps of the BMAP: from phase i, leave at rate -C[i, i] to a phase
    change without arrival or to a batch arrival ending in phase j.
    """

    def __init__(self, bmap, rng, batch_rng):
        M = bmap.M
        self.M = M
        rates = -np.diag(bmap.C)
        off = bmap.C + np.diag(rates)
        arrive = bmap.D.total
        jumps = np.concatenate((off, arrive), axis=1) / rates[:, None]
        self.cumulative = np.cumsum(jumps, axis=1)
        self.cumulative[:, -1] = 1.0
        self.holding = [_Buffered(lambda n, r=r: rng.exponential(1.0 / r, n)) for r in rates]
        self.uniform = _Buffered(rng.random)
        self.batch_laws = {}
        for i in range(M):
            for j in range(M):
                if arrive[i, j] > 0.0:
                    law = _batch_law(bmap.D, i, j, arrive[i, j])
                    self.batch_laws[i, j] = _Buffered(lambda n, law=law: np.atleast_1d(law.sample(batch_rng, n)))

    def step(self, phase):
        """
        (holding time, next phase, batch size)
        """
        dt = self.holding[phase]()
        pick = int(np.searchsorted(self.cumulative[phase], self.uniform(), side="right"))
        pick = min(pick, 2 * self.M - 1)
        if pick < self.M:
            return dt, pick, 0
        j = pick - self.M
        return dt, j, int(self.batch_laws[phase, j]())


def _batch_law(D, i, j, total):
    head = np.concatenate(([0.0], D.blocks[:, i, j])) / total
    if D.tail is None:
        return DiscreteDist.finite(head)
    coefficient = D.tail.v[i] * D.tail.w[j] / total
    return DiscreteDist.spliced(head, coefficient, D.tail.dist)


class _Histogram:
    __slots__ = ("data",)

    def __init__(self, M):
        self.data = np.zeros((64, M))

    def add(self, level, phase, weight):
        if level >= self.data.shape[0]:
            grown = np.zeros((max(2 * self.data.shape[0], level + 1), self.data.shape[1]))
            grown[: self.data.shape[0]] = self.data
            self.data = grown
        self.data[level, phase] += weight

    def trimmed(self):
        used = np.flatnonzero(self.data.any(axis=1))
        return self.data[: used[-1] + 1] if used.size else self.data[:1]


def _replicate(cfg, replication):
    """
    One replication. Bulk models serve between a and b customers per
    service; plain queues serve one at a time.
    """
    m = cfg.model
    bulk = isinstance(m, BulkModel)
    a, b = (m.a, m.b) if bulk else (1, 1)
    bmap = m.bmap
    arrivals = _ArrivalProcess(bmap, cfg.rng(replication, Stream.ARRIVALS), cfg.rng(replication, Stream.BATCHES))
    service_rng = cfg.rng(replication, Stream.SERVICES)
    service = _Buffered(lambda n: np.atleast_1d(m.service.sample(service_rng, n)))
    phase = int(cfg.rng(replication, Stream.INITIAL).choice(bmap.M, p=bmap.varpi))
    time_hist, departure_hist = _Histogram(bmap.M), _Histogram(bmap.M)
    log = None
    if cfg.event_log:
        path = Path(cfg.event_log)
        path = path.with_name(f"{path.stem}-rep{replication}{path.suffix or '.log'}")
        log = path.open("w", encoding="utf-8")

    t, level, in_service = 0.0, 0, 0
    next_jump = arrivals.step(phase)
    jump_at = t + next_jump[0]
    service_end = math.inf
    warmup = int(cfg.warmup * cfg.events)
    arrived = departed = 0
    violations = 0
    start_time = None
    first_departure = last_departure = None
    counted_departures = 0
    try:
        for event in range(cfg.events):
            recording = event >= warmup
            if recording and start_time is None:
                start_time = t
            upcoming = min(jump_at, service_end)
            if recording:
                time_hist.add(level, phase, upcoming - t)
            t = upcoming
            if jump_at <= service_end:
                _, phase, batch = next_jump
                level += batch
                arrived += batch
                kind = "arrival" if batch else "phase"
                next_jump = arrivals.step(phase)
                jump_at = t + next_jump[0]
            else:
                level -= in_service
                departed += in_service
                in_service = 0
                service_end = math.inf
                kind = "departure"
                if recording:
                    departure_hist.add(level, phase, 1.0)
                    if first_departure is None:
                        first_departure = t
                    last_departure = t
                    counted_departures += 1
            if in_service == 0 and level >= a:
                in_service = min(level, b)
                if not a <= in_service <= b:
                    violations += 1
                service_end = t + float(service())
            if log is not None:
                log.write(f"{t!r}\t{kind}\t{level}\t{phase}\n")
    finally:
        if log is not None:
            log.close()
    conservation = int(arrived - departed != level)
    if counted_departures > 1:
        cycle = (last_departure - first_departure) / (counted_departures - 1)
    else:
        cycle = math.nan
    logger.debug(
        f"Replication {replication}: {arrived} arrivals, {departed} departures, final level {level}"
    )
    return Replication(
        time_hist=time_hist.trimmed(),
        departure_hist=departure_hist.trimmed(),
        observed_time=t - (start_time or 0.0),
        departures=counted_departures,
        cycle_mean=cycle,
        violations=violations,
        conservation_errors=conservation,
    )


def _run(cfg):
    indices = range(cfg.replications)
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reps = list(pool.map(_replicate, [cfg] * cfg.replications, indices))
    else:
        reps = [_replicate(cfg, r) for r in indices]
    time = EmpiricalDist.merge([r.time_hist for r in reps], [r.observed_time for r in reps])
    departure = EmpiricalDist.merge([r.departure_hist for r in reps], [r.departures for r in reps])
    cycles = np.array([r.cycle_mean for r in reps])
    eta = float(np.nanmean(cycles))
    eta_err = float(np.nanstd(cycles, ddof=1) / math.sqrt(len(reps))) if len(reps) > 1 else math.nan
    violations = sum(r.violations for r in reps)
    conservation = sum(r.conservation_errors for r in reps)
    if conservation:
        raise ConvergenceError(f"{conservation} replications broke customer conservation")
    logger.info(
        f"Simulated {cfg.model.name}: {cfg.replications} x {cfg.events} events, "
        f"mean inter-departure {eta!r} +- {eta_err!r}"
    )
    return SimResult(
        time=time,
        departure=departure,
        eta=eta,
        eta_stderr=eta_err,
        violations=violations,
        conservation_errors=conservation,
        config=cfg,
    )


def simulate_bmap_queue(cfg):
    m = cfg.model
    if isinstance(m, BulkModel):
        raise ModelValidationError("simulate_bmap_queue takes a BMAP/GI/1 model")
    if m.rho >= 1.0:
        raise UnstableChainError(f"load rho = {m.rho!r} >= 1")
    return _run(cfg)


def simulate_bulk_queue(cfg):
    m = cfg.model
    if not isinstance(m, BulkModel):
        raise ModelValidationError("simulate_bulk_queue takes a bulk-service model")
    if m.rho >= m.b:
        raise UnstableChainError(f"load rho = {m.rho!r} >= b = {m.b}")
    return _run(cfg)


@dataclass(frozen=True, eq=False)
class CountTailReport:
    """
    P(N(T) > k) against P(T > k / lambda). HEURISTIC when T is light-tailed.
    """

    ks: np.ndarray
    count_tail: np.ndarray
    reference: np.ndarray
    ratios: np.ndarray
    flags: tuple = ()

    @property
    def final_ratio(self):
        return float(self.ratios[-1])


def sampled_count_tail(b, T, ks=None, tol=1e-12):
    """
    Tail of the number of arrivals in a random time T independent of the
    BMAP, started from its stationary phase.
    """
    ks = ratio_window(10, 10_000, 30) if ks is None else np.asarray(ks, dtype=np.int64)
    K = int(ks.max())
    head, total, terms = _series_kernel(uniformize(b), b.varpi, T, b.theta, K, tol, 1_000_000)
    e = np.ones(b.M)
    cumulative = np.cumsum(b.varpi @ head @ e)
    count_tail = float(b.varpi @ total @ e) - cumulative[ks]
    count_tail = np.maximum(count_tail, 0.0)
    reference = T.tail(ks / b.lam)
    ratios = np.divide(count_tail, reference, out=np.full_like(count_tail, np.inf), where=reference > 0.0)
    flags = []
    if T.light_tailed:
        flags.append(f"{T.name} is light-tailed: the count tail is not expected to follow P(T > k / lambda)")
    elif abs(ratios[-1] - 1.0) > 0.15:
        flags.append(f"ratio {ratios[-1]!r} at k = {K} is still more than 15% from 1")
    for flag in flags:
        logger.warning(flag)
    logger.info(f"Count tail of {b.name} over {T.name}: {terms} series terms, final ratio {ratios[-1]!r}")
    return CountTailReport(ks=ks, count_tail=count_tail, reference=reference, ratios=ratios, flags=tuple(flags))

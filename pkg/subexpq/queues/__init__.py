"""Queueing models reduced to GI/G/1-type chains, and their simulation oracle."""

from .bmapq import (
    Bmap,
    QueueModel,
    Regime,
    batch_distributions,
    check_pe_identity,
    check_pe_stationarity,
    compute_kernels,
    corollary_prefactor,
    embed_mg1,
    hazard_summable,
    kernel_tail_report,
    queue_tail_asymptote,
    solve_queue,
    uniformize,
)
from .bulkq import (
    BulkModel,
    BulkSolution,
    build_embedded,
    bulk_tail_asymptotes,
    embedded_tail_report,
    mean_cycle,
    solve_bulk,
    time_stationary,
)
from .simoracle import (
    EmpiricalDist,
    SimConfig,
    sampled_count_tail,
    simulate_bmap_queue,
    simulate_bulk_queue,
)

"""Block-structured Markov chains of GI/G/1 type and their tail asymptotics."""

from .asymptotics import (
    TailCoefficients,
    TailPrediction,
    coefficients_from_parametric,
    interleaved_fixture,
    lemma_limits_report,
    oscillation_report,
    predict_tail,
    tail_ratio_report,
)
from .blockseq import (
    MatrixSeq,
    RankOneTail,
    convolution_tail_limit_check,
    convolution_tails,
    convolve,
    nfold_geometric_sum,
    tails,
)
from .gig1core import (
    Gig1Chain,
    StationarySolution,
    boundary_vector,
    first_passage,
    level_independence_check,
    r_matrices,
    stationary,
    structural_constants,
    truncated_solve,
    validate,
)

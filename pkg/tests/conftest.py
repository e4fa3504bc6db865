import json
from pathlib import Path

import numpy as np
import pytest

from subexpq.chains import Gig1Chain, MatrixSeq, RankOneTail
from subexpq.heavytail import DiscreteDist, ServiceDist
from subexpq.queues import Bmap, BulkModel, QueueModel

MODELS = Path(__file__).resolve().parent.parent / "models"


@pytest.fixture()
def birth_death():
    """
    Scalar skip-free chain: up 0.3, stay 0.1, down 0.6; x(k) = 0.5^(k+1).
    """
    yield Gig1Chain(
        B0=[[0.7]],
        B_up=MatrixSeq([[[0.3]]], 1),
        B_down=[[[0.6]]],
        A=MatrixSeq([[[0.6]], [[0.1]], [[0.3]]], -1),
        name="birth-death",
    )


@pytest.fixture()
def two_phase_mg1():
    """
    Two phases, jumps down by one and up by at most three.
    """
    A = np.array(
        [
            [[0.4, 0.15], [0.3, 0.3]],
            [[0.1, 0.1], [0.05, 0.1]],
            [[0.1, 0.05], [0.1, 0.05]],
            [[0.03, 0.02], [0.02, 0.03]],
            [[0.03, 0.02], [0.03, 0.02]],
        ]
    )
    down = A[0].sum(axis=1)
    B_down = np.outer(down, [0.5, 0.5])[None]
    B0 = np.array([[0.4, 0.2], [0.3, 0.3]])
    up = 1.0 - B0.sum(axis=1)
    B_up = np.array([np.outer(up, [0.5, 0.5]) * 0.6, np.outer(up, [0.5, 0.5]) * 0.4])
    yield Gig1Chain(B0=B0, B_up=MatrixSeq(B_up, 1), B_down=B_down, A=MatrixSeq(A, -1), name="two-phase")


@pytest.fixture()
def pareto_chain():
    """
    Two phases, b_max = 2, rank-one tails with P(Z > k) = (1 + k)^-2.5.
    """
    with open(MODELS / "gig1-pareto.json") as f:
        doc = json.load(f)["chain"]
    tail = doc["A"]["tail"]
    yield Gig1Chain(
        B0=doc["B0"],
        B_up=MatrixSeq(doc["B_up"]["blocks"], 1),
        B_down=doc["B_down"],
        A=MatrixSeq(
            doc["A"]["blocks"],
            -2,
            tail=RankOneTail(tail["v"], tail["w"], DiscreteDist.zeta_pareto(2.5)),
        ),
        name="gig1-pareto",
    )


@pytest.fixture()
def mm1():
    yield QueueModel(Bmap.poisson(0.5), ServiceDist.exponential(1.0), name="mm1")


@pytest.fixture()
def two_phase_map():
    yield Bmap.from_blocks(
        [[-3.0, 1.0], [0.5, -1.5]],
        [[[1.5, 0.5], [0.2, 0.8]]],
        name="two-phase-map",
    )


@pytest.fixture()
def batch_bmap():
    """
    Two phases, batches of at most five.
    """
    D = np.zeros((5, 2, 2))
    D[0] = [[0.3, 0.1], [0.1, 0.2]]
    D[2] = [[0.1, 0.0], [0.0, 0.1]]
    D[4] = [[0.05, 0.05], [0.0, 0.1]]
    C = [[-0.9, 0.3], [0.2, -0.7]]
    yield Bmap.from_blocks(C, D, name="batch-bmap")


@pytest.fixture()
def pareto_batch_bmap():
    """
    Poisson batches with P(G = 1) = 1/2 and a zeta tail of index 2.5 beyond.
    """
    v = 0.1 / DiscreteDist.zeta_pareto(2.5).tail(1)
    yield Bmap.from_blocks(
        [[-0.2]],
        [[[0.1]]],
        tail=RankOneTail([v], [1.0], DiscreteDist.zeta_pareto(2.5)),
        name="pareto-batches",
    )


@pytest.fixture()
def bulk_model(two_phase_map):
    yield BulkModel(two_phase_map, ServiceDist.exponential(0.5), 2, 5, name="map-m-2-5")

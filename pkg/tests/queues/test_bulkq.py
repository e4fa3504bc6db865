import numpy as np
import pytest

from subexpq.chains import validate
from subexpq.errors import AssumptionError, HorizonError, ModelValidationError, UnstableChainError
from subexpq.heavytail import ServiceDist
from subexpq.queues import (
    Bmap,
    BulkModel,
    QueueModel,
    build_embedded,
    bulk_tail_asymptotes,
    compute_kernels,
    embedded_tail_report,
    mean_cycle,
    solve_bulk,
    solve_queue,
)
from subexpq.queues.bulkq import arrival_step


@pytest.fixture()
def pareto_bulk(two_phase_map):
    yield BulkModel(two_phase_map, ServiceDist.pareto_with_mean(2.5, 2.0), 2, 5, name="map-pareto-2-5")


class TestBulkModel:
    def test_load(self, bulk_model):
        assert bulk_model.rho == pytest.approx(2.0 * 2.9 / 2.2)
        assert bulk_model.M == 2

    def test_batch_arrivals(self, batch_bmap):
        with pytest.raises(ModelValidationError, match="batch arrivals"):
            BulkModel(batch_bmap, ServiceDist.exponential(1.0), 1, 2)

    def test_thresholds(self, two_phase_map):
        with pytest.raises(ModelValidationError):
            BulkModel(two_phase_map, ServiceDist.exponential(1.0), 3, 2)
        with pytest.raises(ModelValidationError):
            BulkModel(two_phase_map, ServiceDist.exponential(1.0), 0, 2)

    def test_unstable(self, two_phase_map):
        with pytest.raises(UnstableChainError, match="b = 5"):
            BulkModel(two_phase_map, ServiceDist.exponential(0.1), 2, 5)


class TestEmbeddedChain:
    def test_arrival_step(self, bulk_model):
        W = arrival_step(bulk_model)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(W >= 0.0)

    def test_drift(self, bulk_model):
        chain = build_embedded(bulk_model, compute_kernels(bulk_model, 300))
        assert chain.M0 == 10
        assert chain.b_max == 5
        assert validate(chain).sigma == pytest.approx(bulk_model.rho - 5.0, abs=1e-8)

    def test_short_kernels(self, bulk_model):
        with pytest.raises(HorizonError):
            build_embedded(bulk_model, compute_kernels(bulk_model, 6))

    def test_tail_report(self, pareto_bulk):
        chain = build_embedded(pareto_bulk, compute_kernels(pareto_bulk, 300))
        report = embedded_tail_report(pareto_bulk, chain, ks=[10, 50, 200])
        assert report.limit == pytest.approx(pareto_bulk.rho)
        assert np.all(np.isfinite(report.a_ratios))
        assert np.all(report.b_ratios > 0.0)
        assert report.heuristic


class TestSolveBulk:
    TEST_LEVELS = np.arange(0, 41)

    def test_single_service_is_mm1(self):
        m = BulkModel(Bmap.poisson(0.5), ServiceDist.exponential(1.0), 1, 1)
        sol = solve_bulk(m, 40)
        np.testing.assert_allclose(sol.y_plus[:, 0], 0.5 ** (self.TEST_LEVELS + 1.0), atol=1e-8)
        np.testing.assert_allclose(sol.y[:, 0], 0.5 ** (self.TEST_LEVELS + 1.0), atol=1e-8)
        assert sol.eta == pytest.approx(2.0, abs=1e-8)
        assert m.h / sol.eta == pytest.approx(m.rho, abs=1e-8)

    @pytest.mark.parametrize("arrivals", ["poisson", "two_phase_map"])
    def test_single_service_matches_queue(self, request, arrivals):
        b = Bmap.poisson(0.5) if arrivals == "poisson" else request.getfixturevalue(arrivals)
        service = ServiceDist.exponential(2.0)
        m = BulkModel(b, service, 1, 1)
        bulk = solve_bulk(m, 60)
        queue = solve_queue(QueueModel(b, service), 60)
        np.testing.assert_allclose(bulk.y.sum(axis=1), queue.solution.level_mass(), atol=1e-8)
        assert m.h / bulk.eta == pytest.approx(m.rho, abs=1e-10)

    def test_mass(self, bulk_model):
        sol = solve_bulk(bulk_model, 60)
        assert sol.K == 60
        assert sol.y_plus.shape == (61, 2)
        departures = sol.y_plus.sum() + sol.y_plus_tail[-1].sum()
        assert departures == pytest.approx(1.0, abs=1e-9)
        assert sol.y.sum() + sol.y_tail[-1].sum() == pytest.approx(1.0, abs=1e-8)
        assert sol.mass_deficit < 1e-6
        assert sol.eta > bulk_model.h
        tails = sol.time_tails.tail_mass(np.arange(0, 61))
        assert np.all(np.diff(tails) <= 1e-15)
        assert sol.departure_tails.K == 60

    def test_mean_cycle_without_waiting(self, bulk_model):
        y_plus = np.zeros((3, 2))
        y_plus[2] = bulk_model.bmap.varpi
        assert mean_cycle(bulk_model, y_plus) == pytest.approx(bulk_model.h)

    def test_levels_below_b(self, bulk_model):
        with pytest.raises(HorizonError):
            solve_bulk(bulk_model, 3)


class TestBulkAsymptotes:
    def test_light_service(self, bulk_model):
        sol = solve_bulk(bulk_model, 20)
        with pytest.raises(AssumptionError, match="light-tailed"):
            bulk_tail_asymptotes(bulk_model, sol)

    def test_prefactors(self, pareto_bulk):
        sol = solve_bulk(pareto_bulk, 20)
        departure, time = bulk_tail_asymptotes(pareto_bulk, sol)
        rho, varpi = pareto_bulk.rho, pareto_bulk.bmap.varpi
        np.testing.assert_allclose(departure.prefactor, rho / (5.0 - rho) * varpi)
        np.testing.assert_allclose(time.prefactor, pareto_bulk.h / sol.eta * 5.0 / (5.0 - rho) * varpi)
        assert departure.sigma == pytest.approx(rho - 5.0)
        wider = BulkModel(pareto_bulk.bmap, pareto_bulk.service, 2, 6)
        assert wider.rho / (wider.b - wider.rho) < rho / (5.0 - rho)

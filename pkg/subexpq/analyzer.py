import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from .chains import (
    coefficients_from_parametric,
    predict_tail,
    stationary,
    tail_ratio_report,
    truncated_solve,
    validate,
)
from .errors import AssumptionError, UnwritableDestinationError
from .queues.bmapq import Regime, compute_kernels, embed_mg1, queue_tail_asymptote, solve_queue
from .queues.bulkq import _unfold, build_embedded, bulk_tail_asymptotes, solve_bulk
from .queues.simoracle import SimConfig, simulate_bmap_queue, simulate_bulk_queue

DEFAULTS = {
    "levels": 200,
    "tol": 1e-12,
    "seed": 20240101,
    "events": 100_000,
    "replications": 4,
    "workers": 1,
    "window": None,
    "out": ".",
    "format": "csv",
}
RATIO_TOL = 0.15
TRUNCATION_MARGIN = 128


def _plain(value):
    """
    JSON-ready copy of numpy scalars, arrays and nested containers.
    """
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _level_frame(x0, x, xbar, **extra):
    """
    One row per (level, phase) with P(L = k, J = i) and the level tail P(L > k).
    """
    M0, (K, M) = x0.size, x.shape
    tails = xbar.sum(axis=1)
    frame = pd.DataFrame(
        {
            "level": np.concatenate((np.zeros(M0, dtype=np.int64), np.repeat(np.arange(1, K + 1), M))),
            "phase": np.concatenate((np.arange(M0), np.tile(np.arange(M), K))),
            "probability": np.concatenate((x0, x.ravel())),
            "tail": np.concatenate((np.full(M0, tails[0]), np.repeat(tails[1:K + 1], M))),
        }
    )
    for name, value in extra.items():
        frame[name] = value
    return frame


def _outside_3_sigma(expected, simulated, stderr):
    gap = np.abs(np.asarray(expected) - np.asarray(simulated))
    return int(np.sum(gap > 3.0 * np.asarray(stderr) + 1e-12))


class Analyzer:
    """
    Runs one command on one model file and writes its report.
    """

    __slots__ = ("_settings",)

    def __init__(self, config):
        logger.add(
            config["logger"]["filename"],
            enqueue=True,
            format="<green>{time}</green> - <level>{level}: {message}</level>",
            rotation=config["logger"]["rotation"],
            level=config["logger"]["level"],
        )
        self._settings = dict(config.get("solver", {}))

    def settings(self, mf):
        """
        Flag or config value, then the model file's options, then the default.
        """
        out = {}
        for key, default in DEFAULTS.items():
            value = self._settings.get(key)
            if value is None:
                value = mf.options.get(key)
            out[key] = default if value is None else value
        return out

    # ---- commands ----
    def validate(self, mf):
        s = self.settings(mf)
        summary = {"model": mf.name, "kind": mf.kind, "mass_deficit": 0.0}
        if mf.kind == "gig1":
            chain = mf.model
        else:
            m = mf.model
            kernels = compute_kernels(m, s["levels"] + max(256, s["levels"] // 2), s["tol"])
            chain = embed_mg1(m, kernels) if mf.kind == "bmap-queue" else build_embedded(m, kernels)
            summary.update(rho=m.rho, lam=m.bmap.lam, lam_G=m.bmap.lam_G, varpi=m.bmap.varpi)
        report = validate(chain)
        summary.update(
            sigma=report.sigma,
            pi=report.pi,
            rowsum_error=report.rowsum_error,
            window_irreducible=report.window_irreducible,
            flags=list(report.flags),
        )
        logger.info(f"{mf.name} is valid: sigma = {report.sigma!r}")
        return None, summary

    def _solve(self, mf, s):
        K, tol = s["levels"], s["tol"]
        if mf.kind == "gig1":
            sol = stationary(mf.model, K, tol)
            return sol, sol
        if mf.kind == "bmap-queue":
            qs = solve_queue(mf.model, K, tol)
            return qs, qs.solution
        bs = solve_bulk(mf.model, K, tol)
        return bs, bs

    def stationary(self, mf):
        s = self.settings(mf)
        result, sol = self._solve(mf, s)
        if mf.kind == "bulk-queue":
            frame = pd.concat(
                (
                    _level_frame(result.y[0], result.y[1:], result.y_tail, epoch="time"),
                    _level_frame(result.y_plus[0], result.y_plus[1:], result.y_plus_tail, epoch="departure"),
                ),
                ignore_index=True,
            )
            summary = {"eta": result.eta, "mass_deficit": result.mass_deficit, "flags": list(result.flags)}
        else:
            frame = _level_frame(sol.x0, sol.x, sol.xbar)
            summary = {"mass_deficit": sol.mass_deficit, "method": sol.method.value, "flags": list(sol.flags)}
        summary.update(model=mf.name, kind=mf.kind)
        return frame, summary

    def _window(self, s, K):
        window = s["window"]
        if window is None:
            return (max(1, K // 10), K)
        return tuple(int(w) for w in window)

    def asymptote(self, mf, regime=None):
        s = self.settings(mf)
        result, sol = self._solve(mf, s)
        flags = []
        if mf.kind == "gig1":
            report = validate(mf.model)
            tc = coefficients_from_parametric(mf.model)
            pred = predict_tail(sol, tc, report.sigma, report.pi)
            tails = sol
            deficit = sol.mass_deficit
        elif mf.kind == "bmap-queue":
            m = mf.model
            chosen = regime or mf.asymptote.get("regime")
            if chosen is None:
                chosen = Regime.LIGHT_BATCH if m.service.light_tailed else Regime.SERVICE
            pred = queue_tail_asymptote(
                m, chosen, d_G=mf.asymptote.get("d_G"), d_H=mf.asymptote.get("d_H"), hazard=mf.hazard
            )
            tails = sol
            deficit = sol.mass_deficit
        else:
            if regime is not None:
                raise AssumptionError("bulk-service models have a single asymptotic regime")
            pred, _ = bulk_tail_asymptotes(mf.model, result)
            tails = result.departure_tails
            deficit = result.mass_deficit
        flags.extend(pred.flags)
        report = tail_ratio_report(tails, pred, self._window(s, s["levels"]), RATIO_TOL)
        if not report.passed:
            flags.append(f"HEURISTIC: ratio has not settled within {RATIO_TOL} of 1 on the window")
        summary = {
            "model": mf.name,
            "kind": mf.kind,
            "reference": pred.Y.name,
            "prefactor": pred.prefactor,
            "sigma": pred.sigma,
            "ratio_tol": RATIO_TOL,
            "passed": report.passed,
            "within_band": report.within_band,
            "preasymptotic_until": report.preasymptotic_until,
            "mass_deficit": deficit,
            "flags": flags,
        }
        return report.to_frame(), summary

    def _truncated(self, mf, result, s):
        K = s["levels"]
        if mf.kind == "gig1":
            sol = truncated_solve(mf.model, K + TRUNCATION_MARGIN)
            return sol.level_mass()[: K + 1], sol.mass_deficit
        if mf.kind == "bmap-queue":
            sol = truncated_solve(result.chain, K + TRUNCATION_MARGIN)
            return sol.level_mass()[: K + 1], sol.mass_deficit
        m = mf.model
        sol = truncated_solve(result.chain, K - m.b + 1 + TRUNCATION_MARGIN)
        y_plus, _ = _unfold(m, sol, K)
        return y_plus.sum(axis=1), sol.mass_deficit

    def _simulate(self, mf, s, event_log=None):
        cfg = SimConfig(
            model=mf.model,
            events=s["events"],
            seed=s["seed"],
            replications=s["replications"],
            workers=s["workers"],
            event_log=event_log,
        )
        if mf.kind == "bulk-queue":
            return simulate_bulk_queue(cfg)
        return simulate_bmap_queue(cfg)

    def compare(self, mf):
        s = self.settings(mf)
        K = s["levels"]
        result, sol = self._solve(mf, s)
        if mf.kind == "bulk-queue":
            analytic, deficit = result.y_plus.sum(axis=1), result.mass_deficit
        else:
            analytic, deficit = sol.level_mass(), sol.mass_deficit
        truncated, truncated_deficit = self._truncated(mf, result, s)
        frame = pd.DataFrame(
            {
                "k": np.arange(K + 1),
                "stationary": analytic[: K + 1],
                "truncated": truncated,
            }
        )
        summary = {
            "model": mf.name,
            "kind": mf.kind,
            "mass_deficit": deficit,
            "truncated_mass_deficit": truncated_deficit,
            "truncation_level": K + TRUNCATION_MARGIN,
            "flags": [],
        }
        if mf.kind == "gig1":
            frame["simulated"] = np.nan
            frame["simulated_stderr"] = np.nan
            summary["flags"].append("no simulation oracle for a bare GI/G/1-type chain")
        else:
            sim = self._simulate(mf, s)
            # the embedded BMAP solution is time-stationary; y_plus is seen at departures
            observed = sim.departure if mf.kind == "bulk-queue" else sim.time
            frame["simulated"] = observed.level_probs(K)
            frame["simulated_stderr"] = observed.level_stderr(K)
            outside = _outside_3_sigma(frame["stationary"], frame["simulated"], frame["simulated_stderr"])
            if mf.kind == "bulk-queue":
                frame["time_stationary"] = result.y.sum(axis=1)[: K + 1]
                frame["time_simulated"] = sim.time.level_probs(K)
                frame["time_simulated_stderr"] = sim.time.level_stderr(K)
                outside += _outside_3_sigma(
                    frame["time_stationary"], frame["time_simulated"], frame["time_simulated_stderr"]
                )
                summary.update(eta=result.eta, eta_simulated=sim.eta, eta_stderr=sim.eta_stderr)
            summary.update(cells_outside_3_sigma=outside, violations=sim.violations)
        return frame, summary

    def simulate(self, mf, event_log=False):
        s = self.settings(mf)
        if mf.kind == "gig1":
            raise AssumptionError("simulation needs a queue model, not a bare chain")
        log_path = str(Path(s["out"]) / "events.log") if event_log else None
        sim = self._simulate(mf, s, log_path)
        levels = max(sim.time.levels, sim.departure.levels)
        M = mf.model.bmap.M
        time_probs = np.zeros((levels, M))
        time_err = np.zeros((levels, M))
        dep_probs = np.zeros((levels, M))
        dep_err = np.zeros((levels, M))
        time_probs[: sim.time.levels] = sim.time.probs
        time_err[: sim.time.levels] = sim.time.stderr_cells
        dep_probs[: sim.departure.levels] = sim.departure.probs
        dep_err[: sim.departure.levels] = sim.departure.stderr_cells
        frame = pd.DataFrame(
            {
                "level": np.repeat(np.arange(levels), M),
                "phase": np.tile(np.arange(M), levels),
                "time_probability": time_probs.ravel(),
                "time_stderr": time_err.ravel(),
                "departure_probability": dep_probs.ravel(),
                "departure_stderr": dep_err.ravel(),
            }
        )
        summary = {
            "model": mf.name,
            "kind": mf.kind,
            "eta": sim.eta,
            "eta_stderr": sim.eta_stderr,
            "violations": sim.violations,
            "conservation_errors": sim.conservation_errors,
            "mass_deficit": 0.0,
            "flags": [],
        }
        return frame, summary

    # ---- reports ----
    def emit_report(self, command, frame, summary, mf):
        """
        Writes summary.json, and for tabular commands <command>.csv (or
        .json) plus a two-column <command>.dat plot-data file.
        """
        s = self.settings(mf)
        out = Path(s["out"])
        summary = dict(summary, command=command, options=s)
        summary.setdefault("mass_deficit", 0.0)
        written = []
        try:
            out.mkdir(parents=True, exist_ok=True)
            if frame is not None:
                if s["format"] == "json":
                    path = out / f"{command}.json"
                    path.write_text(json.dumps(_plain(frame.to_dict(orient="list"))))
                else:
                    path = out / f"{command}.csv"
                    frame.to_csv(path, index=False, float_format="%.17g")
                written.append(path)
                plot = _plot_columns(command, frame)
                if plot is not None:
                    path = out / f"{command}.dat"
                    plot.to_csv(path, sep=" ", index=False, header=False, float_format="%.17g")
                    written.append(path)
            path = out / "summary.json"
            path.write_text(json.dumps(_plain(summary), indent=2, sort_keys=True))
            written.append(path)
        except OSError as exc:
            raise UnwritableDestinationError(f"cannot write reports to {out}: {exc}") from exc
        for path in written:
            logger.info(f"Wrote {path}")
        return written


def _plot_columns(command, frame):
    if command == "asymptote":
        return frame[["k", "ratio"]]
    if command == "compare":
        return frame[["k", "stationary"]]
    if command == "stationary":
        rows = frame if "epoch" not in frame else frame[frame["epoch"] == "time"]
        tails = rows.groupby("level")["tail"].first()
        return pd.DataFrame({"k": tails.index.to_numpy(), "tail": tails.to_numpy()})
    if command == "simulate":
        levels = frame.groupby("level")["time_probability"].sum()
        return pd.DataFrame({"k": levels.index.to_numpy(), "probability": levels.to_numpy()})
    return None

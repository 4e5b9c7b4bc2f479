"""Training and evaluation of predictors through the two conic layers.

Per day the chain is

    features -> predictors -> clamp -> decision SOCPs (predicted injections)
             -> SVC setpoints -> evaluation SOCPs (true injections) -> L_reg

and the backward pass runs it in reverse: the evaluator's optimal value has
gradient ``-y`` with respect to its right-hand side, the setpoint rows of
that gradient are pulled through the decision programs by
:func:`vjp_solution_map`, and the resulting injection gradients enter each
predictor's backward pass next to ``epsilon`` times its MSE gradient.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .conic.diff import vjp_solution_map
from .conic.embedding import IllConditionedDerivativeError
from .conic.problem import ConicSolution, SolverSettings, Status
from .conic.solver import solve_batch
from .data import TAN_PHI, Dataset
from .grid.builders import (
    Injections,
    decision_template,
    evaluation_template,
    clamp_decisions,
)
from .grid.network import DeviceSet, Network, get_scenario
from .grid.outcome import VIOLATION_TOL, voltage_violations
from .predictor import SitePredictor, adam_step, backward, mse_and_grad
from .seeding import rng_for

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
INFEASIBILITY_POLICIES = ("skip_and_log",)


class ConfigError(ValueError):
    pass


class SkipBudgetExceeded(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 10
    train_epochs: int = 30
    epsilon: float = 1.0
    lam: float = 1.0
    scenario: str = "economic"
    seed: int = 0
    learning_rate: float = 3e-4
    decay: float = 1e-5
    hidden: tuple = (128, 128)
    infeasibility_policy: str = "skip_and_log"
    max_skip_fraction: float = 0.1
    mape_floor: float = 0.05
    n_cases: int = 6
    solver_tolerance: float = 1e-7
    # L_reg is scaled to kW (p.u. times base kVA) before mixing with the MSE
    reg_scale: str = "kw"
    workers: int = 1
    # training-time evaluator solves: iteration cap and the residual accepted at the cap
    train_eval_max_iters: int = 10000
    train_eval_tolerance: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epsilon < 0 or self.lam < 0:
            raise ConfigError("epsilon and lambda must be non-negative")
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        get_scenario(self.scenario)
        if self.infeasibility_policy not in INFEASIBILITY_POLICIES:
            raise ConfigError(f"infeasibility_policy must be one of {INFEASIBILITY_POLICIES}")
        if self.reg_scale not in ("kw", "pu"):
            raise ConfigError("reg_scale must be 'kw' or 'pu'")
        if not 0 <= self.max_skip_fraction <= 1:
            raise ConfigError("max_skip_fraction must lie in [0, 1]")
        if self.n_cases < 1 or self.workers < 1:
            raise ConfigError("n_cases and workers must be at least 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**doc)


@dataclasses.dataclass(frozen=True)
class Feeder:
    """Network under a scenario, devices, and the mapping of site predictions to buses."""

    net: Network
    dev: DeviceSet

    @classmethod
    def for_scenario(cls, net: Network, dev: DeviceSet, scenario: str) -> "Feeder":
        return cls(net.with_scenario(scenario), dev)

    @property
    def share(self) -> np.ndarray:
        return self.net.load_share()

    def injections(self, pv_kw: np.ndarray, load_kw: np.ndarray) -> Injections:
        """``pv_kw`` is ``(T, n_pv)``, ``load_kw`` the aggregate ``(T,)``."""
        p_d = np.outer(load_kw, self.share)
        return Injections(pv_kw, p_d, p_d * TAN_PHI)

    def load_grad(self, g_pd: np.ndarray, g_qd: np.ndarray) -> np.ndarray:
        """Chain per-bus demand gradients back to the aggregate load."""
        return (g_pd + TAN_PHI * g_qd) @ self.share


def site_names(n_pv: int) -> list[str]:
    return [f"pv{s + 1}" for s in range(n_pv)] + ["load"]


def build_models(ds: Dataset, config: TrainConfig) -> list[SitePredictor]:
    """Six PV models and one aggregate-load model, scaled on the training split."""
    tr = ds.train_idx
    models = []
    for s, name in enumerate(site_names(ds.n_pv)[:-1]):
        cap = float(ds.pv_capacity[s])
        models.append(SitePredictor.create(name, ds.pv_features(s, tr), cap, cap,
                                           rng_for(config.seed, f"init/{name}"), hidden=config.hidden,
                                           learning_rate=config.learning_rate, decay=config.decay))
    peak = float(ds.load_target[tr].max())
    models.append(SitePredictor.create("load", ds.load_features(tr), peak, peak,
                                       rng_for(config.seed, "init/load"), hidden=config.hidden,
                                       learning_rate=config.learning_rate, decay=config.decay))
    return models


def site_features(ds: Dataset, site: int, idx) -> np.ndarray:
    return ds.pv_features(site, idx) if site < ds.n_pv else ds.load_features(idx)


def site_targets(ds: Dataset, site: int, idx) -> np.ndarray:
    return ds.pv_target[idx, site] if site < ds.n_pv else ds.load_target[idx]


def copy_models(models: list[SitePredictor]) -> list[SitePredictor]:
    return [m.copy() for m in models]


# MSE training

def mse_epoch(models: list[SitePredictor], ds: Dataset, order: np.ndarray) -> list[float]:
    """One pass of per-day MSE updates; returns the mean minibatch MSE per model."""
    totals = np.zeros(len(models))
    for d in order:
        for s, m in enumerate(models):
            out, tape = m.forward(site_features(ds, s, d))
            loss, g = mse_and_grad(out, m.normalizer.target(site_targets(ds, s, d)))
            totals[s] += loss
            adam_step(m.model, backward(m.model, tape, g), m.optimizer)
    return (totals / max(len(order), 1)).tolist()


def _order(config: TrainConfig, ds: Dataset, purpose: str) -> np.ndarray:
    return rng_for(config.seed, purpose).permutation(ds.train_idx)


def pretrain(models: list[SitePredictor], ds: Dataset, config: TrainConfig,
             epochs: int | None = None, label: str = "pretrain") -> list[list[float]]:
    """MSE training; returns ``curves[epoch][site]``."""
    epochs = config.pretrain_epochs if epochs is None else epochs
    curves = []
    for e in range(epochs):
        curves.append(mse_epoch(models, ds, _order(config, ds, f"order/{label}/{e}")))
        logger.info("%s epoch %d: mse %s", label, e + 1, np.round(curves[-1], 5).tolist())
    return curves


# the regulation chain

@dataclasses.dataclass
class DayForward:
    pv_kw: np.ndarray  # (T, n_pv) clamped predictions
    load_kw: np.ndarray  # (T,)
    inside: list  # clamp gates per site
    tapes: list
    outputs: list  # normalized model outputs per site


def predict_day(models: list[SitePredictor], ds: Dataset, d: int) -> DayForward:
    kw, inside, tapes, outs = [], [], [], []
    for s, m in enumerate(models):
        out, tape = m.forward(site_features(ds, s, d))
        raw = m.normalizer.target_inverse(out)
        clamped = np.clip(raw, 0.0, m.capacity)
        kw.append(clamped)
        inside.append((raw >= 0.0) & (raw <= m.capacity))
        tapes.append(tape)
        outs.append(out)
    return DayForward(np.stack(kw[:-1], axis=1), kw[-1], inside, tapes, outs)


@dataclasses.dataclass
class RegulationResult:
    """Per-timestep results of deciding under one injection set and scoring under truth."""

    ok: bool
    q_reg: np.ndarray | None = None  # (T, n_svc) kvar
    loss_kw: np.ndarray | None = None  # (T,)
    penalty: np.ndarray | None = None  # (T,) p.u.^2
    reg_loss: np.ndarray | None = None  # (T,) p.u. objective of the evaluator
    v: np.ndarray | None = None  # (T, n_bus)
    dec_problems: list | None = None
    dec_solutions: list | None = None
    eval_solutions: list | None = None
    eval_problems: list | None = None
    failed: tuple = ()
    failed_stage: str = ""  # "decision" or "evaluation"
    failed_status: tuple = ()


def _settings(config: TrainConfig) -> SolverSettings:
    return SolverSettings(tolerance=config.solver_tolerance)


def _usable(sol: ConicSolution, tol: float | None) -> bool:
    if sol.optimal:
        return True
    return (tol is not None and sol.status is Status.ITER_LIMIT
            and max(sol.primal_residual, sol.dual_residual, sol.gap) <= tol)


def regulate(feeder: Feeder, decide_on: Injections, truth: Injections, config: TrainConfig,
             training: bool = False) -> RegulationResult:
    """Decide setpoints under ``decide_on`` and score them under ``truth``.

    With ``training`` the evaluator solves stop at ``config.train_eval_max_iters``
    and near-converged iterates are accepted. Only their duals feed the gradient,
    and near a voltage-limit kink the splitting can stall on the duals for
    tens of thousands of iterations.
    """
    net, dev = feeder.net, feeder.dev
    st = _settings(config)
    dtpl = decision_template(net, dev)
    T = decide_on.horizon
    B = dtpl.rhs(p_pv=decide_on.p_pv, p_d=decide_on.p_d, q_d=decide_on.q_d)
    dec_probs = [dtpl.problem(B[t]) for t in range(T)]
    dec = solve_batch(dec_probs, st)
    bad = tuple(t for t, s in enumerate(dec) if not s.optimal)
    if bad:
        return RegulationResult(False, failed=bad, failed_stage="decision",
                                failed_status=tuple(dec[t].status.value for t in bad),
                                dec_problems=dec_probs, dec_solutions=dec)
    lay = dtpl.pmap.layout
    q = np.stack([clamp_decisions(dev, s.x[lay["q_reg"]] * net.base_kva) for s in dec])
    etpl = evaluation_template(net, dev, float(config.lam))
    Be = etpl.rhs(q_reg=q, p_pv=truth.p_pv, p_d=truth.p_d, q_d=truth.q_d)
    ev_probs = [etpl.problem(Be[t]) for t in range(T)]
    if training:
        ev = solve_batch(ev_probs, dataclasses.replace(st, max_iters=config.train_eval_max_iters))
        bad = tuple(t for t, s in enumerate(ev) if not _usable(s, config.train_eval_tolerance))
    else:
        ev = solve_batch(ev_probs, st)
        bad = tuple(t for t, s in enumerate(ev) if not s.optimal)
    if bad:
        return RegulationResult(False, failed=bad, failed_stage="evaluation",
                                failed_status=tuple(ev[t].status.value for t in bad),
                                dec_problems=dec_probs, dec_solutions=dec)
    el = etpl.pmap.layout
    X = np.stack([s.x for s in ev])
    loss = X[:, el["l"]] @ net.r * net.base_kva
    pen = X[:, el["s_over"]].sum(axis=1) + X[:, el["s_under"]].sum(axis=1)
    reg = np.array([s.x @ p.c for s, p in zip(ev, ev_probs)])
    return RegulationResult(True, q, np.maximum(loss, 0.0), np.maximum(pen, 0.0), reg, X[:, el["v"]],
                            dec_probs, dec, ev, ev_probs)


def _reg_scale(config: TrainConfig, net: Network) -> float:
    return net.base_kva if config.reg_scale == "kw" else 1.0


def regulation_gradients(feeder: Feeder, res: RegulationResult, config: TrainConfig):
    """Gradient of the mean scaled ``L_reg`` over the day w.r.t. predicted PV ``(T, n_pv)``
    and aggregate load ``(T,)`` in kW."""
    net, dev = feeder.net, feeder.dev
    T = len(res.dec_solutions)
    scale = _reg_scale(config, net) / T
    etpl = evaluation_template(net, dev, float(config.lam))
    dtpl = decision_template(net, dev)
    q_slice = dtpl.pmap.layout["q_reg"]

    def one(t):
        # the evaluator's optimal value has gradient -y in b
        db_eval = -res.eval_solutions[t].y * scale
        dq = etpl.pmap.gather("q_reg", db_eval)  # per kvar
        dx = np.zeros(res.dec_problems[t].n)
        dx[q_slice] = dq * net.base_kva
        g = vjp_solution_map(res.dec_problems[t], res.dec_solutions[t], (dx, None, None))
        pm = dtpl.pmap
        return pm.gather("p_pv", g.db), pm.gather("p_d", g.db), pm.gather("q_d", g.db)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            parts = list(pool.map(one, range(T)))
    else:
        parts = [one(t) for t in range(T)]
    g_pv = np.stack([p[0] for p in parts])
    g_load = np.array([feeder.load_grad(p[1], p[2]) for p in parts])
    return g_pv, g_load


def hybrid_output_grads(models, fwd: DayForward, targets: list, g_pv, g_load, epsilon: float,
                        include_reg: bool = True):
    """Per-site gradients at the normalized model outputs.

    Returns ``(total, reg_part, mse_part, mse_values)``; ``total = reg + epsilon * mse``.
    """
    total, reg_parts, mse_parts, mses = [], [], [], []
    for s, m in enumerate(models):
        g_kw = g_pv[:, s] if s < len(models) - 1 else g_load
        g_reg = g_kw * fwd.inside[s] * m.normalizer.target_scale if include_reg else np.zeros_like(g_kw)
        mse, g_mse = mse_and_grad(fwd.outputs[s], m.normalizer.target(targets[s]))
        reg_parts.append(g_reg)
        mse_parts.append(g_mse)
        mses.append(mse)
        total.append(g_reg + epsilon * g_mse)
    return total, reg_parts, mse_parts, mses


def truth_injections(feeder: Feeder, ds: Dataset, d: int) -> Injections:
    return feeder.injections(ds.pv_target[d].T, ds.load_target[d])


@dataclasses.dataclass
class EpochStats:
    epoch: int
    mse: list
    reg_loss_kw: float
    power_loss_kw: float
    violation_rate: float
    days: int
    skipped_days: int
    derivative_failures: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def hsgd_epoch(models: list[SitePredictor], ds: Dataset, feeder: Feeder, config: TrainConfig,
               epoch: int = 0, days: np.ndarray | None = None) -> EpochStats:
    """One pass of hybrid-loss updates, one day per step."""
    order = _order(config, ds, f"order/hsgd/{epoch}") if days is None else np.asarray(days)
    n_sites = len(models)
    mse_tot = np.zeros(n_sites)
    reg_tot = loss_tot = 0.0
    viol = n_ok = skipped = dfail = 0
    scale = _reg_scale(config, feeder.net)
    for d in order:
        fwd = predict_day(models, ds, d)
        res = regulate(feeder, feeder.injections(fwd.pv_kw, fwd.load_kw), truth_injections(feeder, ds, d), config,
                       training=True)
        if not res.ok:
            skipped += 1
            logger.warning("day %d skipped: %s solve failed at t=%s (%s)", d, res.failed_stage,
                           list(res.failed), ", ".join(res.failed_status))
            continue
        try:
            g_pv, g_load = regulation_gradients(feeder, res, config)
        except IllConditionedDerivativeError as exc:
            dfail += 1
            skipped += 1
            logger.warning("day %d skipped: %s", d, exc)
            continue
        targets = [site_targets(ds, s, d) for s in range(n_sites)]
        total, _, _, mses = hybrid_output_grads(models, fwd, targets, g_pv, g_load, config.epsilon)
        for s, m in enumerate(models):
            adam_step(m.model, backward(m.model, fwd.tapes[s], total[s]), m.optimizer)
        mse_tot += mses
        reg_tot += float(np.mean(res.reg_loss)) * scale
        loss_tot += float(np.mean(res.loss_kw))
        viol += int(voltage_violations(res.v, feeder.net.v_min, feeder.net.v_max).sum())
        n_ok += 1
    n = max(n_ok, 1)
    if len(order) and skipped / len(order) > config.max_skip_fraction:
        raise SkipBudgetExceeded(f"{skipped} of {len(order)} training days failed in epoch {epoch + 1}")
    stats = EpochStats(epoch + 1, (mse_tot / n).tolist(), reg_tot / n, loss_tot / n,
                       viol / (n * ds.pv_target.shape[-1]), len(order), skipped, dfail)
    logger.info("hsgd epoch %d: reg %.4f loss %.4f viol %.4f skipped %d", stats.epoch, stats.reg_loss_kw,
                stats.power_loss_kw, stats.violation_rate, skipped)
    return stats


# evaluation

def mape(pred: np.ndarray, truth: np.ndarray, capacity: float, floor: float = 0.05) -> float | None:
    """Mean of ``|pred - truth| / truth`` over entries above ``floor * capacity``.

    Returns ``None`` when no entry qualifies.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and target lengths differ")
    mask = truth > floor * capacity
    if not np.any(mask):
        return None
    return float(np.mean(np.abs(pred[mask] - truth[mask]) / truth[mask]))


@dataclasses.dataclass
class DayEval:
    loss_kw: np.ndarray
    reg_loss_kw: np.ndarray
    penalty: np.ndarray
    v: np.ndarray
    q_reg: np.ndarray


def _eval_day(feeder: Feeder, decide_on: Injections, truth: Injections, config: TrainConfig) -> DayEval | None:
    res = regulate(feeder, decide_on, truth, config)
    if not res.ok:
        return None
    scale = feeder.net.base_kva
    return DayEval(res.loss_kw, res.reg_loss * scale, res.penalty, res.v, res.q_reg)


def oracle_outcomes(feeder: Feeder, ds: Dataset, config: TrainConfig, days) -> dict:
    out = {}
    for d in days:
        truth = truth_injections(feeder, ds, d)
        ev = _eval_day(feeder, truth, truth, config)
        if ev is None:
            raise RuntimeError(f"oracle decision problem infeasible on day {d}")
        out[int(d)] = ev
    return out


def _split_cases(days: np.ndarray, n_cases: int) -> list[np.ndarray]:
    return [c for c in np.array_split(days, n_cases) if len(c)]


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(models: list[SitePredictor], ds: Dataset, feeder: Feeder, config: TrainConfig,
             oracle: dict | None = None, days: np.ndarray | None = None) -> dict:
    """Per-case and average metrics of ``models`` on the test split (or ``days``)."""
    days = ds.test_idx if days is None else np.asarray(days)
    oracle = oracle if oracle is not None else oracle_outcomes(feeder, ds, config, days)
    names = site_names(ds.n_pv)
    net = feeder.net
    per_day = {}
    skipped = []
    for d in days:
        fwd = predict_day(models, ds, d)
        ev = _eval_day(feeder, feeder.injections(fwd.pv_kw, fwd.load_kw), truth_injections(feeder, ds, d), config)
        if ev is None:
            skipped.append(int(d))
            logger.warning("test day %d: decision problem infeasible under the predictions", d)
        per_day[int(d)] = (fwd, ev)

    def block(day_list) -> dict:
        ok = [d for d in day_list if per_day[int(d)][1] is not None]
        row: dict = {"days": [int(d) for d in day_list], "skipped_days": [int(d) for d in day_list if int(d) in skipped]}
        mp = {}
        for s, name in enumerate(names):
            preds = np.concatenate([(per_day[int(d)][0].pv_kw[:, s] if s < ds.n_pv else per_day[int(d)][0].load_kw)
                                    for d in day_list])
            tgts = np.concatenate([site_targets(ds, s, d) for d in day_list])
            mp[name] = mape(preds, tgts, models[s].capacity, config.mape_floor)
        row["mape"] = mp
        if not ok:
            row.update(power_loss_kw=None, oracle_loss_kw=None, regret_kw=None, loss_regret_kw=None,
                       penalty=None, violation_rate=None, oracle_violation_rate=None)
            return row
        loss = np.concatenate([per_day[int(d)][1].loss_kw for d in ok])
        oloss = np.concatenate([oracle[int(d)].loss_kw for d in ok])
        reg = np.concatenate([per_day[int(d)][1].reg_loss_kw for d in ok])
        oreg = np.concatenate([oracle[int(d)].reg_loss_kw for d in ok])
        v = np.concatenate([per_day[int(d)][1].v for d in ok])
        ov = np.concatenate([oracle[int(d)].v for d in ok])
        row.update(
            power_loss_kw=float(loss.mean()),
            oracle_loss_kw=float(oloss.mean()),
            # regret in the regulation loss (losses plus weighted violations), kW
            regret_kw=float((reg - oreg).mean()),
            loss_regret_kw=float((loss - oloss).mean()),
            penalty=float(np.mean(np.concatenate([per_day[int(d)][1].penalty for d in ok]))),
            violation_rate=float(voltage_violations(v, net.v_min, net.v_max, VIOLATION_TOL).mean()),
            oracle_violation_rate=float(voltage_violations(ov, net.v_min, net.v_max, VIOLATION_TOL).mean()),
        )
        return row

    cases = []
    for k, c in enumerate(_split_cases(days, config.n_cases)):
        row = block(c)
        row["case"] = k + 1
        cases.append(row)
    avg = block(days)
    avg["case"] = "average"
    hourly = _hourly(per_day, oracle, days)
    trace = _bus_trace(per_day, oracle, days, bus=14)
    return {"cases": cases, "average": avg, "hourly": hourly, "bus15_trace": trace,
            "mape_floor": config.mape_floor}


def _hourly(per_day, oracle, days) -> dict:
    ok = [int(d) for d in days if per_day[int(d)][1] is not None]
    if not ok:
        return {}
    pred = np.mean([per_day[d][1].loss_kw for d in ok], axis=0)
    orc = np.mean([oracle[d].loss_kw for d in ok], axis=0)
    return {"loss_kw": pred.tolist(), "oracle_loss_kw": orc.tolist()}


def _bus_trace(per_day, oracle, days, bus: int, n_days: int = 7) -> dict:
    sel = [int(d) for d in days[:n_days]]
    pred = [np.sqrt(np.maximum(per_day[d][1].v[:, bus], 0)).tolist() if per_day[d][1] is not None
            else [None] * 24 for d in sel]
    orc = [np.sqrt(np.maximum(oracle[d].v[:, bus], 0)).tolist() for d in sel]
    return {"days": sel, "voltage_pu": [x for day in pred for x in day],
            "oracle_voltage_pu": [x for day in orc for x in day]}


# full experiment

@dataclasses.dataclass
class ExperimentResult:
    report: dict
    models: dict
    timing: dict


def run_experiment(ds: Dataset, net: Network, dev: DeviceSet, config: TrainConfig,
                   pretrained: list[SitePredictor] | None = None) -> ExperimentResult:
    """Pretrain, then train an MSE-only baseline and an HSGD model from the same start, then evaluate both."""
    timing = {}
    t0 = time.perf_counter()
    feeder = Feeder.for_scenario(net, dev, config.scenario)
    if pretrained is None:
        models = build_models(ds, config)
        pre_curves = pretrain(models, ds, config)
    else:
        models = copy_models(pretrained)
        pre_curves = []
    timing["pretrain_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    baseline = copy_models(models)
    base_curves = pretrain(baseline, ds, config, epochs=config.train_epochs, label="baseline")
    timing["baseline_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    hsgd = copy_models(models)
    hsgd_curves = [hsgd_epoch(hsgd, ds, feeder, config, e).to_dict() for e in range(config.train_epochs)]
    timing["hsgd_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    oracle = oracle_outcomes(feeder, ds, config, ds.test_idx)
    rep_base = evaluate(baseline, ds, feeder, config, oracle)
    rep_hsgd = evaluate(hsgd, ds, feeder, config, oracle)
    timing["evaluate_s"] = time.perf_counter() - t0

    report = {
        "version": REPORT_VERSION,
        "scenario": config.scenario,
        "config": config.to_dict(),
        "dataset": ds.provenance,
        "site_names": site_names(ds.n_pv),
        "curves": {"pretrain_mse": pre_curves, "baseline_mse": base_curves, "hsgd": hsgd_curves},
        "mse": rep_base,
        "hsgd": rep_hsgd,
        "summary": summarize(rep_base, rep_hsgd),
    }
    return ExperimentResult(report, {"pretrained": models, "mse": baseline, "hsgd": hsgd}, timing)


def summarize(rep_base: dict, rep_hsgd: dict) -> dict:
    b, h = rep_base["average"], rep_hsgd["average"]
    out = {}
    for key in ("regret_kw", "loss_regret_kw", "power_loss_kw", "violation_rate", "penalty"):
        out[key] = {"mse": b[key], "hsgd": h[key]}
    if b["regret_kw"] and h["regret_kw"] is not None and b["regret_kw"] > 0:
        out["regret_ratio"] = h["regret_kw"] / b["regret_kw"]
    if b["violation_rate"] and h["violation_rate"] is not None:
        out["violation_reduction"] = 1.0 - h["violation_rate"] / b["violation_rate"]
    return out

"""Acceptance checks for the solver, its derivatives, the feeder model and the training claims.

Each test prints one PASS/FAIL line in the terminal summary. The two training
experiments share one synthetic benchmark and one pretraining run per seed and
take roughly half an hour on a single core.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from conftest import criterion
from oracles import sweep_power_flow
from voltreg.conic.cones import in_cone
from voltreg.conic.planted import planted_socp
from voltreg.conic.problem import SolverSettings
from voltreg.conic.solver import solve
from voltreg.data import generate_synthetic
from voltreg.diffcheck import FD_TOLERANCE, CHAIN_TOLERANCE, chain_fd_case, vjp_fd_case
from voltreg.grid.builders import Injections, build_decision_problem, build_multiobjective_problem
from voltreg.grid.network import case33
from voltreg.grid.outcome import extract_outcome
from voltreg.pipeline import (
    Feeder,
    TrainConfig,
    build_models,
    hybrid_output_grads,
    oracle_outcomes,
    predict_day,
    pretrain,
    regulate,
    regulation_gradients,
    run_experiment,
    site_targets,
    truth_injections,
)
from voltreg.predictor import backward
from voltreg.seeding import rng_for
from test_conic_solver import analytic_suite

SEEDS = (0, 1, 2)
BENCH_SEED, BENCH_DAYS = 42, 250
# hybrid epochs per run; see the README for the budget behind this choice
TRAIN_EPOCHS = 1
TIGHT = SolverSettings(tolerance=1e-10)


@pytest.fixture(scope="module")
def benchmark():
    net, dev = case33()
    return net, dev, generate_synthetic(BENCH_SEED, BENCH_DAYS, dev.pv_kw)


@pytest.fixture(scope="module")
def pretrained(benchmark):
    """Per seed: pretrained models, their MSE curves and the pretraining time."""
    net, dev, ds = benchmark
    out = {}
    for seed in SEEDS:
        cfg = TrainConfig(seed=seed)
        t0 = time.perf_counter()
        models = build_models(ds, cfg)
        curves = pretrain(models, ds, cfg)
        out[seed] = (models, curves, time.perf_counter() - t0)
    return out


def _experiments(benchmark, pretrained, scenario):
    net, dev, ds = benchmark
    runs = {}
    for seed in SEEDS:
        cfg = TrainConfig(seed=seed, scenario=scenario, train_epochs=TRAIN_EPOCHS)
        models, _, pre_s = pretrained[seed]
        t0 = time.perf_counter()
        res = run_experiment(ds, net, dev, cfg, pretrained=models)
        runs[seed] = (res, pre_s + time.perf_counter() - t0)
    return runs


@pytest.fixture(scope="module")
def economic(benchmark, pretrained):
    return _experiments(benchmark, pretrained, "economic")


@pytest.fixture(scope="module")
def safety(benchmark, pretrained):
    return _experiments(benchmark, pretrained, "safety")


def test_criterion_01_conic_solver():
    with criterion(1, "conic solver: analytic suite and 100 planted SOCPs") as note:
        t0 = time.perf_counter()
        analytic_err = 0.0
        for _, prob, opt in analytic_suite():
            sol = solve(prob)
            assert sol.optimal
            analytic_err = max(analytic_err, abs(prob.c @ sol.x - opt))
        rng = rng_for(0, "acceptance/planted")
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 51))
            pp = planted_socp(rng, n, int(rng.integers(n + 2, 3 * n + 3)), max_condition=None)
            sol = solve(pp.problem, SolverSettings(tolerance=1e-7))
            assert sol.optimal
            assert in_cone(sol.s, pp.problem.cones, tol=1e-6)
            assert in_cone(sol.y, pp.problem.cones, dual=True, tol=1e-6)
            worst = max(worst, *pp.problem.residuals(sol.x, sol.y, sol.s))
        elapsed = time.perf_counter() - t0
        note["detail"] = f"analytic err {analytic_err:.1e}, worst KKT {worst:.1e}, {elapsed:.0f} s"
        assert analytic_err <= 1e-6
        assert worst <= 1e-6
        assert elapsed <= 60


def test_criterion_02_solution_map_derivative():
    with criterion(2, "solution-map VJP against finite differences") as note:
        t0 = time.perf_counter()
        rng = rng_for(0, "acceptance/vjp")
        errs = [e for _ in range(20) for e in vjp_fd_case(rng)]
        elapsed = time.perf_counter() - t0
        note["detail"] = f"max rel err {max(errs):.1e} over 20 problems, {elapsed:.0f} s"
        assert max(errs) <= FD_TOLERANCE
        assert elapsed <= 120


def test_criterion_03_power_flow_fidelity():
    with criterion(3, "33-bus voltages against a backward/forward sweep") as note:
        net, dev = case33()
        # fixed injections: no var regulation and a box wide enough to stay inactive
        net = dataclasses.replace(net, v_min=0.5, v_max=1.5)
        z = (0.0,) * dev.n_svc
        dev = dataclasses.replace(dev, svc_min=z, svc_max=z)
        base = net.base_kva
        worst_v = worst_gap = 0.0
        for pv_fraction, load_factor in ((0.0, 1.0), (0.0, 0.6), (0.5, 0.8)):
            inj = Injections.nominal(net, dev, pv_fraction=pv_fraction, load_factor=load_factor)
            prob, pmap = build_decision_problem(net, dev, inj)
            out = extract_outcome(solve(prob, TIGHT), pmap, net)
            p_inj = -inj.p_d[0] / base
            np.add.at(p_inj, list(dev.pv_bus), inj.p_pv[0] / base)
            v2, *_ = sweep_power_flow(net, p_inj, -inj.q_d[0] / base)
            worst_v = max(worst_v, np.abs(out.voltage - np.sqrt(v2)).max())
            worst_gap = max(worst_gap, out.relaxation_gap)
        note["detail"] = f"max |dV| {worst_v:.1e} p.u., max gap {worst_gap:.1e}"
        assert worst_v <= 1e-4
        assert worst_gap <= 1e-6


def test_criterion_04_ground_truth_regret(benchmark):
    with criterion(4, "zero regret and zero penalty under ground-truth predictions") as note:
        net, dev, ds = benchmark
        rng = rng_for(0, "acceptance/oracle-days")
        days = np.sort(rng.choice(ds.test_idx, size=30, replace=False))
        worst_regret = worst_consistency = worst_pen = 0.0
        for k, scenario in enumerate(("economic", "safety")):
            cfg = TrainConfig(scenario=scenario, solver_tolerance=1e-10)
            feeder = Feeder.for_scenario(net, dev, scenario)
            part = days[k::2]
            oracle = oracle_outcomes(feeder, ds, cfg, part)
            for d in part:
                truth = truth_injections(feeder, ds, d)
                res = regulate(feeder, truth, truth, cfg)
                assert res.ok
                reg_kw = res.reg_loss * net.base_kva
                worst_regret = max(worst_regret, np.abs(reg_kw - oracle[int(d)].reg_loss_kw).max())
                # the evaluator's score equals the decision problem's optimal loss up to solver accuracy
                dec_kw = np.array([s.x @ p.c for s, p in zip(res.dec_solutions, res.dec_problems)]) * net.base_kva
                worst_consistency = max(worst_consistency, np.abs(reg_kw - dec_kw).max())
                worst_pen = max(worst_pen, res.penalty.max())
        note["detail"] = (f"regret {worst_regret:.1e} kW, decision/evaluator gap {worst_consistency:.1e} kW, "
                          f"penalty {worst_pen:.1e}")
        assert worst_regret <= 1e-6
        assert worst_consistency <= 1e-5
        # numerically zero: below the solver's resolution in squared p.u.
        assert worst_pen <= 1e-9


def test_criterion_05_end_to_end_gradient(benchmark):
    with criterion(5, "full-chain gradient on the 3-bus toy, hybrid additivity") as note:
        errs = [chain_fd_case(rng_for(d, "acceptance/chain")) for d in range(20)]
        net, dev, ds = benchmark
        cfg = TrainConfig(seed=0, scenario="safety", hidden=(16, 16))
        models = build_models(ds, cfg)
        feeder = Feeder.for_scenario(net, dev, cfg.scenario)
        d = int(ds.train_idx[0])
        fwd = predict_day(models, ds, d)
        res = regulate(feeder, feeder.injections(fwd.pv_kw, fwd.load_kw), truth_injections(feeder, ds, d), cfg)
        g_pv, g_load = regulation_gradients(feeder, res, cfg)
        targets = [site_targets(ds, s, d) for s in range(len(models))]
        total, reg, mse, _ = hybrid_output_grads(models, fwd, targets, g_pv, g_load, 1.0)
        additivity = 0.0
        for s, m in enumerate(models):
            gt = backward(m.model, fwd.tapes[s], total[s])
            gr = backward(m.model, fwd.tapes[s], reg[s])
            gm = backward(m.model, fwd.tapes[s], mse[s])
            additivity = max(additivity, max(np.abs(a - b - c).max() for a, b, c in zip(gt, gr, gm)))
        note["detail"] = f"max chain rel err {max(errs):.1e}, additivity {additivity:.1e}"
        assert max(errs) <= CHAIN_TOLERANCE
        assert additivity <= 1e-10


def _summary_line(runs, key):
    return ", ".join(f"seed {s}: {r.report['summary'][key]['mse']:.3f} -> {r.report['summary'][key]['hsgd']:.3f}"
                     for s, (r, _) in runs.items())


def test_criterion_06_economic_regret(economic):
    with criterion(6, "economic scenario: hybrid regret <= 0.9 x MSE baseline") as note:
        ratios = {s: r.report["summary"]["regret_kw"]["hsgd"] / r.report["summary"]["regret_kw"]["mse"]
                  for s, (r, _) in economic.items()}
        wall = sum(t for _, t in economic.values())
        note["detail"] = (f"regret kW {_summary_line(economic, 'regret_kw')}; "
                          f"ratios {[round(v, 3) for v in ratios.values()]}; {wall / 60:.1f} min")
        for r, _ in economic.values():
            assert not r.report["hsgd"]["average"]["skipped_days"]
        assert all(v <= 0.9 for v in ratios.values())
        assert wall <= 30 * 60


def test_criterion_07_safety_violations(safety):
    with criterion(7, "safety scenario: fewer violations than the MSE baseline") as note:
        base = np.array([r.report["summary"]["violation_rate"]["mse"] for r, _ in safety.values()])
        hyb = np.array([r.report["summary"]["violation_rate"]["hsgd"] for r, _ in safety.values()])
        loss = _summary_line(safety, "power_loss_kw")
        reduction = float(np.mean(1.0 - hyb / base)) if np.all(base > 0) else float("nan")
        note["detail"] = (f"violation rate {_summary_line(safety, 'violation_rate')}; "
                          f"mean reduction {reduction:.0%}; power loss kW {loss}")
        for r, _ in safety.values():
            summary = r.report["summary"]
            assert "power_loss_kw" in summary and "violation_rate" in summary
        assert np.all(hyb < base)
        assert reduction >= 0.25


def test_criterion_08_pretraining_convergence(pretrained):
    with criterion(8, "pretraining: epoch-10 MSE <= 0.5 x epoch-1 MSE for every model") as note:
        ratios = [np.array(curves[9]) / np.array(curves[0]) for _, curves, _ in pretrained.values()]
        worst = max(float(r.max()) for r in ratios)
        note["detail"] = f"worst ratio {worst:.3f} over {len(ratios[0])} models x {len(SEEDS)} seeds"
        assert all(len(curves) >= 10 for _, curves, _ in pretrained.values())
        assert worst <= 0.5


def test_criterion_09_multiobjective_variant(benchmark):
    with criterion(9, "multi-objective variant: zero-weight reduction, deviation decreases") as note:
        net, dev, ds = benchmark
        feeder = Feeder.for_scenario(net, dev, "economic")
        net, dev = feeder.net, feeder.dev
        day = int(ds.test_idx[0])
        inj = truth_injections(feeder, ds, day)
        hours = [t for t in range(24) if inj.p_pv[t].sum() > 0]
        reduce_err = 0.0
        for t in hours:
            # no var headroom: the inverter's rating equals its active output
            tight_dev = dev.with_dg(dev.pv_bus, [max(p, 1e-3) for p in inj.p_pv[t]])
            pb, mb = build_decision_problem(net, dev, inj, t)
            a = extract_outcome(solve(pb, TIGHT), mb, net)
            mp, mm = build_multiobjective_problem(net, tight_dev, inj, weights=(0.0, 0.0), t=t)
            b = extract_outcome(solve(mp, TIGHT), mm, net)
            reduce_err = max(reduce_err, np.abs(b.q_reg - a.q_reg).max(), abs(b.power_loss - a.power_loss))
            # slack headroom: the inverters act as extra symmetric var sources
            head = np.sqrt(np.maximum((1.2 * np.asarray(dev.pv_kw)) ** 2 - inj.p_pv[t] ** 2, 0.0))
            slack_dev = dev.with_dg(dev.pv_bus, [1.2 * k for k in dev.pv_kw])
            as_svc = dataclasses.replace(dev, svc_bus=dev.svc_bus + dev.pv_bus,
                                         svc_min=dev.svc_min + tuple(-head * 1.0), svc_max=dev.svc_max + tuple(head * 1.0))
            pa, ma = build_decision_problem(net, as_svc, inj, t)
            c = extract_outcome(solve(pa, TIGHT), ma, net)
            mp, mm = build_multiobjective_problem(net, slack_dev, inj, weights=(0.0, 0.0), t=t)
            e = extract_outcome(solve(mp, TIGHT), mm, net)
            reduce_err = max(reduce_err, abs(e.power_loss - c.power_loss))
        deviation = {}
        dg_dev = dev.with_dg(dev.pv_bus, [1.1 * k for k in dev.pv_kw])
        for a1 in (0.0, 0.01, 0.1):
            devs = []
            for t in range(24):
                mp, mm = build_multiobjective_problem(net, dg_dev, inj, weights=(a1, 0.0), t=t)
                o = extract_outcome(solve(mp, SolverSettings(tolerance=1e-9)), mm, net)
                devs.append(np.mean(np.abs(o.voltage - 1.0)))
            deviation[a1] = float(np.mean(devs))
        note["detail"] = (f"zero-weight mismatch {reduce_err:.1e}; mean |V - 1| "
                          + ", ".join(f"a1={k}: {v:.4%}" for k, v in deviation.items()))
        assert reduce_err <= 1e-4
        assert deviation[0.01] <= deviation[0.0] and deviation[0.1] <= deviation[0.0]


def test_criterion_10_determinism():
    with criterion(10, "identical seeds give byte-identical reports") as note:
        net, dev = case33()
        ds = generate_synthetic(7, 30, dev.pv_kw)
        cfg = TrainConfig(seed=3, scenario="safety", hidden=(16, 16), pretrain_epochs=2, train_epochs=1)
        a = json.dumps(run_experiment(ds, net, dev, cfg).report, sort_keys=True).encode()
        b = json.dumps(run_experiment(ds, net, dev, cfg).report, sort_keys=True).encode()
        note["detail"] = f"{len(a)} bytes, sha-equal {a == b}"
        assert a == b


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

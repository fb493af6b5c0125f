"""The ten acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict through the ``report`` fixture; the
lines are printed in the pytest terminal summary.  The training regressions
(criteria 5 and 7 to 10) share session-scoped runs and are marked slow.
"""

import time

import numpy as np
import pytest

from mfvpinn.adapt import select_tau
from mfvpinn.assembly import VariationalLoss, build_tensors, loss_naive
from mfvpinn.checks import check_estimator_vanishing, check_gradients, check_quadrature
from mfvpinn.driver import RunConfig, run
from mfvpinn.estimator import CoverEstimator
from mfvpinn.geometry import cover_check, initial_covers
from mfvpinn.network import MLP, Model
from mfvpinn.optim import TrainSchedule, train_generation
from mfvpinn.problems import get_problem
from test_adapt import oracle_tau
from test_assembly import random_cover

REGRESSION = dict(problem="poisson_singular", C_M=4, max_generations=6,
                  schedule=TrainSchedule(adam_epochs=1000, max_lbfgs_epochs=2000))
QUICK = TrainSchedule(adam_epochs=200, max_lbfgs_epochs=200)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def runs():
    cache = {}

    def get(strategy, seed):
        key = (strategy, seed)
        if key not in cache:
            cache[key] = run(RunConfig(strategy=strategy, seed=seed, **REGRESSION), write=False)
        return cache[key]

    return get


def test_c1_quadrature_exactness(report):
    res, dt = _timed(check_quadrature)
    ok = res.passed and dt < 1.0
    report(1, ok, f"{res.detail}, {dt:.2f}s")
    assert ok


def test_c2_gradient_fidelity(report):
    res, dt = _timed(check_gradients)
    ok = res.passed and dt < 30.0
    report(2, ok, f"{res.detail}, {dt:.2f}s")
    assert ok


def test_c3_estimator_vanishing(report):
    res, dt = _timed(check_estimator_vanishing)
    ok = res.passed and dt < 1.0
    report(3, ok, f"{res.detail}, {dt:.2f}s")
    assert ok


def test_c4_marking_oracle(report):
    rng = np.random.default_rng(7)
    cases = []
    for trial in range(1000):
        n = int(rng.integers(1, 80))
        kind = trial % 3
        if kind == 0:
            s = rng.uniform(size=n)
        elif kind == 1:
            s = rng.integers(0, 5, size=n).astype(float)
        else:
            s = 10.0 ** rng.uniform(-6, 4, size=n)
        cases.append((s, rng.permutation(n)))
    got, dt = _timed(lambda: [select_tau(s, ids)[:2] for s, ids in cases])
    bad = sum(g != oracle_tau(s, ids) for g, (s, ids) in zip(got, cases))
    ok = bad == 0 and dt < 1.0
    report(4, ok, f"{bad} disagreements in 1000 vectors, {dt:.2f}s")
    assert ok


def test_c6_assembly_oracle(report):
    def body():
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            prob = get_problem("poisson_holes" if seed % 2 else "poisson_singular")
            net = MLP((2, 20, 20, 1))
            tensors = build_tensors(random_cover(rng, int(rng.integers(1, 51))), prob)
            theta = net.init_params(seed)
            model = Model(net, prob.lift)
            slow = loss_naive(model, tensors, theta)
            # holes losses reach 1e3 to 1e4, where one ulp already nears 1e-12
            worst = max(worst, abs(VariationalLoss(model, tensors).value(theta) - slow) / max(1.0, abs(slow)))
        return worst

    worst, dt = _timed(body)
    ok = worst < 1e-12 and dt < 10.0
    report(6, ok, f"max |sparse - double loop| / max(1, |loss|) {worst:.2e}, {dt:.2f}s")
    assert ok


@pytest.mark.slow
def test_c5_cover_preservation(report):
    s3 = run(RunConfig(strategy=3, max_generations=6, schedule=QUICK, cover_check_grid=201), write=False)
    holes = run(RunConfig(problem="poisson_holes", max_generations=4, schedule=QUICK, cover_check_grid=201),
                write=False)
    flags = [g.cover_ok for g in s3.generations] + [g.cover_ok for g in holes.generations]
    removed = sum(len(r.removed) for r in s3.refinements)
    # the hole-cut covers must also leave the holes themselves uncovered
    holes_dom = get_problem("poisson_holes").domain
    ok = all(flags) and removed > 0 and all(cover_check(c, holes_dom, 201) for c in holes.covers)
    report(5, ok, f"{sum(flags)}/{len(flags)} covers pass on 201x201, {removed} parents removed by Strategy 3")
    assert ok


@pytest.mark.slow
def test_c7_error_decay(runs, report):
    res = runs(2, 0)
    e = np.array(res.errors)
    ratio = e[0] / e[-1]
    non_mono = int(np.sum(np.diff(e) > 0))
    ok = ratio >= 3 and non_mono <= 1 and -0.45 <= res.rate <= -0.15
    report(7, ok, f"error ratio {ratio:.2f}, {non_mono} non-monotone steps, rate {res.rate:.3f}, "
                  f"patches {res.n_test_functions}")
    assert ok


@pytest.mark.slow
def test_c8_strategy_ordering(runs, report):
    pairs = [(runs(4, s).errors[-1], runs(2, s).errors[-1]) for s in range(3)]
    wins = sum(e4 >= e2 for e4, e2 in pairs)
    ok = wins >= 2
    report(8, ok, f"Strategy 4 no better in {wins}/3 seeds; final errors (S4, S2) "
                  + ", ".join(f"({a:.3e}, {b:.3e})" for a, b in pairs))
    assert ok


@pytest.mark.slow
def test_c9_indicator_tracking(runs, report):
    res = runs(2, 0)
    gen = np.array([r.generation for r in res.history])
    les = np.log([r.ES for r in res.history])
    lerr = np.log([r.H1_error for r in res.history])
    pooled = float(np.corrcoef(les, lerr)[0, 1])
    # diagnostic only: correlation once each generation's mean is removed
    centred = [(les[gen == m] - les[gen == m].mean(), lerr[gen == m] - lerr[gen == m].mean()) for m in set(gen)]
    within = float(np.corrcoef(np.concatenate([c[0] for c in centred]), np.concatenate([c[1] for c in centred]))[0, 1])
    ok = pooled >= 0.9
    report(9, ok, f"pooled Pearson {pooled:.3f} over {len(les)} checkpoints (within-generation {within:.3f})")
    assert ok


@pytest.mark.slow
def test_c10_early_stopping_fidelity(runs, report):
    res = runs(2, 0)
    sched = REGRESSION["schedule"]
    worst, neglected_best = 0.0, 0
    for g in res.generations:
        rows = [r for r in res.history if r.generation == g.generation]
        n_negl = sched.n_negl(g.generation)
        eligible = [r for r in rows if r.epoch > n_negl]
        best = min(eligible, key=lambda r: r.ES)
        # g.es is recomputed from the restored parameters after training
        worst = max(worst, abs(best.ES - g.es))
        neglected_best += best.epoch <= n_negl
    # a run where the neglected window holds the lowest indicator values
    prob = get_problem("poisson_singular")
    _, P1 = initial_covers()
    net = MLP((2, 10, 10, 1))
    model = Model(net, prob.lift)
    tensors = build_tensors(P1, prob)
    loss = VariationalLoss(model, tensors)
    est = CoverEstimator(tensors, prob)

    def indicator(th):
        return est.evaluate(model, th, loss.residuals(th)).es

    short = train_generation(1, loss.value_and_grad, net.init_params(3),
                           TrainSchedule(max_lbfgs_epochs=600, negl_base=100), indicator, n_patches=len(P1))
    restored = abs(indicator(short.params) - short.state.best_es)
    ok = worst <= 1e-12 and neglected_best == 0 and restored <= 1e-12 and short.state.best_epoch > 200
    report(10, ok, f"max |best ES - restored ES| {max(worst, restored):.1e}, best epochs all past N_negl")
    assert ok

"""Self-checks run by ``mfvpinn check``: quick numerical property suites."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .assembly import VariationalLoss, build_block, build_tensors, residual
from .estimator import patch_indicator
from .geometry import Patch, initial_covers
from .network import MLP, BoundaryLift, Model
from .problems import ProblemSpec, get_problem, zero_field
from .quadrature import edge_rule, map_rule, reference_rules


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _monomials(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d + 1)]


def _rect_moment(x0, x1, y0, y1, a, b):
    return (x1 ** (a + 1) - x0 ** (a + 1)) / (a + 1) * (y1 ** (b + 1) - y0 ** (b + 1)) / (b + 1)


def check_quadrature(n_patches: int = 20, seed: int = 0, q: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    comp = reference_rules(q).composite
    patches = [Patch.square(0, (0.5, 0.5), 1.0)]
    for _ in range(n_patches):
        h = rng.uniform(0.05, 1.0, size=2)
        c = rng.uniform(h / 2, 1 - h / 2)
        patches.append(Patch(0, tuple(c), tuple(h / 2)))
    worst = 0.0
    for p in patches:
        rule = map_rule(comp, p)
        (x0, y0), (x1, y1) = p.map_point(np.array([[0.0, 0.0], [1.0, 1.0]]))
        for a, b in _monomials(q):
            val = rule.integrate(lambda z: z[:, 0] ** a * z[:, 1] ** b)
            worst = max(worst, abs(val - _rect_moment(x0, x1, y0, y1, a, b)))
    for p0, p1 in itertools.combinations(rng.uniform(size=(4, 2)), 2):
        rule = edge_rule(p0, p1, q)
        length = np.linalg.norm(p1 - p0)
        for k in range(q + 1):
            # integral of t^k along the segment parametrized by t in [0, 1]
            t = (rule.nodes - p0) @ (p1 - p0) / length**2
            worst = max(worst, abs(float(np.dot(rule.weights, t**k)) - length / (k + 1)))
    return CheckResult("quadrature exactness", worst < 1e-12, f"max abs error {worst:.2e}")


def check_gradients(seed: int = 0, n_probe: int = 50, step: float = 1e-5) -> CheckResult:
    problem = get_problem("poisson_singular")
    _, P1 = initial_covers()
    net = MLP((2, 20, 20, 1))
    model = Model(net, problem.lift)
    theta = net.init_params(seed)
    loss = VariationalLoss(model, build_tensors(P1, problem))
    _, g = loss.value_and_grad(theta)
    rng = np.random.default_rng(seed)
    # probe parameters whose gradient is well above finite-difference noise
    cand = np.flatnonzero(np.abs(g) > 1e-6 * np.abs(g).max())
    idx = rng.choice(cand, size=min(n_probe, len(cand)), replace=False)
    worst = 0.0
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = step
        fd = (loss.value(theta + e) - loss.value(theta - e)) / (2 * step)
        worst = max(worst, abs(fd - g[i]) / abs(g[i]))
    pts = rng.uniform(0.05, 0.95, size=(100, 2))
    _, du = net.forward(theta, pts)
    h = 1e-6
    fdx = (net.forward(theta, pts + [h, 0])[0] - net.forward(theta, pts - [h, 0])[0]) / (2 * h)
    fdy = (net.forward(theta, pts + [0, h])[0] - net.forward(theta, pts - [0, h])[0]) / (2 * h)
    fd = np.column_stack([fdx, fdy])
    spatial = float(np.max(np.linalg.norm(fd - du, axis=1) / np.linalg.norm(du, axis=1)))
    ok = worst < 1e-5 and spatial < 1e-6
    return CheckResult("gradient fidelity", ok, f"parameter rel err {worst:.2e}, spatial rel err {spatial:.2e}")


class LinearStub:
    """Evaluator returning a fixed linear function ``a + b.x`` (a stand-in network)."""

    def __init__(self, a=0.3, b=(1.2, -0.7)):
        self.a = float(a)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        return self.a + points @ self.b, np.tile(self.b, (len(points), 1))

    def problem(self) -> ProblemSpec:
        return ProblemSpec(
            "linear",
            f=lambda p: np.zeros(len(p)),
            g=lambda p: self(p)[0],
            lift=BoundaryLift(zero_field, self),
            exact=lambda p: self(p)[0],
            exact_grad=lambda p: self(p)[1],
        )


def check_estimator_vanishing(n_patches: int = 20, seed: int = 0) -> CheckResult:
    stub = LinearStub()
    problem = stub.problem()
    rng = np.random.default_rng(seed)
    patches = [Patch.square(0, (0.5, 0.5), 1.0)]
    for i in range(n_patches):
        h = rng.uniform(0.05, 1.0, size=2)
        patches.append(Patch(i + 1, tuple(rng.uniform(h / 2, 1 - h / 2)), tuple(h / 2)))
    worst = 0.0
    for p in patches:
        blk = build_block(p, problem)
        r = residual(blk, *stub(blk.nodes))
        b = patch_indicator(p, stub, problem, r)
        worst = max(worst, b.eta_res, b.eta_loss, float(b.eta_coef.max()), float(b.eta_rhs.max()))
    return CheckResult("estimator vanishing", worst < 1e-12, f"largest component {worst:.2e}")


ALL_CHECKS = (check_quadrature, check_gradients, check_estimator_vanishing)


def run_checks() -> list[CheckResult]:
    return [chk() for chk in ALL_CHECKS]


"""Benchmark problems and the relative H^1 error harness.

A problem is ``-div(mu grad u) + beta . grad u + sigma u = f`` with Dirichlet
data ``g``, posed on the unit square (optionally with rectangular holes).
All fields are vectorized: they take points of shape (N, 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import UNIT_SQUARE, Domain
from .network import BoundaryLift
from .quadrature import square_cell_rule

ScalarField = Callable[[np.ndarray], np.ndarray]


def _ones(p):
    return np.ones(len(p))


def _zeros(p):
    return np.zeros(len(p))


def _zeros2(p):
    return np.zeros((len(p), 2))


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    f: ScalarField
    g: ScalarField
    lift: BoundaryLift
    domain: Domain = UNIT_SQUARE
    mu: ScalarField = _ones
    beta: Callable[[np.ndarray], np.ndarray] = _zeros2
    sigma: ScalarField = _zeros
    exact: ScalarField | None = None
    exact_grad: Callable[[np.ndarray], np.ndarray] | None = None

    def coefficients(self, points):
        """``(mu, beta, sigma, f)`` sampled at the points."""
        return self.mu(points), self.beta(points), self.sigma(points), self.f(points)


def square_bubble(points):
    """``x(1-x)y(1-y)`` and its gradient."""
    x, y = points[:, 0], points[:, 1]
    bx, by = x * (1 - x), y * (1 - y)
    val = bx * by
    grad = np.column_stack([(1 - 2 * x) * by, bx * (1 - 2 * y)])
    return val, grad


def zero_field(points):
    return np.zeros(len(points)), np.zeros((len(points), 2))


# ---------------------------------------------------------------- singular
SQRT3_2 = np.sqrt(3.0) / 2.0


def singular_u(points):
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    return r ** (2.0 / 3.0) * np.sin(2.0 / 3.0 * (theta + np.pi / 2))


def singular_grad(points):
    # grad u = (2/3) r^(-1/3) (sin(pi/3 - t/3), cos(pi/3 - t/3)); infinite at 0
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    with np.errstate(divide="ignore"):
        c = 2.0 / 3.0 * r ** (-1.0 / 3.0)
    phase = np.pi / 3 - theta / 3
    return np.column_stack([c * np.sin(phase), c * np.cos(phase)])


def _radial_part(points):
    """``(sqrt3/2) r^(2/3)``: matches u on both edges through the origin."""
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    val = SQRT3_2 * r ** (2.0 / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(r > 0, SQRT3_2 * 2.0 / 3.0 * r ** (-4.0 / 3.0), 0.0)
    return val, c[:, None] * points


def _singular_remainder(points):
    val, grad = _radial_part(points)
    return singular_u(points) - val, singular_grad(points) - grad


def singular_extension(points):
    """Extension of the singular problem's boundary data that is not u itself.

    ``(sqrt3/2) r^(2/3)`` reproduces g on x=0 and y=0 exactly; the smooth
    remainder of g on x=1 and y=1 is blended in bilinearly.  The result
    equals g on the whole boundary, while ``u - gbar`` keeps the corner
    singularity that the network has to resolve.
    """
    points = np.asarray(points, dtype=float)
    x, y = points[:, 0], points[:, 1]
    n = len(points)
    val, grad = _radial_part(points)
    right = np.column_stack([np.ones(n), y])
    top = np.column_stack([x, np.ones(n)])
    rho_r, drho_r = _singular_remainder(right)
    rho_t, drho_t = _singular_remainder(top)
    rho_c = float(_singular_remainder(np.array([[1.0, 1.0]]))[0][0])
    val = val + x * rho_r + y * rho_t - x * y * rho_c
    gx = rho_r + y * drho_t[:, 0] - y * rho_c
    gy = x * drho_r[:, 1] + rho_t - x * rho_c
    return val, grad + np.column_stack([gx, gy])


def poisson_singular() -> ProblemSpec:
    """-Lap u = 0 on the unit square, u = r^(2/3) sin(2/3 (theta + pi/2))."""
    return ProblemSpec(
        name="poisson_singular",
        f=_zeros,
        g=singular_u,
        lift=BoundaryLift(square_bubble, singular_extension),
        exact=singular_u,
        exact_grad=singular_grad,
    )


# ------------------------------------------------------------------- holes
# u = X(x) Y(y) / C_u with X = x(x-1)(x-4/13)(x-5/13)(x-8/13)(x-9/13) and
# Y = y(y-1)(y-4/17)(y-5/17)(y-12/17)(y-13/17).  Ascending coefficients of
# X, X', X'', Y, Y', Y'' come from exact rational expansion in sympy; the
# forcing is checked against a fourth-order stencil in the tests.
_X = (
    (0.0, -0.0504184027169917, 0.500122544728826, -1.8994082840236686,
     3.4497041420118344, -3.0, 1.0),
    (-0.0504184027169917, 1.000245089457652, -5.6982248520710055,
     13.798816568047338, -15.0, 6.0),
    (1.000245089457652, -11.396449704142011, 41.396449704142015, -60.0, 30.0),
)
_Y = (
    (0.0, -0.03735587457046731, 0.424899127165623, -1.7750865051903115,
     3.387543252595156, -3.0, 1.0),
    (-0.03735587457046731, 0.849798254331246, -5.325259515570934,
     13.550173010380623, -15.0, 6.0),
    (0.849798254331246, -10.650519031141869, 40.65051903114187, -60.0, 30.0),
)
# X(2/13) Y(2/17) = 109771200 / 116507435287321
HOLES_CU = 109771200 / 116507435287321

HOLE_SPECS = (
    ((9 / 26, 9 / 34), 1 / 26, 1 / 34),
    ((17 / 26, 9 / 34), 1 / 26, 1 / 34),
    ((9 / 26, 25 / 34), 1 / 26, 1 / 34),
    ((17 / 26, 25 / 34), 1 / 26, 1 / 34),
)
HOLES_DOMAIN = Domain.with_holes(HOLE_SPECS)


def _poly(coef, t):
    return np.polynomial.polynomial.polyval(t, coef)


def holes_u(points):
    x, y = points[:, 0], points[:, 1]
    return _poly(_X[0], x) * _poly(_Y[0], y) / HOLES_CU


def holes_grad(points):
    x, y = points[:, 0], points[:, 1]
    X0, X1 = _poly(_X[0], x), _poly(_X[1], x)
    Y0, Y1 = _poly(_Y[0], y), _poly(_Y[1], y)
    return np.column_stack([X1 * Y0, X0 * Y1]) / HOLES_CU


def holes_f(points):
    x, y = points[:, 0], points[:, 1]
    lap = _poly(_X[2], x) * _poly(_Y[0], y) + _poly(_X[0], x) * _poly(_Y[2], y)
    return -lap / HOLES_CU


def hole_factor(points, hole):
    """R-conjunction distance surrogate: zero on the hole boundary, positive outside."""
    cx, cy = 0.5 * (hole.x0 + hole.x1), 0.5 * (hole.y0 + hole.y1)
    a, b = 0.5 * hole.width, 0.5 * hole.height
    dx, dy = points[:, 0] - cx, points[:, 1] - cy
    f1 = (a * a - dx * dx) / (2 * a)
    f2 = (b * b - dy * dy) / (2 * b)
    root = np.hypot(f1, f2)
    val = root - f1 - f2
    df1 = np.column_stack([-dx / a, np.zeros_like(dx)])
    df2 = np.column_stack([np.zeros_like(dy), -dy / b])
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.where(root > 0, f1 / root, 0.0)
        w2 = np.where(root > 0, f2 / root, 0.0)
    grad = (w1 - 1)[:, None] * df1 + (w2 - 1)[:, None] * df2
    return val, grad


def holes_cutoff(points, domain: Domain = HOLES_DOMAIN):
    """Outer bubble times one smooth factor per hole."""
    val, grad = square_bubble(points)
    for h in domain.holes:
        hv, hg = hole_factor(points, h)
        grad = grad * hv[:, None] + val[:, None] * hg
        val = val * hv
    return val, grad


def poisson_holes() -> ProblemSpec:
    """-Lap u = f on the unit square minus four holes, g = 0, u(2/13, 2/17) = 1."""
    return ProblemSpec(
        name="poisson_holes",
        f=holes_f,
        g=_zeros,
        lift=BoundaryLift(holes_cutoff, zero_field),
        domain=HOLES_DOMAIN,
        exact=holes_u,
        exact_grad=holes_grad,
    )


PROBLEMS = {"poisson_singular": poisson_singular, "poisson_holes": poisson_holes}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------- H1 error
def error_rule(domain: Domain, ref_level: int = 64, order: int = 5):
    """Tensor Gauss rule on a grid with ``ref_level`` cells per side.

    Hole edges are inserted as extra grid lines so each cell lies entirely
    inside or outside a hole; hole cells are dropped.
    """
    xs = set(np.linspace(0.0, 1.0, ref_level + 1).tolist())
    ys = set(xs)
    for h in domain.holes:
        xs.update((h.x0, h.x1))
        ys.update((h.y0, h.y1))
    xs, ys = np.array(sorted(xs)), np.array(sorted(ys))
    rule = square_cell_rule(xs, ys, order)
    keep = domain.inside(rule.nodes)
    for h in domain.holes:
        keep &= ~h.contains(rule.nodes, closed=True)
    return rule.nodes[keep], rule.weights[keep]


def h1_norm_sq(values, grads, weights) -> float:
    return float(np.dot(weights, values**2 + np.einsum("ij,ij->i", grads, grads)))


class H1ErrorMeter:
    """Relative H^1 error ``||u - v||_1 / ||u||_1`` on a fixed fine rule."""

    def __init__(self, problem: ProblemSpec, ref_level: int = 64):
        if problem.exact is None or problem.exact_grad is None:
            raise ValueError(f"problem {problem.name} has no exact solution")
        self.nodes, self.weights = error_rule(problem.domain, ref_level)
        self.u = problem.exact(self.nodes)
        self.du = problem.exact_grad(self.nodes)
        self.norm = np.sqrt(h1_norm_sq(self.u, self.du, self.weights))

    def __call__(self, evaluate) -> float:
        v, dv = evaluate(self.nodes)
        return np.sqrt(h1_norm_sq(self.u - v, self.du - dv, self.weights)) / self.norm


def relative_h1_error(evaluate, problem: ProblemSpec, ref_level: int = 64) -> float:
    """``evaluate`` maps points to ``(values, gradients)`` of the approximation."""
    return H1ErrorMeter(problem, ref_level)(evaluate)

"""Triangle, composite-patch, mapped and edge quadrature rules.

Triangle rules are stored on the unit right triangle ``(0,0), (1,0), (0,1)``
in barycentric form and pushed to any triangle affinely.  "Order q" means
exact for every polynomial of total degree <= q.  The per-triangle training
rules are chosen with enough unisolvent nodes for a least-squares projection
onto degree-q polynomials (the estimator needs it), which is why order 3 uses
the 12-point degree-6 rule rather than a minimal 6-point one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .geometry import N_TRIANGLES, Patch, ref_triangle_vertices

SUPPORTED_ORDERS = (2, 3, 4, 5)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    owner: str = ""

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f) -> float:
        values = f(self.nodes) if callable(f) else np.asarray(f)
        return float(np.dot(self.weights, values))


def _orbit_s21(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit_s111(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return sorted(set(itertools.permutations((a, b, c))))


# Symmetric rules on the unit right triangle, weights normalized to sum 1.
# Digits polished by Levenberg-Marquardt on the moment equations.
_SYMMETRIC = {
    4: [
        ("s21", (0.44594849091596483,), 0.22338158967801136),
        ("s21", (0.09157621350977077,), 0.10995174365532195),
    ],
    6: [
        ("s21", (0.06308901449151173,), 0.05084490637022012),
        ("s21", (0.24928674517086663,), 0.11678627572645339),
        ("s111", (0.05314504984478533, 0.31035245103381875), 0.08285107561832991),
    ],
}


def _symmetric_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    bary, w = [], []
    for kind, args, weight in _SYMMETRIC[degree]:
        orbit = _orbit_s21(*args) if kind == "s21" else _orbit_s111(*args)
        bary.extend(orbit)
        w.extend([weight] * len(orbit))
    bary = np.array(bary)
    return bary[:, :2].copy(), 0.5 * np.array(w)


def conical_product_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n*n-point collapsed Gauss rule on the unit triangle, exact to degree 2n-1."""
    # Gauss-Jacobi(1, 0) in the collapsed direction absorbs the Duffy Jacobian
    s, ws = roots_jacobi(n, 1.0, 0.0)
    t, wt = roots_legendre(n)
    s = 0.5 * (1.0 + s)
    ws = ws / 4.0
    t = 0.5 * (1.0 + t)
    wt = wt / 2.0
    x = np.outer(s, np.ones(n))
    y = np.outer(1.0 - s, t)
    nodes = np.column_stack([x.ravel(), y.ravel()])
    weights = np.outer(ws, wt).ravel()
    return nodes, weights


@lru_cache(maxsize=None)
def unit_triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Training rule of the given order on the unit right triangle."""
    if order == 2:
        return _symmetric_rule(4)
    if order == 3:
        return _symmetric_rule(6)
    if order in (4, 5):
        return conical_product_rule(order + 1)
    raise ValueError(f"unsupported quadrature order {order}; use one of {SUPPORTED_ORDERS}")


@lru_cache(maxsize=None)
def fine_triangle_rule(degree: int = 7) -> tuple[np.ndarray, np.ndarray]:
    return conical_product_rule((degree + 2) // 2)


def triangle_rule(vertices, order: int, fine: bool = False) -> QuadratureRule:
    """Rule on an arbitrary triangle given as a (3, 2) vertex array."""
    v = np.asarray(vertices, dtype=float)
    ref_nodes, ref_w = fine_triangle_rule(order) if fine else unit_triangle_rule(order)
    jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
    area2 = abs(np.linalg.det(jac))
    nodes = v[0] + ref_nodes @ jac.T
    return QuadratureRule(nodes, ref_w * area2, order, "triangle")


@dataclass(frozen=True)
class ReferenceRules:
    """Per-triangle rules on the reference fan plus their composite union."""

    triangles: tuple[QuadratureRule, ...]
    composite: QuadratureRule

    @property
    def points_per_triangle(self) -> int:
        return len(self.triangles[0])


@lru_cache(maxsize=None)
def reference_rules(q: int = 3, fine: bool = False) -> ReferenceRules:
    """Order-q rules on the four fan triangles of the unit square and their union.

    With ``fine=True`` the per-triangle rules are the degree-q collapsed Gauss
    rules used for continuous norms instead of the training rules.
    """
    tris = tuple(triangle_rule(ref_triangle_vertices(j), q, fine) for j in range(N_TRIANGLES))
    comp = QuadratureRule(
        np.concatenate([t.nodes for t in tris]),
        np.concatenate([t.weights for t in tris]),
        q,
        "reference-patch",
    )
    return ReferenceRules(tris, comp)


def map_rule(rule: QuadratureRule, patch: Patch) -> QuadratureRule:
    """Push a reference-square rule to a patch; weights scale with the area ratio."""
    return QuadratureRule(patch.map_point(rule.nodes), rule.weights * patch.area, rule.order, "patch")


def edge_rule(p0, p1, q: int = 3) -> QuadratureRule:
    """Gauss-Legendre rule on a segment with ceil((q+1)/2) points."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.linalg.norm(p1 - p0))
    if length == 0.0:
        raise ValueError("degenerate edge")
    n = max(1, -(-(q + 1) // 2))
    t, w = roots_legendre(n)
    t = 0.5 * (1.0 + t)
    nodes = p0 + np.outer(t, p1 - p0)
    return QuadratureRule(nodes, 0.5 * w * length, 2 * n - 1, "edge")


def square_cell_rule(cells_x, cells_y, order: int = 5) -> QuadratureRule:
    """Tensor Gauss-Legendre rule over a rectangular grid given by breakpoints."""
    n = -(-(order + 1) // 2)
    t, w = roots_legendre(n)
    t = 0.5 * (1.0 + t)
    w = 0.5 * w
    cx = np.asarray(cells_x, dtype=float)
    cy = np.asarray(cells_y, dtype=float)
    hx, hy = np.diff(cx), np.diff(cy)
    xs = (cx[:-1, None] + hx[:, None] * t[None, :]).ravel()
    wx = (hx[:, None] * w[None, :]).ravel()
    ys = (cy[:-1, None] + hy[:, None] * t[None, :]).ravel()
    wy = (hy[:, None] * w[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(wx, wy)
    return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), order, "grid")

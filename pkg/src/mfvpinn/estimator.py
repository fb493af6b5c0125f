"""Patch-local a posteriori error indicator and its global sum.

For a patch P_i with fan triangles T_1..T_4 the indicator combines

* a residual term: projected bulk residual on each triangle plus the jumps
  of the projected flux across the four center-to-vertex edges,
* the loss term ``C_h |r_i|`` built from the training residual,
* coefficient oscillations (six per triangle) and data oscillations of f
  (two per triangle).

Projections onto polynomials are weighted least-squares fits on the training
nodes of each triangle.  Continuous L^2 norms use a degree-7 collapsed Gauss
rule; discrete seminorms use the training nodes themselves.

Because patches are affine images of the reference square, every projection
operator is computed once on the reference fan and reused for all patches;
only derivatives, weights and diameters are rescaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import N_TRIANGLES, REF_CENTER, REF_VERTICES, Cover, Patch, ref_triangle_vertices
from .network import LiftSamples, Model
from .problems import ProblemSpec
from .quadrature import QuadratureRule, edge_rule, map_rule, reference_rules, triangle_rule

FINE_DEGREE = 7
DEFAULT_C_H = 1.0


def monomial_exponents(k: int) -> list[tuple[int, int]]:
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


class TriangleProjector:
    """Discrete L^2 projection onto P_k from samples at weighted nodes.

    The basis is orthonormal for the discrete inner product given by the
    nodes and weights (built by QR of scaled local monomials), so the
    projection coefficients are plain inner products.
    """

    def __init__(self, vertices, nodes, weights, k: int, rcond: float = 1e-10):
        v = np.asarray(vertices, dtype=float)
        self.k = k
        self.origin = v.mean(axis=0)
        self.scale = float(max(np.linalg.norm(v[i] - v[j]) for i in range(3) for j in range(i)))
        self.exponents = monomial_exponents(k)
        sw = np.sqrt(np.asarray(weights, dtype=float))
        V = self.vandermonde(nodes)
        Q, R = np.linalg.qr(sw[:, None] * V)
        diag = np.abs(np.diag(R))
        if diag.min() <= rcond * diag.max() or len(weights) < len(self.exponents):
            raise np.linalg.LinAlgError(
                f"degree-{k} projection is rank deficient on {len(weights)} nodes"
            )
        self.to_monomial = np.linalg.inv(R)  # orthonormal basis in monomial coefficients
        self.analysis = Q.T * sw[None, :]  # samples -> orthonormal coefficients

    def _local(self, points):
        p = (np.asarray(points, dtype=float) - self.origin) / self.scale
        return p[..., 0], p[..., 1]

    def vandermonde(self, points):
        x, y = self._local(points)
        return np.stack([x**a * y**b for a, b in self.exponents], axis=-1)

    def vandermonde_grad(self, points):
        x, y = self._local(points)
        dx, dy = [], []
        for a, b in self.exponents:
            dx.append(a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x))
            dy.append(b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(y))
        return np.stack(dx, -1) / self.scale, np.stack(dy, -1) / self.scale

    def coefficients(self, samples):
        return self.analysis @ np.asarray(samples, dtype=float)

    def eval_matrix(self, points):
        """Matrix mapping node samples to projected values at ``points``."""
        return self.vandermonde(points) @ self.to_monomial @ self.analysis

    def grad_matrices(self, points):
        gx, gy = self.vandermonde_grad(points)
        op = self.to_monomial @ self.analysis
        return gx @ op, gy @ op

    def values(self, coeffs, points):
        return self.vandermonde(points) @ (self.to_monomial @ coeffs)

    def gradient(self, coeffs, points):
        gx, gy = self.vandermonde_grad(points)
        m = self.to_monomial @ coeffs
        return gx @ m, gy @ m


def project_poly(element: "Element", k: int, samples) -> np.ndarray:
    """Orthonormal-basis coefficients of the degree-k projection of node samples."""
    return element.projector(k).coefficients(samples)


@dataclass
class Element:
    """A triangle with its training rule (order q) and the fine norm rule."""

    vertices: np.ndarray
    q: int = 3
    rule: QuadratureRule = None
    fine: QuadratureRule = None
    _proj: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.rule is None:
            self.rule = triangle_rule(self.vertices, self.q)
        if self.fine is None:
            self.fine = triangle_rule(self.vertices, FINE_DEGREE, fine=True)

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(max(np.linalg.norm(v[i] - v[j]) for i in range(3) for j in range(i)))

    def projector(self, k: int) -> TriangleProjector:
        if k not in self._proj:
            self._proj[k] = TriangleProjector(self.vertices, self.rule.nodes, self.rule.weights, k)
        return self._proj[k]

    def oscillation(self, k: int, samples, fine_samples):
        """``(||g - P_k g||_{0,E}, ||g - P_k g||_{0,E,w})``; vector fields component-wise."""
        P = self.projector(k)
        samples = np.asarray(samples, dtype=float)
        fine_samples = np.asarray(fine_samples, dtype=float)
        cont = fine_samples - P.eval_matrix(self.fine.nodes) @ samples
        disc = samples - P.eval_matrix(self.rule.nodes) @ samples
        if cont.ndim == 1:
            cont, disc = cont[:, None], disc[:, None]
        c = math.sqrt(float(np.einsum("i,ij,ij->", self.fine.weights, cont, cont)))
        d = math.sqrt(float(np.einsum("i,ij,ij->", self.rule.weights, disc, disc)))
        return c, d


def patch_elements(patch: Patch, q: int = 3) -> list[Element]:
    """The four fan triangles of a patch, with mapped training and fine rules."""
    coarse = reference_rules(q)
    fine = reference_rules(FINE_DEGREE, fine=True)
    out = []
    for j in range(N_TRIANGLES):
        out.append(
            Element(
                patch.map_point(ref_triangle_vertices(j)),
                q,
                map_rule(coarse.triangles[j], patch),
                map_rule(fine.triangles[j], patch),
            )
        )
    return out


@dataclass(frozen=True)
class FieldSamples:
    """Trial function and coefficients sampled at one set of points."""

    u: np.ndarray
    du: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    f: np.ndarray

    @classmethod
    def at(cls, points, evaluate, problem: ProblemSpec) -> "FieldSamples":
        u, du = evaluate(points)
        mu, beta, sigma, f = problem.coefficients(points)
        return cls(u, du, mu, beta, sigma, f)

    def take(self, idx) -> "FieldSamples":
        return FieldSamples(*(getattr(self, k)[idx] for k in ("u", "du", "mu", "beta", "sigma", "f")))

    @property
    def flux(self):
        return self.mu[:, None] * self.du

    @property
    def convection(self):
        return np.einsum("ij,ij->i", self.beta, self.du)

    @property
    def reaction(self):
        return self.sigma * self.u


def eta_rhs_terms(element: Element, f, f_fine, q: int = 3) -> tuple[float, float]:
    h = element.diameter
    c1, d1 = element.oscillation(q - 1, f, f_fine)
    _, d0 = element.oscillation(q, f, f_fine)
    return h * c1, h * d1 + d0


def eta_coef_terms(element: Element, s: FieldSamples, s_fine: FieldSamples, q: int = 3) -> np.ndarray:
    h = element.diameter
    flux_c, flux_d = element.oscillation(q, s.flux, s_fine.flux)
    out = [flux_c]
    extra = []
    for g, gf in ((s.convection, s_fine.convection), (s.reaction, s_fine.reaction)):
        c1, d1 = element.oscillation(q - 1, g, gf)
        _, d0 = element.oscillation(q, g, gf)
        out.append(h * c1)
        extra.append(h * d1 + d0)
    return np.array([out[0], out[1], out[2], flux_d, extra[0], extra[1]])


def _bulk_norm(element: Element, s: FieldSamples, q: int) -> float:
    lo, hi = element.projector(q - 1), element.projector(q)
    nodes = element.fine.nodes
    gx, gy = hi.grad_matrices(nodes)
    flux = s.flux
    bulk = (
        lo.eval_matrix(nodes) @ s.f
        + gx @ flux[:, 0]
        + gy @ flux[:, 1]
        - lo.eval_matrix(nodes) @ (s.convection + s.reaction)
    )
    return math.sqrt(float(np.dot(element.fine.weights, bulk * bulk)))


def eta_res_patch(patch: Patch, elements: list[Element], samples: list[FieldSamples], q: int = 3) -> float:
    """Projected bulk residuals plus flux jumps across the internal fan edges.

    ``samples[j]`` are the training-node samples of ``elements[j]``.
    """
    total = 0.0
    center = patch.map_point(REF_CENTER)
    hp = math.sqrt(patch.diameter)
    for j, el in enumerate(elements):
        total += el.diameter * _bulk_norm(el, samples[j], q)
    for j in range(N_TRIANGLES):
        # edge e_j joins vertex j to the center; shared by T_{j-1} and T_j
        v = patch.map_point(REF_VERTICES[j])
        rule = edge_rule(v, center, q)
        d = center - v
        n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
        jump = np.zeros(len(rule))
        for sign, jj in ((1.0, j), (-1.0, (j - 1) % N_TRIANGLES)):
            P = elements[jj].projector(q)
            flux = samples[jj].flux
            E = P.eval_matrix(rule.nodes)
            jump += sign * (E @ flux @ n)
        total += hp * math.sqrt(float(np.dot(rule.weights, jump * jump)))
    return total


@dataclass(frozen=True)
class EstimatorBreakdown:
    patch_id: int
    eta_res: float
    eta_loss: float
    eta_coef: np.ndarray  # (triangles, 6)
    eta_rhs: np.ndarray  # (triangles, 2)
    gamma: float

    @property
    def eta(self) -> float:
        return math.sqrt(
            self.eta_res**2
            + self.eta_loss**2
            + float(np.sum(self.eta_coef**2))
            + float(np.sum(self.eta_rhs**2))
        )

    @property
    def eta_gamma(self) -> float:
        return self.gamma * self.eta

    def to_dict(self) -> dict:
        return {
            "id": self.patch_id,
            "eta_res": self.eta_res,
            "eta_loss": self.eta_loss,
            "eta_coef": self.eta_coef.tolist(),
            "eta_rhs": self.eta_rhs.tolist(),
            "eta": self.eta,
            "eta_gamma": self.eta_gamma,
        }


def patch_indicator(
    patch: Patch,
    evaluate,
    problem: ProblemSpec,
    residual: float,
    C_h: float = DEFAULT_C_H,
    q: int = 3,
) -> EstimatorBreakdown:
    """Indicator of one patch from a callable ``points -> (u, grad u)``.

    Straightforward per-element evaluation; ``CoverEstimator`` computes the
    same quantities for a whole cover at once.
    """
    elements = patch_elements(patch, q)
    coarse = [FieldSamples.at(el.rule.nodes, evaluate, problem) for el in elements]
    fine = [FieldSamples.at(el.fine.nodes, evaluate, problem) for el in elements]
    coef = np.array([eta_coef_terms(el, s, sf, q) for el, s, sf in zip(elements, coarse, fine)])
    rhs = np.array([eta_rhs_terms(el, s.f, sf.f, q) for el, s, sf in zip(elements, coarse, fine)])
    res = eta_res_patch(patch, elements, coarse, q)
    return EstimatorBreakdown(patch.id, res, C_h * abs(residual), coef, rhs, patch.gamma)


def global_indicator(breakdowns) -> float:
    """Sum of the scaled indicators (exactly rounded, so order-independent)."""
    return math.fsum(b.eta_gamma if isinstance(b, EstimatorBreakdown) else float(b) for b in breakdowns)


# ----------------------------------------------------------- vectorized path
@dataclass(frozen=True)
class ReferenceOperators:
    """Projection, derivative and edge operators on the reference fan."""

    q: int
    n_q: int
    n_f: int
    wq: np.ndarray  # (4, n_q) reference weights
    wf: np.ndarray  # (4, n_f)
    P_hi_q: np.ndarray  # (4, n_q, n_q) degree q, at training nodes
    P_lo_q: np.ndarray  # degree q-1, at training nodes
    P_hi_f: np.ndarray  # (4, n_f, n_q) degree q, at fine nodes
    P_lo_f: np.ndarray
    Dx_f: np.ndarray  # (4, n_f, n_q) reference-coordinate derivatives of P_q
    Dy_f: np.ndarray
    edge_w: np.ndarray  # (n_e,) reference Gauss weights on [0, 1]
    E_plus: np.ndarray  # (4, n_e, n_q): P_q of T_j on edge e_j
    E_minus: np.ndarray  # (4, n_e, n_q): P_q of T_{j-1} on edge e_j


@lru_cache(maxsize=None)
def reference_operators(q: int = 3) -> ReferenceOperators:
    coarse = reference_rules(q)
    fine = reference_rules(FINE_DEGREE, fine=True)
    P_hi_q, P_lo_q, P_hi_f, P_lo_f, Dx, Dy = [], [], [], [], [], []
    projs = []
    for j in range(N_TRIANGLES):
        verts = ref_triangle_vertices(j)
        rq, rf = coarse.triangles[j], fine.triangles[j]
        hi = TriangleProjector(verts, rq.nodes, rq.weights, q)
        lo = TriangleProjector(verts, rq.nodes, rq.weights, q - 1)
        projs.append(hi)
        P_hi_q.append(hi.eval_matrix(rq.nodes))
        P_lo_q.append(lo.eval_matrix(rq.nodes))
        P_hi_f.append(hi.eval_matrix(rf.nodes))
        P_lo_f.append(lo.eval_matrix(rf.nodes))
        gx, gy = hi.grad_matrices(rf.nodes)
        Dx.append(gx)
        Dy.append(gy)
    E_plus, E_minus = [], []
    edge_w = None
    for j in range(N_TRIANGLES):
        rule = edge_rule(REF_VERTICES[j], REF_CENTER, q)
        length = np.linalg.norm(REF_CENTER - REF_VERTICES[j])
        edge_w = rule.weights / length
        E_plus.append(projs[j].eval_matrix(rule.nodes))
        E_minus.append(projs[(j - 1) % N_TRIANGLES].eval_matrix(rule.nodes))
    st = np.stack
    return ReferenceOperators(
        q,
        coarse.points_per_triangle,
        fine.points_per_triangle,
        st([t.weights for t in coarse.triangles]),
        st([t.weights for t in fine.triangles]),
        st(P_hi_q), st(P_lo_q), st(P_hi_f), st(P_lo_f), st(Dx), st(Dy),
        edge_w, st(E_plus), st(E_minus),
    )


@dataclass(frozen=True)
class FineBlock:
    patch: Patch
    nodes: np.ndarray
    coefficients: tuple
    lift: LiftSamples


def build_fine_block(patch: Patch, problem: ProblemSpec) -> FineBlock:
    rule = map_rule(reference_rules(FINE_DEGREE, fine=True).composite, patch)
    return FineBlock(patch, rule.nodes, problem.coefficients(rule.nodes), problem.lift.sample(rule.nodes))


def _patch_geometry(patches):
    edges = np.array([p.edges for p in patches])  # (P, 2)
    area = edges[:, 0] * edges[:, 1]
    # fan triangles: bottom/top have base hx, right/left base hy; legs are half diagonals
    half_diag = 0.5 * np.hypot(edges[:, 0], edges[:, 1])
    hE = np.stack(
        [
            np.maximum(edges[:, 0], half_diag),
            np.maximum(edges[:, 1], half_diag),
            np.maximum(edges[:, 0], half_diag),
            np.maximum(edges[:, 1], half_diag),
        ],
        axis=1,
    )
    hP = 2.0 * half_diag
    # unit normals of edges e_j and their lengths
    d = np.einsum("pk,jk->pjk", edges, REF_CENTER[None, :] - REF_VERTICES)  # (P, 4, 2)
    length = np.linalg.norm(d, axis=-1)
    normal = np.stack([-d[..., 1], d[..., 0]], axis=-1) / length[..., None]
    return edges, area, hE, hP, normal, length


class CoverEstimator:
    """Indicators for every patch of a cover in one vectorized pass.

    ``coarse`` is the cover's ``PatchTensors`` (training nodes, per-triangle
    ordering); fine-rule data are built here and cached by patch id.
    """

    def __init__(self, coarse, problem: ProblemSpec, q: int = 3, C_h: float = DEFAULT_C_H, cache: dict | None = None):
        self.coarse = coarse
        self.problem = problem
        self.q = q
        self.C_h = C_h
        self.ops = reference_operators(q)
        if cache is None:
            cache = {}
        blocks = []
        for p in coarse.patches:
            b = cache.get(p.id)
            if b is None or b.patch != p:
                b = build_fine_block(p, problem)
                cache[p.id] = b
            blocks.append(b)
        for stale in set(cache) - {p.id for p in coarse.patches}:
            del cache[stale]
        self.patches = coarse.patches
        self.fine_nodes = np.concatenate([b.nodes for b in blocks])
        cf = [np.concatenate([b.coefficients[i] for b in blocks]) for i in range(4)]
        self.fine_coef = cf
        self.fine_lift = LiftSamples(
            *(np.concatenate([getattr(b.lift, k) for b in blocks]) for k in ("phi", "dphi", "gbar", "dgbar"))
        )
        self.geometry = _patch_geometry(self.patches)
        self.ids = [p.id for p in self.patches]
        self.gamma = np.array([p.gamma for p in self.patches])

    def evaluate(self, model: Model, theta, residuals, coarse_values=None) -> "BreakdownSet":
        if coarse_values is None:
            coarse_values = model.evaluate(theta, self.coarse.nodes, self.coarse.lift)
        fine_values = model.evaluate(theta, self.fine_nodes, self.fine_lift)
        return self.from_values(coarse_values, fine_values, residuals)

    def from_values(self, coarse_values, fine_values, residuals) -> "BreakdownSet":
        o = self.ops
        P = len(self.patches)
        T = N_TRIANGLES
        shape_q, shape_f = (P, T, o.n_q), (P, T, o.n_f)
        cu, cdu = coarse_values
        fu, fdu = fine_values
        c = self.coarse

        def prep(u, du, mu, beta, sigma, f, shape):
            flux = (mu[:, None] * du).reshape(*shape, 2)
            conv = np.einsum("ij,ij->i", beta, du).reshape(shape)
            reac = (sigma * u).reshape(shape)
            return flux, conv, reac, f.reshape(shape)

        Fq, Cq, Sq, fq = prep(cu, cdu, c.mu, c.beta, c.sigma, c.f, shape_q)
        mu_f, beta_f, sigma_f, f_f = self.fine_coef
        Ff, Cf, Sf, ff = prep(fu, fdu, mu_f, beta_f, sigma_f, f_f, shape_f)

        edges, area, hE, hP, normal, elen = self.geometry
        wq = area[:, None, None] * o.wq[None]  # (P, T, n_q)
        wf = area[:, None, None] * o.wf[None]

        def apply(op, x):
            # op (T, a, b) applied per triangle to x (P, T, b[, c])
            if x.ndim == 3:
                return np.einsum("tab,ptb->pta", op, x)
            return np.einsum("tab,ptbc->ptac", op, x)

        def norm(w, r):
            if r.ndim == 4:
                return np.sqrt(np.einsum("pta,ptac,ptac->pt", w, r, r))
            return np.sqrt(np.einsum("pta,pta,pta->pt", w, r, r))

        def osc(x_q, x_f, Pq, Pf):
            return norm(wf, x_f - apply(Pf, x_q)), norm(wq, x_q - apply(Pq, x_q))

        f_lo_c, f_lo_d = osc(fq, ff, o.P_lo_q, o.P_lo_f)
        _, f_hi_d = osc(fq, ff, o.P_hi_q, o.P_hi_f)
        rhs = np.stack([hE * f_lo_c, hE * f_lo_d + f_hi_d], axis=-1)

        F_hi_c, F_hi_d = osc(Fq, Ff, o.P_hi_q, o.P_hi_f)
        C_lo_c, C_lo_d = osc(Cq, Cf, o.P_lo_q, o.P_lo_f)
        _, C_hi_d = osc(Cq, Cf, o.P_hi_q, o.P_hi_f)
        S_lo_c, S_lo_d = osc(Sq, Sf, o.P_lo_q, o.P_lo_f)
        _, S_hi_d = osc(Sq, Sf, o.P_hi_q, o.P_hi_f)
        coef = np.stack(
            [F_hi_c, hE * C_lo_c, hE * S_lo_c, F_hi_d, hE * C_lo_d + C_hi_d, hE * S_lo_d + S_hi_d],
            axis=-1,
        )

        div = apply(o.Dx_f, Fq[..., 0]) / edges[:, 0, None, None] + apply(o.Dy_f, Fq[..., 1]) / edges[:, 1, None, None]
        bulk = apply(o.P_lo_f, fq) + div - apply(o.P_lo_f, Cq + Sq)
        bulk_norm = norm(wf, bulk)

        Fprev = np.roll(Fq, 1, axis=1)  # T_{j-1} in slot j
        plus = np.einsum("tab,ptbc->ptac", o.E_plus, Fq)
        minus = np.einsum("tab,ptbc->ptac", o.E_minus, Fprev)
        jump = np.einsum("ptac,ptc->pta", plus - minus, normal)
        jump_norm = np.sqrt(np.einsum("a,pta,pta->pt", o.edge_w, jump, jump) * elen)
        res = np.sum(hE * bulk_norm + np.sqrt(hP)[:, None] * jump_norm, axis=1)

        loss = self.C_h * np.abs(np.asarray(residuals, dtype=float))
        return BreakdownSet(self.ids, res, loss, coef, rhs, self.gamma)


@dataclass(frozen=True)
class BreakdownSet:
    """Indicator components of all patches of a cover (array form)."""

    ids: list
    eta_res: np.ndarray
    eta_loss: np.ndarray
    eta_coef: np.ndarray  # (P, 4, 6)
    eta_rhs: np.ndarray  # (P, 4, 2)
    gamma: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(
            self.eta_res**2
            + self.eta_loss**2
            + np.sum(self.eta_coef**2, axis=(1, 2))
            + np.sum(self.eta_rhs**2, axis=(1, 2))
        )

    @property
    def eta_gamma(self) -> np.ndarray:
        return self.gamma * self.eta

    @property
    def es(self) -> float:
        return math.fsum(self.eta_gamma.tolist())

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, k) -> EstimatorBreakdown:
        return EstimatorBreakdown(
            self.ids[k], float(self.eta_res[k]), float(self.eta_loss[k]),
            self.eta_coef[k].copy(), self.eta_rhs[k].copy(), float(self.gamma[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


def indicators_for_cover(cover: Cover, model: Model, theta, problem: ProblemSpec, loss, C_h: float = DEFAULT_C_H, q: int = 3) -> BreakdownSet:
    """Convenience wrapper: indicators of ``cover`` from a ``VariationalLoss``."""
    est = CoverEstimator(loss.tensors, problem, q, C_h)
    return est.evaluate(model, theta, loss.residuals(theta))

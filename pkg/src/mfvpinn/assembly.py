"""Hat test functions, per-patch training tensors, residuals and the loss.

Each patch contributes the nodes of its own mapped composite rule.  The
residual of patch i only involves those nodes, so the assembly operators are
sparse matrices with one block of columns per patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import Cover, Patch
from .network import LiftSamples, Model, apply_lift, lift_adjoint
from .problems import ProblemSpec
from .quadrature import map_rule, reference_rules

# gradient of the reference hat on each fan triangle (bottom, right, top, left)
REF_HAT_GRADS = np.array([[0.0, 2.0], [-2.0, 0.0], [0.0, -2.0], [2.0, 0.0]])
DEFAULT_LAMBDA_REG = 1e-5


def ref_hat(xi):
    """Reference hat and the fan triangle index of each point (-1 outside)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    d = xi - 0.5
    m = np.maximum(np.abs(d[:, 0]), np.abs(d[:, 1]))
    inside = m <= 0.5
    val = np.where(inside, 1.0 - 2.0 * m, 0.0)
    tri = np.where(
        np.abs(d[:, 1]) >= np.abs(d[:, 0]),
        np.where(d[:, 1] < 0, 0, 2),
        np.where(d[:, 0] > 0, 1, 3),
    )
    return val, np.where(inside, tri, -1)


def eval_test(patch: Patch, points):
    """Value and gradient of the patch's hat function (zero outside the patch)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    val, tri = ref_hat(patch.inverse_map(points))
    grad = np.where(tri[:, None] >= 0, REF_HAT_GRADS[tri] / patch.edges, 0.0)
    return val, grad


@dataclass(frozen=True)
class PatchBlock:
    """Everything the loss needs about one patch, sampled at its own nodes."""

    patch: Patch
    nodes: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    f: np.ndarray
    lift: LiftSamples


def build_block(patch: Patch, problem: ProblemSpec, q: int = 3) -> PatchBlock:
    rules = reference_rules(q)
    rule = map_rule(rules.composite, patch)
    npt = rules.points_per_triangle
    phi, _ = ref_hat(rules.composite.nodes)
    dphi = np.repeat(REF_HAT_GRADS, npt, axis=0) / patch.edges
    mu, beta, sigma, f = problem.coefficients(rule.nodes)
    return PatchBlock(
        patch, rule.nodes, rule.weights, phi, dphi, mu, beta, sigma, f,
        problem.lift.sample(rule.nodes),
    )


class PatchTensors:
    """Concatenated training data of a cover plus the sparse assembly operators."""

    def __init__(self, blocks: list[PatchBlock], n_built: int = 0):
        self.blocks = blocks
        self.n_built = n_built
        self.patches = [b.patch for b in blocks]
        self.gamma = np.array([p.gamma for p in self.patches])
        self.sizes = np.array([len(b.weights) for b in blocks])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

        def cat(name):
            return np.concatenate([getattr(b, name) for b in blocks])

        self.nodes = cat("nodes")
        self.weights = cat("weights")
        self.phi = cat("phi")
        self.dphi = cat("dphi")
        self.mu = cat("mu")
        self.beta = cat("beta")
        self.sigma = cat("sigma")
        self.f = cat("f")
        self.lift = LiftSamples(
            *(np.concatenate([getattr(b.lift, k) for b in blocks]) for k in ("phi", "dphi", "gbar", "dgbar"))
        )
        n, N = len(blocks), len(self.weights)
        rows = np.repeat(np.arange(n), self.sizes)
        cols = np.arange(N)
        w = self.weights
        shape = (n, N)
        self.load = np.bincount(rows, weights=w * self.f * self.phi, minlength=n)
        # r = load - K_u u - K_x u_x - K_y u_y
        self.K_u = sp.csr_matrix((w * self.sigma * self.phi, (rows, cols)), shape=shape)
        self.K_x = sp.csr_matrix(
            (w * (self.mu * self.dphi[:, 0] + self.beta[:, 0] * self.phi), (rows, cols)), shape=shape
        )
        self.K_y = sp.csr_matrix(
            (w * (self.mu * self.dphi[:, 1] + self.beta[:, 1] * self.phi), (rows, cols)), shape=shape
        )

    def __len__(self) -> int:
        return len(self.blocks)

    def residual_from_values(self, bu, dbu) -> np.ndarray:
        return self.load - self.K_u @ bu - self.K_x @ dbu[:, 0] - self.K_y @ dbu[:, 1]

    def residual_adjoint(self, cot_r):
        """Cotangents on ``(B u, grad B u)`` from cotangents on the residuals."""
        return -(self.K_u.T @ cot_r), -np.column_stack([self.K_x.T @ cot_r, self.K_y.T @ cot_r])


def build_tensors(cover: Cover, problem: ProblemSpec, q: int = 3, cache: dict | None = None) -> PatchTensors:
    """Tensors for the cover; blocks of patches already in ``cache`` are reused.

    The cache (patch id -> block) must belong to one problem and one order
    ``q``; it is pruned to the patches of the cover.
    """
    if cache is None:
        cache = {}
    built = 0
    blocks = []
    for p in cover:
        blk = cache.get(p.id)
        if blk is None or blk.patch != p:
            blk = build_block(p, problem, q)
            cache[p.id] = blk
            built += 1
        blocks.append(blk)
    for stale in set(cache) - set(cover.ids):
        del cache[stale]
    return PatchTensors(blocks, built)


def residual_naive(block: PatchBlock, bu, dbu) -> float:
    """Loop-based residual of one patch, used as an oracle for the assembly."""
    r = 0.0
    for l in range(len(block.weights)):
        gx, gy = dbu[l]
        px, py = block.dphi[l]
        flux = block.mu[l] * (gx * px + gy * py)
        conv = (block.beta[l, 0] * gx + block.beta[l, 1] * gy) * block.phi[l]
        r += block.weights[l] * (block.f[l] * block.phi[l] - flux - conv - block.sigma[l] * bu[l] * block.phi[l])
    return r


def residual(block: PatchBlock, bu, dbu) -> float:
    """``r = sum_l w_l [f phi - mu grad u . grad phi - (beta . grad u) phi - sigma u phi]``."""
    integrand = (
        block.f * block.phi
        - block.mu * np.einsum("ij,ij->i", dbu, block.dphi)
        - np.einsum("ij,ij->i", block.beta, dbu) * block.phi
        - block.sigma * bu * block.phi
    )
    return float(np.dot(block.weights, integrand))


class VariationalLoss:
    """``L(theta) = mean_i gamma_i r_i^2 + lambda ||theta||^2`` with its gradient.

    Every call of ``value_and_grad`` counts as one network evaluation.
    """

    def __init__(self, model: Model, tensors: PatchTensors, lambda_reg: float = DEFAULT_LAMBDA_REG):
        self.model = model
        self.tensors = tensors
        self.lambda_reg = lambda_reg
        self.n_evals = 0

    def evaluate_nodes(self, theta):
        u, du, tape = self.model.net.forward_tape(theta, self.tensors.nodes)
        bu, dbu = apply_lift(self.tensors.lift, u, du)
        return bu, dbu, tape

    def residuals(self, theta) -> np.ndarray:
        bu, dbu, _ = self.evaluate_nodes(theta)
        return self.tensors.residual_from_values(bu, dbu)

    def loss_from_residuals(self, theta, r) -> float:
        t = self.tensors
        return float(np.dot(t.gamma, r * r) / len(t) + self.lambda_reg * np.dot(theta, theta))

    def value(self, theta) -> float:
        return self.loss_from_residuals(theta, self.residuals(theta))

    def value_and_grad(self, theta):
        t = self.tensors
        self.n_evals += 1
        bu, dbu, tape = self.evaluate_nodes(theta)
        r = t.residual_from_values(bu, dbu)
        loss = self.loss_from_residuals(theta, r)
        cot_bu, cot_dbu = t.residual_adjoint(2.0 * t.gamma * r / len(t))
        cot_u, cot_du = lift_adjoint(t.lift, cot_bu, cot_dbu)
        grad = self.model.net.backward(theta, tape, cot_u, cot_du)
        grad += 2.0 * self.lambda_reg * theta
        self.last_residuals = r
        return loss, grad

    __call__ = value_and_grad


def loss_naive(model: Model, tensors: PatchTensors, theta, lambda_reg: float = DEFAULT_LAMBDA_REG) -> float:
    """Double-loop reference for the loss (patches x nodes)."""
    total = 0.0
    for blk in tensors.blocks:
        u, du = model.net.forward(theta, blk.nodes)
        bu, dbu = apply_lift(blk.lift, u, du)
        r = residual_naive(blk, bu, dbu)
        total += blk.patch.gamma * r * r
    return total / len(tensors.blocks) + lambda_reg * float(np.dot(theta, theta))


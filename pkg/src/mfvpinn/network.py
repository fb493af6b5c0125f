"""Fully connected tanh network with exact spatial gradients and their adjoint.

The forward pass propagates the value and its two spatial derivatives
together as three stacked channels, so every layer costs one matrix product
on a ``(3N, width)`` block.  The reverse pass is the exact adjoint of that
joint computation, which is what a loss built from ``u`` and ``grad u``
needs (it contains mixed derivatives d^2 u / d theta d x).

Parameters are one flat float64 vector in layer-major order:
``A_1 (row-major), b_1, A_2, b_2, ...``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .kernels import get_backend

DEFAULT_LAYER_DIMS = (2, 50, 50, 50, 50, 1)


class MLP:
    def __init__(self, layer_dims=DEFAULT_LAYER_DIMS, backend: str | None = None):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or dims[0] != 2 or dims[-1] != 1 or min(dims) < 1:
            raise ValueError(f"layer dims must read [2, ..., 1], got {dims}")
        self.layer_dims = dims
        self.kernels = get_backend(backend)
        self._slices = []
        offset = 0
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            a = slice(offset, offset + n_out * n_in)
            offset += n_out * n_in
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((a, b, (n_out, n_in)))
        self.n_params = offset

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        return [(theta[a].reshape(shape), theta[b]) for a, b, shape in self._slices]

    def init_params(self, seed: int = 0) -> np.ndarray:
        """Glorot-normal weights truncated at two standard deviations, zero biases."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for a, _b, (n_out, n_in) in self._slices:
            std = np.sqrt(2.0 / (n_in + n_out))
            w = rng.standard_normal(n_out * n_in)
            bad = np.abs(w) > 2.0
            while bad.any():
                w[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(w) > 2.0
            theta[a] = std * w
        return theta

    def forward(self, theta, points):
        u, du, _ = self.forward_tape(theta, points)
        return u, du

    def forward_tape(self, theta, points):
        """Values ``u`` (N,), gradients ``du`` (N, 2) and the tape for ``backward``."""
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        layers = self.unpack(theta)
        H = np.zeros((3, n, 2))
        H[0] = points
        H[1, :, 0] = 1.0
        H[2, :, 1] = 1.0
        tape = []
        for A, b in layers[:-1]:
            Z = (H.reshape(3 * n, -1) @ A.T).reshape(3, n, -1)
            Z[0] += b
            H_new, S = self.kernels.tanh_forward(Z)
            tape.append((H, Z, S))
            H = H_new
        A, b = layers[-1]
        out = (H.reshape(3 * n, -1) @ A.T).reshape(3, n)
        tape.append((H, None, None))
        u = out[0] + b[0]
        du = out[1:].T.copy()
        return u, du, tape

    def backward(self, theta, tape, cot_u, cot_du) -> np.ndarray:
        """Gradient of ``sum(cot_u * u + cot_du * du)`` with respect to ``theta``."""
        layers = self.unpack(theta)
        H_last = tape[-1][0]
        n = H_last.shape[1]
        cot_u = np.asarray(cot_u, dtype=float)
        cot_du = np.asarray(cot_du, dtype=float)
        if cot_u.shape != (n,) or cot_du.shape != (n, 2):
            raise ValueError("cotangent shapes must match the forward outputs")
        grad = np.empty(self.n_params)
        G = np.empty((3, n))
        G[0] = cot_u
        G[1:] = cot_du.T
        a_sl, b_sl, _ = self._slices[-1]
        A, _ = layers[-1]
        grad[a_sl] = (G.reshape(1, 3 * n) @ H_last.reshape(3 * n, -1)).ravel()
        grad[b_sl] = G[0].sum()
        GH = (G.reshape(3 * n, 1) @ A).reshape(3, n, -1)
        for k in range(len(layers) - 2, -1, -1):
            H_in, Z, S = tape[k]
            GZ = self.kernels.tanh_backward(GH, Z, tape[k + 1][0][0], S)
            a_sl, b_sl, _ = self._slices[k]
            flat = GZ.reshape(3 * n, -1)
            grad[a_sl] = (flat.T @ H_in.reshape(3 * n, -1)).ravel()
            grad[b_sl] = GZ[0].sum(axis=0)
            if k > 0:
                GH = (flat @ layers[k][0]).reshape(3, n, -1)
        return grad

    def param_gradient(self, theta, points, cot_u, cot_du) -> np.ndarray:
        _, _, tape = self.forward_tape(theta, points)
        return self.backward(theta, tape, cot_u, cot_du)


@dataclass(frozen=True)
class LiftSamples:
    """Cutoff ``phi`` and boundary extension ``gbar`` sampled at fixed points."""

    phi: np.ndarray
    dphi: np.ndarray
    gbar: np.ndarray
    dgbar: np.ndarray

    def take(self, idx) -> "LiftSamples":
        return LiftSamples(self.phi[idx], self.dphi[idx], self.gbar[idx], self.dgbar[idx])


Field = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class BoundaryLift:
    """``B w = phi w + gbar``: ``phi`` vanishes on the boundary, ``gbar`` extends g.

    Both members map points (N, 2) to ``(values (N,), gradients (N, 2))``.
    """

    phi: Field
    gbar: Field

    def sample(self, points) -> LiftSamples:
        points = np.asarray(points, dtype=float)
        p, dp = self.phi(points)
        g, dg = self.gbar(points)
        return LiftSamples(p, dp, g, dg)


def apply_lift(s: LiftSamples, u, du):
    """``(B u, grad B u)`` by the product rule."""
    bu = s.phi * u + s.gbar
    dbu = s.phi[:, None] * du + u[:, None] * s.dphi + s.dgbar
    return bu, dbu


def lift_adjoint(s: LiftSamples, cot_bu, cot_dbu):
    """Cotangents on ``(u, du)`` from cotangents on ``(B u, grad B u)``."""
    cot_u = s.phi * cot_bu + np.einsum("ij,ij->i", s.dphi, cot_dbu)
    cot_du = s.phi[:, None] * cot_dbu
    return cot_u, cot_du


class Model:
    """Network plus boundary lift: the trial function ``B u^NN``."""

    def __init__(self, net: MLP, lift: BoundaryLift):
        self.net = net
        self.lift = lift

    def evaluate(self, theta, points, samples: LiftSamples | None = None):
        if samples is None:
            samples = self.lift.sample(points)
        u, du = self.net.forward(theta, points)
        return apply_lift(samples, u, du)

    def evaluator(self, theta):
        """Callable ``points -> (B u, grad B u)`` frozen at ``theta``."""
        theta = np.array(theta, dtype=float)
        return lambda pts: self.evaluate(theta, pts)


_MAGIC = b"MFVPINN-PARAMS\n"


def save_checkpoint(path, theta, layer_dims, seed: int) -> None:
    """Header (magic, JSON-free key=value line) then raw little-endian float64."""
    theta = np.ascontiguousarray(theta, dtype="<f8")
    header = (
        f"layer_dims={','.join(str(d) for d in layer_dims)};seed={int(seed)};"
        f"count={theta.size}\n"
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(theta.tobytes())


def load_checkpoint(path):
    """Return ``(theta, layer_dims, seed)``."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint")
    off = len(_MAGIC)
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    fields = dict(kv.split("=") for kv in data[off : off + hlen].decode().strip().split(";"))
    off += hlen
    theta = np.frombuffer(data[off:], dtype="<f8").astype(float)
    if theta.size != int(fields["count"]):
        raise ValueError(f"{path}: truncated checkpoint")
    dims = tuple(int(d) for d in fields["layer_dims"].split(","))
    return theta, dims, int(fields["seed"])

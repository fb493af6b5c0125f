"""Pure-numpy activation kernels (fallback when the extension is not built).

Both kernels act on stacked channel arrays of shape ``(3, N, width)``:
channel 0 carries pre-activations, channels 1 and 2 their derivatives with
respect to the two spatial inputs.
"""

import numpy as np


def tanh_forward(Z):
    """Return ``(H, S)``: activations with tangents and ``S = 1 - tanh(z)**2``."""
    H = np.empty_like(Z)
    a = np.tanh(Z[0], out=H[0])
    S = 1.0 - a * a
    np.multiply(Z[1], S, out=H[1])
    np.multiply(Z[2], S, out=H[2])
    return H, S


def tanh_backward(G, Z, A, S):
    """Pull cotangents ``G`` on ``H`` back to cotangents on ``Z`` (in place)."""
    gs = G[1] * Z[1]
    gs += G[2] * Z[2]
    gs *= A
    G[0] -= 2.0 * gs
    G *= S
    return G

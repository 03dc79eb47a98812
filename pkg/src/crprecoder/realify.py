"""Real-valued representations of complex matrices and block-fading channels.

A complex matrix P maps to the stacked real vector

    underline(P) = [vec(Re P); vec(Im P)]   (column-major vec)

and a complex linear map M acting on vectors maps to the real block matrix

    realify(M) = [[Re M, -Im M], [Im M, Re M]].

These are compatible: underline(M @ P) == realify(I_T kron M) @ underline(P)
for P with T columns, and realify is a ring homomorphism, so Gram matrices
can be formed either before or after the transform.
"""

import numpy as np


def underline(p):
    """Stack a complex matrix into its real/imaginary column-major vector."""
    p = np.asarray(p)
    return np.concatenate([p.real.ravel(order="F"), p.imag.ravel(order="F")])


def ununderline(v, rows, cols):
    """Inverse of underline(); v must have length 2*rows*cols."""
    v = np.asarray(v, dtype=float)
    n = rows * cols
    if v.shape != (2 * n,):
        raise ValueError(f"expected vector of length {2 * n}, got shape {v.shape}")
    re = v[:n].reshape((rows, cols), order="F")
    im = v[n:].reshape((rows, cols), order="F")
    return re + 1j * im


def realify(m):
    """Real 2x2-block representation of a complex matrix."""
    m = np.asarray(m, dtype=complex)
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def kron_identity(h, t):
    """kron(I_t, h) without forming the identity."""
    h = np.asarray(h)
    rows, cols = h.shape
    out = np.zeros((t * rows, t * cols), dtype=h.dtype)
    for i in range(t):
        out[i * rows : (i + 1) * rows, i * cols : (i + 1) * cols] = h
    return out


def realify_channel(h, t):
    """Real representation of y = H x applied to a T-column block.

    Returns the 2*T*n_rx x 2*T*n_tx real matrix that carries underline(X)
    to underline(H @ X).
    """
    return realify(kron_identity(np.asarray(h, dtype=complex), t))

"""Orthogonal space-time block codes, their dispersion matrices and detection.

Supported codes:

    C2  rate-1 two-antenna code (2 symbols over 2 slots)
    C4  rate-1/2 four-antenna code (4 symbols over 8 slots)

The published transmission matrices put time slots in rows; blocks here are
stored transposed, n_tx x T, so that a block left-multiplies as H @ X. A code
block is linear in the real and imaginary parts of its symbols,

    X(s) = sum_k C_k Re(s_k) + D_k Im(s_k),

and the coefficient matrices C_k, D_k are recovered by evaluating the printed
form at the unit symbols e_k and i*e_k. Stacking their underlined columns
gives the real dispersion matrix A with A^T A = kappa * I.
"""

from dataclasses import dataclass, field

import numpy as np

from .realify import underline

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class OstbcCode:
    name: str
    n_tx: int
    T: int
    K: int
    kappa: float
    c_unitary: float
    # (K, n_tx, T) tensors of Re/Im coefficient matrices
    c_mats: np.ndarray = field(repr=False)
    d_mats: np.ndarray = field(repr=False)


def _printed_c2(s):
    s1, s2 = s
    return np.array([[s1, s2], [-np.conj(s2), np.conj(s1)]])


def _printed_c4(s):
    s1, s2, s3, s4 = s
    g = np.array(
        [
            [s1, s2, s3, s4],
            [-s2, s1, -s4, s3],
            [-s3, s4, s1, -s2],
            [-s4, -s3, s2, s1],
        ]
    )
    return np.vstack([g, g.conj()])


_PRINTED = {"C2": (_printed_c2, 2), "C4": (_printed_c4, 4)}


def build_code(name):
    """Construct a code by coefficient extraction from its printed form."""
    try:
        printed, k = _PRINTED[name]
    except KeyError:
        raise ValueError(f"unknown code {name!r}; expected one of {sorted(_PRINTED)}")
    basis = np.eye(k)
    # X is real-linear in (Re s, Im s): C_k = X(e_k), D_k = X(i e_k).
    c_mats = np.stack([printed(basis[j]).T for j in range(k)])
    d_mats = np.stack([printed(1j * basis[j]).T for j in range(k)])
    n_tx, t = c_mats[0].shape
    a = _stack_dispersion(c_mats, d_mats)
    gram = a.T @ a
    kappa = float(gram[0, 0])
    if not np.array_equal(gram, kappa * np.eye(2 * k)):
        raise AssertionError(f"code {name} lost column orthogonality")
    return OstbcCode(
        name=name,
        n_tx=n_tx,
        T=t,
        K=k,
        kappa=kappa,
        c_unitary=kappa / n_tx,
        c_mats=c_mats,
        d_mats=d_mats,
    )


def _stack_dispersion(c_mats, d_mats):
    cols = [underline(m) for m in c_mats] + [underline(m) for m in d_mats]
    return np.column_stack(cols)


def dispersion(code):
    """Real dispersion matrix A, 2*n_tx*T x 2K, columns [C_1.. C_K, D_1.. D_K]."""
    return _stack_dispersion(code.c_mats, code.d_mats)


def encode(code, s):
    """Map K complex symbols to an n_tx x T code block."""
    s = np.asarray(s, dtype=complex)
    if s.shape != (code.K,):
        raise ValueError(f"{code.name} encodes {code.K} symbols, got shape {s.shape}")
    return np.tensordot(s.real, code.c_mats, axes=1) + np.tensordot(
        s.imag, code.d_mats, axes=1
    )


def qpsk_mod(bits):
    """Gray-mapped unit-energy QPSK; bit pair (b1, b2) -> ((1-2b1) + i(1-2b2))/sqrt(2)."""
    bits = np.asarray(bits, dtype=int)
    if bits.ndim != 1 or bits.size % 2:
        raise ValueError(f"need an even number of bits, got shape {bits.shape}")
    pairs = 1.0 - 2.0 * bits.reshape(-1, 2)
    return (pairs[:, 0] + 1j * pairs[:, 1]) / _SQRT2


def qpsk_demod(s_under):
    """Sign-slice soft outputs ordered [Re s_1.. Re s_K, Im s_1.. Im s_K] to bits."""
    s_under = np.asarray(s_under, dtype=float)
    k = s_under.size // 2
    bits = np.empty(2 * k, dtype=int)
    bits[0::2] = s_under[:k] < 0
    bits[1::2] = s_under[k:] < 0
    return bits


def soft_detect(a, heq, y_under):
    """Matched-filter detector: returns A^T Heq^T y as a 2K real vector."""
    a = np.asarray(a, dtype=float)
    heq = np.asarray(heq, dtype=float)
    y_under = np.asarray(y_under, dtype=float)
    if heq.shape[0] != y_under.shape[0] or heq.shape[1] != a.shape[0]:
        raise ValueError(
            f"inconsistent shapes: A {a.shape}, Heq {heq.shape}, y {y_under.shape}"
        )
    return a.T @ (heq.T @ y_under)

"""Polarized multipath channel generator.

Each path carries a 2x2 complex polarization gain matrix (rows: receive V/H,
columns: transmit V/H). Co-polar entries are unit-variance circular Gaussian;
cross-polar entries are attenuated by the cross-polarization discrimination
ratio. Angles of departure and arrival are uniform, paths have equal power,
and array responses are uniform-linear-array phase vectors. The receiver can
rotate its polarization reference by a tilt angle, which models an
arbitrarily oriented primary receiver.

Transmit-side correlation matrices of the realified equivalent channel are
estimated by redrawing the polarization gains while holding the path
geometry (angles, powers) fixed. Because the realified Gram satisfies
Heq^T Heq = realify(I_T kron H^H H), the average is formed on the small
complex Gram and embedded once at the end.
"""

from dataclasses import dataclass

import numpy as np

from .realify import kron_identity, realify, realify_channel

_MODE_VECS = {"V": np.array([1.0, 0.0]), "H": np.array([0.0, 1.0])}


@dataclass(frozen=True)
class LinkConfig:
    n_tx: int
    n_rx: int
    n_path: int
    xpd_db: float
    spacing: float = 0.5  # element spacing in wavelengths


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray  # (n_path, 2, 2) complex
    aod: np.ndarray  # (n_path,) radians
    aoa: np.ndarray  # (n_path,) radians
    powers: np.ndarray  # (n_path,), sums to 1


def _mode_vec(q):
    try:
        return _MODE_VECS[q]
    except KeyError:
        raise ValueError(f"polarization mode must be 'V' or 'H', got {q!r}")


def _receive_vec(qr, tilt):
    c, s = np.cos(tilt), np.sin(tilt)
    return np.array([[c, -s], [s, c]]) @ _mode_vec(qr)


def _cross_amp(xpd_db):
    return 10.0 ** (-float(xpd_db) / 20.0)


def redraw_gains(cfg, rng, n_draws=None):
    """Draw polarization gain matrices, (n_path, 2, 2) or (n_draws, n_path, 2, 2).

    The trailing real/imaginary axis is drawn last so a batched draw consumes
    the generator stream exactly like repeated single draws.
    """
    shape = (cfg.n_path, 2, 2, 2) if n_draws is None else (n_draws, cfg.n_path, 2, 2, 2)
    raw = rng.standard_normal(shape)
    gains = (raw[..., 0] + 1j * raw[..., 1]) / np.sqrt(2.0)
    amp = _cross_amp(cfg.xpd_db)
    gains[..., 0, 1] *= amp
    gains[..., 1, 0] *= amp
    return gains


def draw_paths(cfg, rng):
    """Sample a path geometry: gains, then departure and arrival angles."""
    gains = redraw_gains(cfg, rng)
    aod = rng.uniform(0.0, 2.0 * np.pi, cfg.n_path)
    aoa = rng.uniform(0.0, 2.0 * np.pi, cfg.n_path)
    powers = np.full(cfg.n_path, 1.0 / cfg.n_path)
    return PathSet(gains=gains, aod=aod, aoa=aoa, powers=powers)


def _steering(n_elem, angles, spacing):
    # (n_elem, n_path) ULA phase matrix
    idx = np.arange(n_elem)
    return np.exp(2j * np.pi * spacing * np.outer(idx, np.sin(angles)))


def realize(paths, qt, qr, tilt, cfg):
    """Channel matrix H (n_rx x n_tx) for one polarization mode pair.

    H[u, s] = sum_n sqrt(p_n) (e_r(tilt)^T P_n e_t) a_r[u, n] a_t[s, n].
    Matched modes at tilt 0 give unit-variance entries, so E tr(H H^H)
    equals n_tx * n_rx without a separate scale factor.
    """
    e_r = _receive_vec(qr, tilt)
    e_t = _mode_vec(qt)
    coeff = np.einsum("r,nrt,t->n", e_r, paths.gains, e_t)
    w = np.sqrt(paths.powers) * coeff
    a_r = _steering(cfg.n_rx, paths.aoa, cfg.spacing)
    a_t = _steering(cfg.n_tx, paths.aod, cfg.spacing)
    return (a_r * w) @ a_t.T


def equivalent(h, t):
    """Real equivalent of H acting on T-column blocks."""
    return realify_channel(h, t)


def tilt_samples(n_tilt):
    """Deterministic midpoint grid on [0, pi/2]."""
    if n_tilt < 1:
        raise ValueError(f"need at least one tilt sample, got {n_tilt}")
    return (np.arange(n_tilt) + 0.5) * (np.pi / 2.0) / n_tilt


def _embed(gram, t):
    # realify(I_T kron G), exactly symmetrized
    r = realify(kron_identity(gram, t))
    return (r + r.T) / 2.0


def correlation_tilts(paths, qt, qr, tilts, t, n_samples=2000, *, cfg=None, rng=None):
    """Correlation matrices for several receive tilts sharing one gain batch.

    With rng, averages n_samples gain redraws on the fixed geometry; without,
    uses the gains stored in paths (a single deterministic realization).
    """
    if cfg is None:
        raise ValueError("correlation over a PathSet needs the link config")
    if rng is None:
        batch = paths.gains[np.newaxis]
    else:
        batch = redraw_gains(cfg, rng, n_draws=n_samples)
    a_r = _steering(cfg.n_rx, paths.aoa, cfg.spacing)
    a_t = _steering(cfg.n_tx, paths.aod, cfg.spacing)
    gram_r = a_r.conj().T @ a_r
    e_t = _mode_vec(qt)
    sqrt_p = np.sqrt(paths.powers)
    out = []
    for tilt in np.atleast_1d(tilts):
        e_r = _receive_vec(qr, tilt)
        w = np.einsum("r,dnrt,t->dn", e_r, batch, e_t) * sqrt_p
        cw = w.conj().T @ w / w.shape[0]
        gram = a_t.conj() @ (gram_r * cw) @ a_t.T
        out.append(_embed(gram, t))
    return out


def correlation(source, qt, qr, tilt, t, n_samples=2000, *, cfg=None, rng=None):
    """Transmit correlation R = E[Heq^T Heq], square of side 2*T*n_tx.

    source is either a PathSet (gain-redraw ensemble on its geometry, see
    correlation_tilts) or a zero-argument callable returning channel draws.
    """
    if callable(source):
        gram = 0.0
        for _ in range(n_samples):
            h = np.asarray(source(), dtype=complex)
            gram = gram + h.conj().T @ h
        return _embed(gram / n_samples, t)
    return correlation_tilts(
        source, qt, qr, [tilt], t, n_samples, cfg=cfg, rng=rng
    )[0]

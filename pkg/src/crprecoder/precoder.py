"""Minimum-variance linear precoder under an interference constraint.

The precoder W acts on underlined code blocks and minimizes the interference
power leaked to the primary receiver subject to the structure constraint

    A^T R_S W A = alpha * I,

which preserves code orthogonality at the secondary receiver, so the plain
matched-filter detector still decouples the symbols. The closed form is

    Q = (A^T R_S Rp~^{-1} R_S A)^{-1},
    W = (alpha/kappa) * Rp~^{-1} R_S A Q A^T,

with Rp~ the (regularized) primary-link correlation. The gain alpha is gated
by whichever of the transmit-power budget and the interference cap binds
first; both caps then hold with one of them met exactly:

    interference = (rho/N_t) alpha^2 tr(Q) / kappa,
    transmit     = (rho/N_t) alpha^2 delta / kappa.

A dense KKT solve of the same constrained program (oracle_solve) certifies
the closed form in the tests.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .ostbc import dispersion

POWER_LIMITED = "PowerLimited"
INTERFERENCE_LIMITED = "InterferenceLimited"
MODE_ORDER = (("V", "V"), ("V", "H"), ("H", "V"), ("H", "H"))


class DegenerateGeometryError(Exception):
    """Channel instance cannot support the closed form (rank collapse)."""


@dataclass(frozen=True)
class PrecoderInputs:
    a: np.ndarray  # dispersion matrix, 2*n_tx*T x 2K
    kappa: float
    n_tx: int
    r_s: np.ndarray  # secondary-link correlation
    r_p: np.ndarray  # primary-link correlation
    rho_sr: float  # linear SNR scale at SR
    p_tmax: float  # linear transmit-power budget
    eta: float  # linear interference cap at PR
    epsilon_reg: float = 1e-9

    @classmethod
    def for_code(cls, code, r_s, r_p, *, rho_sr, p_tmax, eta, epsilon_reg=1e-9):
        return cls(
            a=dispersion(code),
            kappa=code.kappa,
            n_tx=code.n_tx,
            r_s=np.asarray(r_s, dtype=float),
            r_p=np.asarray(r_p, dtype=float),
            rho_sr=float(rho_sr),
            p_tmax=float(p_tmax),
            eta=float(eta),
            epsilon_reg=float(epsilon_reg),
        )


@dataclass(frozen=True)
class PrecoderSolution:
    w: object  # ndarray, or None when not requested
    alpha: float
    binding: str
    tr_q: float
    gamma: float
    delta: float
    snr_est: float
    interference_est: float
    transmit_power_est: float


@dataclass(frozen=True)
class GeometryScalars:
    """Power-independent scalars of one (geometry, mode) instance."""

    tr_q: float
    gamma: float
    delta: float
    ara_mean: float  # tr(A^T R_S A) / 2K


@dataclass(frozen=True)
class ModeSelection:
    solutions: dict
    chosen: tuple


def regularized(r_p, epsilon_reg):
    """R_P + epsilon_reg * (tr R_P / dim) * I."""
    r_p = np.asarray(r_p, dtype=float)
    if epsilon_reg == 0.0:
        return r_p
    dim = r_p.shape[0]
    return r_p + (epsilon_reg * np.trace(r_p) / dim) * np.eye(dim)


def _chol(m, what):
    try:
        return cho_factor(m, lower=True)
    except (LinAlgError, ValueError):
        raise DegenerateGeometryError(f"{what} is not positive definite") from None


def _require_positive(**scalars):
    for name, value in scalars.items():
        if not np.isfinite(value) or value <= 0.0:
            raise DegenerateGeometryError(f"{name} = {value!r} after factorization")


def _core(a, r_s, r_p, epsilon_reg):
    a = np.asarray(a, dtype=float)
    r_s = np.asarray(r_s, dtype=float)
    c_rt = _chol(regularized(r_p, epsilon_reg), "regularized primary correlation")
    rsa = r_s @ a
    f = cho_solve(c_rt, rsa)
    b = rsa.T @ f
    b = (b + b.T) / 2.0
    c_b = _chol(b, "precoder normal matrix")  # singular iff R_S A loses rank
    q = cho_solve(c_b, np.eye(b.shape[0]))
    q = (q + q.T) / 2.0
    fq = f @ q
    scalars = GeometryScalars(
        tr_q=float(np.trace(q)),
        gamma=float(np.vdot(fq, r_s @ fq)),
        delta=float(np.vdot(fq, fq)),
        ara_mean=float(np.vdot(a, rsa)) / a.shape[1],
    )
    _require_positive(
        tr_q=scalars.tr_q,
        gamma=scalars.gamma,
        delta=scalars.delta,
        ara_mean=scalars.ara_mean,
    )
    return q, fq, scalars


def compute_q(a, r_s, r_p, epsilon_reg=1e-9):
    """Q = (A^T R_S Rp~^{-1} R_S A)^{-1} and its trace."""
    q, _, scalars = _core(a, r_s, r_p, epsilon_reg)
    return q, scalars.tr_q


def geometry_scalars(a, r_s, r_p, epsilon_reg=1e-9):
    """tr(Q), gamma, delta and the detector noise scale, without forming W."""
    return _core(a, r_s, r_p, epsilon_reg)[2]


def solve_w(inputs, alpha):
    """Closed-form precoder for a given gain alpha."""
    _, fq, _ = _core(inputs.a, inputs.r_s, inputs.r_p, inputs.epsilon_reg)
    return (alpha / inputs.kappa) * (fq @ inputs.a.T)


def gamma_delta(a, r_s, r_p, q, epsilon_reg=1e-9):
    """gamma = tr(Q A^T (R_S Rp~^{-1})^2 R_S A Q), delta with Rp~^{-2}."""
    a = np.asarray(a, dtype=float)
    r_s = np.asarray(r_s, dtype=float)
    c_rt = _chol(regularized(r_p, epsilon_reg), "regularized primary correlation")
    m = cho_solve(c_rt, r_s @ a) @ q
    return float(np.vdot(m, r_s @ m)), float(np.vdot(m, m))


def interference_power(w, r_p, rho_sr, n_tx):
    """(rho_SR/N_t) tr(W^T R_P W), the leakage measured at the primary receiver."""
    w = np.asarray(w, dtype=float)
    return rho_sr / n_tx * float(np.vdot(w, np.asarray(r_p, dtype=float) @ w))


def transmit_power(w, rho_sr, n_tx):
    """(rho_SR/N_t) tr(W^T W)."""
    w = np.asarray(w, dtype=float)
    return rho_sr / n_tx * float(np.vdot(w, w))


def gate_from_scalars(kappa, n_tx, rho_sr, p_tmax, eta, tr_q, delta):
    """Largest alpha meeting both caps; ties count as interference limited.

    Non-positive scalars only reach here through the printed-form variant;
    the corresponding branch is treated as unconstrained.
    """
    alpha_power = (
        np.sqrt(kappa * n_tx * p_tmax / (rho_sr * delta)) if delta > 0 else np.inf
    )
    alpha_interf = (
        np.sqrt(kappa * n_tx * eta / (rho_sr * tr_q)) if tr_q > 0 else np.inf
    )
    if alpha_interf <= alpha_power:
        return float(alpha_interf), INTERFERENCE_LIMITED
    return float(alpha_power), POWER_LIMITED


def gate_alpha(inputs, tr_q, delta):
    return gate_from_scalars(
        inputs.kappa, inputs.n_tx, inputs.rho_sr, inputs.p_tmax, inputs.eta,
        tr_q, delta,
    )


def snr_from_scalars(rho_sr, n_tx, ara_mean, alpha):
    return rho_sr * alpha**2 / (n_tx * ara_mean)


def snr_estimate(inputs, alpha):
    """Post-detection SNR of the matched-filter detector.

    Per component the detector sees signal (rho/N_t) alpha^2 / 2 against
    noise diag(A^T R_S A)/2; averaging the diagonal gives
    rho * alpha^2 * 2K / (N_t * tr(A^T R_S A)).
    """
    a = np.asarray(inputs.a, dtype=float)
    ara_mean = float(np.vdot(a, inputs.r_s @ a)) / a.shape[1]
    return snr_from_scalars(inputs.rho_sr, inputs.n_tx, ara_mean, alpha)


def _printed_core(a, r_s, r_p, epsilon_reg):
    # Variant with the inner R_S dropped from Q; kept as a negative control,
    # it does not satisfy the structure constraint.
    a = np.asarray(a, dtype=float)
    r_s = np.asarray(r_s, dtype=float)
    c_rt = _chol(regularized(r_p, epsilon_reg), "regularized primary correlation")
    rsa = r_s @ a
    inner = rsa.T @ cho_solve(c_rt, a)
    try:
        q = np.linalg.solve(inner, np.eye(inner.shape[0]))
    except np.linalg.LinAlgError:
        raise DegenerateGeometryError("printed-form normal matrix is singular") from None
    fq = cho_solve(c_rt, rsa) @ q
    scalars = GeometryScalars(
        tr_q=float(np.trace(q)),
        gamma=float(np.vdot(fq, r_s @ fq)),
        delta=float(np.vdot(fq, fq)),
        ara_mean=float(np.vdot(a, rsa)) / a.shape[1],
    )
    if not all(
        np.isfinite(v)
        for v in (scalars.tr_q, scalars.gamma, scalars.delta, scalars.ara_mean)
    ):
        raise DegenerateGeometryError("printed-form scalars are not finite")
    return q, fq, scalars


def solve(inputs, want_w=True, use_printed_q=False):
    """Full pipeline: Q, the gated alpha, W and the estimated powers."""
    core = _printed_core if use_printed_q else _core
    _, fq, gs = core(inputs.a, inputs.r_s, inputs.r_p, inputs.epsilon_reg)
    alpha, binding = gate_from_scalars(
        inputs.kappa, inputs.n_tx, inputs.rho_sr, inputs.p_tmax, inputs.eta,
        gs.tr_q, gs.delta,
    )
    if not np.isfinite(alpha):
        raise DegenerateGeometryError(f"gated alpha = {alpha!r}")
    snr = snr_from_scalars(inputs.rho_sr, inputs.n_tx, gs.ara_mean, alpha)
    w = None
    if want_w or use_printed_q:
        w = (alpha / inputs.kappa) * (fq @ inputs.a.T)
    if use_printed_q:
        # closed-form traces do not hold for the broken variant; report direct ones
        interference = interference_power(w, inputs.r_p, inputs.rho_sr, inputs.n_tx)
        transmit = transmit_power(w, inputs.rho_sr, inputs.n_tx)
    else:
        scale = inputs.rho_sr / inputs.n_tx * alpha**2 / inputs.kappa
        interference = scale * gs.tr_q
        transmit = scale * gs.delta
    return PrecoderSolution(
        w=w,
        alpha=alpha,
        binding=binding,
        tr_q=gs.tr_q,
        gamma=gs.gamma,
        delta=gs.delta,
        snr_est=snr,
        interference_est=interference,
        transmit_power_est=transmit,
    )


def oracle_solve(inputs, alpha):
    """Solve min tr(W^T Rp~ W) s.t. A^T R_S W A = alpha I by a dense KKT system.

    Vectorizes W column-major; no structural knowledge of the closed form.
    """
    a = np.asarray(inputs.a, dtype=float)
    n = a.shape[0]
    k2 = a.shape[1]
    rt = regularized(inputs.r_p, inputs.epsilon_reg)
    constraint = np.kron(a.T, (inputs.r_s @ a).T)  # (4K^2, n^2)
    n_con = constraint.shape[0]
    kkt = np.zeros((n * n + n_con, n * n + n_con))
    kkt[: n * n, : n * n] = 2.0 * np.kron(np.eye(n), rt)
    kkt[: n * n, n * n :] = constraint.T
    kkt[n * n :, : n * n] = constraint
    rhs = np.concatenate(
        [np.zeros(n * n), alpha * np.eye(k2).ravel(order="F")]
    )
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateGeometryError("KKT system is singular") from None
    return sol[: n * n].reshape((n, n), order="F")


def select_mode(solutions):
    """Pick the (qt, qr) pair with the best estimated SNR.

    Ties break in the fixed order (V,V), (V,H), (H,V), (H,H).
    """
    if set(solutions) != set(MODE_ORDER):
        raise ValueError(f"need all four mode pairs, got {sorted(solutions)}")
    chosen = None
    for mode in MODE_ORDER:
        if chosen is None or solutions[mode].snr_est > solutions[chosen].snr_est:
            chosen = mode
    return ModeSelection(solutions=dict(solutions), chosen=chosen)

"""Monte-Carlo experiment harness: power sweeps, mode comparison, BER.

Sweeps average the estimated SNR over channel draws and a deterministic grid
of primary-receiver tilt angles. The x-axis is P_maxSU/P_noise in dB with
unit noise power, and the SNR scale rho_SR is set equal to the power budget
at each point. Under that convention the precoder's geometry scalars do not
depend on the power point, so each (draw, mode, tilt) instance is factored
once and the whole power grid reduces to scalar arithmetic; the two-regime
shape (unit dB slope, then a plateau at the interference cap) is exact.

Random streams: the master seed spawns [secondary link, interference link,
noise] sequences, each link sequence spawns one child per channel draw, and
per-draw children cover the path geometry and the per-mode gain ensembles.
Every instance is indexed, so parallel and serial runs reduce identically.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy.special import erfc

from .channel import (
    LinkConfig,
    correlation,
    correlation_tilts,
    draw_paths,
    equivalent,
    realize,
    tilt_samples,
)
from .ostbc import build_code, dispersion
from .precoder import (
    MODE_ORDER,
    DegenerateGeometryError,
    PrecoderInputs,
    geometry_scalars,
    select_mode,
    solve,
)

BEST = "best"


class DegenerateSweepError(Exception):
    """Too many degenerate instances for a trustworthy average."""


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class SweepConfig:
    code: str
    sl: LinkConfig  # ST -> SR
    spl: LinkConfig  # ST -> PR
    power_grid_db: tuple
    eta_db: float
    n_tilt: int = 16
    n_channel: int = 200
    n_noise: int = 10_000
    seed: int = 0
    mode_policy: tuple = ("select",)  # or ("fixed", qt, qr)
    n_corr_samples: int = 2000
    epsilon_reg: float = 1e-9
    sl_correlation: str = "realization"  # or "average"
    average_domain: str = "linear"  # or "db"


@dataclass(frozen=True)
class ModeSeries:
    snr_db: np.ndarray
    frac_interf_limited: np.ndarray
    interference: np.ndarray  # linear average
    n_instances: int
    n_degenerate: int
    ber: object = None  # optional per-power array


@dataclass(frozen=True)
class SweepResult:
    power_grid_db: tuple
    eta: float
    series: dict  # (qt, qr) tuple or "best" -> ModeSeries
    chosen_counts: object = None  # (n_power, 4) selection counts per MODE_ORDER
    failed_modes: tuple = ()


@dataclass(frozen=True)
class CompareResult:
    power_grid_db: tuple
    eta: float
    series: dict
    failed_modes: tuple
    matched_gap_db: object  # ndarray, or None when a group fully failed
    per_draw_snr: object = None  # mode -> (n_channel, n_power) linear means


@dataclass(frozen=True)
class InstanceSnapshot:
    """One solved channel instance, enough to replay the transmit chain."""

    mode: tuple
    a: np.ndarray
    heq: np.ndarray
    w: np.ndarray
    alpha: float
    rho_sr: float
    n_tx: int
    binding: str
    snr_est: float
    interference_est: float
    snr_components: np.ndarray  # post-detection SNR per real symbol component


def worker_count():
    """PRECODER_THREADS: unset/1 serial, 0 auto, otherwise a cap."""
    raw = os.environ.get("PRECODER_THREADS", "").strip()
    if raw in ("", "1"):
        return 1
    n_cpu = os.cpu_count() or 1
    n = int(raw)
    if n < 0:
        raise ValueError(f"PRECODER_THREADS must be >= 0, got {n}")
    return n_cpu if n == 0 else min(n, n_cpu)


def _spawn_streams(seed, n_channel):
    sl_seq, spl_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    return sl_seq.spawn(n_channel), spl_seq.spawn(n_channel), noise_seq


def _secondary_correlation(cfg, paths, qt, qr, rng_seq):
    t = build_code(cfg.code).T
    if cfg.sl_correlation == "realization":
        heq = equivalent(realize(paths, qt, qr, 0.0, cfg.sl), t)
        return heq.T @ heq
    return correlation(
        paths, qt, qr, 0.0, t, cfg.n_corr_samples,
        cfg=cfg.sl, rng=np.random.default_rng(rng_seq),
    )


def _draw_scalars(cfg, modes, d):
    """Geometry scalars for draw d, keyed [mode][tilt]; None where degenerate."""
    code = build_code(cfg.code)
    a = dispersion(code)
    sl_kids, spl_kids, _ = _spawn_streams(cfg.seed, cfg.n_channel)
    tilts = tilt_samples(cfg.n_tilt)

    geom_seq, ens_v, ens_h = spl_kids[d].spawn(3)
    spl_paths = draw_paths(cfg.spl, np.random.default_rng(geom_seq))
    ens_spl = {"V": ens_v, "H": ens_h}
    r_p = {}
    for qt in {m[0] for m in modes}:
        r_p[qt] = correlation_tilts(
            spl_paths, qt, "V", tilts, code.T, cfg.n_corr_samples,
            cfg=cfg.spl, rng=np.random.default_rng(ens_spl[qt]),
        )

    paths_seq, *ens_sl_seqs = sl_kids[d].spawn(5)
    ens_sl = dict(zip(MODE_ORDER, ens_sl_seqs))
    sl_paths = draw_paths(cfg.sl, np.random.default_rng(paths_seq))

    out = {}
    for mode in modes:
        r_s = _secondary_correlation(cfg, sl_paths, *mode, ens_sl[mode])
        per_tilt = []
        for j in range(cfg.n_tilt):
            try:
                per_tilt.append(
                    geometry_scalars(a, r_s, r_p[mode[0]][j], cfg.epsilon_reg)
                )
            except DegenerateGeometryError:
                per_tilt.append(None)
        out[mode] = per_tilt
    return out


def _draw_partial(cfg, modes, want_best, collect, d):
    """Accumulated sums over this draw's tilt instances, per mode (and best)."""
    code = build_code(cfg.code)
    scalars = _draw_scalars(cfg, modes, d)
    powers = db_to_linear(cfg.power_grid_db)
    eta = db_to_linear(cfg.eta_db)
    n_power = powers.size
    kn = code.kappa * code.n_tx

    snr = {m: np.full((n_power, cfg.n_tilt), np.nan) for m in modes}
    il = {m: np.zeros((n_power, cfg.n_tilt), dtype=bool) for m in modes}
    intf = {m: np.zeros((n_power, cfg.n_tilt)) for m in modes}
    for m in modes:
        for j, gs in enumerate(scalars[m]):
            if gs is None:
                continue
            a2_power = kn / gs.delta
            a2_interf = kn * eta / (powers * gs.tr_q)
            limited = a2_interf <= a2_power
            a2 = np.where(limited, a2_interf, a2_power)
            snr[m][:, j] = powers * a2 / (code.n_tx * gs.ara_mean)
            il[m][:, j] = limited
            intf[m][:, j] = powers / code.n_tx * a2 * gs.tr_q / code.kappa

    def reduce_columns(snr_m, il_m, intf_m, cols):
        acc = linear_to_db(snr_m[:, cols]) if cfg.average_domain == "db" else snr_m[:, cols]
        return (
            acc.sum(axis=1),
            il_m[:, cols].sum(axis=1),
            intf_m[:, cols].sum(axis=1),
            int(cols.sum()),
        )

    partial_modes = {}
    for m in modes:
        valid = np.isfinite(snr[m][0])
        sums = reduce_columns(snr[m], il[m], intf[m], valid)
        draw_mean = None
        if collect:
            if sums[3] > 0:
                draw_mean = np.nansum(snr[m], axis=1) / sums[3]
            else:
                draw_mean = np.full(n_power, np.nan)
        partial_modes[m] = sums + (cfg.n_tilt - sums[3], draw_mean)

    best = None
    chosen = None
    if want_best:
        stack = np.stack([snr[m] for m in modes])  # (n_mode, n_power, n_tilt)
        joint = np.isfinite(stack[:, 0, :]).all(axis=0)  # (n_tilt,)
        pick = np.argmax(np.nan_to_num(stack, nan=-np.inf), axis=0)
        take = np.take_along_axis(stack, pick[None], axis=0)[0]
        il_stack = np.stack([il[m] for m in modes])
        intf_stack = np.stack([intf[m] for m in modes])
        il_best = np.take_along_axis(il_stack, pick[None], axis=0)[0]
        intf_best = np.take_along_axis(intf_stack, pick[None], axis=0)[0]
        best = reduce_columns(take, il_best, intf_best, joint)
        best = best + (cfg.n_tilt - best[3], None)
        chosen = np.zeros((n_power, len(modes)), dtype=np.int64)
        for i in range(n_power):
            counts = np.bincount(pick[i, joint], minlength=len(modes))
            chosen[i] = counts
    return partial_modes, best, chosen


def _run_engine(cfg, modes, want_best, collect=False):
    if len(cfg.power_grid_db) == 0:
        raise ValueError("power grid is empty")
    modes = tuple(modes)
    n_power = len(cfg.power_grid_db)
    work = partial(_draw_partial, cfg, modes, want_best, collect)
    n_workers = worker_count()
    if n_workers > 1 and cfg.n_channel > 1:
        chunk = max(1, cfg.n_channel // (4 * n_workers))
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(work, range(cfg.n_channel), chunksize=chunk))
    else:
        parts = [work(d) for d in range(cfg.n_channel)]

    def empty_acc():
        return [np.zeros(n_power), np.zeros(n_power), np.zeros(n_power), 0, 0]

    acc = {m: empty_acc() for m in modes}
    acc_best = empty_acc() if want_best else None
    chosen_counts = np.zeros((n_power, len(modes)), dtype=np.int64) if want_best else None
    per_draw = {m: [] for m in modes} if collect else None
    for partial_modes, best, chosen in parts:
        for m in modes:
            snr_sum, il_sum, intf_sum, n_valid, n_degen, draw_mean = partial_modes[m]
            acc[m][0] += snr_sum
            acc[m][1] += il_sum
            acc[m][2] += intf_sum
            acc[m][3] += n_valid
            acc[m][4] += n_degen
            if collect:
                per_draw[m].append(draw_mean)
        if want_best:
            for i, v in enumerate(best[:3]):
                acc_best[i] += v
            acc_best[3] += best[3]
            acc_best[4] += best[4]
            chosen_counts += chosen

    def to_series(a):
        snr_sum, il_sum, intf_sum, n_valid, n_degen = a
        if n_valid == 0:
            return None
        mean = snr_sum / n_valid
        snr_db = mean if cfg.average_domain == "db" else linear_to_db(mean)
        return ModeSeries(
            snr_db=snr_db,
            frac_interf_limited=il_sum / n_valid,
            interference=intf_sum / n_valid,
            n_instances=n_valid,
            n_degenerate=n_degen,
        )

    total = cfg.n_channel * cfg.n_tilt
    series = {}
    failed = []
    for m in modes:
        ms = to_series(acc[m])
        if ms is None or ms.n_degenerate > 0.01 * total:
            failed.append(m)
            continue
        series[m] = ms
    best_series = to_series(acc_best) if want_best else None
    best_failed = want_best and (
        best_series is None or best_series.n_degenerate > 0.01 * total
    )
    if collect:
        per_draw = {m: np.vstack(rows) for m, rows in per_draw.items()}
    return series, tuple(failed), best_series, best_failed, chosen_counts, per_draw


def _policy_modes(cfg):
    policy = cfg.mode_policy
    if policy[0] == "fixed":
        if len(policy) != 3 or (policy[1], policy[2]) not in MODE_ORDER:
            raise ValueError(f"bad fixed-mode policy {policy!r}")
        return (policy[1], policy[2])
    if policy == ("select",):
        return None
    raise ValueError(f"unknown mode policy {policy!r}")


def run_sweep(cfg):
    """Power sweep under the configured mode policy.

    Aborts with DegenerateSweepError when more than 1% of instances are
    degenerate, rather than silently biasing the averages.
    """
    fixed = _policy_modes(cfg)
    modes = MODE_ORDER if fixed is None else (fixed,)
    series, failed, best_series, best_failed, chosen_counts, _ = _run_engine(
        cfg, modes, want_best=fixed is None
    )
    if failed or best_failed:
        bad = ", ".join("qt=%s qr=%s" % m for m in failed) or "mode selection"
        raise DegenerateSweepError(
            f"more than 1% degenerate instances for {bad} "
            f"(seed {cfg.seed}, {cfg.n_channel} draws x {cfg.n_tilt} tilts)"
        )
    if fixed is None:
        series[BEST] = best_series
    return SweepResult(
        power_grid_db=tuple(cfg.power_grid_db),
        eta=float(db_to_linear(cfg.eta_db)),
        series=series,
        chosen_counts=chosen_counts,
        failed_modes=(),
    )


def compare_modes(cfg, collect_draws=False):
    """All four fixed-mode sweeps over shared channel draws.

    Modes whose degeneracy rate exceeds 1% are reported in failed_modes and
    dropped from the series instead of aborting the run.
    """
    series, failed, _, _, _, per_draw = _run_engine(
        cfg, MODE_ORDER, want_best=False, collect=collect_draws
    )
    if not series:
        raise DegenerateSweepError(
            f"every polarization mode degenerated (seed {cfg.seed})"
        )
    matched = [m for m in (("V", "V"), ("H", "H")) if m in series]
    mismatched = [m for m in (("V", "H"), ("H", "V")) if m in series]
    gap = None
    if matched and mismatched:
        lin = lambda ms: db_to_linear(ms.snr_db)
        matched_mean = np.mean([lin(series[m]) for m in matched], axis=0)
        mismatched_mean = np.mean([lin(series[m]) for m in mismatched], axis=0)
        gap = linear_to_db(matched_mean) - linear_to_db(mismatched_mean)
    if collect_draws:
        per_draw = {m: per_draw[m] for m in series}
    return CompareResult(
        power_grid_db=tuple(cfg.power_grid_db),
        eta=float(db_to_linear(cfg.eta_db)),
        series=series,
        failed_modes=failed,
        matched_gap_db=gap,
        per_draw_snr=per_draw if collect_draws else None,
    )


def make_snapshot(cfg, power_db, mode=None):
    """Solve one channel instance (draw 0, first tilt) at the given power."""
    code = build_code(cfg.code)
    a = dispersion(code)
    sl_kids, spl_kids, _ = _spawn_streams(cfg.seed, cfg.n_channel)
    tilts = tilt_samples(cfg.n_tilt)
    geom_seq, ens_v, ens_h = spl_kids[0].spawn(3)
    spl_paths = draw_paths(cfg.spl, np.random.default_rng(geom_seq))
    ens_spl = {"V": ens_v, "H": ens_h}
    paths_seq, *_ = sl_kids[0].spawn(5)
    sl_paths = draw_paths(cfg.sl, np.random.default_rng(paths_seq))

    if mode is None:
        fixed = _policy_modes(cfg)
        candidates = MODE_ORDER if fixed is None else (fixed,)
    else:
        candidates = (tuple(mode),)
    power = float(db_to_linear(power_db))
    eta = float(db_to_linear(cfg.eta_db))
    r_p = {
        qt: correlation(
            spl_paths, qt, "V", tilts[0], code.T, cfg.n_corr_samples,
            cfg=cfg.spl, rng=np.random.default_rng(ens_spl[qt]),
        )
        for qt in {m[0] for m in candidates}
    }
    picked = None
    for m in candidates:
        heq = equivalent(realize(sl_paths, *m, 0.0, cfg.sl), code.T)
        r_s = heq.T @ heq
        inputs = PrecoderInputs.for_code(
            code, r_s=r_s, r_p=r_p[m[0]], rho_sr=power, p_tmax=power,
            eta=eta, epsilon_reg=cfg.epsilon_reg,
        )
        sol = solve(inputs)
        if picked is None or sol.snr_est > picked[1].snr_est:
            picked = (m, sol, heq, r_s)
    m, sol, heq, r_s = picked
    ara_diag = np.einsum("ij,ij->j", a, r_s @ a)
    return InstanceSnapshot(
        mode=m,
        a=a,
        heq=heq,
        w=sol.w,
        alpha=sol.alpha,
        rho_sr=power,
        n_tx=code.n_tx,
        binding=sol.binding,
        snr_est=sol.snr_est,
        interference_est=sol.interference_est,
        snr_components=power * sol.alpha**2 / (code.n_tx * ara_diag),
    )


def run_ber(cfg, snapshot, noise_scale=1.0, rng=None):
    """Bit error rate of QPSK blocks through the precoded channel.

    Transmits cfg.n_noise blocks, adds white Gaussian noise scaled by
    noise_scale, detects with the plain matched filter and sign slicing.
    """
    if rng is None:
        rng = np.random.default_rng(_spawn_streams(cfg.seed, cfg.n_channel)[2])
    a, heq, w = snapshot.a, snapshot.heq, snapshot.w
    k = a.shape[1] // 2
    bits = rng.integers(0, 2, size=(cfg.n_noise, 2 * k))
    s_under = np.hstack(
        [(1.0 - 2.0 * bits[:, 0::2]), (1.0 - 2.0 * bits[:, 1::2])]
    ) / np.sqrt(2.0)
    tx = np.sqrt(snapshot.rho_sr / snapshot.n_tx) * (heq @ w @ a)
    y = s_under @ tx.T
    if noise_scale != 0.0:
        y = y + rng.normal(scale=noise_scale * np.sqrt(0.5), size=y.shape)
    shat = y @ (heq @ a)
    wrong = np.empty_like(bits)
    wrong[:, 0::2] = (shat[:, :k] < 0) != bits[:, 0::2]
    wrong[:, 1::2] = (shat[:, k:] < 0) != bits[:, 1::2]
    return float(wrong.mean())


def qpsk_ber_theory(snr_components):
    """Average QPSK bit error probability at the given per-component SNRs."""
    snr = np.asarray(snr_components, dtype=float)
    return float(np.mean(0.5 * erfc(np.sqrt(snr / 2.0))))


def post_detection_snr(snapshot, rng, n_draws):
    """Empirical detector-output SNR: total signal power over noise power."""
    d = snapshot.heq @ snapshot.a
    noise = rng.normal(scale=np.sqrt(0.5), size=(n_draws, snapshot.heq.shape[0]))
    z = noise @ d
    noise_power = float(np.mean(np.sum(z**2, axis=1)))
    k2 = snapshot.a.shape[1]
    signal_power = k2 * snapshot.rho_sr / snapshot.n_tx * snapshot.alpha**2 * 0.5
    return signal_power / noise_power


def summarize(result):
    """Flatten a sweep or comparison into CSV-ready rows.

    Row order: modes in the fixed tie-break order (then the selection series),
    power ascending within each mode.
    """
    rows = []
    keys = [m for m in MODE_ORDER if m in result.series]
    if BEST in result.series:
        keys.append(BEST)
    for key in keys:
        qt, qr = (key, key) if key == BEST else key
        ms = result.series[key]
        for i, p in enumerate(result.power_grid_db):
            ber = None if ms.ber is None else float(ms.ber[i])
            rows.append(
                (
                    float(p),
                    qt,
                    qr,
                    float(ms.snr_db[i]),
                    float(ms.frac_interf_limited[i]),
                    float(ms.interference[i]),
                    ber,
                )
            )
    return rows

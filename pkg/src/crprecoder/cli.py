"""Command line front end.

Commands read an INI config describing the two links and the sweep, run the
experiment, and write three files into the output directory: result.csv
(one row per mode and power point), snr_vs_power.svg, and run_manifest.txt
echoing the resolved configuration. All outputs are computed before anything
is written, and partially written files are removed on failure, so an output
directory never holds a half-finished run.

Exit status: 0 success, 1 configuration error, 2 numerical degeneracy,
3 invariant violation (verify).
"""

import argparse
import configparser
import csv
import os
import sys
from dataclasses import replace

import matplotlib
import numpy as np

from . import __version__
from .channel import LinkConfig
from .montecarlo import (
    BEST,
    DegenerateSweepError,
    ModeSeries,
    SweepConfig,
    SweepResult,
    compare_modes,
    db_to_linear,
    linear_to_db,
    make_snapshot,
    run_ber,
    run_sweep,
    summarize,
)
from .ostbc import build_code, dispersion, encode
from .precoder import (
    MODE_ORDER,
    DegenerateGeometryError,
    PrecoderInputs,
    oracle_solve,
    solve,
)

matplotlib.use("Agg")
matplotlib.rcParams["svg.fonttype"] = "none"
import matplotlib.pyplot as plt  # noqa: E402

CSV_HEADER = (
    "power_db", "qt", "qr", "snr_db", "frac_interf_limited", "interference", "ber",
)


class ConfigError(Exception):
    pass


_RUN_KEYS = {
    "code": str,
    "power_grid_db": "grid",
    "eta_db": float,
    "n_tilt": int,
    "n_channel": int,
    "n_noise": int,
    "seed": int,
    "mode": "mode",
    "n_corr_samples": int,
    "epsilon_reg": float,
    "sl_correlation": str,
    "average_domain": str,
}
_RUN_REQUIRED = ("code", "power_grid_db", "eta_db")
_LINK_KEYS = {"n_tx": int, "n_rx": int, "n_path": int, "xpd_db": float, "spacing": float}
_LINK_REQUIRED = ("n_tx", "n_rx", "n_path", "xpd_db")


def _parse_grid(raw):
    """Either a comma list of dB values or a lin:start:stop:count shorthand."""
    raw = raw.strip()
    if raw.startswith("lin:"):
        parts = raw.split(":")
        if len(parts) != 4:
            raise ValueError("expected lin:start:stop:count")
        start, stop, count = float(parts[1]), float(parts[2]), int(parts[3])
        if count < 1:
            raise ValueError("grid count must be >= 1")
        return tuple(float(x) for x in np.linspace(start, stop, count))
    values = tuple(float(tok) for tok in raw.replace(",", " ").split())
    if not values:
        raise ValueError("empty grid")
    return values


def _parse_mode(raw):
    raw = raw.strip()
    if raw == "select":
        return ("select",)
    pairs = {"".join(m): m for m in MODE_ORDER}
    if raw in pairs:
        return ("fixed",) + pairs[raw]
    raise ValueError("expected select, VV, VH, HV, or HH")


def _convert(section, key, kind, raw):
    try:
        if kind == "grid":
            return _parse_grid(raw)
        if kind == "mode":
            return _parse_mode(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(
            f"invalid value for [{section}] {key}: {raw!r} ({exc})"
        ) from None


def _read_section(parser, name, keys, required):
    if name not in parser:
        raise ConfigError(f"missing required config section: [{name}]")
    out = {}
    for key, raw in parser[name].items():
        if key not in keys:
            raise ConfigError(f"unknown config key: [{name}] {key}")
        out[key] = _convert(name, key, keys[key], raw)
    for key in required:
        if key not in out:
            raise ConfigError(f"missing required config key: [{name}] {key}")
    return out


def parse_config(path):
    """Read an INI sweep description; raises ConfigError with the offender."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";",)
    )
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    if not read:
        raise ConfigError(f"config file not readable: {path}")
    for section in parser.sections():
        if section not in ("run", "sl", "spl"):
            raise ConfigError(f"unknown config section: [{section}]")

    run = _read_section(parser, "run", _RUN_KEYS, _RUN_REQUIRED)
    links = {
        name: LinkConfig(**_read_section(parser, name, _LINK_KEYS, _LINK_REQUIRED))
        for name in ("sl", "spl")
    }
    try:
        code = build_code(run["code"])
    except ValueError as exc:
        raise ConfigError(f"invalid value for [run] code: {exc}") from None
    for name, link in links.items():
        if link.n_tx != code.n_tx:
            raise ConfigError(
                f"[{name}] n_tx = {link.n_tx} does not match code "
                f"{code.name} (n_tx = {code.n_tx})"
            )
    if "mode" in run:
        run["mode_policy"] = run.pop("mode")
    cfg = SweepConfig(sl=links["sl"], spl=links["spl"], **run)
    if cfg.sl_correlation not in ("realization", "average"):
        raise ConfigError(
            f"invalid value for [run] sl_correlation: {cfg.sl_correlation!r}"
        )
    if cfg.average_domain not in ("linear", "db"):
        raise ConfigError(
            f"invalid value for [run] average_domain: {cfg.average_domain!r}"
        )
    for key in ("n_tilt", "n_channel", "n_noise"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"invalid value for [run] {key}: must be >= 1")
    return cfg


def _manifest_text(cfg, command):
    lines = [f"command = {command}", f"version = {__version__}"]
    for name, link in (("sl", cfg.sl), ("spl", cfg.spl)):
        for key in _LINK_KEYS:
            lines.append(f"{name}.{key} = {getattr(link, key)}")
    grid = ", ".join(repr(float(p)) for p in cfg.power_grid_db)
    policy = cfg.mode_policy
    mode = "select" if policy == ("select",) else policy[1] + policy[2]
    lines += [
        f"run.code = {cfg.code}",
        f"run.power_grid_db = {grid}",
        f"run.eta_db = {cfg.eta_db}",
        f"run.n_tilt = {cfg.n_tilt}",
        f"run.n_channel = {cfg.n_channel}",
        f"run.n_noise = {cfg.n_noise}",
        f"run.seed = {cfg.seed}",
        f"run.mode = {mode}",
        f"run.n_corr_samples = {cfg.n_corr_samples}",
        f"run.epsilon_reg = {cfg.epsilon_reg}",
        f"run.sl_correlation = {cfg.sl_correlation}",
        f"run.average_domain = {cfg.average_domain}",
    ]
    return "\n".join(lines) + "\n"


def _series_label(key):
    return "best" if key == BEST else f"qt={key[0]} qr={key[1]}"


def _write_outputs(outdir, rows, result, cfg, command):
    os.makedirs(outdir, exist_ok=True)
    written = []
    try:
        csv_path = os.path.join(outdir, "result.csv")
        written.append(csv_path)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in rows:
                ber = "" if row[6] is None else repr(float(row[6]))
                writer.writerow(
                    [repr(float(row[0])), row[1], row[2], repr(float(row[3])),
                     repr(float(row[4])), repr(float(row[5])), ber]
                )

        svg_path = os.path.join(outdir, "snr_vs_power.svg")
        written.append(svg_path)
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        power = np.asarray(result.power_grid_db, dtype=float)
        keys = [m for m in MODE_ORDER if m in result.series]
        if BEST in result.series:
            keys.append(BEST)
        for key in keys:
            ax.plot(power, result.series[key].snr_db, marker="o",
                    label=_series_label(key))
        ax.set_xlabel("P_maxSU/P_noise (dB)")
        ax.set_ylabel("Average SNR at SR (dB)")
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)

        manifest_path = os.path.join(outdir, "run_manifest.txt")
        written.append(manifest_path)
        with open(manifest_path, "w") as fh:
            fh.write(_manifest_text(cfg, command))
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return written


def cmd_sweep(cfg, outdir):
    result = run_sweep(cfg)
    rows = summarize(result)
    _write_outputs(outdir, rows, result, cfg, "sweep")
    print(f"seed: {cfg.seed}")
    if cfg.mode_policy == ("select",):
        counts = result.chosen_counts
        for i, p in enumerate(result.power_grid_db):
            mode = MODE_ORDER[int(np.argmax(counts[i]))]
            frac = counts[i].max() / max(counts[i].sum(), 1)
            print(
                f"power {p:g} dB: chosen mode qt={mode[0]} qr={mode[1]} "
                f"({frac:.2f} of instances)"
            )
    print(f"wrote {outdir}/result.csv, snr_vs_power.svg, run_manifest.txt")
    return 0


def cmd_compare(cfg, outdir):
    result = compare_modes(cfg)
    rows = summarize(result)
    _write_outputs(outdir, rows, result, cfg, "compare")
    print(f"seed: {cfg.seed}")
    for mode in result.failed_modes:
        print(f"mode qt={mode[0]} qr={mode[1]}: degenerate, excluded")
    if result.matched_gap_db is not None:
        gaps = ", ".join(f"{g:.2f}" for g in result.matched_gap_db)
        print(f"matched-vs-mismatched gap (dB): {gaps}")
    print(f"wrote {outdir}/result.csv, snr_vs_power.svg, run_manifest.txt")
    return 0


def cmd_ber(cfg, outdir):
    """BER of one solved instance per power point, next to its estimate."""
    rows = []
    series_rows = []
    for p in cfg.power_grid_db:
        snap = make_snapshot(cfg, p)
        ber = run_ber(cfg, snap)
        snr_db = float(linear_to_db(snap.snr_est))
        il = 1.0 if snap.binding == "InterferenceLimited" else 0.0
        rows.append(
            (float(p), snap.mode[0], snap.mode[1], snr_db, il,
             float(snap.interference_est), float(ber))
        )
        series_rows.append((snr_db, il, snap.interference_est, ber))
    arr = np.asarray(series_rows, dtype=float)
    series = {
        (rows[0][1], rows[0][2]): ModeSeries(
            snr_db=arr[:, 0], frac_interf_limited=arr[:, 1],
            interference=arr[:, 2], n_instances=len(rows), n_degenerate=0,
            ber=arr[:, 3],
        )
    }
    result = SweepResult(
        power_grid_db=tuple(cfg.power_grid_db),
        eta=float(db_to_linear(cfg.eta_db)),
        series=series,
    )
    _write_outputs(outdir, rows, result, cfg, "ber")
    print(f"seed: {cfg.seed}")
    for row in rows:
        print(
            f"power {row[0]:g} dB: mode qt={row[1]} qr={row[2]} "
            f"ber {row[6]:.3e}"
        )
    print(f"wrote {outdir}/result.csv, snr_vs_power.svg, run_manifest.txt")
    return 0


def _verify_instances(seed, code_name, count):
    code = build_code(code_name)
    a = dispersion(code)
    n = a.shape[0]
    rng = np.random.default_rng(seed)
    for _ in range(count):
        ms = rng.standard_normal((n, n))
        mp = rng.standard_normal((n, n))
        r_s = ms @ ms.T / n + 0.05 * np.eye(n)
        r_p = mp @ mp.T / n + 0.05 * np.eye(n)
        yield PrecoderInputs.for_code(
            code, r_s=r_s, r_p=r_p, rho_sr=rng.uniform(0.5, 2.0),
            p_tmax=rng.uniform(0.5, 2.0), eta=rng.uniform(0.5, 2.0),
            epsilon_reg=0.0,
        ), a, code


def cmd_verify(seed, printed_q):
    """Self-checks on random instances; failure exits with status 3."""
    checks = []

    def residual(inputs, a, sol):
        gram = a.T @ inputs.r_s @ sol.w @ a
        target = sol.alpha * np.eye(a.shape[1])
        return np.linalg.norm(gram - target) / np.linalg.norm(target)

    worst_res = 0.0
    worst_gate = 0.0
    worst_intf = 0.0
    for code_name in ("C2", "C4"):
        for inputs, a, code in _verify_instances(seed, code_name, 5):
            sol = solve(inputs)
            worst_res = max(worst_res, residual(inputs, a, sol))
            direct = (
                inputs.rho_sr / inputs.n_tx
                * float(np.vdot(sol.w, inputs.r_p @ sol.w))
            )
            worst_intf = max(
                worst_intf, abs(direct - sol.interference_est) / sol.interference_est
            )
            if sol.binding == "InterferenceLimited":
                tight = abs(sol.interference_est - inputs.eta) / inputs.eta
                slack = sol.transmit_power_est <= inputs.p_tmax * (1 + 1e-9)
            else:
                tight = abs(sol.transmit_power_est - inputs.p_tmax) / inputs.p_tmax
                slack = sol.interference_est <= inputs.eta * (1 + 1e-9)
            worst_gate = max(worst_gate, tight if slack else np.inf)
    checks.append(("constraint residual <= 1e-8", worst_res <= 1e-8, worst_res))
    checks.append(("interference identity <= 1e-10", worst_intf <= 1e-10, worst_intf))
    checks.append(("active budget tight <= 1e-9", worst_gate <= 1e-9, worst_gate))

    worst_unitary = 0.0
    rng = np.random.default_rng(seed + 1)
    for code_name in ("C2", "C4"):
        code = build_code(code_name)
        for _ in range(100):
            s = (rng.standard_normal(code.K) + 1j * rng.standard_normal(code.K))
            x = encode(code, s)
            target = code.c_unitary * float(np.sum(np.abs(s) ** 2)) * np.eye(code.n_tx)
            worst_unitary = max(
                worst_unitary, float(np.max(np.abs(x @ x.conj().T - target)))
            )
    checks.append(("block unitarity <= 1e-10", worst_unitary <= 1e-10, worst_unitary))

    worst_oracle = 0.0
    for inputs, a, code in _verify_instances(seed + 2, "C2", 3):
        sol = solve(inputs)
        w_ref = oracle_solve(inputs, sol.alpha)
        worst_oracle = max(
            worst_oracle,
            float(np.linalg.norm(sol.w - w_ref) / np.linalg.norm(w_ref)),
        )
    checks.append(("matches equality-constrained oracle <= 1e-6",
                   worst_oracle <= 1e-6, worst_oracle))

    if printed_q:
        worst_printed = np.inf
        for inputs, a, code in _verify_instances(seed + 3, "C2", 5):
            sol = solve(inputs, use_printed_q=True)
            worst_printed = min(worst_printed, residual(inputs, a, sol))
        checks.append(
            ("negative control: printed Q residual >= 1e-3",
             worst_printed >= 1e-3, worst_printed)
        )

    print(f"seed: {seed}")
    ok = True
    for name, passed, value in checks:
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name} (worst {value:.3e}, seed {seed})")
        ok = ok and passed
    return 0 if ok else 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crprecoder",
        description="Minimum-variance precoded OSTBC experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("sweep", "power sweep under the configured mode policy"),
        ("compare", "all four fixed polarization modes on shared draws"),
        ("ber", "bit error rate of one solved instance per power point"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    v = sub.add_parser("verify", help="run numerical self-checks")
    v.add_argument("--seed", type=int, default=20260815)
    v.add_argument("--printed-q", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.seed, args.printed_q)
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        handler = {"sweep": cmd_sweep, "compare": cmd_compare, "ber": cmd_ber}
        return handler[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DegenerateSweepError, DegenerateGeometryError) as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

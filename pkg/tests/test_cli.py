import csv
import os

import numpy as np
import pytest

from crprecoder.cli import (
    CSV_HEADER,
    ConfigError,
    build_parser,
    main,
    parse_config,
)

GOOD_CONFIG = """\
[run]
code = C2
power_grid_db = 0, 10, 20
eta_db = 0.0
n_tilt = 4
n_channel = 8
n_noise = 2000
seed = 7
mode = VV

[sl]
n_tx = 2
n_rx = 1
n_path = 2
xpd_db = 8.0

[spl]
n_tx = 2
n_rx = 1
n_path = 1
xpd_db = 8.0
"""


def write_config(tmp_path, text=GOOD_CONFIG, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(outdir):
    with open(os.path.join(outdir, "result.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


class TestParseConfig:
    def test_full_round_trip(self, tmp_path):
        cfg = parse_config(write_config(tmp_path))
        assert cfg.code == "C2"
        assert cfg.power_grid_db == (0.0, 10.0, 20.0)
        assert cfg.eta_db == 0.0
        assert cfg.mode_policy == ("fixed", "V", "V")
        assert cfg.sl.n_rx == 1
        assert cfg.spl.n_path == 1
        assert cfg.seed == 7

    def test_defaults_applied(self, tmp_path):
        text = GOOD_CONFIG.replace("n_tilt = 4\n", "").replace(
            "n_channel = 8\n", ""
        ).replace("n_noise = 2000\n", "").replace("seed = 7\n", "").replace(
            "mode = VV\n", ""
        )
        cfg = parse_config(write_config(tmp_path, text))
        assert cfg.n_tilt == 16
        assert cfg.n_channel == 200
        assert cfg.n_noise == 10_000
        assert cfg.seed == 0
        assert cfg.mode_policy == ("select",)
        assert cfg.sl_correlation == "realization"
        assert cfg.average_domain == "linear"

    def test_linspace_grid_shorthand(self, tmp_path):
        text = GOOD_CONFIG.replace(
            "power_grid_db = 0, 10, 20", "power_grid_db = lin:-10:30:5"
        )
        cfg = parse_config(write_config(tmp_path, text))
        assert cfg.power_grid_db == (-10.0, 0.0, 10.0, 20.0, 30.0)

    def test_infinite_xpd(self, tmp_path):
        text = GOOD_CONFIG.replace("xpd_db = 8.0\n\n[spl]", "xpd_db = inf\n\n[spl]")
        cfg = parse_config(write_config(tmp_path, text))
        assert np.isinf(cfg.sl.xpd_db)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(str(tmp_path / "absent.ini"))

    def test_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(write_config(tmp_path, "run]\ncode C2\n"))

    def test_unknown_key_named(self, tmp_path):
        text = GOOD_CONFIG.replace("[run]\n", "[run]\nbogus = 1\n")
        with pytest.raises(ConfigError, match=r"\[run\] bogus"):
            parse_config(write_config(tmp_path, text))

    def test_unknown_section_named(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[extra\]"):
            parse_config(write_config(tmp_path, GOOD_CONFIG + "\n[extra]\nx = 1\n"))

    def test_missing_eta_is_an_error(self, tmp_path):
        text = GOOD_CONFIG.replace("eta_db = 0.0\n", "")
        with pytest.raises(ConfigError, match=r"\[run\] eta_db"):
            parse_config(write_config(tmp_path, text))

    def test_missing_section(self, tmp_path):
        text = GOOD_CONFIG.split("[spl]")[0]
        with pytest.raises(ConfigError, match=r"\[spl\]"):
            parse_config(write_config(tmp_path, text))

    def test_invalid_int_named(self, tmp_path):
        text = GOOD_CONFIG.replace("n_channel = 8", "n_channel = eight")
        with pytest.raises(ConfigError, match=r"\[run\] n_channel"):
            parse_config(write_config(tmp_path, text))

    def test_invalid_mode(self, tmp_path):
        text = GOOD_CONFIG.replace("mode = VV", "mode = diag")
        with pytest.raises(ConfigError, match=r"\[run\] mode"):
            parse_config(write_config(tmp_path, text))

    def test_antenna_count_must_match_code(self, tmp_path):
        text = GOOD_CONFIG.replace("code = C2", "code = C4")
        with pytest.raises(ConfigError, match="n_tx"):
            parse_config(write_config(tmp_path, text))

    def test_unknown_code(self, tmp_path):
        text = GOOD_CONFIG.replace("code = C2", "code = C3")
        with pytest.raises(ConfigError, match="code"):
            parse_config(write_config(tmp_path, text))

    def test_shipped_examples_parse(self):
        root = os.path.join(os.path.dirname(__file__), "..", "configs")
        paths = sorted(
            os.path.join(root, name)
            for name in os.listdir(root)
            if name.endswith(".ini")
        )
        assert len(paths) >= 4
        for path in paths:
            cfg = parse_config(path)
            assert cfg.n_channel >= 1


class TestSweepCommand:
    def test_writes_all_outputs(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        out = str(tmp_path / "out")
        assert main(["sweep", "--config", cfg_path, "--out", out]) == 0
        header, rows = read_rows(out)
        assert header == list(CSV_HEADER)
        assert len(rows) == 3
        assert rows[0][1:3] == ["V", "V"]
        for row in rows:
            assert float(row[3]) == float(row[3])  # parses
            assert row[6] == ""
        svg = (tmp_path / "out" / "snr_vs_power.svg").read_text()
        assert svg.lstrip().startswith("<?xml")
        assert "P_maxSU/P_noise (dB)" in svg
        assert "Average SNR at SR (dB)" in svg
        manifest = (tmp_path / "out" / "run_manifest.txt").read_text()
        assert "run.seed = 7" in manifest
        assert "sl.n_path = 2" in manifest
        assert "command = sweep" in manifest
        assert "seed: 7" in capsys.readouterr().out

    def test_csv_byte_identical_across_runs(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["sweep", "--config", cfg_path, "--out", out_a]) == 0
        assert main(["sweep", "--config", cfg_path, "--out", out_b]) == 0
        bytes_a = (tmp_path / "a" / "result.csv").read_bytes()
        bytes_b = (tmp_path / "b" / "result.csv").read_bytes()
        assert bytes_a == bytes_b

    def test_seed_override(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["sweep", "--config", cfg_path, "--out", out_a,
                     "--seed", "99"]) == 0
        assert main(["sweep", "--config", cfg_path, "--out", out_b]) == 0
        manifest = (tmp_path / "a" / "run_manifest.txt").read_text()
        assert "run.seed = 99" in manifest
        assert (tmp_path / "a" / "result.csv").read_bytes() != (
            tmp_path / "b" / "result.csv"
        ).read_bytes()

    def test_select_policy_prints_choices(self, tmp_path, capsys):
        text = GOOD_CONFIG.replace("mode = VV", "mode = select")
        cfg_path = write_config(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["sweep", "--config", cfg_path, "--out", out]) == 0
        printed = capsys.readouterr().out
        assert printed.count("chosen mode") == 3
        header, rows = read_rows(out)
        assert len(rows) == 3 * 5
        assert {tuple(r[1:3]) for r in rows} == {
            ("V", "V"), ("V", "H"), ("H", "V"), ("H", "H"), ("best", "best"),
        }

    def test_config_error_exit_code(self, tmp_path, capsys):
        text = GOOD_CONFIG.replace("eta_db = 0.0\n", "")
        cfg_path = write_config(tmp_path, text)
        assert main(["sweep", "--config", cfg_path, "--out", str(tmp_path)]) == 1
        assert "eta_db" in capsys.readouterr().err

    def test_degenerate_exit_code(self, tmp_path, capsys):
        text = GOOD_CONFIG.replace(
            "mode = VV", "mode = VH"
        ).replace("xpd_db = 8.0\n\n[spl]", "xpd_db = inf\n\n[spl]")
        cfg_path = write_config(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["sweep", "--config", cfg_path, "--out", out]) == 2
        assert "degenerate" in capsys.readouterr().err
        assert not os.path.exists(os.path.join(out, "result.csv"))

    def test_partial_outputs_removed_on_failure(self, tmp_path, monkeypatch):
        cfg_path = write_config(tmp_path)
        out = str(tmp_path / "out")
        import crprecoder.cli as cli_mod

        def boom(*args, **kwargs):
            raise RuntimeError("plot failed")

        monkeypatch.setattr(cli_mod.plt, "subplots", boom)
        with pytest.raises(RuntimeError):
            main(["sweep", "--config", cfg_path, "--out", out])
        assert not os.path.exists(os.path.join(out, "result.csv"))
        assert not os.path.exists(os.path.join(out, "snr_vs_power.svg"))


class TestCompareCommand:
    def test_four_modes_reported(self, tmp_path, capsys):
        text = GOOD_CONFIG.replace("mode = VV", "mode = select")
        cfg_path = write_config(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["compare", "--config", cfg_path, "--out", out]) == 0
        header, rows = read_rows(out)
        assert len(rows) == 3 * 4
        assert "matched-vs-mismatched gap" in capsys.readouterr().out

    def test_failed_modes_reported_not_fatal(self, tmp_path, capsys):
        text = GOOD_CONFIG.replace("xpd_db = 8.0\n\n[spl]", "xpd_db = inf\n\n[spl]")
        cfg_path = write_config(tmp_path, text)
        out = str(tmp_path / "out")
        assert main(["compare", "--config", cfg_path, "--out", out]) == 0
        printed = capsys.readouterr().out
        assert "degenerate, excluded" in printed
        header, rows = read_rows(out)
        assert len(rows) == 3 * 2


class TestBerCommand:
    def test_ber_column_filled(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = str(tmp_path / "out")
        assert main(["ber", "--config", cfg_path, "--out", out]) == 0
        header, rows = read_rows(out)
        assert len(rows) == 3
        bers = [float(r[6]) for r in rows]
        assert all(0.0 <= b <= 1.0 for b in bers)
        # higher budget, cleaner detection
        assert bers[-1] <= bers[0]


class TestVerifyCommand:
    def test_passes_and_is_deterministic(self, capsys):
        assert main(["verify", "--seed", "5"]) == 0
        first = capsys.readouterr().out
        assert main(["verify", "--seed", "5"]) == 0
        second = capsys.readouterr().out
        assert first == second
        assert "seed: 5" in first
        assert "FAIL" not in first
        assert first.count("PASS") == 5

    def test_negative_control_flagged_run(self, capsys):
        assert main(["verify", "--seed", "5", "--printed-q"]) == 0
        printed = capsys.readouterr().out
        assert "negative control" in printed
        assert printed.count("PASS") == 6

    def test_control_flag_hidden_from_help(self):
        help_text = build_parser().format_help()
        assert "printed-q" not in help_text

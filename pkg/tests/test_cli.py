import math

import pytest

from mkthermo import cli
from mkthermo.config import ConfigError, PipelineConfig
from mkthermo.fileio import read_csv, read_kv, read_series, sha256_file

RUN_B = """\
resonator.f0 = 669.7
resonator.q_factor = 15400
resonator.m_eff = 1.5e-12
sim.outputs = thermal
sim.bath_temperature = 10.3e-3
sim.kappa = 5.26e4
sim.detection_noise_asd = 3e-7
sim.duration = {duration}
sim.rng_seed = 3
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_config_unknown_key_names_key_and_line(tmp_path):
    p = write_cfg(tmp_path, "resonator.f0 = 700\nsim.bath_temprature = 0.01\n")
    with pytest.raises(ConfigError, match=r"run.cfg:2: unknown key 'sim.bath_temprature'"):
        PipelineConfig.from_file(p)


def test_config_bad_value_and_defaults(tmp_path):
    with pytest.raises(ConfigError, match=":1:"):
        PipelineConfig.from_file(write_cfg(tmp_path, "sim.duration = soon\n"))
    cfg = PipelineConfig.from_file(write_cfg(tmp_path, RUN_B.format(duration=100)))
    assert cfg.resonator().q_factor == 15400
    assert cfg.kappa() == 5.26e4
    assert cfg.tau() == pytest.approx(15400 / (math.pi * 669.7))
    assert cfg.lockin_config().demod_freq == 669.7
    assert len(cfg.digest) == 64


def test_unknown_key_exit_code_and_message(tmp_path, capsys):
    p = write_cfg(tmp_path, "sim.colour = blue\n")
    assert run("simulate", "--config", p, "--out", tmp_path / "o") == cli.EXIT_DATA
    assert "sim.colour" in capsys.readouterr().err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["simulate"])
    assert e.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["no-such-command"])
    assert e.value.code == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE


def test_simulate_size_contract_and_manifest(tmp_path):
    cfg = write_cfg(tmp_path, RUN_B.format(duration=50))
    out = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--out", out) == 0
    ts, epoch = read_series(out / "thermal.mkts")
    assert len(ts) == 50 * 2800
    manifest = read_kv(out / "manifest.txt")
    assert manifest["config.sha256"][0] == sha256_file(cfg)
    assert manifest["output.thermal.mkts"][0] == sha256_file(out / "thermal.mkts")
    assert manifest["toolkit_version"][0] == cli.__version__


def test_output_dir_from_environment(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, RUN_B.format(duration=20))
    monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(tmp_path / "env-out"))
    assert run("simulate", "--config", cfg) == 0
    assert (tmp_path / "env-out" / "thermal.mkts").exists()


def test_zero_length_series_is_format_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, RUN_B.format(duration=20))
    empty = tmp_path / "empty.mkts"
    empty.write_bytes(b"")
    assert run("temp", empty, "--config", cfg, "--out", tmp_path / "t") == cli.EXIT_DATA
    assert "empty" in capsys.readouterr().err


def test_temp_recovers_temperature(tmp_path):
    cfg = write_cfg(tmp_path, RUN_B.format(duration=600))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "sim") == 0
    assert run("temp", tmp_path / "sim" / "thermal.mkts", "--config", cfg,
               "--out", tmp_path / "t") == 0
    kv = read_kv(tmp_path / "t" / "temperature.txt")
    t = float(kv["mean.temperature_K"][0])
    u = float(kv["mean.uncertainty_K"][0])
    assert abs(t - 10.3e-3) < 3 * u
    for name in ("psd.csv", "psd.svg", "energy.csv", "histogram.csv", "histogram.svg"):
        assert (tmp_path / "t" / name).exists()


def test_noise_only_series_flagged(tmp_path):
    text = RUN_B.format(duration=200).replace("10.3e-3", "0")
    cfg = write_cfg(tmp_path, text)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "sim") == 0
    assert run("temp", tmp_path / "sim" / "thermal.mkts", "--config", cfg,
               "--out", tmp_path / "t") == 0
    kv = read_kv(tmp_path / "t" / "temperature.txt")
    assert kv["mean.flagged"][0] == "true"
    t = float(kv["mean.temperature_K"][0])
    assert t < 3 * float(kv["mean.uncertainty_K"][0]) + 1e-4


def test_fit_and_report_commands(tmp_path):
    cfg = write_cfg(tmp_path, "sim.outputs = run\nrun.t_mfft = 0.003, 0.005, 0.008, 0.012, "
                              "0.02, 0.03, 0.045, 0.06\nrun.t0 = 0.006\nrun.rel_err_cant = 0.01\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "sim") == 0
    assert run("fit", tmp_path / "sim" / "run.csv", "--out", tmp_path / "fit") == 0
    kv = read_kv(tmp_path / "fit" / "fit.txt")
    t0 = [float(v[0]) for k, v in kv.items() if k.endswith("t0_K")][0]
    assert t0 == pytest.approx(6e-3, abs=1e-3)
    assert run("report", tmp_path / "sim" / "run.csv", "--out", tmp_path / "rep") == 0
    meta, cols = read_csv(tmp_path / "rep" / "fits.csv")
    assert len(cols["label"]) == 1

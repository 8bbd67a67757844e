import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from spinthermo.cli import main, run_experiment
from spinthermo.config import SCHEMA, parse_config
from spinthermo.errors import ConfigError
from spinthermo.noise import DEFAULT_PROJECTION

MINIMAL_RAMSEY = """
experiment = "ramsey"
[spin]
detuning = 2.0
[grid]
tau = {start = 0.0, stop = 3.0, num = 301}
"""


def run_cli(args, tmp_path, capsys):
    code = main(list(args) + ["--out", str(tmp_path), "--quiet"])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL_RAMSEY)
    assert cfg.experiment == "ramsey"
    assert cfg.seed is None
    assert cfg["spin"]["Ex"] == 16.5
    assert cfg["spin"]["pulses"] == "idealized"
    assert cfg.grid("tau").size == 301
    assert not cfg.stochastic


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="sigma_bz_typo"):
        parse_config("[noise]\nsigma_bz_typo = 0.2\n", experiment="ramsey")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("[bogus]\nx = 1\n", experiment="ramsey")


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError, match="spin.Ex"):
        parse_config("[spin]\nEx = -1.0\n", experiment="odmr")
    with pytest.raises(ConfigError, match="spin.D"):
        parse_config('[spin]\nD = "big"\n', experiment="odmr")
    with pytest.raises(ConfigError, match="grid.tau"):
        parse_config("[grid]\ntau = [1.0, 0.5]\n", experiment="ramsey")
    with pytest.raises(ConfigError, match="TOML"):
        parse_config("[spin\n", experiment="odmr")
    with pytest.raises(ConfigError, match="experiment"):
        parse_config('experiment = "odmr"\n', experiment="ramsey")


def test_t2_sweep_config_echoes_projection():
    cfg = parse_config('experiment = "t2-sweep"\nseed = 42\n[spin]\nEx = 16.5\n')
    assert cfg["noise"]["projection"] == pytest.approx(math.cos(math.radians(109.5)))
    assert cfg["noise"]["projection"] == DEFAULT_PROJECTION
    assert cfg["noise"]["sigma_pz"] == pytest.approx(0.12505, abs=1e-5)
    assert cfg.grid("b_max").size == 12


def test_seed_required_for_stochastic():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("", experiment="t2-sweep")
    with pytest.raises(ConfigError, match="seed"):
        parse_config("[noise]\nsigma_pz = 0.1\n", experiment="ramsey")
    parse_config("[noise]\nsigma_pz = 0.1\n", experiment="ramsey", seed=3)
    with pytest.raises(ConfigError):
        parse_config("", experiment="t2-sweep", seed=-1)


def test_conflicting_noise_width():
    with pytest.raises(ConfigError, match="conflicts"):
        parse_config("seed = 1\n[noise]\nsigma_pz = 0.3\nt2_zero_field = 1.8\n", experiment="ramsey")


def test_ramsey_cli_fits_two_mhz(tmp_path, capsys):
    (tmp_path / "r.toml").write_text(MINIMAL_RAMSEY)
    code, out, err = run_cli(["ramsey", "--config", str(tmp_path / "r.toml")], tmp_path, capsys)
    assert code == 0, err
    summary = json.loads(out)
    meta = json.loads(open(summary["outputs"]["json"]).read())
    assert meta["results"]["fit"]["f"] == pytest.approx(2.0, abs=1e-3)
    table = read_csv(tmp_path / "ramsey.csv")
    assert table.dtype.names == ("tau_us", "p0", "p0_stderr")
    assert table.size == 301
    raw = (tmp_path / "ramsey.csv").read_bytes()
    assert b"\r\n" not in raw


def test_metadata_echoes_every_parameter(tmp_path, capsys):
    code, out, _ = run_cli(["ramsey"], tmp_path, capsys)
    assert code == 0
    meta = json.loads((tmp_path / "ramsey.json").read_text())
    for section, keys in SCHEMA.items():
        assert set(keys) <= set(meta["config"][section]), section
    assert meta["versions"]["kernel_backend"] in ("cython", "python")
    assert meta["wall_time_s"] >= 0


def test_fringes_vs_ex(tmp_path, capsys):
    code, _, err = run_cli(["fringes-vs-ex", "--seed", "2024"], tmp_path, capsys)
    assert code == 0, err
    table = read_csv(tmp_path / "fringes-vs-ex.csv")
    assert sorted(set(table["ex_mhz"])) == [0.0, 1.0, 4.0, 16.5]
    high = table[table["ex_mhz"] == 16.5]
    assert np.max(np.abs(high["p0"] - high["p0_noiseless"])) < 0.01
    meta = json.loads((tmp_path / "fringes-vs-ex.json").read_text())
    assert meta["config"]["ensemble"]["n_runs"] == 1000
    assert meta["seed"] == 2024


def test_byte_identical_reruns_and_threads(tmp_path, capsys):
    base = ["t2-sweep", "--seed", "5", "--runs", "200"]
    cfg = tmp_path / "c.toml"
    cfg.write_text("[ensemble]\nworkers = 4\n[grid]\nb_max = [0.0, 1.0]\nex = [16.5]\n")
    plain = tmp_path / "plain.toml"
    plain.write_text("[grid]\nb_max = [0.0, 1.0]\nex = [16.5]\n")
    outputs = []
    for i, path in enumerate((plain, plain, cfg)):
        out_dir = tmp_path / f"run{i}"
        assert main(base + ["--config", str(path), "--out", str(out_dir), "--quiet"]) == 0
        outputs.append((out_dir / "t2-sweep.csv").read_bytes())
    capsys.readouterr()
    assert outputs[0] == outputs[1] == outputs[2]


def test_rerun_from_metadata(tmp_path, capsys):
    first = tmp_path / "a"
    (tmp_path / "n.toml").write_text("[noise]\nsigma_pz = 0.2\nb_max = 1.0\n")
    assert main(["ramsey", "--config", str(tmp_path / "n.toml"), "--seed", "9", "--runs", "50",
                 "--out", str(first), "--quiet"]) == 0
    second = tmp_path / "b"
    assert main(["ramsey", "--config", str(first / "ramsey.json"), "--out", str(second), "--quiet"]) == 0
    capsys.readouterr()
    assert (first / "ramsey.csv").read_bytes() == (second / "ramsey.csv").read_bytes()


def test_writes_only_declared_outputs(tmp_path, capsys):
    code, out, _ = run_cli(["odmr"], tmp_path, capsys)
    assert code == 0
    declared = {os.path.basename(p) for p in json.loads(out)["outputs"].values()}
    assert set(os.listdir(tmp_path)) == declared == {"odmr.csv", "odmr.json", "odmr_plot.csv"}
    table = read_csv(tmp_path / "odmr.csv")
    np.testing.assert_allclose(table["f_plus_mhz"] - table["f_minus_mhz"], 2 * np.hypot(16.5, table["bz_mhz"]))


def test_plot_can_be_disabled(tmp_path, capsys):
    (tmp_path / "c.toml").write_text("[output]\nplot = false\n")
    out_dir = tmp_path / "o"
    assert main(["odmr", "--config", str(tmp_path / "c.toml"), "--out", str(out_dir), "--quiet"]) == 0
    capsys.readouterr()
    assert sorted(os.listdir(out_dir)) == ["odmr.csv", "odmr.json"]


def test_error_json_and_exit_code(tmp_path, capsys):
    code, out, err = run_cli(["t2-sweep"], tmp_path, capsys)
    assert code != 0
    assert out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"
    assert "seed" in payload["message"]
    code, _, err = run_cli(["fit", "--input", str(tmp_path / "missing.csv")], tmp_path, capsys)
    assert code != 0
    assert json.loads(err.strip().splitlines()[-1])["error"] == "FileNotFoundError"


def test_env_var_sets_default_output(tmp_path):
    env = dict(os.environ, SPINTHERMO_OUT_DIR=str(tmp_path / "env-out"))
    proc = subprocess.run(
        [sys.executable, "-m", "spinthermo", "odmr", "--quiet"],
        cwd=tmp_path,
        env=env,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "env-out" / "odmr.csv").exists()
    assert json.loads(proc.stdout)["experiment"] == "odmr"


def test_calibrate_then_estimate(tmp_path, capsys):
    temps = np.linspace(270, 320, 11)
    zfs = 1400.0 - 0.1094 * (temps - 293.3)
    pts = tmp_path / "pts.csv"
    pts.write_text("temperature_k,zfs_mhz\n" + "".join(f"{t!r},{d!r}\n" for t, d in zip(temps.tolist(), zfs.tolist())))
    assert run_cli(["calibrate", "--input", str(pts)], tmp_path, capsys)[0] == 0
    meta = json.loads((tmp_path / "calibrate.json").read_text())
    assert meta["results"]["slope_at_t_ref_mhz_per_k"] == pytest.approx(-0.1094, rel=1e-10)

    est_cfg = tmp_path / "est.toml"
    est_cfg.write_text(
        f'[calibration]\nmodel = "{tmp_path / "calibrate.json"}"\n'
        "[input]\ntemperatures = [294.0, 300.0]\n"
    )
    code, _, err = run_cli(["estimate-temp", "--config", str(est_cfg)], tmp_path, capsys)
    assert code == 0, err
    table = read_csv(tmp_path / "estimate-temp.csv")
    np.testing.assert_allclose(table["temperature_k"], [294.0, 300.0], atol=0.05)
    results = json.loads((tmp_path / "estimate-temp.json").read_text())["results"]
    assert results["recovered_slope_mhz_per_k"] == pytest.approx(-0.1094, rel=0.01)


def test_estimate_from_frequencies_linear_default(tmp_path, capsys):
    cfg = tmp_path / "f.toml"
    cfg.write_text("[input]\nfrequencies = [2.0, 1.8918]\nfrequency_stderr = 0.001\n[calibration]\nslope = -0.1082\n")
    assert run_cli(["estimate-temp", "--config", str(cfg)], tmp_path, capsys)[0] == 0
    table = read_csv(tmp_path / "estimate-temp.csv")
    np.testing.assert_allclose(table["temperature_k"], [293.3, 294.3], atol=1e-9)
    np.testing.assert_allclose(table["uncertainty_k"], 0.001 / 0.1082)


def test_fit_subcommand_round_trip(tmp_path, capsys):
    assert run_cli(["ramsey"], tmp_path, capsys)[0] == 0
    code, _, err = run_cli(["fit", "--input", str(tmp_path / "ramsey.csv")], tmp_path, capsys)
    assert code == 0, err
    rows = {r["parameter"].decode() if isinstance(r["parameter"], bytes) else r["parameter"]: r["value"]
            for r in np.genfromtxt(tmp_path / "fit.csv", delimiter=",", names=True, dtype=None, encoding="utf-8")}
    assert rows["f"] == pytest.approx(2.0, abs=1e-6)


def test_rabi_and_echo(tmp_path, capsys):
    assert run_cli(["rabi"], tmp_path, capsys)[0] == 0
    table = read_csv(tmp_path / "rabi.csv")
    assert table["p0"][0] == pytest.approx(1.0)
    assert np.all((table["p0"] >= -1e-9) & (table["p0"] <= 1 + 1e-9))
    assert run_cli(["echo"], tmp_path, capsys)[0] == 0
    assert read_csv(tmp_path / "echo.csv").size == 501


def test_run_experiment_in_memory():
    bundle = run_experiment(parse_config(MINIMAL_RAMSEY))
    assert bundle.columns == ["tau_us", "p0", "p0_stderr"]
    assert bundle.primary_csv().startswith("tau_us,p0,p0_stderr\n")
    assert bundle.plot_csv().startswith("series,x,y,yerr\n")

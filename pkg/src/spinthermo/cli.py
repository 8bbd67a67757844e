"""Command-line experiment runner.

Every subcommand writes ``<out>/<experiment>.csv`` (primary table),
``<out>/<experiment>.json`` (metadata: effective config, versions, seed,
wall time, derived results) and, unless disabled, ``<out>/<experiment>_plot.csv``
with ``series, x, y, yerr`` columns.  Units: time in us, frequency in MHz,
temperature in K.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import EXPERIMENTS, ExperimentConfig, noise_is_active, parse_config
from .dynamics import PopulationSeries, PulseSequence, calibrate_pulse, ramsey_trace, run_sequence
from .errors import ConfigError, SpinThermoError
from .estfit import fit_decayed_sinusoid, t2_sweep
from .noise import EnsembleConfig, NoiseSpec, ensemble_average
from .spinmodel import ZERO_FIELDS, SpinParams, gauss_to_mhz, odmr_lines
from .thermo import CalibrationModel, fit_calibration, frequency_to_temperature

OUT_DIR_ENV = "SPINTHERMO_OUT_DIR"
DEFAULT_OUT_DIR = "spinthermo-out"


@dataclass
class ResultBundle:
    columns: list
    rows: list
    metadata: dict
    plot_rows: list = field(default_factory=list)

    def primary_csv(self):
        return _csv_text(self.columns, self.rows)

    def plot_csv(self):
        return _csv_text(["series", "x", "y", "yerr"], self.plot_rows)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _progress(cfg, message):
    if not cfg.sections.get("_quiet"):
        print(message, file=sys.stderr)


def _spin_params(cfg: ExperimentConfig, ex=None):
    spin = cfg["spin"]
    ex = spin["Ex"] if ex is None else ex
    if spin["omega"] is not None:
        return SpinParams(D=spin["D"], Ex=ex, omega=spin["omega"], Omega=spin["Omega"])
    return SpinParams.from_detuning(spin["detuning"], ex, D=spin["D"], Omega=spin["Omega"])


def _noise_spec(cfg: ExperimentConfig, b_max=None):
    noise = cfg["noise"]
    return NoiseSpec(
        sigma_pz=noise["sigma_pz"],
        b_max=noise["b_max"] if b_max is None else b_max,
        sigma_bz=noise["sigma_bz"],
        projection=noise["projection"],
    )


def _weights(cfg):
    return None if cfg["fit"]["weights"] == "uniform" else "stderr"


def _fit_summary(report):
    out = report.as_dict()
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}


def _series(cfg, params, kind, spec=None, n_runs=None):
    """Noiseless trace or ensemble average for ramsey/echo style experiments."""
    taus = cfg.grid("tau")
    idealized = cfg["spin"]["pulses"] == "idealized"
    seq_kind = "thermo_echo" if kind == "echo" else "ramsey"
    if spec is None:
        p0 = ramsey_trace(params, taus, ZERO_FIELDS, seq_kind, idealized)
        return PopulationSeries(taus, np.clip(p0, 0.0, 1.0), np.zeros_like(p0))
    ens_cfg = EnsembleConfig(n_runs or cfg["ensemble"]["n_runs"], cfg.seed, tuple(taus))
    return ensemble_average(
        params,
        spec,
        ens_cfg,
        seq_kind,
        idealized=idealized,
        resample=cfg["noise"]["resample"],
        workers=cfg["ensemble"]["workers"],
    )


def _run_odmr(cfg):
    params = _spin_params(cfg)
    rows, plot = [], []
    for b in cfg.grid("b_gauss"):
        bz = gauss_to_mhz(b)
        f_minus, f_plus = odmr_lines(params, bz)
        rows.append([b, bz, f_minus, f_plus])
        plot += [["f_minus", b, f_minus, 0.0], ["f_plus", b, f_plus, 0.0]]
    return ResultBundle(["b_gauss", "bz_mhz", "f_minus_mhz", "f_plus_mhz"], rows, {}, plot)


def _run_rabi(cfg):
    params = _spin_params(cfg)
    idealized = cfg["spin"]["pulses"] == "idealized"
    rows = []
    for t in cfg.grid("t"):
        rows.append([t, run_sequence(params, ZERO_FIELDS, PulseSequence.rabi(t, idealized))])
    results = {}
    series = PopulationSeries([r[0] for r in rows], [r[1] for r in rows])
    if np.ptp(series.p0) > 1e-6 and len(rows) >= 8:
        results["fit"] = _fit_summary(fit_decayed_sinusoid(series, weights=None))
    plot = [["p0", t, p, 0.0] for t, p in rows]
    return ResultBundle(["t_us", "p0"], rows, {"results": results}, plot)


def _run_fringe(cfg, kind):
    params = _spin_params(cfg)
    spec = _noise_spec(cfg) if noise_is_active(cfg["noise"]) else None
    series = _series(cfg, params, kind, spec)
    report = fit_decayed_sinusoid(series, weights=_weights(cfg))
    rows = [[t, p, s] for t, p, s in zip(series.taus, series.p0, series.stderr)]
    plot = [["p0", t, p, s] for t, p, s in rows]
    results = {
        "pulse_half_pi_us": calibrate_pulse(params, "pi/2"),
        "fit": _fit_summary(report),
        "period_ns": 1e3 / report.model.f if report.model.f > 0 else None,
    }
    return ResultBundle(["tau_us", "p0", "p0_stderr"], rows, {"results": results}, plot)


def _run_fringes_vs_ex(cfg):
    rows, plot, per_ex = [], [], []
    spec = _noise_spec(cfg)
    for ex in cfg.grid("ex"):
        params = _spin_params(cfg, ex=float(ex))
        _progress(cfg, f"fringes-vs-ex: Ex = {ex:g} MHz")
        ens = _series(cfg, params, "ramsey", spec)
        clean = _series(cfg, params, "ramsey", None)
        deviation = float(np.max(np.abs(ens.p0 - clean.p0)))
        report = fit_decayed_sinusoid(ens, weights=_weights(cfg))
        per_ex.append({"ex_mhz": float(ex), "max_deviation_from_noiseless": deviation, "fit": _fit_summary(report)})
        for t, p, s, c in zip(ens.taus, ens.p0, ens.stderr, clean.p0):
            rows.append([float(ex), t, p, s, c])
            plot.append([f"ex={ex:g}", t, p, s])
    return ResultBundle(
        ["ex_mhz", "tau_us", "p0", "p0_stderr", "p0_noiseless"], rows, {"results": {"per_ex": per_ex}}, plot
    )


def _run_t2_sweep(cfg):
    rows, plot = [], []
    for ex in cfg.grid("ex"):
        params = _spin_params(cfg, ex=float(ex))
        ensembles = []
        for b in cfg.grid("b_max"):
            _progress(cfg, f"t2-sweep: Ex = {ex:g} MHz, b_max = {b:g} MHz")
            ensembles.append(_series(cfg, params, "ramsey", _noise_spec(cfg, b_max=float(b))))
        for row in t2_sweep(ensembles, weights=_weights(cfg)):
            bz_max = abs(cfg["noise"]["projection"]) * row.b_max
            rows.append([float(ex), row.b_max, bz_max, row.t2, row.t2_stderr, row.f, row.converged, row.decay_unresolved])
            plot.append([f"ex={ex:g}", row.b_max, row.t2, row.t2_stderr])
    columns = ["ex_mhz", "b_max_mhz", "bz_max_mhz", "t2_us", "t2_stderr_us", "f_mhz", "converged", "decay_unresolved"]
    return ResultBundle(columns, rows, {}, plot)


def _read_table(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty CSV")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {missing}")
        return reader.fieldnames, [row for row in reader]


def _run_calibrate(cfg):
    cal = cfg["calibration"]
    _, table = _read_table(cal["points"], ["temperature_k", "zfs_mhz"])
    points = [(float(r["temperature_k"]), float(r["zfs_mhz"])) for r in table]
    model = fit_calibration(points, cal["kind"], cal["degree"])
    rows = [[k, c] for k, c in enumerate(model.coefficients)]
    plot = [["data", t, d, 0.0] for t, d in points]
    grid = np.linspace(model.t_min, model.t_max, 101)
    plot += [["model", t, float(model.zfs(t)), 0.0] for t in grid]
    results = {"model": model.to_dict(), "slope_at_t_ref_mhz_per_k": float(model.slope(model.t_ref))}
    return ResultBundle(["power", "coefficient"], rows, {"results": results}, plot)


def _load_model(cfg):
    cal = cfg["calibration"]
    if cal["model"] is not None:
        with open(cal["model"], encoding="utf-8") as fh:
            data = json.load(fh)
        if "results" in data and "model" in data["results"]:
            data = data["results"]["model"]
        return CalibrationModel.from_dict(data)
    return CalibrationModel.linear(cal["t0"], cal["d0"], cal["slope"], cal["t_min"], cal["t_max"])


def _load_series(path):
    fields, table = _read_table(path, ["tau_us", "p0"])
    taus = [float(r["tau_us"]) for r in table]
    p0 = [float(r["p0"]) for r in table]
    stderr = [float(r["p0_stderr"]) for r in table] if "p0_stderr" in fields else None
    return PopulationSeries(taus, p0, stderr)


def _run_estimate_temp(cfg):
    model = _load_model(cfg)
    params = _spin_params(cfg)
    inp = cfg["input"]
    sign = cfg["calibration"]["sign"]
    measurements = []
    if inp["frequencies"] is not None:
        measurements += [(None, f, inp["frequency_stderr"]) for f in inp["frequencies"]]
    if inp["series"] is not None:
        report = fit_decayed_sinusoid(_load_series(inp["series"]), weights=_weights(cfg))
        measurements.append((None, report.model.f, report.stderr["f"]))
    if inp["temperatures"] is not None:
        # simulate noiseless fringes at the requested temperatures, then invert
        for temp in inp["temperatures"]:
            d = float(model.zfs(temp))
            sim = params.replace(D=d)
            series = _series(cfg, sim, "ramsey", None)
            report = fit_decayed_sinusoid(series, weights=None)
            measurements.append((temp, report.model.f, report.stderr["f"]))
    rows, plot = [], []
    for true_t, f, f_se in measurements:
        est = frequency_to_temperature(f, params.omega, params.Ex, model, f_se, sign=sign, extrapolate=True)
        rows.append([f, f_se, est.T, est.uncertainty, est.extrapolated, "" if true_t is None else true_t])
        plot.append(["temperature", f, est.T, est.uncertainty])
    results = {"model": model.to_dict()}
    sim = [(r[5], r[0], r[2]) for r in rows if r[5] != ""]
    if len(sim) >= 2:
        (t_a, f_a, _), (t_b, f_b, _) = sim[0], sim[-1]
        results["recovered_slope_mhz_per_k"] = sign * (f_b - f_a) / (t_b - t_a)
    columns = ["f_fringe_mhz", "f_stderr_mhz", "temperature_k", "uncertainty_k", "extrapolated", "true_temperature_k"]
    return ResultBundle(columns, rows, {"results": results}, plot)


def _run_fit(cfg):
    series = _load_series(cfg["input"]["series"])
    report = fit_decayed_sinusoid(series, weights=_weights(cfg))
    summary = _fit_summary(report)
    rows = [[name, getattr(report.model, name), report.stderr[name]] for name in ("a", "b", "f", "phi", "t2", "n")]
    fitted = report.model(series.taus)
    plot = [["data", t, p, 0.0] for t, p in zip(series.taus, series.p0)]
    plot += [["model", t, y, 0.0] for t, y in zip(series.taus, fitted)]
    return ResultBundle(["parameter", "value", "stderr"], rows, {"results": {"fit": summary}}, plot)


RUNNERS = {
    "odmr": _run_odmr,
    "rabi": _run_rabi,
    "ramsey": lambda cfg: _run_fringe(cfg, "ramsey"),
    "echo": lambda cfg: _run_fringe(cfg, "echo"),
    "fringes-vs-ex": _run_fringes_vs_ex,
    "t2-sweep": _run_t2_sweep,
    "calibrate": _run_calibrate,
    "estimate-temp": _run_estimate_temp,
    "fit": _run_fit,
}


def run_experiment(cfg: ExperimentConfig) -> ResultBundle:
    """Execute the configured experiment; nothing is written to disk."""
    start = time.perf_counter()
    bundle = RUNNERS[cfg.experiment](cfg)
    meta = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_dict().items() if not k.startswith("_")},
        "versions": {
            "spinthermo": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
        "units": {"time": "us", "frequency": "MHz", "temperature": "K"},
        "wall_time_s": time.perf_counter() - start,
        "results": bundle.metadata.get("results", {}),
    }
    bundle.metadata = meta
    return bundle


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_bundle(bundle: ResultBundle, out_dir, name, plot=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{name}.csv", "json": out / f"{name}.json"}
    if plot:
        paths["plot"] = out / f"{name}_plot.csv"
    bundle.metadata["outputs"] = {k: str(p) for k, p in paths.items()}
    paths["csv"].write_text(bundle.primary_csv(), encoding="utf-8", newline="\n")
    if plot:
        paths["plot"].write_text(bundle.plot_csv(), encoding="utf-8", newline="\n")
    paths["json"].write_text(
        json.dumps(bundle.metadata, indent=2, sort_keys=True, default=_json_default, allow_nan=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    return paths


def build_parser():
    parser = argparse.ArgumentParser(prog="spinthermo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"spinthermo {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="TOML config, or the JSON metadata of an earlier run")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit); overrides the config")
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
        p.add_argument("--runs", type=int, help="ensemble size; overrides the config")
        p.add_argument("--input", type=Path, help="input CSV (series for fit/estimate-temp, points for calibrate)")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        if args.config and args.config.suffix == ".json":
            # a metadata sidecar from an earlier run
            data = json.loads(text)
            text = data.get("config", data)
        cfg = parse_config(
            text,
            experiment=args.experiment,
            seed=args.seed,
            n_runs=args.runs,
            out_dir=args.out,
            input_path=args.input,
        )
        out_dir = cfg["output"]["dir"] or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
        cfg.sections["output"]["dir"] = str(out_dir)
        cfg.sections["_quiet"] = args.quiet
        bundle = run_experiment(cfg)
        paths = write_bundle(bundle, out_dir, cfg.experiment, plot=cfg["output"]["plot"])
    except (SpinThermoError, OSError, ValueError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    summary = {"experiment": cfg.experiment, "outputs": {k: str(p) for k, p in paths.items()}}
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

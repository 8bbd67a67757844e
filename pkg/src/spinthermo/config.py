"""Experiment configuration: strict TOML parsing with defaults echoed back.

A config is a TOML document::

    experiment = "ramsey"
    seed = 1234

    [spin]
    Ex = 16.5
    detuning = 2.0

    [grid]
    tau = {start = 0.0, stop = 3.0, num = 301}

Unknown sections or keys are rejected.  Grids are either explicit lists or
``{start, stop, num}`` / ``{start, stop, step}`` tables.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .noise import DEFAULT_PROJECTION, sigma_from_t2

EXPERIMENTS = (
    "odmr",
    "rabi",
    "ramsey",
    "echo",
    "fringes-vs-ex",
    "t2-sweep",
    "calibrate",
    "estimate-temp",
    "fit",
)

# section -> key -> (expected type, default)
SCHEMA = {
    "spin": {
        "D": (float, 1400.0),
        "Ex": (float, 16.5),
        "detuning": (float, 2.0),
        "omega": (float, None),
        "Omega": (float, 10.0),
        "pulses": (str, "idealized"),
    },
    "noise": {
        "sigma_pz": (float, 0.0),
        "b_max": (float, 0.0),
        "sigma_bz": (float, 0.0),
        "projection": (float, DEFAULT_PROJECTION),
        "t2_zero_field": (float, None),
        "resample": (bool, False),
    },
    "ensemble": {
        "n_runs": (int, 1000),
        "workers": (int, 1),
    },
    "grid": {
        "tau": ("grid", {"start": 0.0, "stop": 3.0, "num": 301}),
        "t": ("grid", {"start": 0.0, "stop": 0.5, "num": 251}),
        "b_gauss": ("grid", {"start": -20.0, "stop": 20.0, "num": 81}),
        "b_max": ("grid", {"start": 0.0, "stop": 3.3, "num": 12}),
        "ex": ("grid", [0.0, 1.0, 4.0, 16.5]),
    },
    "fit": {
        "weights": (str, "stderr"),
    },
    "calibration": {
        "kind": (str, "linear"),
        "degree": (int, 5),
        "points": (str, None),
        "model": (str, None),
        "t0": (float, 293.3),
        "d0": (float, 1400.0),
        "slope": (float, -0.1094),
        "t_min": (float, 268.3),
        "t_max": (float, 318.3),
        "sign": (int, 1),
    },
    "input": {
        "series": (str, None),
        "frequencies": ("list", None),
        "frequency_stderr": (float, 0.0),
        "temperatures": ("list", None),
    },
    "output": {
        "dir": (str, None),
        "plot": (bool, True),
    },
}

# experiment-specific defaults layered over SCHEMA
EXPERIMENT_DEFAULTS = {
    "fringes-vs-ex": {
        "noise": {"sigma_bz": 0.2},
        "grid": {"tau": {"start": 0.0, "stop": 2.0, "num": 201}},
    },
    "t2-sweep": {
        "noise": {"t2_zero_field": 1.8},
        "grid": {"tau": {"start": 0.0, "stop": 6.0, "num": 601}, "ex": [16.5, 0.0]},
    },
    "echo": {"grid": {"tau": {"start": 0.0, "stop": 5.0, "num": 501}}},
}

STOCHASTIC_ALWAYS = ("fringes-vs-ex", "t2-sweep")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int | None
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    def grid(self, name):
        return expand_grid(self.sections["grid"][name], f"grid.{name}")

    def to_dict(self):
        out = {"experiment": self.experiment, "seed": self.seed}
        out.update(copy.deepcopy(self.sections))
        return out

    @property
    def stochastic(self):
        if self.experiment in STOCHASTIC_ALWAYS:
            return True
        if self.experiment in ("ramsey", "echo"):
            return noise_is_active(self.sections["noise"])
        return False


def noise_is_active(noise):
    return bool(
        noise["sigma_pz"] > 0
        or noise["b_max"] > 0
        or noise["sigma_bz"] > 0
        or (noise["t2_zero_field"] is not None)
    )


def expand_grid(spec, name="grid"):
    """Turn a grid spec into a float array."""
    if isinstance(spec, (list, tuple)):
        values = np.asarray(spec, dtype=float)
    elif isinstance(spec, dict):
        unknown = set(spec) - {"start", "stop", "num", "step"}
        if unknown:
            raise ConfigError(f"{name}: unknown grid key(s) {sorted(unknown)}")
        try:
            start, stop = float(spec["start"]), float(spec["stop"])
        except KeyError as exc:
            raise ConfigError(f"{name}: grid needs 'start' and 'stop'") from exc
        if "num" in spec and "step" in spec:
            raise ConfigError(f"{name}: give either 'num' or 'step', not both")
        if "num" in spec:
            num = spec["num"]
            if not isinstance(num, int) or num < 1:
                raise ConfigError(f"{name}.num must be a positive integer")
            values = np.linspace(start, stop, num)
        elif "step" in spec:
            step = float(spec["step"])
            if not step > 0:
                raise ConfigError(f"{name}.step must be positive")
            num = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = start + step * np.arange(max(num, 0))
        else:
            raise ConfigError(f"{name}: grid needs 'num' or 'step'")
    else:
        raise ConfigError(f"{name} must be a list or a {{start, stop, num}} table")
    if values.ndim != 1 or values.size == 0:
        raise ConfigError(f"{name} must be a non-empty grid")
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{name} contains non-finite values")
    return values


def _coerce(kind, value, name):
    if value is None:
        return None
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{name} must be finite")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if kind == "list":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{name} must be a non-empty list")
        return [_coerce(float, v, f"{name}[{i}]") for i, v in enumerate(value)]
    if kind == "grid":
        expand_grid(value, name)
        return value
    raise AssertionError(kind)


def _defaults(experiment):
    sections = {sec: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec, keys in EXPERIMENT_DEFAULTS.get(experiment, {}).items():
        sections[sec].update(copy.deepcopy(keys))
    return sections


def parse_config(
    text="", experiment=None, seed=None, n_runs=None, out_dir=None, input_path=None
) -> ExperimentConfig:
    """Parse and validate a config; command-line overrides win over the file.

    ``text`` is a TOML document or an already-parsed mapping (for example
    the ``config`` block of a metadata sidecar).  ``input_path`` fills the
    experiment's input file: the series for ``fit`` and ``estimate-temp``,
    the calibration points for ``calibrate``.
    """
    if isinstance(text, dict):
        raw = copy.deepcopy(text)
    else:
        try:
            raw = tomllib.loads(text) if text else {}
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc

    file_experiment = raw.pop("experiment", None)
    if experiment is None:
        experiment = file_experiment
    elif file_experiment is not None and file_experiment != experiment:
        raise ConfigError(
            f"config declares experiment {file_experiment!r} but {experiment!r} was requested"
        )
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")

    file_seed = raw.pop("seed", None)
    sections = _defaults(experiment)
    for sec, values in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config key {sec!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{sec!r} must be a table")
        for key, value in values.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown config key '{sec}.{key}'")
            kind, _ = SCHEMA[sec][key]
            sections[sec][key] = _coerce(kind, value, f"{sec}.{key}")

    if seed is None:
        seed = file_seed
    if seed is not None:
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
    if n_runs is not None:
        sections["ensemble"]["n_runs"] = n_runs
    if out_dir is not None:
        sections["output"]["dir"] = str(out_dir)
    if input_path is not None:
        if experiment == "calibrate":
            sections["calibration"]["points"] = str(input_path)
        elif experiment in ("fit", "estimate-temp"):
            sections["input"]["series"] = str(input_path)
        else:
            raise ConfigError(f"experiment {experiment!r} takes no input file")

    cfg = ExperimentConfig(experiment=experiment, seed=seed, sections=sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    spin, noise, ens, cal = cfg["spin"], cfg["noise"], cfg["ensemble"], cfg["calibration"]
    if not spin["D"] > 0:
        raise ConfigError("spin.D must be positive")
    if spin["Ex"] < 0:
        raise ConfigError("spin.Ex must be >= 0")
    if spin["Omega"] < 0:
        raise ConfigError("spin.Omega must be >= 0")
    if spin["pulses"] not in ("idealized", "finite"):
        raise ConfigError("spin.pulses must be 'idealized' or 'finite'")
    for key in ("sigma_pz", "b_max", "sigma_bz"):
        if noise[key] < 0:
            raise ConfigError(f"noise.{key} must be >= 0")
    if not abs(noise["projection"]) <= 1:
        raise ConfigError("noise.projection must satisfy |projection| <= 1")
    if noise["t2_zero_field"] is not None:
        if not noise["t2_zero_field"] > 0:
            raise ConfigError("noise.t2_zero_field must be positive")
        implied = sigma_from_t2(noise["t2_zero_field"])
        if noise["sigma_pz"] > 0 and not math.isclose(noise["sigma_pz"], implied, rel_tol=1e-12):
            raise ConfigError("noise.sigma_pz conflicts with noise.t2_zero_field; set only one")
        noise["sigma_pz"] = implied
    if ens["n_runs"] < 1:
        raise ConfigError("ensemble.n_runs must be >= 1")
    if ens["workers"] < 1:
        raise ConfigError("ensemble.workers must be >= 1")
    if cfg["fit"]["weights"] not in ("stderr", "uniform"):
        raise ConfigError("fit.weights must be 'stderr' or 'uniform'")
    if cal["kind"] not in ("linear", "polynomial"):
        raise ConfigError("calibration.kind must be 'linear' or 'polynomial'")
    if cal["degree"] < 1:
        raise ConfigError("calibration.degree must be >= 1")
    if cal["sign"] not in (1, -1):
        raise ConfigError("calibration.sign must be 1 or -1")
    if cal["slope"] == 0:
        raise ConfigError("calibration.slope must be non-zero")

    for name in ("tau", "t", "b_gauss", "b_max", "ex"):
        cfg.grid(name)
    tau = cfg.grid("tau")
    if tau[0] < 0 or np.any(np.diff(tau) <= 0):
        raise ConfigError("grid.tau must be non-negative and strictly increasing")
    if np.any(cfg.grid("t") < 0):
        raise ConfigError("grid.t must be non-negative")
    if np.any(cfg.grid("ex") < 0):
        raise ConfigError("grid.ex values must be >= 0")
    if np.any(cfg.grid("b_max") < 0):
        raise ConfigError("grid.b_max values must be >= 0")

    if cfg.stochastic and cfg.seed is None:
        raise ConfigError(
            f"experiment {cfg.experiment!r} is stochastic: a seed is required (config 'seed' or --seed)"
        )
    if cfg.experiment == "calibrate" and cal["points"] is None:
        raise ConfigError("calibrate needs calibration.points (CSV of temperature_k, zfs_mhz)")
    if cfg.experiment == "fit" and cfg["input"]["series"] is None:
        raise ConfigError("fit needs input.series (CSV of tau_us, p0[, p0_stderr]) or --input")
    if cfg.experiment == "estimate-temp":
        inp = cfg["input"]
        if inp["frequencies"] is None and inp["series"] is None and inp["temperatures"] is None:
            raise ConfigError(
                "estimate-temp needs input.frequencies, input.series or input.temperatures"
            )

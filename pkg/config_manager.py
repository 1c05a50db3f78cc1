import json
import os
from dataclasses import dataclass, field

from qtimes_errors import ConfigError

SUBCOMMANDS = ("pulsed", "equivalence", "arrival", "backflow", "histories", "qbm", "clock", "dwell", "validate")

COMMON_DEFAULTS = {
    "mass": 1.0,
    "hbar": 1.0,
    "output_dir": "qtimes_out",
    "overwrite": False,
    "plot_scripts": False,
}

DEFAULTS = {
    "pulsed": {"n_max": 20, "lattice_dx": 1e-3, "epsilon": 1.0, "epsilon0": 1.0, "v0_eps": 4.0 / 3.0,
               "s_samples": 32, "tol_peak": 0.01, "tol_trough": 0.02},
    "equivalence": {"q0": 5.0, "p0": -10.0, "sigma": 1.0, "epsilon": 0.08, "v0_eps": 4.0 / 3.0, "tau": 1.6,
                    "x_min": -40.0, "x_max": 40.0, "n": 16384, "tol_deviation": 0.1, "tol_reflection": 0.05},
    "arrival": {"q0": 10.0, "p0": -5.0, "sigma": 1.0, "v0": 0.5, "t_start": 0.0, "t_end": 6.0,
                "samples": 121, "tol_window": 0.02},
    "backflow": {"modes": 200, "T": 1.0, "tol_lambda": 0.15},
    "histories": {"q0": 10.0, "p0": -10.0, "sigma": 1.0, "t_start": 0.0, "t_mid": 1.0, "t_end": 2.0,
                  "x_min": -60.0, "x_max": 60.0, "n": 4096, "threshold": 0.01},
    "qbm": {"D": 0.04, "branch_q0": 1.5, "sigma": 1.0, "odd": True, "t": 1.4, "p_min": -4.0, "p_max": 4.0,
            "q_min": -32.0, "q_max": 32.0, "n_p": 256, "n_q": 512, "tol_variance": 0.02,
            "gamma": 0.05, "q0": 10.0, "p0": -5.0, "t_series": 2.5, "series_steps": 250},
    "clock": {"q0": 10.0, "p0": -5.0, "sigma": 1.0, "coupling": 1.0, "clock_sigma": 0.5, "regime": "weak",
              "y_min": -2.0, "y_max": 8.0, "samples": 401},
    "dwell": {"q0": -30.0, "p0": 5.0, "sigma": 10.0, "L": 10.0, "coupling": 1.0, "clock_sigma": 0.005,
              "y_min": 3.0, "y_max": 5.0, "samples": 1001},
    "validate": {"quick": False},
}

INT_KEYS = {"n_max", "s_samples", "n", "samples", "modes", "n_p", "n_q", "series_steps"}
STRING_KEYS = {"output_dir", "regime"}

FIGURE_TAGS = {
    "pulsed": ("fig4_2", "fig4_3", "fig4_4"),
    "arrival": ("fig5_4",),
}

FIGURE_NAMES = {
    "fig4_2": "return_factor_lattice",
    "fig4_3": "sawtooth_peaks_troughs",
    "fig4_4": "s_function",
    "fig5_4": "arrival_distributions",
}


def parse_value(key, raw):
    """Run-file value: booleans, ints for integral keys, float64 otherwise, strings for text keys."""
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if key in STRING_KEYS:
        return text
    try:
        if key in INT_KEYS:
            return int(float(text))
        return float(text)
    except ValueError:
        raise ConfigError(f"'{key}' expects a number, got '{text}'")


def parse_run_file(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = parse_value(key, raw)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)

    @property
    def output_dir(self):
        return self.params["output_dir"]

    @property
    def figures(self):
        return FIGURE_TAGS.get(self.subcommand, ())

    @property
    def figure_names(self):
        return {tag: FIGURE_NAMES[tag] for tag in self.figures}

    def echo(self):
        return dict(sorted(self.params.items()))


class ConfigManager:
    def __init__(self, config_file=None):
        self.config_file = config_file
        self.config = {}
        self.load_config()

    def load_config(self):
        self.config = {}
        if not self.config_file or not os.path.exists(self.config_file):
            return
        with open(self.config_file, "r") as f:
            text = f.read()
        if self.config_file.endswith(".json"):
            try:
                self.config = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"cannot parse {self.config_file}: {e}")
        else:
            self.config = parse_run_file(text)

    def save_config(self):
        if not self.config_file:
            return
        with open(self.config_file, "w") as f:
            for key, value in sorted(self.config.items()):
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                f.write(f"{key} = {value}\n")

    def get(self, key, default=None):
        return self.config.get(key, default)

    def set(self, key, value):
        self.config[key] = value
        self.save_config()

    def merge(self, overrides):
        """Command-line values win over the run file; None means 'not given'."""
        for key, value in overrides.items():
            if value is not None:
                self.config[key.replace("-", "_")] = value

    def build_experiment(self, subcommand, overrides=None):
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand '{subcommand}'")
        if overrides:
            self.merge(overrides)
        allowed = {**COMMON_DEFAULTS, **DEFAULTS[subcommand]}
        unknown = sorted(set(self.config) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown keys for '{subcommand}': {', '.join(unknown)}")
        params = dict(allowed)
        for key, value in self.config.items():
            params[key] = parse_value(key, str(value)) if isinstance(value, str) and key not in STRING_KEYS else value
        for key, value in params.items():
            if key.startswith("tol_") and not value > 0:
                raise ConfigError(f"tolerance '{key}' must be positive, got {value}")
        if not params["mass"] > 0 or not params["hbar"] > 0:
            raise ConfigError("mass and hbar must be positive")
        out = params["output_dir"]
        try:
            os.makedirs(out, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory '{out}': {e}")
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory '{out}' is not writable")
        return ExperimentConfig(subcommand, params)

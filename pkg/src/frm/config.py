"""Experiment configuration: flat TOML with dotted keys.

A config file looks like::

    experiment = "linreg"
    seeds = [0, 1, 2]
    methods = ["erm", "frm"]
    linreg.alphas = [0.0, 1.0]
    linreg.dims = [1]

Every key has a default (see ``DEFAULTS``); unknown keys are rejected.
``--override key=value`` parses ``value`` as a TOML literal and falls back
to a bare string.
"""
import json
import math
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = ("linreg", "mountain-car", "synth-mlp", "check")
METHODS = ("erm", "frm")
STEP_GRID = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]

COMMON = {
    "seeds": list(range(20)),
    "methods": ["erm", "frm"],
}

DEFAULTS = {
    "linreg": {
        "seeds": list(range(100)),
        "linreg.alphas": [0.0, 0.25, 0.5, 0.75, 1.0],
        "linreg.dims": [1, 10],
        "linreg.n_train": 200,
        "linreg.n_test": 10000,
        "linreg.noise_scale": 0.5,
        "linreg.slope": 1.0,
        "linreg.offset": 0.5,
        "linreg.test_target": "clean",
        "linreg.damping": 0.0,
    },
    "mountain-car": {
        "seeds": list(range(20)),
        "mc.features": ["uniform", "focused"],
        "mc.n_transitions": 20000,
        "mc.gamma": 0.99,
        "mc.steps": 50000,
        "mc.batch_size": 256,
        "mc.momentum": 0.9,
        "mc.step_grid": list(STEP_GRID),
        "mc.eval_every": 1000,
        "mc.n_eval": 500,
        "mc.eval_seed": 1_000_003,
        "mc.validation_seed": 2_000_003,
        "mc.damping": "auto",
        "mc.include_bias": True,
    },
    "synth-mlp": {
        "seeds": list(range(30)),
        "mlp.widths": [1, 8, 1],
        "mlp.regimes": ["hidden", "bias"],
        "mlp.noise_scale": 0.5,
        "mlp.theta_scale": 1.0,
        "mlp.theta_seed": 777,
        "mlp.n_train": 256,
        "mlp.n_test": 2000,
        "mlp.steps": 2000,
        "mlp.step_size": 0.01,
        "mlp.batch_size": 256,
        "mlp.momentum": 0.9,
        "mlp.weight_mode": "detached",
        "mlp.refresh_every": 10,
        "mlp.include_logdet": True,
        "mlp.damping": "auto",
        "mlp.test_target": "clean",
    },
    "check": {
        "seeds": [0],
        "check.corrupt": "",
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: list
    methods: list
    values: dict = field(default_factory=dict)  # every dotted key, defaults filled in

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def damping(self, key):
        v = self.values[key]
        return None if v == "auto" else float(v)

    def flat(self):
        out = {"experiment": self.experiment, "seeds": list(self.seeds), "methods": list(self.methods)}
        out.update(self.values)
        return out


def flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}")


def load_config(path=None, experiment=None, overrides=(), seeds=None):
    """Read, override and validate a config. ``experiment`` wins over the file."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = flatten(tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        raw[key.strip()] = parse_value(value.strip())
    if seeds is not None:
        raw["seeds"] = seeds
    name = experiment or raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {name!r}")
    if raw.get("experiment", name) != name:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {name!r}")
    raw.pop("experiment", None)
    merged = {**COMMON, **DEFAULTS[name]}
    unknown = sorted(set(raw) - set(merged))
    if unknown:
        raise ConfigError(f"unknown config keys for {name}: {unknown}")
    merged.update(raw)
    cfg = ExperimentConfig(
        name,
        merged.pop("seeds"),
        merged.pop("methods"),
        merged,
    )
    validate(cfg)
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _positive_int(cfg, key):
    v = cfg[key]
    _require(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{key} must be an integer >= 1")


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg):
    seeds = cfg.seeds
    _require(isinstance(seeds, list) and seeds, "seeds must be a nonempty list")
    _require(all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds),
             "seeds must be nonnegative integers")
    _require(len(set(seeds)) == len(seeds), "seeds must be distinct")
    _require(isinstance(cfg.methods, list) and cfg.methods, "methods must be a nonempty list")
    _require(set(cfg.methods) <= set(METHODS), f"methods must be drawn from {METHODS}")
    _require(len(set(cfg.methods)) == len(cfg.methods), "methods must be distinct")
    e = cfg.experiment
    if e == "linreg":
        alphas = cfg["linreg.alphas"]
        _require(isinstance(alphas, list) and alphas and all(_number(a) and 0 <= a <= 1 for a in alphas),
                 "linreg.alphas must be a nonempty list in [0, 1]")
        dims = cfg["linreg.dims"]
        _require(isinstance(dims, list) and dims and all(isinstance(d, int) and d >= 1 for d in dims),
                 "linreg.dims must be a nonempty list of positive integers")
        for k in ("linreg.n_train", "linreg.n_test"):
            _positive_int(cfg, k)
        _require(_number(cfg["linreg.noise_scale"]) and cfg["linreg.noise_scale"] >= 0,
                 "linreg.noise_scale must be >= 0")
        _require(_number(cfg["linreg.slope"]) and _number(cfg["linreg.offset"]),
                 "linreg.slope and linreg.offset must be numbers")
        _require(cfg["linreg.test_target"] in ("clean", "noisy"), "linreg.test_target must be clean or noisy")
        _require(_number(cfg["linreg.damping"]) and cfg["linreg.damping"] >= 0, "linreg.damping must be >= 0")
    elif e == "mountain-car":
        kinds = cfg["mc.features"]
        _require(isinstance(kinds, list) and kinds and set(kinds) <= {"uniform", "focused"},
                 "mc.features must list uniform and/or focused")
        for k in ("mc.n_transitions", "mc.steps", "mc.batch_size", "mc.eval_every", "mc.n_eval"):
            _positive_int(cfg, k)
        _require(_number(cfg["mc.gamma"]) and 0 <= cfg["mc.gamma"] < 1, "mc.gamma must lie in [0, 1)")
        _require(_number(cfg["mc.momentum"]) and 0 <= cfg["mc.momentum"] < 1, "mc.momentum must lie in [0, 1)")
        grid = cfg["mc.step_grid"]
        _require(isinstance(grid, list) and grid and all(_number(s) and s > 0 for s in grid),
                 "mc.step_grid must be a nonempty list of positive numbers")
        _check_damping(cfg, "mc.damping")
        for k in ("mc.eval_seed", "mc.validation_seed"):
            _require(isinstance(cfg[k], int) and cfg[k] >= 0, f"{k} must be a nonnegative integer")
        _require(not set(seeds) & {cfg["mc.eval_seed"], cfg["mc.validation_seed"]},
                 "evaluation and validation seeds must be disjoint from training seeds")
    elif e == "synth-mlp":
        w = cfg["mlp.widths"]
        _require(isinstance(w, list) and len(w) >= 3 and all(isinstance(x, int) and x >= 1 for x in w)
                 and w[-1] == 1, "mlp.widths must be >= 3 positive integers ending in 1")
        _require(isinstance(cfg["mlp.regimes"], list) and cfg["mlp.regimes"]
                 and set(cfg["mlp.regimes"]) <= {"hidden", "bias", "none"},
                 "mlp.regimes must be drawn from hidden, bias, none")
        for k in ("mlp.n_train", "mlp.n_test", "mlp.steps", "mlp.batch_size", "mlp.refresh_every"):
            _positive_int(cfg, k)
        for k in ("mlp.noise_scale", "mlp.theta_scale", "mlp.step_size"):
            _require(_number(cfg[k]) and cfg[k] >= 0, f"{k} must be a nonnegative number")
        _require(cfg["mlp.step_size"] > 0, "mlp.step_size must be positive")
        _require(_number(cfg["mlp.momentum"]) and 0 <= cfg["mlp.momentum"] < 1, "mlp.momentum must lie in [0, 1)")
        _require(cfg["mlp.weight_mode"] in ("detached", "implicit"), "mlp.weight_mode must be detached or implicit")
        _require(isinstance(cfg["mlp.include_logdet"], bool), "mlp.include_logdet must be a boolean")
        _require(cfg["mlp.test_target"] in ("clean", "noisy"), "mlp.test_target must be clean or noisy")
        _check_damping(cfg, "mlp.damping")
    elif e == "check":
        _require(isinstance(cfg["check.corrupt"], str), "check.corrupt must be a string")


def _check_damping(cfg, key):
    v = cfg[key]
    _require(v == "auto" or (_number(v) and v >= 0), f"{key} must be 'auto' or a nonnegative number")


def _literal(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def echo(cfg):
    """The resolved config as flat TOML; ``load_config`` reads it back unchanged."""
    flat = cfg.flat()
    lines = [f"experiment = {_literal(flat.pop('experiment'))}"]
    lines += [f"{k} = {_literal(flat[k])}" for k in sorted(flat)]
    return "\n".join(lines) + "\n"

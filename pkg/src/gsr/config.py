"""Flat ``key=value`` experiment configuration with per-experiment defaults."""

from dataclasses import dataclass

from gsr.models import BIMP_FAMILY, MODEL_NAMES

EXPERIMENTS = ("node_vs_edge", "simulated_sr", "connectome_sr", "sensitivity", "train")

SIMULATED_SCENARIOS = tuple(f"{fam}-{pool}" for fam in ("sbm", "ba", "ws")
                            for pool in ("degree", "betweenness", "clustering", "participation"))

PARTICLE_ROWS = ("D1/E1", "D2/E1", "D3/E1", "D3/E1", "D3/E2", "D3/E3", "D3/E4", "D3/E5")


class ConfigError(ValueError):
    """Bad configuration file or value."""


# key -> (default, type). Lists are comma separated.
_COMMON = {
    "experiment": ("simulated_sr", str),
    "seed": (0, int),
    "output": ("results", str),
    "batch_size": (16, int),
    "lr": (0.001, float),
    "lr_search": ((), float),
    "max_epochs": (150, int),
    "warmup": (15, int),
    "patience": (5, int),
    "folds": (3, int),
    "val_fraction": (0.2, float),
    "models": (MODEL_NAMES, str),
    "model": ("Bi-MP", str),
    "hidden": (16, int),
    "heads": (4, int),
    "dropout": (0.2, float),
    "hr_init_scale": (1.0, float),
    "lr_refine": ("auto", str),
    "data_dir": ("", str),
    "n_h": (64, int),
    "n_l": (32, int),
    "n_samples": (128, int),
    "scenarios": (SIMULATED_SCENARIOS, str),
    "scenario": ("sbm-degree", str),
    "node2vec_dim": (8, int),
    "hr_walk_length": (51, int),
    "lr_walk_length": (26, int),
    "num_walks": (100, int),
    "node2vec_p": (1.0, float),
    "node2vec_q": (1.0, float),
    "node2vec_window": (10, int),
    "node2vec_negative": (5, int),
    "node2vec_alpha": (0.025, float),
    "particle_rows": (PARTICLE_ROWS, str),
    "toy_models": (("Node", "Node Large", "Edge", "Dual Edge"), str),
    "n_seeds": (15, int),
    "n_train": (128, int),
    "n_val": (32, int),
    "n_test": (32, int),
    "gravity_d1": (100.0, float),
    "gravity": (1.0, float),
    "coef_a": (10.0, float),
    "coef_b": (-7.0, float),
    "threshold": (0.3, float),
    "n_subjects": (96, int),
    "scales": ((1.0, 10.0, 100.0), float),
    "reference_models": (MODEL_NAMES + ("Autoencoder",), str),
    "surrogates": (10, int),
    "baseline": (True, bool),
}

#: per-experiment overrides of the common defaults
PRESETS = {
    "node_vs_edge": {"max_epochs": 300, "warmup": 10, "patience": 15, "n_seeds": 15},
    "simulated_sr": {},
    "connectome_sr": {"warmup": 30, "patience": 7, "hidden": 32, "n_l": 160, "n_h": 268,
                      "lr_search": (0.01, 0.005, 0.001),
                      "models": MODEL_NAMES + ("Autoencoder", "IMAN_adapted")},
    "sensitivity": {"warmup": 30, "patience": 7, "hidden": 32, "n_l": 160, "n_h": 268,
                    "models": BIMP_FAMILY, "n_seeds": 5},
    "train": {},
}

_LIST_KEYS = {k for k, (d, _) in _COMMON.items() if isinstance(d, tuple)}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key, text):
    _, kind = _COMMON[key]
    conv = _parse_bool if kind is bool else kind
    try:
        if key in _LIST_KEYS:
            items = [t.strip() for t in text.split(",") if t.strip()]
            return tuple(conv(t) for t in items)
        return conv(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def _format(value):
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: defaults, then the experiment preset, then the file."""

    values: tuple

    def __getattr__(self, key):
        for k, v in object.__getattribute__(self, "values"):
            if k == key:
                return v
        raise AttributeError(key)

    def as_dict(self):
        return dict(self.values)

    def replace(self, **kw):
        d = self.as_dict()
        for k in kw:
            if k not in _COMMON:
                raise ConfigError(f"unknown config key {k!r}")
        d.update(kw)
        return make_config(d)

    def echo(self):
        """Every key and value, one ``key=value`` per line, in sorted order."""
        return "".join(f"{k}={_format(v)}\n" for k, v in sorted(self.values))


def _canonical(name):
    name = name.strip().replace("-", "_")
    return {"simulated": "simulated_sr", "connectome": "connectome_sr"}.get(name, name)


def make_config(overrides=None, experiment=None):
    overrides = dict(overrides or {})
    for k in overrides:
        if k not in _COMMON:
            raise ConfigError(f"unknown config key {k!r}")
    exp = _canonical(overrides.get("experiment", experiment or _COMMON["experiment"][0]))
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    vals = {k: d for k, (d, _) in _COMMON.items()}
    vals.update(PRESETS[exp])
    vals.update(overrides)
    vals["experiment"] = exp
    cfg = ExperimentConfig(tuple(sorted(vals.items())))
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.max_epochs < 1:
        raise ConfigError("max_epochs must be >= 1")
    if cfg.warmup >= cfg.max_epochs:
        raise ConfigError(f"warmup ({cfg.warmup}) must be < max_epochs ({cfg.max_epochs})")
    if cfg.patience < 1:
        raise ConfigError("patience must be >= 1")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if cfg.folds < 2:
        raise ConfigError("folds must be >= 2")
    if not 0.0 <= cfg.val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")
    if cfg.lr_refine not in ("auto", "on", "off"):
        raise ConfigError("lr_refine must be auto, on or off")


def parse_config_text(text, experiment=None):
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _COMMON:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = value if key == "experiment" else _convert(key, value)
    if experiment and "experiment" in overrides and \
            _canonical(overrides["experiment"]) != _canonical(experiment):
        raise ConfigError(f"config is for experiment {overrides['experiment']!r}, "
                          f"not {experiment!r}")
    return make_config(overrides, experiment)


def load_config(path, experiment=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, experiment)

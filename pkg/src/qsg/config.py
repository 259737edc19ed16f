"""Experiment configuration: a flat ``key = value`` text file with typed fields.

Schema (version 1). Lists are comma separated; ``#`` and ``;`` start comments.

    experiment    one of EXPERIMENTS
    model         transverse_sk | heisenberg | heisenberg_xyz | pspin | field_only
    n_sites       int            n_grid        list of int (pressure-trend)
    lambda        float          alpha, gamma  float (heisenberg)
    pspin         list of float  (a_1, ..., a_rmax)
    field_scaling beta | fixed
    beta          float or list of float
    dist          gaussian | rademacher | uniform_scaled
    n_samples     int            n_paths       int
    n_instances   int            k_list        list of int
    u_grid        list of float  u_scale       absolute | sigma
    s_points      int            fd_step       float
    master_seed   int            output_dir    path
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import QSGError

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "exact", "duhamel", "trotter", "trace-bounds", "universality", "concentration",
    "ibp", "interpolate", "fk-check", "fk-concentration", "pressure-trend",
)

_MODEL_KEYS = ("model", "n_sites")
REQUIRED = {
    "exact": _MODEL_KEYS + ("beta",),
    "duhamel": _MODEL_KEYS + ("beta", "n_instances"),
    "trotter": ("n_sites", "k_list"),
    "trace-bounds": _MODEL_KEYS + ("beta", "n_instances"),
    "universality": _MODEL_KEYS + ("beta", "dist", "n_samples"),
    "concentration": _MODEL_KEYS + ("beta", "n_samples", "u_grid"),
    "ibp": (),
    "interpolate": _MODEL_KEYS + ("beta", "dist", "n_samples", "s_points"),
    "fk-check": _MODEL_KEYS + ("beta", "n_paths"),
    "fk-concentration": _MODEL_KEYS + ("beta", "n_samples", "u_grid"),
    "pressure-trend": ("model", "n_grid", "beta", "n_samples"),
}


class ConfigError(QSGError, ValueError):
    """Invalid or incomplete configuration; ``field`` names the culprit."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


def _int(v: str) -> int:
    return int(v, 0)


def _floats(v: str) -> list:
    return [float(x) for x in v.split(",") if x.strip()]


def _ints(v: str) -> list:
    return [int(x, 0) for x in v.split(",") if x.strip()]


_TYPES = {
    "experiment": str, "model": str, "n_sites": _int, "n_grid": _ints,
    "lambda": float, "alpha": float, "gamma": float, "pspin": _floats,
    "field_scaling": str, "beta": _floats, "dist": str, "n_samples": _int,
    "n_paths": _int, "n_instances": _int, "k_list": _ints, "u_grid": _floats,
    "u_scale": str, "s_points": _int, "fd_step": float, "master_seed": _int,
    "output_dir": str,
}


@dataclass
class ExperimentConfig:
    experiment: str
    model: Optional[str] = None
    n_sites: Optional[int] = None
    n_grid: Optional[list] = None
    lam: float = 1.0
    alpha: float = 0.0
    gamma: float = 0.0
    pspin: Optional[list] = None
    field_scaling: str = "beta"
    beta: Optional[list] = None
    dist: str = "gaussian"
    n_samples: int = 1000
    n_paths: int = 10000
    n_instances: int = 20
    k_list: Optional[list] = None
    u_grid: Optional[list] = None
    u_scale: str = "absolute"
    s_points: int = 5
    fd_step: float = 1e-3
    master_seed: int = 0
    output_dir: str = "qsg-out"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}", "experiment")
        for key in REQUIRED[self.experiment]:
            attr = "lam" if key == "lambda" else key
            if getattr(self, attr) is None:
                raise ConfigError(f"missing required field `{key}` for {self.experiment}", key)
        if self.u_scale not in ("absolute", "sigma"):
            raise ConfigError("u_scale must be `absolute` or `sigma`", "u_scale")
        if self.field_scaling not in ("beta", "fixed"):
            raise ConfigError("field_scaling must be `beta` or `fixed`", "field_scaling")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 unsigned bits", "master_seed")
        return self

    def model_params(self) -> dict:
        return {"lam": self.lam, "alpha": self.alpha, "gamma": self.gamma,
                "coefficients": self.pspin, "field_scaling": self.field_scaling}

    def resolved(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["schema_version"] = SCHEMA_VERSION
        return d


def parse_config_text(text: str, experiment: Optional[str] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=", ":")
    )
    parser.optionxform = str
    try:
        parser.read_string("[qsg]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    values = {}
    for key, raw in parser["qsg"].items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config field `{key}`", key)
        try:
            values[key] = _TYPES[key](raw.strip())
        except ValueError:
            raise ConfigError(f"field `{key}` has invalid value {raw!r}", key) from None
    if experiment is not None:
        if "experiment" in values and values["experiment"] != experiment:
            raise ConfigError(
                f"config is for `{values['experiment']}`, command asked for `{experiment}`",
                "experiment",
            )
        values["experiment"] = experiment
    if "experiment" not in values:
        raise ConfigError("missing required field `experiment`", "experiment")
    name = values["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}", "experiment")
    for key in REQUIRED[name]:
        if key not in values:
            raise ConfigError(f"missing required field `{key}` for {name}", key)
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    return ExperimentConfig(**values).validate()


def load_config(path, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, experiment)

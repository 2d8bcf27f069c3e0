"""Declarative run configuration: one INI document covering every stage.

Unknown sections or keys are rejected outright so typos cannot silently fall
back to defaults; every value is validated by the owning config type.
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .lrp import LrpConfig
from .model import CONV_CHANNELS, CONV_STRIDES
from .phantom import PhantomSpec
from .preprocess import PreprocConfig
from .training import TrainConfig


@dataclass(frozen=True)
class NetSettings:
    hidden: int = 40
    channels: tuple = CONV_CHANNELS
    strides: tuple = CONV_STRIDES

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigurationError(f"hidden units must be >= 1, got {self.hidden}")
        if len(self.channels) != len(self.strides):
            raise ConfigurationError("channels and strides must pair up")
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise ConfigurationError("channels and strides must be >= 1")


@dataclass(frozen=True)
class FitSettings:
    val_subjects: int = 1
    window: tuple = (5.0, 15.0)

    def __post_init__(self):
        if self.val_subjects < 1:
            raise ConfigurationError("need at least one validation subject")
        if len(self.window) != 2 or self.window[0] > self.window[1]:
            raise ConfigurationError(f"window must be (lo, hi) seconds, got {self.window}")


@dataclass(frozen=True)
class SvmSettings:
    c: float = 1.0
    iters: int = 120
    radius_mm: float = 5.6

    def __post_init__(self):
        if self.c <= 0 or self.iters < 1 or self.radius_mm <= 0:
            raise ConfigurationError("svm settings must be positive")


@dataclass(frozen=True)
class LassoSettings:
    lam: float = 0.05
    mode: str = "sgd"
    epochs: int = 10
    max_iter: int = 500
    fit_intercept: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.mode not in ("full", "sgd"):
            raise ConfigurationError(f"lasso mode must be full or sgd, got {self.mode!r}")
        if self.epochs < 1 or self.max_iter < 1:
            raise ConfigurationError("lasso iteration counts must be >= 1")


@dataclass(frozen=True)
class MapSettings:
    rule: str = "percentile"
    q: float = 90.0
    fdr_rate: float = 0.1
    fwhm_mm: float = 3.0

    def __post_init__(self):
        if self.rule not in ("percentile", "fdr"):
            raise ConfigurationError(f"threshold rule must be percentile or fdr, got {self.rule!r}")
        if not 0.0 <= self.q < 100.0:
            raise ConfigurationError(f"percentile must lie in [0, 100), got {self.q}")
        if not 0.0 < self.fdr_rate < 1.0:
            raise ConfigurationError(f"fdr rate must lie in (0, 1), got {self.fdr_rate}")
        if self.fwhm_mm < 0:
            raise ConfigurationError(f"smoothing fwhm must be >= 0, got {self.fwhm_mm}")


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    preprocess: PreprocConfig = field(default_factory=PreprocConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fit: FitSettings = field(default_factory=FitSettings)
    net: NetSettings = field(default_factory=NetSettings)
    lrp: LrpConfig = field(default_factory=LrpConfig)
    svm: SvmSettings = field(default_factory=SvmSettings)
    lasso: LassoSettings = field(default_factory=LassoSettings)
    maps: MapSettings = field(default_factory=MapSettings)


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_tuple(s):
    return tuple(int(p) for p in s.split(","))


def _float_tuple(s):
    return tuple(float(p) for p in s.split(","))


def _optional_float(s):
    return None if s.strip().lower() == "none" else float(s)


def _str(s):
    return s.strip()


# section -> key -> (constructor kwarg, converter)
_SCHEMA = {
    "phantom": {
        "grid": ("grid", _int_tuple),
        "voxel_mm": ("voxel_mm", _float),
        "tr_s": ("tr_s", _float),
        "amplitude": ("amplitude", _float),
        "noise_sigma": ("noise_sigma", _float),
        "baseline": ("baseline", _float),
        "train_subjects": ("n_train_subjects", _int),
        "test_subjects": ("n_test_subjects", _int),
        "runs_per_subject": ("runs_per_subject", _int),
        "roi_jitter": ("roi_jitter", _int),
        "seed": ("seed", _int),
    },
    "preprocess": {
        "fwhm_mm": ("fwhm_mm", _float),
        "cutoff_s": ("cutoff_s", _float),
        "mask_fraction": ("mask_fraction", _float),
    },
    "train": {
        "learning_rate": ("learning_rate", _float),
        "batch_size": ("batch_size", _int),
        "max_epochs": ("max_epochs", _int),
        "clip_threshold": ("clip_threshold", _optional_float),
        "dropout": ("dropout", _float_tuple),
        "patience": ("patience", _int),
        "seed": ("seed", _int),
    },
    "fit": {
        "val_subjects": ("val_subjects", _int),
        "window": ("window", _float_tuple),
    },
    "net": {
        "hidden": ("hidden", _int),
        "channels": ("channels", _int_tuple),
        "strides": ("strides", _int_tuple),
    },
    "lrp": {
        "stabilizer": ("stabilizer", _float),
    },
    "svm": {
        "c": ("c", _float),
        "iters": ("iters", _int),
        "radius_mm": ("radius_mm", _float),
    },
    "lasso": {
        "lambda": ("lam", _float),
        "mode": ("mode", _str),
        "epochs": ("epochs", _int),
        "max_iter": ("max_iter", _int),
        "fit_intercept": ("fit_intercept", _bool),
        "seed": ("seed", _int),
    },
    "maps": {
        "rule": ("rule", _str),
        "q": ("q", _float),
        "fdr_rate": ("fdr_rate", _float),
        "fwhm_mm": ("fwhm_mm", _float),
    },
}

_BUILDERS = {
    "phantom": PhantomSpec,
    "preprocess": PreprocConfig,
    "train": TrainConfig,
    "fit": FitSettings,
    "net": NetSettings,
    "lrp": LrpConfig,
    "svm": SvmSettings,
    "lasso": LassoSettings,
    "maps": MapSettings,
}


def parse_config(text):
    """Build a RunConfig from INI text; reject anything not in the schema."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config does not parse: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        schema = _SCHEMA[section]
        build_kwargs = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigurationError(f"unknown key {section}.{key}")
            kwarg, convert = schema[key]
            try:
                build_kwargs[kwarg] = convert(raw)
            except ValueError as exc:
                raise ConfigurationError(f"{section}.{key}: {exc}") from exc
        try:
            kwargs[section] = _BUILDERS[section](**build_kwargs)
        except ConfigurationError as exc:
            raise ConfigurationError(f"[{section}] {exc}") from exc
    return RunConfig(**kwargs)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def split_seed(master, n):
    """Derive `n` independent component seeds from one master seed."""
    return [int(s) for s in np.random.SeedSequence(master).generate_state(n)]

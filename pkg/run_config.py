"""
Run configuration: JSON config file, environment, then command-line flags.

Precedence for the output directory is flag > QML_OUTPUT_DIR > config file >
default; every other field is config file < flag.
"""

import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional

from circuit_search import SearchConfig
from errors import ConfigurationError
from noise_engine import DEFAULT_KAPPA_DD
from trainer import TrainConfig

logger = logging.getLogger(__name__)

TOOL_NAME = "medqml"
TOOL_VERSION = "1.0.0"
OUTPUT_DIR_ENV = "QML_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"


@dataclass(frozen=True)
class MitigationFlags:
    dd: bool = False
    twirl: bool = False
    m3: bool = False

    @classmethod
    def parse(cls, text: str) -> "MitigationFlags":
        """'none', 'all', or a '+'/','-separated subset of dd, twirl, m3"""
        tokens = [t.strip().lower() for t in text.replace(",", "+").split("+") if t.strip()]
        if tokens == ["none"]:
            return cls()
        if tokens == ["all"]:
            return cls(True, True, True)
        unknown = set(tokens) - {"dd", "twirl", "m3"}
        if unknown or not tokens:
            raise ConfigurationError(f"Unknown mitigation flags {text!r}; use none, all or a combination of dd, twirl, m3")
        return cls(dd="dd" in tokens, twirl="twirl" in tokens, m3="m3" in tokens)

    @property
    def label(self) -> str:
        """Label used in ablation tables"""
        parts = [name for name, on in (("DD", self.dd), ("Twirl", self.twirl), ("M3", self.m3)) if on]
        return "+".join(parts) if parts else "none"

    @property
    def tag(self) -> str:
        """Filename-safe form of the label"""
        return self.label.lower().replace("+", "-")


ABLATION_ROWS = (
    MitigationFlags(),
    MitigationFlags(dd=True, twirl=True),
    MitigationFlags(m3=True),
    MitigationFlags(dd=True, twirl=True, m3=True),
)


@dataclass
class MitigationSettings:
    flags: str = "none"
    shots: int = 32000
    calibration_shots: int = 32000
    tol: float = 1e-6
    max_iter: int = 1000
    kappa_dd: float = DEFAULT_KAPPA_DD

    def __post_init__(self):
        MitigationFlags.parse(self.flags)
        if self.shots < 1 or self.calibration_shots < 1:
            raise ConfigurationError("shots and calibration_shots must be >= 1")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigurationError(f"tol must be > 0 and max_iter >= 1, got {self.tol}, {self.max_iter}")
        if not 0.0 <= self.kappa_dd <= 1.0:
            raise ConfigurationError(f"kappa_dd must lie in [0, 1], got {self.kappa_dd}")

    @property
    def parsed_flags(self) -> MitigationFlags:
        return MitigationFlags.parse(self.flags)


@dataclass
class RunConfig:
    stage: Optional[str] = None
    dataset_path: Optional[str] = None
    dataset_format: str = "qds"
    device_path: Optional[str] = None
    circuit_path: Optional[str] = None
    output_dir: str = DEFAULT_OUTPUT_DIR
    seed: int = 0
    workers: int = 1
    max_test: Optional[int] = None
    out_side: int = 7
    n_qubits: int = 4
    n_params: List[int] = field(default_factory=lambda: [60])
    auc_average: str = "macro"
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mitigation: MitigationSettings = field(default_factory=MitigationSettings)

    def __post_init__(self):
        if self.dataset_format not in ("qds", "csv"):
            raise ConfigurationError(f"dataset_format must be qds or csv, got {self.dataset_format!r}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.max_test is not None and self.max_test < 1:
            raise ConfigurationError(f"max_test must be >= 1, got {self.max_test}")
        if not self.n_params or any(n < 1 for n in self.n_params):
            raise ConfigurationError(f"n_params must list positive sizes, got {self.n_params}")
        if self.auc_average not in ("macro", "weighted"):
            raise ConfigurationError(f"auc_average must be macro or weighted, got {self.auc_average!r}")

    def with_seed(self) -> "RunConfig":
        """Propagate the master seed into the stage configs"""
        search = replace(self.search, seed=self.seed, workers=self.workers)
        train = replace(self.train, seed=self.seed)
        return replace(self, search=search, train=train)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["train"] = self.train.to_dict()
        return data


_SECTIONS = {"search": SearchConfig, "train": TrainConfig, "mitigation": MitigationSettings}


def _build(cls, values: Mapping[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"Unknown {where} field(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid {where} configuration: {e}")


def run_config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Build a RunConfig from parsed JSON, rejecting unknown fields"""
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    sections = {name: _build(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return _build(RunConfig, {**top, **sections}, "run")


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Load a JSON run config; no path means defaults"""
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    logger.debug(f"Loaded run configuration from {path}")
    return run_config_from_dict(data)


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Dotted keys ('train.epochs') address sub-configs; None values are skipped"""
    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            if section not in nested:
                raise ConfigurationError(f"Unknown configuration section {section!r}")
            nested[section][name] = value
        else:
            top[key] = value
    try:
        for section, values in nested.items():
            if values:
                top[section] = replace(getattr(config, section), **values)
        return replace(config, **top)
    except TypeError as e:
        raise ConfigurationError(f"Invalid override: {e}")


def resolve_output_dir(config: RunConfig, flag_value: Optional[str] = None) -> RunConfig:
    """Apply output directory precedence: flag, then environment, then file"""
    if flag_value:
        return replace(config, output_dir=flag_value)
    env_value = os.environ.get(OUTPUT_DIR_ENV)
    if env_value:
        return replace(config, output_dir=env_value)
    return config


def file_sha256(path: str) -> str:
    """Hex SHA-256 of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def require_files(*paths: Optional[str]) -> None:
    """Raise FileNotFoundError for the first missing path; None entries are skipped"""
    for path in paths:
        if path is None:
            continue
        if not os.path.isfile(path):
            raise FileNotFoundError(f"No such file: {path}")


def artifact_meta(seed: int, inputs: Mapping[str, Optional[str]], **extra: Any) -> "OrderedDict[str, Any]":
    """Provenance block embedded in every output: tool, version, seed, input hashes"""
    meta: "OrderedDict[str, Any]" = OrderedDict()
    meta["tool"] = TOOL_NAME
    meta["version"] = TOOL_VERSION
    meta["seed"] = seed
    for name in sorted(inputs):
        if inputs[name] is not None:
            meta[f"{name}_sha256"] = file_sha256(inputs[name])
    for key in sorted(extra):
        meta[key] = extra[key]
    return meta

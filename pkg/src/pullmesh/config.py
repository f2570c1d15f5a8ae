"""Run configuration: a flat key = value text format with typed parsing.

Precedence is defaults < config file < command-line overrides; both the
file and the flags funnel through the same parser, so a value is valid in
one place iff it is valid in the other.  Unknown keys are always rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError
from .training import TrainConfig

SEED_ENV_VAR = "FUNSR_SEED"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class Config:
    """Every pipeline tunable with its default value.

    ``seed = None`` means unset; resolution order is config value, then the
    FUNSR_SEED environment variable, then 0.  ``voxel_cell`` and
    ``metrics_voxel`` accept 0 for "derive from the data extent".
    ``skip_layer = -1`` disables the skip connection.
    """

    # cloud preparation
    n_points: int = 20000
    voxel_cell: float = 0.0
    # query sampling
    queries_per_point: int = 25
    sigma_k: int = 50
    # network
    hidden_layers: int = 8
    width: int = 256
    skip_layer: int = 4
    activation_beta: float = 100.0
    use_positional_encoding: bool = False
    pe_frequencies: int = 6
    init_radius: float = 0.5
    disc_width: int = 64
    disc_layers: int = 4
    disc_batch_input: bool = False
    # optimization
    iterations: int = 15000
    batch_size: int = 5000
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_self: float = 1.0
    lambda_scc: float = 0.005
    lambda_g: float = 0.005
    census_interval: int = 10
    precision: str = "single"
    determinism: bool = True
    seed: int | None = None
    # surface extraction (64 suits desk-scale runs; 256 matches clinical-scale use)
    mc_resolution: int = 64
    mc_threshold: float = 0.0
    # metrics
    metrics_samples: int = 100000
    metrics_voxel: float = 0.0
    curvature_radius: float = 0.0195

    def validate(self) -> None:
        if self.n_points < 1:
            raise InputError("n_points must be >= 1")
        if self.voxel_cell < 0:
            raise InputError("voxel_cell must be >= 0 (0 derives it from the data)")
        if self.queries_per_point < 1 or self.sigma_k < 1:
            raise InputError("queries_per_point and sigma_k must be >= 1")
        if self.mc_resolution < 8:
            raise InputError("mc_resolution must be >= 8")
        if self.metrics_samples < 1:
            raise InputError("metrics_samples must be >= 1")
        if self.metrics_voxel < 0:
            raise InputError("metrics_voxel must be >= 0 (0 derives it from the meshes)")
        if self.curvature_radius < 0:
            raise InputError("curvature_radius must be >= 0")
        self.train_config(seed=0).validate()

    def resolve_seed(self) -> int:
        if self.seed is not None:
            return self.seed
        env = os.environ.get(SEED_ENV_VAR)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise InputError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
        return 0

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            lambda_self=self.lambda_self,
            lambda_scc=self.lambda_scc,
            lambda_g=self.lambda_g,
            seed=seed,
            determinism=self.determinism,
            census_interval=self.census_interval,
            queries_per_point=self.queries_per_point,
            sigma_k=self.sigma_k,
            init_radius=self.init_radius,
            hidden_layers=self.hidden_layers,
            width=self.width,
            skip_layer=None if self.skip_layer < 0 else self.skip_layer,
            activation_beta=self.activation_beta,
            use_positional_encoding=self.use_positional_encoding,
            pe_frequencies=self.pe_frequencies,
            disc_width=self.disc_width,
            disc_layers=self.disc_layers,
            disc_batch_input=self.disc_batch_input,
            precision=self.precision,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**payload)


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def parse_value(key: str, raw: str):
    """Parse one raw string for a known key to its declared type."""
    field = _FIELDS.get(key)
    if field is None:
        raise InputError(f"unknown config key {key!r}")
    raw = raw.strip()
    if key == "seed":
        if raw.lower() == "none":
            return None
        try:
            return int(raw)
        except ValueError:
            raise InputError(f"{key}: expected an integer, got {raw!r}")
    if field.type == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise InputError(f"{key}: expected a boolean, got {raw!r}")
    if field.type == "int":
        try:
            return int(raw)
        except ValueError:
            raise InputError(f"{key}: expected an integer, got {raw!r}")
    if field.type == "float":
        try:
            return float(raw)
        except ValueError:
            raise InputError(f"{key}: expected a number, got {raw!r}")
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the flat key = value format into a typed mapping.

    Comments start with '#'; blank lines are ignored; duplicate and
    unknown keys are rejected with the offending line number.
    """
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InputError(f"{source}:{line_no}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in values:
            raise InputError(f"{source}:{line_no}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, raw)
        except InputError as exc:
            raise InputError(f"{source}:{line_no}: {exc}")
    return values


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the optional file, then raw-string overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise InputError(f"{path}: no such config file", stage="io")
        values.update(parse_config_text(path.read_text(), source=str(path)))
    for key, raw in (overrides or {}).items():
        values[key] = parse_value(key, raw)
    cfg = Config(**values)
    cfg.validate()
    return cfg

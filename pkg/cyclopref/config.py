"""Pipeline configuration: TOML file, flag overrides and the provenance hash."""

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from cyclopref.decomposition import AlphaGrid
from cyclopref.errors import UsageError
from cyclopref.features import FeatureParams
from cyclopref.matching import MatchingParams

PATH_FIELDS = ("network", "network_nodes", "landuse", "trajectories", "activities", "out_dir")

# not part of the result, so not part of the hash
UNHASHED_FIELDS = ("out_dir", "threads")


@dataclass
class PipelineConfig:
    network: Optional[str] = None
    network_nodes: Optional[str] = None
    landuse: Optional[str] = None
    trajectories: Optional[str] = None
    activities: Optional[str] = None
    forbidden_types: List[str] = field(default_factory=lambda: ["motorway", "motorway_link", "trunk"])

    max_snap_distance: float = 30.0
    sigma_gps: float = 10.0
    candidates: int = 5
    transition_scale: float = 50.0
    low_sampling_gap: float = 500.0

    buffer_radius: float = 50.0
    sample_step: float = 10.0
    # land-use categories that always get a feature column
    landuse_categories: List[str] = field(default_factory=list)

    k: int = 3
    restarts: int = 20
    seed: int = 0
    k_sweep: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    k_neighbors: int = 100
    quantile: float = 0.9

    alpha_min: float = 0.1
    alpha_max: float = 0.9
    alpha_step: float = 0.005

    out_dir: str = "out"
    threads: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**dict(data))

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Copy with every non-None override applied; flags win over the file."""
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.from_dict(data)

    def config_hash(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in UNHASHED_FIELDS}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def provenance(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash(), "seed": self.seed}

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def matching_params(self) -> MatchingParams:
        return MatchingParams(
            max_snap_distance=self.max_snap_distance,
            sigma_gps=self.sigma_gps,
            candidates=self.candidates,
            transition_scale=self.transition_scale,
            low_sampling_gap=self.low_sampling_gap,
        )

    def feature_params(self) -> FeatureParams:
        return FeatureParams(
            buffer_radius=self.buffer_radius,
            sample_step=self.sample_step,
            landuse_categories=tuple(sorted({c.strip().lower() for c in self.landuse_categories})),
        )

    def alpha_grid(self) -> AlphaGrid:
        try:
            return AlphaGrid.regular(self.alpha_min, self.alpha_max, self.alpha_step)
        except ValueError as e:
            raise UsageError(f"invalid alpha grid: {e}") from e

    def validate(self, require: Optional[List[str]] = None) -> None:
        """Check parameter ranges and that every referenced input exists.

        `require` names inputs that must be configured for the stage about to run.
        """
        for name in require or ():
            if getattr(self, name) is None:
                raise UsageError(f"missing required input '{name}'")
        for name in ("network", "network_nodes", "landuse", "trajectories", "activities"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise UsageError(f"{name}: no such file or directory: {value}")
        if self.k < 1 or self.restarts < 1 or self.k_neighbors < 1 or self.threads < 1:
            raise UsageError("k, restarts, k_neighbors and threads must be positive")
        if not 0 < self.quantile < 1:
            raise UsageError(f"quantile must lie in (0, 1), got {self.quantile}")
        if self.max_snap_distance <= 0 or self.sigma_gps <= 0 or self.candidates < 1:
            raise UsageError("matching parameters must be positive")
        if self.buffer_radius < 0 or self.sample_step <= 0:
            raise UsageError("buffer_radius must be >= 0 and sample_step > 0")
        self.alpha_grid()


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """Read a TOML config; relative input paths resolve against the file's directory."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no config file found at {path}")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"{path}: invalid TOML: {e}") from e

    # sections are allowed for readability; their keys are flattened
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value

    base = path.parent
    for name in PATH_FIELDS:
        value = flat.get(name)
        if value is not None and not Path(value).is_absolute():
            flat[name] = str(base / value)
    return PipelineConfig.from_dict(flat)

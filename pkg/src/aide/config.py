"""Engine parameters and the ``aide-config/1`` document format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

CONFIG_SCHEMA = "aide-config/1"


class ConfigError(ValueError):
    """Invalid parameter combination or malformed config document."""


@dataclass(frozen=True)
class ConfigParams:
    """All tunables in one immutable bundle.

    Retrieval and matching:
      A            target corpus size for generation
      T            surviving corpus size after the center filter; informational,
                   derived by the build when left unset
      X            affordance dimensions
      a, b         cluster and subcluster counts
      D            build-time center filter radius (applies to both vectors)
      c            retrieval radius for the instruction-vector DFS
      d            subcluster expansion radius over tool vectors
      m            grounding similarity threshold (strict greater-than)
      N, N_prime   detection rank cutoffs
      PX           exploration square half-side, pixels

    Thresholds:
      strategy_threshold   visible-vs-invisible routing on t_new
      validity_threshold   confidence + similarity floor for a valid tool object

    Simulation and mocks:
      frame_period       tick length in milliseconds
      sigma              mock noise scale (0 disables noise)
      epsilon            similarity clamp margin below 1
      r_near             world distance that counts as "near" a target
      approach_speed     world units moved per tick
      confidence_lambda  distance decay constant for mock detection confidence
      blur_range         world distance beyond which visible objects blur
      frame_size         rendered frame side, pixels
      view_range         world units covered by one frame side
      visible_candidate_max_rank  overrides the 2N candidate cap when set
      max_subgoal_depth  reformulation stack limit
    """

    A: int = 432
    T: int | None = None
    X: int = 19
    a: int = 8
    b: int = 3
    D: float = 25.0
    c: float = 10.0
    d: float = 15.0
    m: float = 0.85
    N: int = 5
    N_prime: int = 40
    PX: int = 250
    strategy_threshold: float = 0.75
    validity_threshold: float = 0.5
    frame_period: float = 100.0
    sigma: float = 0.5
    epsilon: float = 1e-6
    r_near: float = 1.0
    approach_speed: float = 0.5
    confidence_lambda: float = 5.0
    blur_range: float = 8.0
    frame_size: int = 800
    view_range: float = 40.0
    visible_candidate_max_rank: int | None = None
    max_subgoal_depth: int = 4

    def __post_init__(self) -> None:
        if self.N >= self.N_prime:
            raise ConfigError(f"N ({self.N}) must be below N_prime ({self.N_prime})")
        if not (0.0 < self.m < 1.0):
            raise ConfigError(f"m must lie in (0, 1), got {self.m}")
        for name in ("D", "c", "d"):
            value = getattr(self, name)
            if value < 0:
                raise ConfigError(f"distance {name} must be non-negative, got {value}")
        if self.A < 1 or self.X < 1 or self.a < 1 or self.b < 1:
            raise ConfigError("corpus sizes, dimensions and cluster counts must be positive")
        if self.T is not None and not (0 < self.T <= self.A):
            raise ConfigError(f"T must lie in (0, A], got {self.T}")
        if self.PX < 0 or self.frame_size < 1 or self.view_range <= 0:
            raise ConfigError("pixel and view parameters must be positive")
        if self.sigma < 0 or self.epsilon <= 0 or self.frame_period <= 0:
            raise ConfigError("sigma, epsilon and frame_period must be valid")

    @property
    def candidate_max_rank(self) -> int:
        """Upper rank (inclusive) for visible-exploration candidate squares."""
        if self.visible_candidate_max_rank is not None:
            return self.visible_candidate_max_rank
        return 2 * self.N

    def with_overrides(self, **changes) -> "ConfigParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | Path) -> tuple[ConfigParams, dict]:
    """Read an ``aide-config/1`` document; returns (params, auxiliary paths)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"expected schema {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}")
    known = {f.name for f in dataclasses.fields(ConfigParams)}
    raw = doc.get("params", {})
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config parameters: {sorted(unknown)}")
    params = ConfigParams(**raw)
    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("paths section must be a mapping")
    return params, paths


def save_config(params: ConfigParams, path: str | Path, paths: dict | None = None) -> None:
    doc = {"schema": CONFIG_SCHEMA, "params": params.to_dict(), "paths": paths or {}}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

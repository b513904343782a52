"""Single-file pipeline configuration with CLI-level overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .annotation import DEFAULT_PROMPT, AnnotatorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs beyond the work directory itself.

    Loaded from one JSON file; individual command-line flags override
    single fields. The salt keys the id anonymizer, so two runs over the
    same corpus agree on pseudonymous ids only when their salts match.
    """

    salt_hex: str = "5eed" * 8
    granularities: tuple = ("1d", "12h", "6h")
    min_event_posts: int = 50
    min_event_span_days: float = 3.0
    min_event_density: float = 3.0
    min_series_bins: int = 21
    models: tuple = ("last_value", "moving_average", "dlinear")
    seeds: tuple = (0, 1, 2, 3, 4)
    top_percents: tuple = (5, 10, 20, 50)
    jobs: int = 1
    annotator_endpoint: str = ""
    annotator_model: str = ""
    annotator_prompt_template: str = DEFAULT_PROMPT
    annotator_max_retries: int = 3
    annotator_timeout_seconds: float = 30.0
    annotator_max_in_flight: int = 4

    def __post_init__(self) -> None:
        try:
            salt = bytes.fromhex(self.salt_hex)
        except ValueError as exc:
            raise ConfigError(f"salt_hex is not valid hex: {exc}") from exc
        if not salt:
            raise ConfigError("salt_hex must not be empty")
        unknown = set(self.granularities) - {"1d", "12h", "6h"}
        if unknown:
            raise ConfigError(f"unknown granularities: {sorted(unknown)}")

    @property
    def salt(self) -> bytes:
        return bytes.fromhex(self.salt_hex)

    def annotator(self) -> AnnotatorConfig:
        if not self.annotator_endpoint or not self.annotator_model:
            raise ConfigError("annotation needs annotator_endpoint and annotator_model")
        return AnnotatorConfig(
            endpoint=self.annotator_endpoint,
            model_name=self.annotator_model,
            prompt_template=self.annotator_prompt_template,
            max_retries=self.annotator_max_retries,
            timeout_seconds=self.annotator_timeout_seconds,
            max_in_flight=self.annotator_max_in_flight,
        )

    @classmethod
    def from_file(cls, path: Path) -> "PipelineConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = {
            key: tuple(value) if isinstance(value, list) else value
            for key, value in obj.items()
        }
        return cls(**coerced)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        """A copy with every non-None override applied."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(updates) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigError(f"unknown config overrides: {sorted(unknown)}")
        return dataclasses.replace(self, **updates)

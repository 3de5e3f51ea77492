"""Pipeline configuration: one JSON file with per-stage sections plus overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .chains import ScopeMode
from .errors import ConfigError
from .oracle import AttackAction
from .store import digest


@dataclass
class SpecSource:
    spec_id: str
    path: str
    version: str = ""


@dataclass
class PathsConfig:
    specs: list[SpecSource] = field(default_factory=list)
    work_dir: str = "out"
    cache: str | None = None
    gold: str | None = None
    rouge_pairs: str | None = None


@dataclass
class ExtractorConfig:
    backend: str = "pattern"
    examples: str | None = None
    examples_per_spec: int = 2


@dataclass
class ChainsConfig:
    mode: str = ScopeMode.REFERENCE_GUIDED.value
    semantic_threshold: float = 0.85
    clause_depth: int | None = None
    similarity_judge: str = "token"
    causal_judge: str = "lexicon"
    lexicon: str | None = None


@dataclass
class OracleConfig:
    judge: str = "rules"
    properties_file: str | None = None
    rules_file: str | None = None
    actions: list[str] = field(default_factory=lambda: [a.value for a in AttackAction])


@dataclass
class BackendConfig:
    offline: bool = False
    endpoint: str | None = None
    retry_attempts: int = 3
    max_concurrency: int = 4


@dataclass
class MetricsConfig:
    match_mode: str = "similarity"
    similarity_threshold: float = 0.8
    seconds_per_pair: float = 5.46


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    chains: ChainsConfig = field(default_factory=ChainsConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    jobs: int = 1
    base_dir: str = field(default=".", metadata={"serialize": False})

    # -- loading -----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> PipelineConfig:
        cfg = _build(cls, data, "")
        cfg.base_dir = str(base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> PipelineConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("<file>", f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(data, path.resolve().parent)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("base_dir")
        return data

    def dump(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    # -- overrides ---------------------------------------------------------

    def with_overrides(self, assignments: list[str]) -> PipelineConfig:
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(item, "override must look like key.path=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.split(".")
            target = data
            for i, part in enumerate(parts[:-1]):
                if not isinstance(target.get(part), dict):
                    raise ConfigError(".".join(parts[: i + 1]), "unknown configuration section")
                target = target[part]
            if parts[-1] not in target:
                raise ConfigError(key, "unknown configuration key")
            target[parts[-1]] = value
        return PipelineConfig.from_dict(data, self.base_dir)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        def choice(key: str, value: str, allowed) -> None:
            if value not in allowed:
                raise ConfigError(key, f"must be one of {sorted(allowed)}, got {value!r}")

        choice("extractor.backend", self.extractor.backend, {"pattern", "service"})
        choice("chains.mode", self.chains.mode, {m.value for m in ScopeMode})
        choice("chains.similarity_judge", self.chains.similarity_judge, {"token", "service"})
        choice("chains.causal_judge", self.chains.causal_judge, {"lexicon", "service"})
        choice("oracle.judge", self.oracle.judge, {"rules", "service"})
        choice("metrics.match_mode", self.metrics.match_mode, {"similarity", "exact_canonical"})
        for i, a in enumerate(self.oracle.actions):
            choice(f"oracle.actions[{i}]", a, {x.value for x in AttackAction})
        if not 0 < self.chains.semantic_threshold <= 1:
            raise ConfigError("chains.semantic_threshold", "must lie in (0, 1]")
        if not 0 < self.metrics.similarity_threshold <= 1:
            raise ConfigError("metrics.similarity_threshold", "must lie in (0, 1]")
        if self.chains.clause_depth is not None and self.chains.clause_depth < 1:
            raise ConfigError("chains.clause_depth", "must be a positive integer or null")
        if self.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")
        if self.extractor.examples_per_spec < 0:
            raise ConfigError("extractor.examples_per_spec", "must not be negative")
        ids = [s.spec_id for s in self.paths.specs]
        if len(set(ids)) != len(ids):
            raise ConfigError("paths.specs", f"duplicate spec ids {ids}")

    def validate_paths(self) -> None:
        """Every configured input file must exist; checked before any stage runs."""
        for i, spec in enumerate(self.paths.specs):
            if not self.resolve(spec.path).is_file():
                raise ConfigError(f"paths.specs[{i}].path", f"file not found: {self.resolve(spec.path)}")
        optional = {
            "paths.gold": self.paths.gold,
            "paths.rouge_pairs": self.paths.rouge_pairs,
            "extractor.examples": self.extractor.examples,
            "chains.lexicon": self.chains.lexicon,
            "oracle.properties_file": self.oracle.properties_file,
            "oracle.rules_file": self.oracle.rules_file,
        }
        for key, value in optional.items():
            if value is not None and not self.resolve(value).is_file():
                raise ConfigError(key, f"file not found: {self.resolve(value)}")

    # -- helpers -----------------------------------------------------------

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def work_dir(self) -> Path:
        return self.resolve(self.paths.work_dir)

    def digest(self) -> str:
        """Digest of the settings that can change artifact contents; excludes paths and jobs."""
        data = self.to_dict()
        data.pop("jobs")
        paths = data.pop("paths")
        data["specs"] = [{"spec_id": s["spec_id"], "version": s["version"]} for s in paths["specs"]]
        return digest(data)


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", f"expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls) if f.metadata.get("serialize", True)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(_join(prefix, unknown[0]), "unknown configuration key")
    kwargs = {}
    for name, value in data.items():
        key = _join(prefix, name)
        default = cls.__dataclass_fields__[name]
        sub = _SECTION_TYPES.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, key)
        elif (cls, name) == (PathsConfig, "specs"):
            if not isinstance(value, list):
                raise ConfigError(key, "expected a list of {spec_id, path, version}")
            kwargs[name] = [_build(SpecSource, v, f"{key}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = _check_scalar(key, value, default.type)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _check_scalar(key: str, value: Any, annotation: str) -> Any:
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "must not be null")
    base = annotation.replace(" | None", "")
    if base == "bool":
        ok = isinstance(value, bool)
    elif base == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif base == "str":
        ok = isinstance(value, str)
    elif base == "list[str]":
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {base}, got {value!r}")
    return value


_SECTION_TYPES = {
    (PipelineConfig, "paths"): PathsConfig,
    (PipelineConfig, "extractor"): ExtractorConfig,
    (PipelineConfig, "chains"): ChainsConfig,
    (PipelineConfig, "oracle"): OracleConfig,
    (PipelineConfig, "backend"): BackendConfig,
    (PipelineConfig, "metrics"): MetricsConfig,
}


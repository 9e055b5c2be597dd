"""
Engine configuration: JSON file plus ``ENGINE_``-prefixed env overrides.

Every invalid field is collected and reported with its path before the
engine binds anything; a config that loads is a config the engine can run.
Referenced input paths (schema file, database dir, knowledge dir, stub
scripts) must exist; the sessions directory is an output and is created.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datapipe import PipelineConfig
from .gateway import ProviderConfig, StubScript
from .sqlgen import DomainProfile, StrategyThresholds
from .tables import ScoringParams

__all__ = ["EngineConfig", "ConfigError", "load_config"]

ENV_PREFIX = "ENGINE_"

# top-level scalar fields an env var may override, e.g. ENGINE_LISTEN
_ENV_FIELDS = {
    "listen": str,
    "knowledge_dir": str,
    "schema_file": str,
    "database_dir": str,
    "database": str,
    "sessions_dir": str,
    "max_clarify_rounds": int,
    "max_steps": int,
    "row_cap": int,
}


class ConfigError(ValueError):
    """Carries every invalid field as ``path: problem`` lines."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {e}" for e in errors))
        self.errors = errors


@dataclass
class FeatureFlags:
    completion: bool = True
    clarification: bool = True


@dataclass
class EngineConfig:
    listen: str = "127.0.0.1:8080"
    knowledge_dir: str | None = None
    schema_file: str = ""
    database_dir: str = ""
    database: str = "main.sqlite"
    sessions_dir: str | None = None
    chat_provider: ProviderConfig | None = None
    embed_provider: ProviderConfig | None = None
    rerank_provider: ProviderConfig | None = None
    judge_provider: ProviderConfig | None = None
    one_step_provider: ProviderConfig | None = None
    scoring: ScoringParams = field(default_factory=ScoringParams)
    thresholds: StrategyThresholds = field(default_factory=StrategyThresholds)
    n_labeled: int = 0
    target_domain: DomainProfile | None = None
    source_domain: DomainProfile | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    max_clarify_rounds: int = 3
    max_steps: int = 8
    row_cap: int = 1000
    features: FeatureFlags = field(default_factory=FeatureFlags)
    fewshot_file: str | None = None

    @property
    def database_path(self) -> Path:
        return Path(self.database_dir) / self.database

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.partition(":")
        return host or "127.0.0.1", int(port or 8080)


def _provider_from(raw: dict | None, base_dir: Path, path: str, errors: list[str]) -> ProviderConfig | None:
    if raw is None:
        return None
    kind = raw.get("kind", "stub")
    try:
        if kind == "stub":
            script = StubScript()
            if "script" in raw and raw["script"]:
                script_path = base_dir / raw["script"]
                if not script_path.exists():
                    errors.append(f"{path}.script: file not found: {script_path}")
                else:
                    script = StubScript.load(script_path)
            return ProviderConfig(
                kind="stub",
                stub=script,
                dim=int(raw.get("dim", 256)),
                timeout_ms=int(raw.get("timeout_ms", 30_000)),
                retries=int(raw.get("retries", 0)),
            )
        return ProviderConfig(
            kind="http",
            endpoint=raw.get("endpoint", ""),
            model=raw.get("model", ""),
            auth_token=raw.get("auth_token", os.environ.get(f"{ENV_PREFIX}AUTH_TOKEN", "")),
            timeout_ms=int(raw.get("timeout_ms", 30_000)),
            retries=int(raw.get("retries", 0)),
            dim=int(raw.get("dim", 256)),
        )
    except (ValueError, json.JSONDecodeError) as exc:
        errors.append(f"{path}: {exc}")
        return None


def _domain_from(raw, base_dir: Path, path: str, errors: list[str]) -> DomainProfile | None:
    if raw is None:
        return None
    try:
        if isinstance(raw, str):  # a keyword file: JSON {"name": ..., "keywords": [...]}
            domain_path = base_dir / raw
            if not domain_path.exists():
                errors.append(f"{path}: file not found: {domain_path}")
                return None
            raw = json.loads(domain_path.read_text(encoding="utf-8"))
        return DomainProfile(name=raw.get("name", path), keywords=tuple(raw["keywords"]))
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(f"{path}: {exc}")
        return None


def load_config(path: str | Path, env: dict | None = None) -> EngineConfig:
    """Parse, apply env overrides, and validate; raises ConfigError listing
    every problem at once."""
    env = env if env is not None else dict(os.environ)
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])

    base_dir = path.parent
    errors: list[str] = []

    for name, cast in _ENV_FIELDS.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            try:
                raw[name] = cast(env[env_key])
            except ValueError:
                errors.append(f"{env_key}: cannot parse {env[env_key]!r} as {cast.__name__}")

    providers = raw.get("providers", {})
    chat = _provider_from(providers.get("chat"), base_dir, "providers.chat", errors)
    embed = _provider_from(providers.get("embed"), base_dir, "providers.embed", errors)
    rerank = _provider_from(providers.get("rerank"), base_dir, "providers.rerank", errors)
    judge = _provider_from(providers.get("judge"), base_dir, "providers.judge", errors)
    one_step = _provider_from(providers.get("one_step"), base_dir, "providers.one_step", errors)
    if chat is None:
        errors.append("providers.chat: required")

    def build(section: str, factory, path_label: str):
        try:
            return factory(**raw.get(section, {}))
        except (TypeError, ValueError) as exc:
            errors.append(f"{path_label}: {exc}")
            return factory()

    scoring = build("scoring", ScoringParams, "scoring")
    pipeline = build("pipeline", PipelineConfig, "pipeline")

    strategy_raw = dict(raw.get("strategy", {}))
    n_labeled = int(strategy_raw.pop("n_labeled", 0))
    target = _domain_from(strategy_raw.pop("target", None), base_dir, "strategy.target", errors)
    source = _domain_from(strategy_raw.pop("source", None), base_dir, "strategy.source", errors)
    try:
        thresholds = StrategyThresholds(**strategy_raw)
    except (TypeError, ValueError) as exc:
        errors.append(f"strategy: {exc}")
        thresholds = StrategyThresholds()

    features_raw = raw.get("features", {})
    features = FeatureFlags(
        completion=bool(features_raw.get("completion", True)),
        clarification=bool(features_raw.get("clarification", True)),
    )

    def resolve(name: str, required: bool) -> str:
        value = raw.get(name)
        if not value:
            if required:
                errors.append(f"{name}: required")
            return ""
        resolved = str(base_dir / value)
        if not Path(resolved).exists():
            errors.append(f"{name}: path does not exist: {resolved}")
        return resolved

    schema_file = resolve("schema_file", required=True)
    database_dir = resolve("database_dir", required=True)
    knowledge_dir = resolve("knowledge_dir", required=False) or None
    fewshot_file = resolve("fewshot_file", required=False) or None

    sessions_dir = raw.get("sessions_dir")
    if sessions_dir:
        sessions_dir = str(base_dir / sessions_dir)
        Path(sessions_dir).mkdir(parents=True, exist_ok=True)

    database = raw.get("database", "main.sqlite")
    if database_dir and not (Path(database_dir) / database).exists():
        errors.append(f"database: file does not exist: {Path(database_dir) / database}")

    try:
        max_clarify_rounds = int(raw.get("max_clarify_rounds", 3))
        max_steps = int(raw.get("max_steps", 8))
        row_cap = int(raw.get("row_cap", 1000))
        if max_clarify_rounds < 1 or max_steps < 1 or row_cap < 1:
            errors.append("max_clarify_rounds/max_steps/row_cap: must be >= 1")
    except ValueError as exc:
        errors.append(f"limits: {exc}")
        max_clarify_rounds, max_steps, row_cap = 3, 8, 1000

    if errors:
        raise ConfigError(errors)

    return EngineConfig(
        listen=raw.get("listen", "127.0.0.1:8080"),
        knowledge_dir=knowledge_dir,
        schema_file=schema_file,
        database_dir=database_dir,
        database=database,
        sessions_dir=sessions_dir,
        chat_provider=chat,
        embed_provider=embed or chat,
        rerank_provider=rerank or chat,
        judge_provider=judge or chat,
        one_step_provider=one_step,
        scoring=scoring,
        thresholds=thresholds,
        n_labeled=n_labeled,
        target_domain=target,
        source_domain=source,
        pipeline=pipeline,
        max_clarify_rounds=max_clarify_rounds,
        max_steps=max_steps,
        row_cap=row_cap,
        features=features,
        fewshot_file=fewshot_file,
    )

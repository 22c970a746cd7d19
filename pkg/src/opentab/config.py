"""Run configuration with flags > config file > environment > defaults."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .coder import PromptTemplates
from .llm import HttpChatProvider, Provider, TranscriptRecorder, TranscriptReplayer
from .orchestrator import (
    LexicalScorer,
    PipelineSettings,
    RemoteScorer,
    SimilarityScorer,
    Strategy,
)
from .sql_engine import ExecutionLimits

ENV_LLM_URL = "OPENTAB_LLM_URL"
ENV_LLM_KEY = "OPENTAB_LLM_KEY"
ENV_LLM_MODEL = "OPENTAB_LLM_MODEL"
ENV_SCORER_URL = "OPENTAB_SCORER_URL"

PROVIDER_MODES = ("live", "record", "replay-strict")
SCORER_MODES = ("lexical", "remote")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    index: str | None = None
    strategy: str = "grsr"
    k: int = 10
    k_rows: int = 3
    k1: float = 1.5
    b: float = 0.75
    index_fields: str = "full"
    timeout_s: float = 10.0
    max_result_rows: int = 200
    provider: str = "live"
    llm_url: str | None = None
    llm_key: str | None = None
    llm_model: str = "gpt-3.5-turbo"
    transcript: str | None = None
    scorer: str = "lexical"
    scorer_url: str | None = None
    templates_dir: str | None = None
    trace_out: str | None = None
    report_out: str | None = None
    sample: int | None = None
    seed: int = 42
    jobs: int = 1
    char_budget: int = 16000
    temperature: float = 0.0
    max_output_tokens: int = 512
    fallback_rows: bool = False

    _ENV_FIELDS = {
        "llm_url": ENV_LLM_URL,
        "llm_key": ENV_LLM_KEY,
        "llm_model": ENV_LLM_MODEL,
        "scorer_url": ENV_SCORER_URL,
    }

    @classmethod
    def resolve(
        cls,
        flags: dict | None = None,
        config_file: str | None = None,
        require_provider: bool = True,
    ) -> "RunConfig":
        """Layer sources by precedence: flags > config file > env > defaults."""
        values: dict = {}
        for fname, env in cls._ENV_FIELDS.items():
            if os.environ.get(env):
                values[fname] = os.environ[env]
        if config_file:
            try:
                loaded = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
            known = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
            unknown = set(loaded) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            values.update(loaded)
        for key, value in (flags or {}).items():
            if value is not None:
                values[key] = value
        config = cls(**values)
        config.validate(require_provider)
        return config

    def validate(self, require_provider: bool = True) -> None:
        if self.provider not in PROVIDER_MODES:
            raise ConfigError(f"provider must be one of {PROVIDER_MODES}")
        if self.scorer not in SCORER_MODES:
            raise ConfigError(f"scorer must be one of {SCORER_MODES}")
        if self.scorer == "remote" and not self.scorer_url:
            raise ConfigError(f"remote scorer requires a URL ({ENV_SCORER_URL})")
        if not require_provider:
            return
        if self.provider == "replay-strict" and not self.transcript:
            raise ConfigError("replay-strict provider requires --transcript")
        if self.provider in ("live", "record") and not self.llm_url:
            raise ConfigError(f"{self.provider} provider requires an endpoint URL ({ENV_LLM_URL})")
        if self.provider == "record" and not self.transcript:
            raise ConfigError("record provider requires --transcript")

    def echo(self) -> dict:
        """Embeddable resolved config; the API key is redacted."""
        data = dataclasses.asdict(self)
        if data.get("llm_key"):
            data["llm_key"] = "***"
        return data

    # -- component factories -------------------------------------------------

    def make_provider(self) -> Provider:
        if self.provider == "replay-strict":
            return TranscriptReplayer(self.transcript)
        live = HttpChatProvider(self.llm_url, api_key=self.llm_key or "")
        if self.provider == "record":
            return TranscriptRecorder(live, self.transcript)
        return live

    def make_scorer(self) -> SimilarityScorer:
        if self.scorer == "remote":
            return RemoteScorer(self.scorer_url)
        return LexicalScorer()

    def make_templates(self) -> PromptTemplates:
        if self.templates_dir:
            return PromptTemplates.load_dir(self.templates_dir)
        return PromptTemplates.load_default()

    def make_settings(self) -> PipelineSettings:
        return PipelineSettings(
            k_rows=self.k_rows,
            limits=ExecutionLimits(self.timeout_s, self.max_result_rows),
            char_budget=self.char_budget,
            model_name=self.llm_model,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            fallback_rows=self.fallback_rows,
        )

    def make_strategy(self) -> Strategy:
        return Strategy(self.strategy, self.k)

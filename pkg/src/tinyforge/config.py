"""TOML configuration: one canonical file, env vars only for secrets."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .executor import ArduinoCliAdapter, MockToolchainAdapter, ToolchainAdapter
from .gateway import (
    CodeKind,
    CostModel,
    LiveProvider,
    LLMProvider,
    ScriptedProvider,
    StochasticProvider,
)
from .pipeline import RetryPolicy
from .prompts import TemplateRegistry, default_registry
from .stages import LifecycleStage, QuantizationTarget, StageInput

DEFAULT_CONFIG_NAME = "tinyforge.toml"
API_KEY_ENV = "TINYFORGE_API_KEY"

PROVIDER_KINDS = ("live", "scripted", "stochastic")


@dataclass
class ProviderConfig:
    kind: str
    endpoint: str | None = None
    model_name: str = "gpt-4o"
    fixtures: dict[LifecycleStage, Path] = field(default_factory=dict)
    seed: int = 0
    success_probability: dict[LifecycleStage, float] = field(default_factory=dict)


@dataclass
class ToolchainConfig:
    adapter: str = "mock"
    binary: str = "arduino-cli"
    board_id: str | None = None
    port: str | None = None
    deploy: bool = False


@dataclass
class Config:
    base_dir: Path
    provider: ProviderConfig
    cost_model: CostModel
    retry: RetryPolicy
    toolchain: ToolchainConfig
    workspace_root: Path
    trace_path: Path
    template_overrides: dict[LifecycleStage, Path] = field(default_factory=dict)
    stage_inputs: dict[LifecycleStage, StageInput] = field(default_factory=dict)
    interpreter: str = "python3"

    @classmethod
    def load(cls, path: Path) -> "Config":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base = path.parent.resolve()

        provider = _parse_provider(data.get("provider", {}), base)
        cost = data.get("cost_model", {})
        cost_model = CostModel.from_floats(
            cost.get("input_price_per_token", 0.0),
            cost.get("output_price_per_token", 0.0),
        )
        retry_section = data.get("retry", {})
        retry = RetryPolicy(
            max_attempts=int(retry_section.get("max_attempts", 5)),
            per_execution_timeout=float(retry_section.get("per_execution_timeout", 300.0)),
        )
        toolchain_section = data.get("toolchain", {})
        toolchain = ToolchainConfig(
            adapter=toolchain_section.get("adapter", "mock"),
            binary=toolchain_section.get("binary", "arduino-cli"),
            board_id=toolchain_section.get("board_id"),
            port=toolchain_section.get("port"),
            deploy=bool(toolchain_section.get("deploy", False)),
        )
        if toolchain.adapter not in ("mock", "arduino-cli"):
            raise ConfigError(f"unknown toolchain adapter: {toolchain.adapter}")

        overrides: dict[LifecycleStage, Path] = {}
        for token, rel in data.get("templates", {}).items():
            stage = _stage(token)
            p = base / rel
            if not p.exists():
                raise ConfigError(f"template file not found: {p}")
            overrides[stage] = p

        stage_inputs = {
            _stage(token): _parse_stage_input(_stage(token), section, base)
            for token, section in data.get("stage_input", {}).items()
        }

        return cls(
            base_dir=base,
            provider=provider,
            cost_model=cost_model,
            retry=retry,
            toolchain=toolchain,
            workspace_root=base / data.get("workspace_root", "runs"),
            trace_path=base / data.get("trace_path", "traces/events.log"),
            template_overrides=overrides,
            stage_inputs=stage_inputs,
            interpreter=data.get("interpreter", "python3"),
        )

    def build_registry(self) -> TemplateRegistry:
        return default_registry(self.template_overrides)

    def build_toolchain(self) -> ToolchainAdapter:
        if self.toolchain.adapter == "arduino-cli":
            return ArduinoCliAdapter(self.toolchain.binary)
        return MockToolchainAdapter()

    def build_provider(self, stage: LifecycleStage, seed_offset: int = 0) -> LLMProvider:
        """A fresh provider instance for one stage of one run."""
        p = self.provider
        if p.kind == "scripted":
            try:
                fixture = p.fixtures[stage]
            except KeyError:
                raise ConfigError(f"no scripted fixture for stage {stage.value}") from None
            return ScriptedProvider.from_file(fixture)
        if p.kind == "stochastic":
            code_kind = (
                CodeKind.BOARD_SKETCH
                if stage is LifecycleStage.SKETCH_GENERATION
                else CodeKind.INTERPRETER_SCRIPT
            )
            return StochasticProvider(
                seed=p.seed + seed_offset,
                success_probability=p.success_probability.get(stage, 0.8),
                code_kind=code_kind,
            )
        if p.kind == "live":
            api_key = os.environ.get(API_KEY_ENV)
            if not api_key:
                raise ConfigError(f"live provider requires {API_KEY_ENV} in the environment")
            if not p.endpoint:
                raise ConfigError("live provider requires provider.endpoint")
            return LiveProvider(endpoint=p.endpoint, api_key=api_key, model_name=p.model_name)
        raise ConfigError(f"unknown provider kind: {p.kind}")

    def build_providers(self, seed_offset: int = 0) -> dict[LifecycleStage, LLMProvider]:
        return {stage: self.build_provider(stage, seed_offset) for stage in LifecycleStage}


def _stage(token: str) -> LifecycleStage:
    try:
        return LifecycleStage.from_token(token)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_provider(section: dict, base: Path) -> ProviderConfig:
    kind = section.get("kind")
    if kind not in PROVIDER_KINDS:
        raise ConfigError(
            f"provider.kind must be one of {PROVIDER_KINDS}, got {kind!r}"
        )
    fixtures: dict[LifecycleStage, Path] = {}
    for token, rel in section.get("fixtures", {}).items():
        p = base / rel
        if not p.exists():
            raise ConfigError(f"fixture file not found: {p}")
        fixtures[_stage(token)] = p
    probabilities = {
        _stage(token): float(v)
        for token, v in section.get("success_probability", {}).items()
    }
    return ProviderConfig(
        kind=kind,
        endpoint=section.get("endpoint"),
        model_name=section.get("model_name", "gpt-4o"),
        fixtures=fixtures,
        seed=int(section.get("seed", 0)),
        success_probability=probabilities,
    )


_PATH_FIELDS = {
    "dataset_locator",
    "model_locator",
    "representative_data_locator",
    "converted_model_locator",
}


def _parse_stage_input(stage: LifecycleStage, section: dict, base: Path) -> StageInput:
    kwargs: dict = {"stage": stage}
    for key, value in section.items():
        if key == "quantization_target":
            try:
                kwargs[key] = QuantizationTarget(value)
            except ValueError:
                raise ConfigError(f"unsupported quantization target: {value}") from None
        elif key in _PATH_FIELDS:
            kwargs[key] = base / value
        else:
            kwargs[key] = value
    try:
        return StageInput(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad stage_input.{stage.value}: {exc}") from exc

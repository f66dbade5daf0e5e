"""TinyForge: LLM-driven automation of TinyML lifecycle stages."""

from .gateway import (
    CodeArtifact,
    CodeKind,
    CostModel,
    LLMProvider,
    LLMRequest,
    LLMResponse,
    ScriptedProvider,
    StochasticProvider,
    estimate_tokens,
    extract_code,
    price,
)
from .pipeline import (
    Attempt,
    AttemptOutcome,
    PipelineRun,
    RetryPolicy,
    StageOutcome,
    StageResult,
    StageRunner,
    chain_artifact,
)
from .prompts import PromptTemplate, TemplateRegistry, default_registry, render_prompt
from .stages import LifecycleStage, StageInput, validate_stage_input
from .trace import TraceEvent, TraceStore, verify_trace

__version__ = "0.1.0"

__all__ = [
    "Attempt",
    "AttemptOutcome",
    "CodeArtifact",
    "CodeKind",
    "CostModel",
    "LLMProvider",
    "LLMRequest",
    "LLMResponse",
    "LifecycleStage",
    "PipelineRun",
    "PromptTemplate",
    "RetryPolicy",
    "ScriptedProvider",
    "StageInput",
    "StageOutcome",
    "StageResult",
    "StageRunner",
    "StochasticProvider",
    "TemplateRegistry",
    "TraceEvent",
    "TraceStore",
    "chain_artifact",
    "default_registry",
    "estimate_tokens",
    "extract_code",
    "price",
    "render_prompt",
    "validate_stage_input",
    "verify_trace",
]

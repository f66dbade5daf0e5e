"""The per-stage generate-execute-retry state machine and the three-stage chain.

Each stage run loops: render prompt (folding in the previous attempt's error
excerpt), invoke the provider, extract code, execute it locally. The loop
stops at the first success or when the attempt cap is reached; every attempt
is traced. A full pipeline run chains stage artifacts forward and halts at
the first stage failure.
"""

from __future__ import annotations

import enum
import hashlib
import random
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

from . import executor as ex
from .errors import (
    IncompatibleStagePair,
    MissingField,
    NoCode,
    NotAFailure,
    PreviousStageFailed,
    ProviderError,
    StoreUnwritable,
)
from .gateway import CodeKind, LLMProvider, LLMRequest, LLMResponse, extract_code
from .prompts import TemplateRegistry, render_prompt
from .stages import PIPELINE_ORDER, LifecycleStage, StageInput, validate_stage_input
from .trace import EventKind, TraceEvent, TraceStore


@dataclass(frozen=True)
class RetryPolicy:
    """Attempt cap counts total LLM invocations for the stage, first included."""

    max_attempts: int = 5
    per_execution_timeout: float = 300.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.per_execution_timeout <= 0:
            raise ValueError("per_execution_timeout must be positive")


class AttemptOutcome(enum.Enum):
    SUCCESS = "success"
    EXECUTION_FAILURE = "execution_failure"
    LLM_FAILURE = "llm_failure"
    NO_CODE = "no_code"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Attempt:
    index: int
    prompt_tokens: int
    completion_tokens: int
    started_at: datetime
    ended_at: datetime
    outcome: AttemptOutcome
    error_excerpt: str | None = None
    prompt_hash: str | None = None

    def __post_init__(self) -> None:
        has_error = self.error_excerpt is not None
        if (self.outcome is AttemptOutcome.SUCCESS) == has_error:
            raise ValueError("error_excerpt present iff the attempt failed")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class StageOutcome(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class StageResult:
    stage: LifecycleStage
    attempts: tuple[Attempt, ...]
    outcome: StageOutcome
    artifact_locator: Path | None
    total_duration: float
    total_tokens: int


@dataclass(frozen=True)
class PipelineRun:
    run_id: str
    stage_results: tuple[StageResult, ...]
    halted_at: LifecycleStage | None = None


class Clock:
    def now(self) -> datetime:
        raise NotImplementedError


class WallClock(Clock):
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class SimulatedClock(Clock):
    """Deterministic clock for reproducible benches.

    Each reading advances by a seeded whole-millisecond step, so durations
    and timestamps are a pure function of the seed and call count,
    independent of real scheduling.
    """

    EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)

    def __init__(self, seed: int, start_offset: float = 0.0):
        self._rng = random.Random(f"clock:{seed}")
        self._now = self.EPOCH + timedelta(seconds=start_offset)

    def now(self) -> datetime:
        self._now += timedelta(milliseconds=self._rng.randrange(200, 5000))
        return self._now


def chain_artifact(prev: StageResult, next_input: StageInput) -> StageInput:
    """Feed a finished stage's artifact into the next stage's input."""
    if prev.outcome is not StageOutcome.SUCCESS:
        raise PreviousStageFailed(f"{prev.stage.value} did not succeed")
    pair = (prev.stage, next_input.stage)
    if pair == (LifecycleStage.DATA_PROCESSING, LifecycleStage.MODEL_CONVERSION):
        return replace(next_input, representative_data_locator=prev.artifact_locator)
    if pair == (LifecycleStage.MODEL_CONVERSION, LifecycleStage.SKETCH_GENERATION):
        return replace(next_input, converted_model_locator=prev.artifact_locator)
    raise IncompatibleStagePair(
        f"cannot chain {prev.stage.value} result into {next_input.stage.value} input"
    )


def _prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _check_script_artifact(
    stage: LifecycleStage, attempt_dir: Path
) -> tuple[Path | None, str | None]:
    """Post-execution artifact check for the interpreter stages.

    Returns (artifact_locator, failure_reason); exactly one is set.
    """
    artifacts = attempt_dir / "artifacts"
    files = sorted(p for p in artifacts.glob("**/*") if p.is_file()) if artifacts.is_dir() else []
    if stage is LifecycleStage.DATA_PROCESSING:
        if files:
            return artifacts, None
        return None, "script exited 0 but wrote no files under artifacts/"
    # model conversion: a non-empty model file must exist
    models = [p for p in files if p.suffix == ".tflite"] or files
    nonzero = [p for p in models if p.stat().st_size > 0]
    if nonzero:
        return nonzero[0], None
    return None, "script exited 0 but produced no non-empty model file under artifacts/"


@dataclass
class StageRunner:
    """Wires the stage state machine to its collaborators.

    Providers are per-stage because scripted fixtures are per-stage files;
    the trace store is the only shared sink.
    """

    registry: TemplateRegistry
    providers: dict[LifecycleStage, LLMProvider]
    tracer: TraceStore
    workspace_root: Path
    toolchain: ex.ToolchainAdapter = field(default_factory=ex.MockToolchainAdapter)
    interpreter: str = "python3"
    clock: Clock = field(default_factory=WallClock)
    deploy: bool = False
    port: str | None = None

    def run_stage(
        self, run_id: str, stage_input: StageInput, policy: RetryPolicy
    ) -> StageResult:
        stage = stage_input.stage
        template = self.registry.get(stage)
        provider = self.providers[stage]
        stage_dir = Path(self.workspace_root) / run_id / stage.value
        try:
            stage_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreUnwritable(f"cannot create workspace {stage_dir}: {exc}") from exc

        attempts: list[Attempt] = []
        prior_error: str | None = None
        artifact_locator: Path | None = None
        stage_started: datetime | None = None

        for index in range(1, policy.max_attempts + 1):
            attempt_dir = stage_dir / f"attempt_{index}"
            attempt_dir.mkdir(parents=True, exist_ok=True)
            (attempt_dir / "artifacts").mkdir(exist_ok=True)

            rendered = render_prompt(template, stage_input, prior_error, index)
            (attempt_dir / "prompt.txt").write_text(rendered.text, encoding="utf-8")
            request = LLMRequest(messages=(("user", rendered.text),))

            started_at = self.clock.now()
            if stage_started is None:
                stage_started = started_at

            attempt, artifact_locator = self._run_attempt(
                stage_input, index, request, rendered.text, attempt_dir, policy, provider, started_at
            )
            attempts.append(attempt)
            self._trace_attempt(run_id, stage, attempt, artifact_locator)
            if attempt.outcome is AttemptOutcome.SUCCESS:
                break
            prior_error = attempt.error_excerpt

        outcome = (
            StageOutcome.SUCCESS
            if attempts[-1].outcome is AttemptOutcome.SUCCESS
            else StageOutcome.FAILURE
        )
        stage_ended = attempts[-1].ended_at
        assert stage_started is not None
        result = StageResult(
            stage=stage,
            attempts=tuple(attempts),
            outcome=outcome,
            artifact_locator=artifact_locator if outcome is StageOutcome.SUCCESS else None,
            total_duration=(stage_ended - stage_started).total_seconds(),
            total_tokens=sum(a.total_tokens for a in attempts),
        )
        self._trace_stage_result(run_id, result, stage_started, stage_ended)
        if outcome is StageOutcome.FAILURE:
            self._trace_review_request(run_id, result, stage_ended)
        return result

    def _run_attempt(
        self,
        stage_input: StageInput,
        index: int,
        request: LLMRequest,
        prompt_text: str,
        attempt_dir: Path,
        policy: RetryPolicy,
        provider: LLMProvider,
        started_at: datetime,
    ) -> tuple[Attempt, Path | None]:
        def finish(
            outcome: AttemptOutcome,
            error: str | None,
            response: LLMResponse | None,
            artifact: Path | None = None,
        ) -> tuple[Attempt, Path | None]:
            return (
                Attempt(
                    index=index,
                    prompt_tokens=response.prompt_tokens if response else 0,
                    completion_tokens=response.completion_tokens if response else 0,
                    started_at=started_at,
                    ended_at=self.clock.now(),
                    outcome=outcome,
                    error_excerpt=error,
                    prompt_hash=_prompt_hash(prompt_text),
                ),
                artifact,
            )

        stage = stage_input.stage
        try:
            response = provider.complete(request)
        except ProviderError as exc:
            return finish(AttemptOutcome.LLM_FAILURE, f"LLM call failed: {exc}", None)
        (attempt_dir / "response.txt").write_text(response.content, encoding="utf-8")

        expected_kind = (
            CodeKind.BOARD_SKETCH
            if stage is LifecycleStage.SKETCH_GENERATION
            else CodeKind.INTERPRETER_SCRIPT
        )
        try:
            artifact_code = extract_code(response, expected_kind)
        except NoCode as exc:
            return finish(AttemptOutcome.NO_CODE, f"no usable code in response: {exc}", response)

        if stage is LifecycleStage.SKETCH_GENERATION:
            outcome, artifact = self._execute_sketch(
                artifact_code.code, attempt_dir, policy, stage_input.board_id
            )
        else:
            outcome, artifact = self._execute_script(stage, artifact_code.code, attempt_dir, policy)

        if outcome is not None:
            kind = (
                AttemptOutcome.TIMEOUT
                if outcome.origin is ex.ExcerptOrigin.TIMEOUT
                else AttemptOutcome.EXECUTION_FAILURE
            )
            return finish(kind, outcome.text, response)
        return finish(AttemptOutcome.SUCCESS, None, response, artifact)

    def _execute_script(
        self, stage: LifecycleStage, code: str, attempt_dir: Path, policy: RetryPolicy
    ) -> tuple[ex.ErrorExcerpt | None, Path | None]:
        """Returns (failure_excerpt, artifact); excerpt None means success."""
        script = attempt_dir / "script.py"
        script.write_text(code, encoding="utf-8")
        spec = ex.ExecutionSpec(
            kind=ex.ExecutionKind.INTERPRETER_SCRIPT,
            code_or_binary_path=script,
            workspace=attempt_dir,
            timeout=policy.per_execution_timeout,
        )
        outcome = ex.execute_script(spec, interpreter=self.interpreter)
        (attempt_dir / "stdout.txt").write_text(outcome.stdout, encoding="utf-8")
        (attempt_dir / "stderr.txt").write_text(outcome.stderr, encoding="utf-8")
        if not outcome.succeeded:
            return ex.summarize_error(outcome), None
        artifact, reason = _check_script_artifact(stage, attempt_dir)
        if artifact is None:
            assert reason is not None
            return ex.ErrorExcerpt(text=reason, origin=ex.ExcerptOrigin.EXIT_ONLY), None
        return None, artifact

    def _execute_sketch(
        self, code: str, attempt_dir: Path, policy: RetryPolicy, board_id: str | None
    ) -> tuple[ex.ErrorExcerpt | None, Path | None]:
        sketch_dir = attempt_dir / "sketch"
        sketch_dir.mkdir(exist_ok=True)
        source = sketch_dir / "sketch.ino"
        source.write_text(code, encoding="utf-8")
        board_id = board_id or "arduino:mbed_nano:nano33ble"
        spec = ex.ExecutionSpec(
            kind=ex.ExecutionKind.TOOLCHAIN_COMPILE,
            code_or_binary_path=sketch_dir,
            workspace=attempt_dir,
            board_id=board_id,
            timeout=policy.per_execution_timeout,
        )
        outcome = ex.compile_sketch(spec, self.toolchain)
        (attempt_dir / "stdout.txt").write_text(outcome.stdout, encoding="utf-8")
        (attempt_dir / "stderr.txt").write_text(outcome.stderr, encoding="utf-8")
        if not outcome.succeeded:
            return ex.summarize_error(outcome), None
        binaries = sorted(sketch_dir.glob("*.bin")) or [source]
        if self.deploy and self.port:
            upload_spec = ex.ExecutionSpec(
                kind=ex.ExecutionKind.TOOLCHAIN_UPLOAD,
                code_or_binary_path=binaries[0],
                workspace=attempt_dir,
                board_id=board_id,
                port=self.port,
                timeout=policy.per_execution_timeout,
            )
            upload = ex.upload_binary(upload_spec, self.toolchain)
            if not upload.succeeded:
                return ex.summarize_error(upload), None
        return None, binaries[0]

    # --- trace emission ---

    def _trace_attempt(
        self, run_id: str, stage: LifecycleStage, attempt: Attempt, artifact: Path | None
    ) -> None:
        self.tracer.append_event(
            TraceEvent(
                run_id=run_id,
                stage=stage.value,
                attempt_index=attempt.index,
                kind=EventKind.ATTEMPT,
                ts_start=attempt.started_at,
                ts_end=attempt.ended_at,
                prompt_tokens=attempt.prompt_tokens,
                completion_tokens=attempt.completion_tokens,
                outcome=attempt.outcome.value,
                error_excerpt=attempt.error_excerpt,
                artifact_locator=str(artifact) if artifact else None,
                prompt_hash=attempt.prompt_hash,
            )
        )

    def _trace_stage_result(
        self, run_id: str, result: StageResult, started: datetime, ended: datetime
    ) -> None:
        self.tracer.append_event(
            TraceEvent(
                run_id=run_id,
                stage=result.stage.value,
                attempt_index=len(result.attempts),
                kind=EventKind.STAGE_RESULT,
                ts_start=started,
                ts_end=ended,
                prompt_tokens=sum(a.prompt_tokens for a in result.attempts),
                completion_tokens=sum(a.completion_tokens for a in result.attempts),
                outcome=result.outcome.value,
                error_excerpt=result.attempts[-1].error_excerpt,
                artifact_locator=str(result.artifact_locator) if result.artifact_locator else None,
                prompt_hash=result.attempts[-1].prompt_hash,
            )
        )

    def _trace_review_request(
        self, run_id: str, result: StageResult, ended: datetime
    ) -> None:
        self.tracer.append_event(
            TraceEvent(
                run_id=run_id,
                stage=result.stage.value,
                attempt_index=len(result.attempts),
                kind=EventKind.REVIEW_REQUESTED,
                ts_start=ended,
                ts_end=ended,
                prompt_tokens=0,
                completion_tokens=0,
                outcome="human_review",
                error_excerpt=result.attempts[-1].error_excerpt,
            )
        )

    def run_pipeline(
        self,
        inputs: dict[LifecycleStage, StageInput],
        policy: RetryPolicy,
        run_id: str | None = None,
    ) -> PipelineRun:
        """Execute all three stages in order, chaining artifacts forward."""
        missing = [s.value for s in PIPELINE_ORDER if s not in inputs]
        if missing:
            raise MissingField(f"stage inputs for: {', '.join(missing)}")
        run_id = run_id or f"run-{uuid.uuid4().hex[:12]}"

        results: list[StageResult] = []
        halted_at: LifecycleStage | None = None
        prev: StageResult | None = None
        for stage in PIPELINE_ORDER:
            stage_input = inputs[stage]
            if prev is not None:
                stage_input = chain_artifact(prev, stage_input)
            stage_input = validate_stage_input(stage, stage_input)
            result = self.run_stage(run_id, stage_input, policy)
            results.append(result)
            if result.outcome is StageOutcome.FAILURE:
                halted_at = stage
                break
            prev = result
        return PipelineRun(run_id=run_id, stage_results=tuple(results), halted_at=halted_at)

import dataclasses
import random
import string

import pytest

from conftest import script_failure, script_success, scripted, sketch_failure, sketch_success
from tinyforge.errors import IncompatibleStagePair, MissingField, PreviousStageFailed
from tinyforge.pipeline import (
    AttemptOutcome,
    RetryPolicy,
    SimulatedClock,
    StageOutcome,
    StageResult,
    chain_artifact,
)
from tinyforge.stages import LifecycleStage
from tinyforge.trace import EventKind


class TestRetryLoop:
    def test_fail_fail_succeed(self, make_runner, dp_input):
        provider = scripted(
            script_failure("err one"), script_failure("err two"), script_success()
        )
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        result = runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=5))
        assert result.outcome is StageOutcome.SUCCESS
        assert len(result.attempts) == 3
        assert [a.outcome for a in result.attempts] == [
            AttemptOutcome.EXECUTION_FAILURE,
            AttemptOutcome.EXECUTION_FAILURE,
            AttemptOutcome.SUCCESS,
        ]

    def test_retry_cap_exhausted(self, make_runner, dp_input, tracer):
        provider = scripted(*[script_failure(f"err {i}") for i in range(5)])
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        result = runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=5))
        assert result.outcome is StageOutcome.FAILURE
        assert len(result.attempts) == 5
        attempt_events = [
            e for e in tracer.load_run("r1") if e.kind is EventKind.ATTEMPT
        ]
        assert len(attempt_events) == 5

    def test_immediate_success(self, make_runner, dp_input):
        runner = make_runner({LifecycleStage.DATA_PROCESSING: scripted(script_success())})
        result = runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=5))
        assert result.outcome is StageOutcome.SUCCESS
        assert len(result.attempts) == 1

    def test_error_excerpt_fed_into_next_prompt(self, make_runner, dp_input):
        provider = scripted(script_failure("very specific diagnostic"), script_success())
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        runner.run_stage("r1", dp_input, RetryPolicy())
        first, second = provider.requests
        assert "very specific diagnostic" not in first.user_text
        assert second.user_text.count("very specific diagnostic") == 1

    def test_total_tokens_include_failed_attempts(self, make_runner, dp_input):
        provider = scripted(
            script_failure("e", prompt_tokens=10, completion_tokens=1),
            script_success(prompt_tokens=20, completion_tokens=2),
        )
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        result = runner.run_stage("r1", dp_input, RetryPolicy())
        assert result.total_tokens == 33

    def test_provider_fault_is_an_attempt_not_an_exception(self, make_runner, dp_input):
        runner = make_runner({LifecycleStage.DATA_PROCESSING: scripted()})
        result = runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=2))
        assert result.outcome is StageOutcome.FAILURE
        assert all(a.outcome is AttemptOutcome.LLM_FAILURE for a in result.attempts)

    def test_fenceless_prose_fails_at_execution(self, make_runner, dp_input):
        from tinyforge.gateway import FixtureEntry

        provider = scripted(FixtureEntry("I would suggest cleaning the data.", 5, 5))
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        result = runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=1))
        assert result.attempts[0].outcome is AttemptOutcome.EXECUTION_FAILURE

    def test_review_requested_on_exhaustion(self, make_runner, dp_input, tracer):
        provider = scripted(*[script_failure("x") for _ in range(2)])
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        runner.run_stage("r1", dp_input, RetryPolicy(max_attempts=2))
        kinds = [e.kind for e in tracer.load_run("r1")]
        assert kinds.count(EventKind.REVIEW_REQUESTED) == 1

    def test_no_review_event_on_success(self, make_runner, dp_input, tracer):
        runner = make_runner({LifecycleStage.DATA_PROCESSING: scripted(script_success())})
        runner.run_stage("r1", dp_input, RetryPolicy())
        kinds = [e.kind for e in tracer.load_run("r1")]
        assert EventKind.REVIEW_REQUESTED not in kinds

    def test_deterministic_replay(self, tmp_path, registry, dp_input):
        from tinyforge.pipeline import StageRunner
        from tinyforge.trace import TraceStore

        def run(tag):
            runner = StageRunner(
                registry=registry,
                providers={
                    LifecycleStage.DATA_PROCESSING: scripted(
                        script_failure("boom"), script_success()
                    )
                },
                tracer=TraceStore(tmp_path / tag / "events.log"),
                workspace_root=tmp_path / tag / "runs",
            )
            return runner.run_stage("r1", dp_input, RetryPolicy())

        a, b = run("a"), run("b")
        assert [x.outcome for x in a.attempts] == [x.outcome for x in b.attempts]
        assert [x.total_tokens for x in a.attempts] == [x.total_tokens for x in b.attempts]

    def test_sketch_stage_uses_toolchain(self, make_runner, sg_input):
        provider = scripted(sketch_failure("no such header"), sketch_success())
        runner = make_runner({LifecycleStage.SKETCH_GENERATION: provider})
        result = runner.run_stage("r1", sg_input, RetryPolicy())
        assert result.outcome is StageOutcome.SUCCESS
        assert len(result.attempts) == 2
        assert result.attempts[0].error_excerpt == "no such header"
        assert result.artifact_locator is not None
        assert result.artifact_locator.suffix == ".bin"

    def test_workspace_layout(self, make_runner, dp_input, tmp_path):
        provider = scripted(script_failure("x"), script_success())
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        runner.run_stage("r1", dp_input, RetryPolicy())
        stage_dir = tmp_path / "runs" / "r1" / "dp"
        for k in (1, 2):
            attempt_dir = stage_dir / f"attempt_{k}"
            assert (attempt_dir / "prompt.txt").exists()
            assert (attempt_dir / "response.txt").exists()
            assert (attempt_dir / "script.py").exists()
            assert (attempt_dir / "stdout.txt").exists()
            assert (attempt_dir / "stderr.txt").exists()
        assert (stage_dir / "attempt_2" / "artifacts").is_dir()


class TestAttemptInvariants:
    @pytest.mark.parametrize("n_failures", [0, 1, 3])
    def test_attempt_count_bounds_and_no_attempt_after_success(
        self, make_runner, dp_input, n_failures
    ):
        policy = RetryPolicy(max_attempts=5)
        entries = [script_failure(f"e{i}") for i in range(n_failures)] + [script_success()]
        provider = scripted(*entries)
        runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
        result = runner.run_stage("r1", dp_input, policy)
        assert 1 <= len(result.attempts) <= policy.max_attempts
        assert result.attempts[-1].outcome is AttemptOutcome.SUCCESS
        assert all(
            a.outcome is not AttemptOutcome.SUCCESS for a in result.attempts[:-1]
        )
        assert provider.calls == len(result.attempts)

    def test_randomized_error_feedback_verbatim(self, make_runner, dp_input):
        # error strings with shell-ish and unicode noise must survive verbatim
        rng = random.Random(12345)
        alphabet = string.printable.replace("{", "").replace("}", "") + "äöü"
        for trial in range(20):
            token = f"ERR-{trial}-" + "".join(rng.choice(alphabet) for _ in range(40))
            provider = scripted(script_failure(token), script_success())
            runner = make_runner({LifecycleStage.DATA_PROCESSING: provider})
            runner.run_stage(f"rand-{trial}", dp_input, RetryPolicy())
            assert provider.requests[1].user_text.count(token) == 1


class TestChaining:
    def make_result(self, stage, outcome=StageOutcome.SUCCESS, artifact=None):
        from datetime import datetime, timezone

        from tinyforge.pipeline import Attempt

        attempt = Attempt(
            index=1,
            prompt_tokens=1,
            completion_tokens=1,
            started_at=datetime.now(timezone.utc),
            ended_at=datetime.now(timezone.utc),
            outcome=(
                AttemptOutcome.SUCCESS
                if outcome is StageOutcome.SUCCESS
                else AttemptOutcome.EXECUTION_FAILURE
            ),
            error_excerpt=None if outcome is StageOutcome.SUCCESS else "e",
        )
        return StageResult(
            stage=stage,
            attempts=(attempt,),
            outcome=outcome,
            artifact_locator=artifact,
            total_duration=1.0,
            total_tokens=2,
        )

    def test_dp_artifact_fills_mc_locator(self, mc_input, tmp_path):
        artifact = tmp_path / "processed"
        artifact.mkdir()
        prev = self.make_result(LifecycleStage.DATA_PROCESSING, artifact=artifact)
        chained = chain_artifact(prev, mc_input)
        assert chained.representative_data_locator == artifact
        assert chained.model_locator == mc_input.model_locator

    def test_mc_artifact_fills_sg_locator(self, sg_input, tmp_path):
        artifact = tmp_path / "model_q.tflite"
        artifact.write_bytes(b"\x00")
        prev = self.make_result(LifecycleStage.MODEL_CONVERSION, artifact=artifact)
        chained = chain_artifact(prev, sg_input)
        assert chained.converted_model_locator == artifact

    def test_failed_previous_stage(self, mc_input):
        prev = self.make_result(LifecycleStage.DATA_PROCESSING, outcome=StageOutcome.FAILURE)
        with pytest.raises(PreviousStageFailed):
            chain_artifact(prev, mc_input)

    def test_incompatible_pair(self, sg_input):
        prev = self.make_result(LifecycleStage.DATA_PROCESSING)
        with pytest.raises(IncompatibleStagePair):
            chain_artifact(prev, sg_input)


class TestPipeline:
    def providers_all_success(self):
        return {
            LifecycleStage.DATA_PROCESSING: scripted(script_success()),
            LifecycleStage.MODEL_CONVERSION: scripted(script_success()),
            LifecycleStage.SKETCH_GENERATION: scripted(sketch_success()),
        }

    def test_end_to_end_success(self, make_runner, dp_input, mc_input, sg_input):
        runner = make_runner(self.providers_all_success())
        run = runner.run_pipeline(
            {
                LifecycleStage.DATA_PROCESSING: dp_input,
                LifecycleStage.MODEL_CONVERSION: mc_input,
                LifecycleStage.SKETCH_GENERATION: sg_input,
            },
            RetryPolicy(),
        )
        assert run.halted_at is None
        assert len(run.stage_results) == 3
        assert all(r.outcome is StageOutcome.SUCCESS for r in run.stage_results)
        assert all(r.artifact_locator is not None for r in run.stage_results)

    def test_dp_failure_halts_pipeline(self, make_runner, dp_input, mc_input, sg_input):
        mc_provider = scripted(script_success())
        providers = {
            LifecycleStage.DATA_PROCESSING: scripted(
                *[script_failure("x") for _ in range(5)]
            ),
            LifecycleStage.MODEL_CONVERSION: mc_provider,
            LifecycleStage.SKETCH_GENERATION: scripted(sketch_success()),
        }
        runner = make_runner(providers)
        run = runner.run_pipeline(
            {
                LifecycleStage.DATA_PROCESSING: dp_input,
                LifecycleStage.MODEL_CONVERSION: mc_input,
                LifecycleStage.SKETCH_GENERATION: sg_input,
            },
            RetryPolicy(max_attempts=5),
        )
        assert run.halted_at is LifecycleStage.DATA_PROCESSING
        assert len(run.stage_results) == 1
        assert mc_provider.calls == 0

    def test_missing_stage_input_fails_before_llm_call(self, make_runner, dp_input, mc_input):
        providers = self.providers_all_success()
        runner = make_runner(providers)
        with pytest.raises(MissingField):
            runner.run_pipeline(
                {
                    LifecycleStage.DATA_PROCESSING: dp_input,
                    LifecycleStage.MODEL_CONVERSION: mc_input,
                },
                RetryPolicy(),
            )
        assert all(p.calls == 0 for p in providers.values())


class TestSimulatedClock:
    def test_deterministic_sequence(self):
        a = [SimulatedClock(7).now() for _ in range(5)]
        b = [SimulatedClock(7).now() for _ in range(5)]
        assert a == b
        assert a == sorted(a)

    def test_millisecond_precision(self):
        ts = SimulatedClock(7).now()
        assert ts.microsecond % 1000 == 0

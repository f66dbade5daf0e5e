"""Shared fixtures: stage inputs on disk, scripted responses, runner factory."""

from __future__ import annotations

import textwrap
from pathlib import Path

import pytest

from tinyforge.gateway import FixtureEntry, ScriptedProvider
from tinyforge.pipeline import StageRunner
from tinyforge.prompts import default_registry
from tinyforge.stages import LifecycleStage, QuantizationTarget, StageInput
from tinyforge.trace import TraceStore

SUCCESS_SCRIPT = textwrap.dedent(
    """\
    from pathlib import Path

    out = Path("artifacts")
    out.mkdir(exist_ok=True)
    (out / "model.tflite").write_bytes(b"\\x00" * 32)
    (out / "processed.csv").write_text("r,g,b,label\\n0.1,0.2,0.3,apple\\n")
    """
)


def script_success(prompt_tokens: int = 100, completion_tokens: int = 50) -> FixtureEntry:
    return FixtureEntry(
        content=f"```python\n{SUCCESS_SCRIPT}```",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


def script_failure(
    message: str = "simulated failure", prompt_tokens: int = 100, completion_tokens: int = 50
) -> FixtureEntry:
    code = (
        "import sys\n"
        f"sys.stderr.write({message!r})\n"
        "sys.exit(1)\n"
    )
    return FixtureEntry(
        content=f"```python\n{code}```",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


def sketch_success(prompt_tokens: int = 200, completion_tokens: int = 80) -> FixtureEntry:
    code = "void setup() {\n}\n\nvoid loop() {\n}\n"
    return FixtureEntry(
        content=f"```cpp\n{code}```",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


def sketch_failure(
    message: str = "undefined reference to `setup'",
    prompt_tokens: int = 200,
    completion_tokens: int = 80,
) -> FixtureEntry:
    code = f"// FORCE_COMPILE_ERROR: {message}\nvoid loop() {{\n}}\n"
    return FixtureEntry(
        content=f"```cpp\n{code}```",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


@pytest.fixture
def registry():
    return default_registry()


@pytest.fixture
def dp_input(tmp_path) -> StageInput:
    dataset = tmp_path / "data" / "raw"
    dataset.mkdir(parents=True)
    (dataset / "samples.csv").write_text("r,g,b,label\n255,0,0,apple\n")
    return StageInput(
        stage=LifecycleStage.DATA_PROCESSING,
        dataset_locator=dataset,
        dataset_description="RGB color readings of fruit, one row per sample",
        model_purpose="classify fruit type from color",
    )


@pytest.fixture
def mc_input(tmp_path) -> StageInput:
    model = tmp_path / "model.h5"
    model.write_bytes(b"\x89HDF")
    rep = tmp_path / "data" / "rep"
    rep.mkdir(parents=True)
    (rep / "rep.csv").write_text("0.1,0.2,0.3\n")
    return StageInput(
        stage=LifecycleStage.MODEL_CONVERSION,
        model_locator=model,
        dataset_overview="float32 triples in [0,1], 300 rows",
        quantization_target=QuantizationTarget.INT8,
        representative_data_locator=rep,
    )


@pytest.fixture
def sg_input(tmp_path) -> StageInput:
    model = tmp_path / "model.tflite"
    model.write_bytes(b"\x00" * 16)
    return StageInput(
        stage=LifecycleStage.SKETCH_GENERATION,
        converted_model_locator=model,
        board_id="arduino:mbed_nano:nano33ble",
        application_description="on-device fruit classification",
        peripheral_description="built-in RGB color sensor",
    )


@pytest.fixture
def tracer(tmp_path) -> TraceStore:
    return TraceStore(tmp_path / "traces" / "events.log")


@pytest.fixture
def make_runner(tmp_path, registry, tracer):
    def _make(providers: dict, **overrides) -> StageRunner:
        kwargs = dict(
            registry=registry,
            providers=providers,
            tracer=tracer,
            workspace_root=tmp_path / "runs",
        )
        kwargs.update(overrides)
        return StageRunner(**kwargs)

    return _make


def scripted(*entries: FixtureEntry) -> ScriptedProvider:
    return ScriptedProvider(list(entries))


def write_fixture_file(path: Path, entries: list[FixtureEntry]) -> Path:
    import json

    payload = [
        {
            "content": e.content,
            "prompt_tokens": e.prompt_tokens,
            "completion_tokens": e.completion_tokens,
        }
        for e in entries
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
    return path


def build_config(
    base: Path,
    provider_kind: str = "scripted",
    dp_entries: list[FixtureEntry] | None = None,
    mc_entries: list[FixtureEntry] | None = None,
    sg_entries: list[FixtureEntry] | None = None,
    seed: int = 0,
    probabilities: dict[str, float] | None = None,
    max_attempts: int = 5,
) -> Path:
    """Write a complete config file plus the on-disk inputs it references."""
    base.mkdir(parents=True, exist_ok=True)
    dataset = base / "data" / "raw"
    dataset.mkdir(parents=True, exist_ok=True)
    (dataset / "samples.csv").write_text("r,g,b,label\n255,0,0,apple\n")
    (base / "model.h5").write_bytes(b"\x89HDF")
    rep = base / "data" / "rep"
    rep.mkdir(parents=True, exist_ok=True)
    (rep / "rep.csv").write_text("0.1,0.2,0.3\n")
    (base / "model.tflite").write_bytes(b"\x00" * 16)

    lines = [
        'workspace_root = "runs"',
        'trace_path = "traces/events.log"',
        "",
        "[provider]",
        f'kind = "{provider_kind}"',
    ]
    if provider_kind == "scripted":
        lines.append("[provider.fixtures]")
        for token, entries in (("dp", dp_entries), ("mc", mc_entries), ("sg", sg_entries)):
            if entries is not None:
                write_fixture_file(base / "fixtures" / f"{token}.json", entries)
                lines.append(f'{token} = "fixtures/{token}.json"')
    elif provider_kind == "stochastic":
        lines.append(f"seed = {seed}")
        lines.append("[provider.success_probability]")
        for token, p in (probabilities or {"dp": 0.9, "mc": 1.0, "sg": 0.4}).items():
            lines.append(f"{token} = {p}")

    lines += [
        "",
        "[cost_model]",
        "input_price_per_token = 2.5e-6",
        "output_price_per_token = 1.0e-5",
        "",
        "[retry]",
        f"max_attempts = {max_attempts}",
        "per_execution_timeout = 60.0",
        "",
        "[toolchain]",
        'adapter = "mock"',
        'board_id = "arduino:mbed_nano:nano33ble"',
        "",
        "[stage_input.dp]",
        'dataset_locator = "data/raw"',
        'dataset_description = "RGB color readings of fruit"',
        'model_purpose = "classify fruit type from color"',
        "",
        "[stage_input.mc]",
        'model_locator = "model.h5"',
        'dataset_overview = "float32 triples in [0,1]"',
        'quantization_target = "int8"',
        'representative_data_locator = "data/rep"',
        "",
        "[stage_input.sg]",
        'converted_model_locator = "model.tflite"',
        'board_id = "arduino:mbed_nano:nano33ble"',
        'application_description = "on-device fruit classification"',
        'peripheral_description = "built-in RGB color sensor"',
    ]
    config_path = base / "tinyforge.toml"
    config_path.write_text("\n".join(lines) + "\n")
    return config_path

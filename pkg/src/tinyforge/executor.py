"""Runs generated code inside an isolated workspace.

Interpreter scripts (data processing, model conversion) run as child
processes with the workspace as working directory and a scrubbed
environment. Sketches go through a toolchain adapter: a deterministic mock
for tests and a live adapter that shells out to `arduino-cli`.
"""

from __future__ import annotations

import enum
import os
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BoardUnknown,
    InterpreterNotFound,
    NotAFailure,
    PortUnavailable,
    ToolchainNotFound,
)

EXCERPT_LIMIT = 4000

# environment variables forwarded to child processes besides PATH
DEFAULT_ENV_WHITELIST = ("HOME", "LANG", "LC_ALL", "PYTHONIOENCODING")


class ExecutionKind(enum.Enum):
    INTERPRETER_SCRIPT = "interpreter_script"
    TOOLCHAIN_COMPILE = "toolchain_compile"
    TOOLCHAIN_UPLOAD = "toolchain_upload"


@dataclass(frozen=True)
class ExecutionSpec:
    kind: ExecutionKind
    code_or_binary_path: Path
    workspace: Path
    board_id: str | None = None
    port: str | None = None
    timeout: float = 300.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        ws = Path(self.workspace)
        if not ws.is_dir() or not os.access(ws, os.W_OK):
            raise ValueError(f"workspace not a writable directory: {ws}")


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of one child-process run; exit_status None marks a timeout."""

    exit_status: int | None
    stdout: str
    stderr: str
    duration: float
    timeout: float

    @property
    def timed_out(self) -> bool:
        return self.exit_status is None

    @property
    def succeeded(self) -> bool:
        return self.exit_status == 0


class ExcerptOrigin(enum.Enum):
    STDERR = "stderr"
    STDOUT = "stdout"
    EXIT_ONLY = "exit_only"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ErrorExcerpt:
    text: str
    origin: ExcerptOrigin

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("excerpt must be non-empty")


def summarize_error(outcome: ExecutionOutcome) -> ErrorExcerpt:
    """Bounded diagnostic tail of a failed execution, for the retry prompt.

    Tail rather than head: interpreters and compilers put the decisive
    message at the end of their output.
    """
    if outcome.succeeded:
        raise NotAFailure("cannot summarize a successful execution")
    if outcome.timed_out:
        return ErrorExcerpt(
            text=f"execution exceeded {outcome.timeout:g} s timeout",
            origin=ExcerptOrigin.TIMEOUT,
        )
    if outcome.stderr.strip():
        return ErrorExcerpt(text=outcome.stderr[-EXCERPT_LIMIT:], origin=ExcerptOrigin.STDERR)
    if outcome.stdout.strip():
        return ErrorExcerpt(text=outcome.stdout[-EXCERPT_LIMIT:], origin=ExcerptOrigin.STDOUT)
    return ErrorExcerpt(
        text=f"process exited with status {outcome.exit_status}, no diagnostic output",
        origin=ExcerptOrigin.EXIT_ONLY,
    )


def _scrubbed_env(extra_whitelist: tuple[str, ...] = ()) -> dict[str, str]:
    keep = ("PATH",) + DEFAULT_ENV_WHITELIST + extra_whitelist
    return {k: os.environ[k] for k in keep if k in os.environ}


def execute_script(spec: ExecutionSpec, interpreter: str = "python3") -> ExecutionOutcome:
    """Run an interpreter script with cwd pinned to the workspace."""
    if spec.kind is not ExecutionKind.INTERPRETER_SCRIPT:
        raise ValueError(f"execute_script got kind {spec.kind.value}")
    code_path = Path(spec.code_or_binary_path)
    if not code_path.exists():
        raise FileNotFoundError(f"code file missing: {code_path}")
    interpreter_path = shutil.which(interpreter)
    if interpreter_path is None:
        raise InterpreterNotFound(f"interpreter not on PATH: {interpreter}")

    started = time.monotonic()
    try:
        # byte capture: diagnostics must reach the retry prompt verbatim,
        # so no universal-newline translation
        proc = subprocess.run(
            [interpreter_path, str(code_path)],
            cwd=spec.workspace,
            env=_scrubbed_env(),
            capture_output=True,
            timeout=spec.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        duration = time.monotonic() - started
        return ExecutionOutcome(
            exit_status=None,
            stdout=_as_text(exc.stdout),
            stderr=_as_text(exc.stderr),
            duration=duration,
            timeout=spec.timeout,
        )
    duration = time.monotonic() - started
    return ExecutionOutcome(
        exit_status=proc.returncode,
        stdout=_as_text(proc.stdout),
        stderr=_as_text(proc.stderr),
        duration=duration,
        timeout=spec.timeout,
    )


def _as_text(data: bytes | str | None) -> str:
    if data is None:
        return ""
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


class ToolchainAdapter:
    """Compile/upload contract over the board vendor's tooling."""

    def compile(self, sketch_dir: Path, board_id: str, timeout: float) -> ExecutionOutcome:
        raise NotImplementedError

    def upload(
        self, sketch_dir: Path, board_id: str, port: str, timeout: float
    ) -> ExecutionOutcome:
        raise NotImplementedError


FORCE_ERROR_RE = re.compile(r"^\s*// FORCE_COMPILE_ERROR: ?(.*)$", re.MULTILINE)

DEFAULT_KNOWN_BOARDS = frozenset(
    {
        "arduino:mbed_nano:nano33ble",
        "arduino:mbed_nano:nano33blesense",
        "arduino:avr:uno",
    }
)


class MockToolchainAdapter(ToolchainAdapter):
    """Deterministic stand-in for the vendor toolchain.

    A sketch containing a `// FORCE_COMPILE_ERROR: <msg>` line fails with
    `<msg>` on stderr; anything else compiles to a placeholder binary next
    to the source.
    """

    def __init__(self, known_boards: frozenset[str] = DEFAULT_KNOWN_BOARDS):
        self._known_boards = known_boards

    def _check_board(self, board_id: str) -> None:
        if board_id not in self._known_boards:
            raise BoardUnknown(f"unknown board id: {board_id}")

    def compile(self, sketch_dir: Path, board_id: str, timeout: float) -> ExecutionOutcome:
        self._check_board(board_id)
        sketch_dir = Path(sketch_dir)
        sources = sorted(sketch_dir.glob("*.ino"))
        if not sources:
            raise FileNotFoundError(f"no .ino source in {sketch_dir}")
        source_text = sources[0].read_text(encoding="utf-8")
        m = FORCE_ERROR_RE.search(source_text)
        if m:
            return ExecutionOutcome(
                exit_status=1,
                stdout="",
                stderr=m.group(1),
                duration=0.0,
                timeout=timeout,
            )
        binary = sketch_dir / f"{sources[0].stem}.bin"
        binary.write_bytes(b"\x7fMOCKBIN" + board_id.encode("utf-8"))
        return ExecutionOutcome(
            exit_status=0,
            stdout=f"compiled {sources[0].name} for {board_id}\n",
            stderr="",
            duration=0.0,
            timeout=timeout,
        )

    def upload(
        self, sketch_dir: Path, board_id: str, port: str, timeout: float
    ) -> ExecutionOutcome:
        self._check_board(board_id)
        return ExecutionOutcome(
            exit_status=0,
            stdout=f"uploaded to {port}\n",
            stderr="",
            duration=0.0,
            timeout=timeout,
        )


class ArduinoCliAdapter(ToolchainAdapter):
    """Live adapter shelling out to arduino-cli; never exercised in tests."""

    def __init__(self, binary: str = "arduino-cli"):
        self._binary = binary

    def _resolve(self) -> str:
        path = shutil.which(self._binary)
        if path is None:
            raise ToolchainNotFound(f"toolchain binary not found: {self._binary}")
        return path

    def _run(self, argv: list[str], cwd: Path, timeout: float) -> ExecutionOutcome:
        started = time.monotonic()
        try:
            proc = subprocess.run(
                argv,
                cwd=cwd,
                env=_scrubbed_env(),
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired as exc:
            return ExecutionOutcome(
                exit_status=None,
                stdout=_as_text(exc.stdout),
                stderr=_as_text(exc.stderr),
                duration=time.monotonic() - started,
                timeout=timeout,
            )
        return ExecutionOutcome(
            exit_status=proc.returncode,
            stdout=proc.stdout,
            stderr=proc.stderr,
            duration=time.monotonic() - started,
            timeout=timeout,
        )

    def compile(self, sketch_dir: Path, board_id: str, timeout: float) -> ExecutionOutcome:
        binary = self._resolve()
        return self._run(
            [binary, "compile", "--fqbn", board_id, str(sketch_dir)],
            cwd=Path(sketch_dir).parent,
            timeout=timeout,
        )

    def upload(
        self, sketch_dir: Path, board_id: str, port: str, timeout: float
    ) -> ExecutionOutcome:
        if not Path(port).exists():
            raise PortUnavailable(f"device port not present: {port}")
        binary = self._resolve()
        return self._run(
            [binary, "upload", "-p", port, "--fqbn", board_id, str(sketch_dir)],
            cwd=Path(sketch_dir).parent,
            timeout=timeout,
        )


def compile_sketch(spec: ExecutionSpec, toolchain: ToolchainAdapter) -> ExecutionOutcome:
    """Compile a sketch directory for the spec's board."""
    if spec.kind is not ExecutionKind.TOOLCHAIN_COMPILE:
        raise ValueError(f"compile_sketch got kind {spec.kind.value}")
    if not spec.board_id:
        raise ValueError("board_id required for compilation")
    sketch_dir = Path(spec.code_or_binary_path)
    if sketch_dir.is_file():
        sketch_dir = sketch_dir.parent
    return toolchain.compile(sketch_dir, spec.board_id, spec.timeout)


def upload_binary(spec: ExecutionSpec, toolchain: ToolchainAdapter) -> ExecutionOutcome:
    """Upload a compiled sketch binary to the device on the spec's port."""
    if spec.kind is not ExecutionKind.TOOLCHAIN_UPLOAD:
        raise ValueError(f"upload_binary got kind {spec.kind.value}")
    if not spec.board_id:
        raise ValueError("board_id required for upload")
    if not spec.port:
        raise ValueError("port required for upload")
    binary = Path(spec.code_or_binary_path)
    if not binary.exists():
        raise FileNotFoundError(f"binary missing: {binary}")
    sketch_dir = binary.parent
    return toolchain.upload(sketch_dir, spec.board_id, spec.port, spec.timeout)

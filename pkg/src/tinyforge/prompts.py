"""Sectioned prompt templates and their rendering.

Each lifecycle stage has one template built from five sections in a fixed
canonical order. Rendering fills single-brace placeholders from the stage
input; the excerpt of the previous failed attempt is injected only into the
error-handling section.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import LintFailure, TemplateNotRegistered, UnresolvedPlaceholder
from .stages import LifecycleStage, StageInput

PRIOR_ERROR_SLOT = "prior_error"


class SectionKind(enum.Enum):
    CONTEXT_SETUP = "ContextSetup"
    OBJECTIVES = "Objectives"
    TASK_INSTRUCTIONS = "TaskInstructions"
    ERROR_HANDLING_PROTOCOL = "ErrorHandlingProtocol"
    OUTPUT_INDICATOR = "OutputIndicator"


CANONICAL_ORDER = (
    SectionKind.CONTEXT_SETUP,
    SectionKind.OBJECTIVES,
    SectionKind.TASK_INSTRUCTIONS,
    SectionKind.ERROR_HANDLING_PROTOCOL,
    SectionKind.OUTPUT_INDICATOR,
)

# single-brace slots; literal braces are escaped by doubling
_SLOT_RE = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")


def find_slots(body: str) -> list[str]:
    """Placeholder names referenced in a section body, in order."""
    return [m.group(1) for m in _SLOT_RE.finditer(body) if m.group(1)]


def substitute(body: str, values: dict[str, str]) -> str:
    """Fill slots from `values`; doubled braces become literal braces.

    Single pass: substituted values are never re-scanned, so error excerpts
    containing braces are inserted verbatim.
    """

    def repl(m: re.Match) -> str:
        token = m.group(0)
        if token == "{{":
            return "{"
        if token == "}}":
            return "}"
        name = m.group(1)
        if name not in values:
            raise UnresolvedPlaceholder(name)
        return values[name]

    return _SLOT_RE.sub(repl, body)


@dataclass(frozen=True)
class PromptTemplate:
    """One stage's template: ordered (kind, body) sections and declared slots."""

    stage: LifecycleStage
    sections: tuple[tuple[SectionKind, str], ...]
    placeholders: frozenset[str]


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    stage: LifecycleStage
    attempt_index: int
    contains_error_feedback: bool
    section_texts: tuple[tuple[SectionKind, str], ...]

    def section(self, kind: SectionKind) -> str:
        for k, body in self.section_texts:
            if k is kind:
                return body
        raise KeyError(kind)


def lint_template(template: PromptTemplate) -> list[str]:
    """Check the template invariants; returns issues as data, empty iff valid."""
    issues: list[str] = []
    kinds = [k for k, _ in template.sections]

    for kind in SectionKind:
        n = kinds.count(kind)
        if n == 0:
            issues.append(f"missing section: {kind.value}")
        elif n > 1:
            issues.append(f"duplicate section: {kind.value}")

    if sorted(kinds, key=lambda k: CANONICAL_ORDER.index(k)) != kinds and not any(
        i.startswith(("missing", "duplicate")) for i in issues
    ):
        for index, (expected, actual) in enumerate(zip(CANONICAL_ORDER, kinds)):
            if expected is not actual:
                issues.append(f"section order violated at index {index}")
                break

    for kind, body in template.sections:
        for slot in find_slots(body):
            if slot not in template.placeholders:
                issues.append(f"undeclared placeholder {{{slot}}} in {kind.value}")
        if kind is not SectionKind.ERROR_HANDLING_PROTOCOL and PRIOR_ERROR_SLOT in find_slots(body):
            issues.append(
                f"{{{PRIOR_ERROR_SLOT}}} may only appear in "
                f"{SectionKind.ERROR_HANDLING_PROTOCOL.value}, found in {kind.value}"
            )
    return issues


class TemplateRegistry:
    """Per-stage template store; registration lints, re-registration replaces."""

    def __init__(self) -> None:
        self._templates: dict[LifecycleStage, PromptTemplate] = {}

    def register(self, template: PromptTemplate) -> None:
        issues = lint_template(template)
        if issues:
            raise LintFailure(issues)
        self._templates[template.stage] = template

    def get(self, stage: LifecycleStage) -> PromptTemplate:
        try:
            return self._templates[stage]
        except KeyError:
            raise TemplateNotRegistered(f"no template registered for {stage.value}") from None


def render_prompt(
    template: PromptTemplate,
    stage_input: StageInput,
    prior_error: str | None = None,
    attempt_index: int = 1,
) -> RenderedPrompt:
    """Render a template against a stage input; a pure function of its arguments."""
    values: dict[str, str] = {}
    for f in fields(StageInput):
        v = getattr(stage_input, f.name)
        if f.name != "stage" and v is not None:
            values[f.name] = v.value if hasattr(v, "value") and not isinstance(v, str) else str(v)
    values[PRIOR_ERROR_SLOT] = (
        prior_error if prior_error is not None else "(none — this is the first attempt)"
    )

    ordered = sorted(template.sections, key=lambda s: CANONICAL_ORDER.index(s[0]))
    section_texts = tuple((kind, substitute(body, values)) for kind, body in ordered)
    text = "\n\n".join(body for _, body in section_texts)
    return RenderedPrompt(
        text=text,
        stage=template.stage,
        attempt_index=attempt_index,
        contains_error_feedback=prior_error is not None,
        section_texts=section_texts,
    )


_SECTION_HEADER_RE = re.compile(r"^== SECTION: ([A-Za-z]+) ==$")


def parse_template_file(text: str, stage: LifecycleStage) -> PromptTemplate:
    """Parse the on-disk template format: sections split by header lines.

    Format: `== SECTION: <kind> ==` on its own line starts a section; the
    body runs to the next header. Declared placeholders are the slots found.
    """
    sections: list[tuple[SectionKind, str]] = []
    current_kind: SectionKind | None = None
    current_lines: list[str] = []

    def flush() -> None:
        if current_kind is not None:
            sections.append((current_kind, "\n".join(current_lines).strip("\n")))

    for line in text.splitlines():
        m = _SECTION_HEADER_RE.match(line.strip())
        if m:
            flush()
            try:
                current_kind = SectionKind(m.group(1))
            except ValueError:
                raise LintFailure([f"unknown section kind: {m.group(1)}"]) from None
            current_lines = []
        elif current_kind is not None:
            current_lines.append(line)
        elif line.strip():
            raise LintFailure([f"content before first section header: {line.strip()!r}"])
    flush()

    placeholders = frozenset(
        slot for _, body in sections for slot in find_slots(body)
    )
    return PromptTemplate(stage=stage, sections=tuple(sections), placeholders=placeholders)


def load_template_file(path: Path, stage: LifecycleStage) -> PromptTemplate:
    return parse_template_file(Path(path).read_text(encoding="utf-8"), stage)


def default_registry(overrides: dict[LifecycleStage, Path] | None = None) -> TemplateRegistry:
    """Registry preloaded with the shipped per-stage templates.

    `overrides` maps stages to user template files that replace the defaults.
    """
    registry = TemplateRegistry()
    for stage in LifecycleStage:
        override = (overrides or {}).get(stage)
        if override is not None:
            registry.register(load_template_file(override, stage))
        else:
            text = (
                resources.files("tinyforge.templates")
                .joinpath(f"{stage.value}.txt")
                .read_text(encoding="utf-8")
            )
            registry.register(parse_template_file(text, stage))
    return registry

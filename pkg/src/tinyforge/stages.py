"""Lifecycle stage identities and their validated input payloads."""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import MissingField, PathNotFound, WrongStageFields


class LifecycleStage(enum.Enum):
    """The three automated lifecycle stages, in pipeline order."""

    DATA_PROCESSING = "dp"
    MODEL_CONVERSION = "mc"
    SKETCH_GENERATION = "sg"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]

    def __lt__(self, other: "LifecycleStage") -> bool:
        if not isinstance(other, LifecycleStage):
            return NotImplemented
        return self.order < other.order

    @property
    def label(self) -> str:
        return _STAGE_LABELS[self]

    @classmethod
    def from_token(cls, token: str) -> "LifecycleStage":
        """Parse a stage from its short CLI token (dp/mc/sg)."""
        for stage in cls:
            if stage.value == token.lower():
                return stage
        raise ValueError(f"unknown stage token: {token!r}")


_STAGE_ORDER = {
    LifecycleStage.DATA_PROCESSING: 0,
    LifecycleStage.MODEL_CONVERSION: 1,
    LifecycleStage.SKETCH_GENERATION: 2,
}

_STAGE_LABELS = {
    LifecycleStage.DATA_PROCESSING: "DP",
    LifecycleStage.MODEL_CONVERSION: "MC",
    LifecycleStage.SKETCH_GENERATION: "SG",
}

PIPELINE_ORDER = (
    LifecycleStage.DATA_PROCESSING,
    LifecycleStage.MODEL_CONVERSION,
    LifecycleStage.SKETCH_GENERATION,
)


class QuantizationTarget(enum.Enum):
    INT8 = "int8"


@dataclass
class StageInput:
    """Stage-specific input payload; only the named stage's fields may be set."""

    stage: LifecycleStage
    # data processing
    dataset_locator: Path | None = None
    dataset_description: str | None = None
    model_purpose: str | None = None
    # model conversion
    model_locator: Path | None = None
    dataset_overview: str | None = None
    quantization_target: QuantizationTarget | None = None
    representative_data_locator: Path | None = None
    # sketch generation
    converted_model_locator: Path | None = None
    board_id: str | None = None
    application_description: str | None = None
    peripheral_description: str | None = None


# field name -> whether it is a filesystem locator
STAGE_FIELDS: dict[LifecycleStage, dict[str, bool]] = {
    LifecycleStage.DATA_PROCESSING: {
        "dataset_locator": True,
        "dataset_description": False,
        "model_purpose": False,
    },
    LifecycleStage.MODEL_CONVERSION: {
        "model_locator": True,
        "dataset_overview": False,
        "quantization_target": False,
        "representative_data_locator": True,
    },
    LifecycleStage.SKETCH_GENERATION: {
        "converted_model_locator": True,
        "board_id": False,
        "application_description": False,
        "peripheral_description": False,
    },
}


def validate_stage_input(stage: LifecycleStage, raw: StageInput) -> StageInput:
    """Check a payload against the stage schema without mutating it.

    Every stage-required field must be present, every locator must exist on
    disk, and no field belonging to a different stage may be populated.
    """
    if raw.stage is not stage:
        raise WrongStageFields([f"stage={raw.stage.value}"])

    allowed = STAGE_FIELDS[stage]
    payload_fields = [f.name for f in fields(StageInput) if f.name != "stage"]

    stray = [
        name for name in payload_fields
        if name not in allowed and getattr(raw, name) is not None
    ]
    if stray:
        raise WrongStageFields(stray)

    for name, is_locator in allowed.items():
        value = getattr(raw, name)
        if value is None or value == "":
            raise MissingField(name)
        if is_locator and not Path(value).exists():
            raise PathNotFound(name, str(value))

    return raw

"""Shared domain types and the closed-form pipeline cost model.

A meeting has one active speaker and N-1 passive listeners.  Translating the
speaker's stream needs one pipeline instance per *distinct* listener target
language (cost C*k), not one per (viewer, speaker) pair (cost C*N*(N-1)).
The two cost functions below quantify that collapse; the remaining types are
the state the orchestrator transforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class ValidationError(ValueError):
    """User-supplied input failed structural validation."""


class MeetingSizeError(ValidationError):
    """Cost query on a meeting with fewer than two participants."""


class UnknownParticipantError(ValidationError):
    """An operation referenced a participant id not present in the meeting."""


class DegenerateMeetingWarning(UserWarning):
    """Cost query over an empty listener set (meeting of one)."""


SPEAKER_RAW = "speaker-raw"


@dataclass(frozen=True, order=True)
class LanguageTag:
    """Case-insensitive language identifier such as "en", "de", "tr".

    The code is normalized to lowercase on construction, so two tags with the
    same letters in different case compare (and hash) equal.
    """

    code: str

    def __post_init__(self) -> None:
        normalized = self.code.strip().lower()
        if not normalized:
            raise ValidationError("language tag must be non-empty")
        object.__setattr__(self, "code", normalized)

    def __str__(self) -> str:
        return self.code


def as_language(value: "LanguageTag | str") -> LanguageTag:
    return value if isinstance(value, LanguageTag) else LanguageTag(value)


@dataclass(frozen=True)
class Participant:
    """A meeting member; ``language`` is both their spoken and target language."""

    id: str
    language: LanguageTag

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("participant id must be non-empty")


class PipelineState(str, Enum):
    INITIALIZING = "initializing"
    ACTIVE = "active"
    DECOMMISSIONED = "decommissioned"


@dataclass
class PipelineInstance:
    """One translation chain routing a single (source, target) language pair."""

    id: str
    source_language: LanguageTag
    target_language: LanguageTag
    state: PipelineState = PipelineState.ACTIVE

    def reinitialize(self, source_language: LanguageTag) -> None:
        """Re-point the pipeline at a new source language (fresh cold start)."""
        if self.state is PipelineState.DECOMMISSIONED:
            raise ValidationError(f"pipeline {self.id} is decommissioned")
        self.source_language = source_language
        self.state = PipelineState.ACTIVE

    def decommission(self) -> None:
        self.state = PipelineState.DECOMMISSIONED


@dataclass
class GpuPool:
    """Fixed number of pipeline slots; ``allocated`` holds occupying pipeline ids."""

    capacity: int
    allocated: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValidationError("pool capacity must be non-negative")
        if len(self.allocated) > self.capacity:
            raise ValidationError("pool over-allocated")

    @property
    def free_slots(self) -> int:
        return self.capacity - len(self.allocated)

    def allocate(self, pipeline_id: str) -> None:
        if self.free_slots <= 0:
            raise ValidationError("pool exhausted")
        self.allocated.add(pipeline_id)

    def release(self, pipeline_id: str) -> None:
        self.allocated.discard(pipeline_id)


@dataclass(frozen=True)
class Route:
    """A media route: ``source`` is SPEAKER_RAW or a pipeline id (its output);
    ``destination`` is a participant id or a pipeline id (its input)."""

    source: str
    destination: str

    def __post_init__(self) -> None:
        if self.source == self.destination:
            raise ValidationError("route may not loop back to its own endpoint")


@dataclass
class RoutingTable:
    """Language-to-pipeline mapping plus the stream routes derived from it."""

    pipeline_map: dict[LanguageTag, str] = field(default_factory=dict)
    routes: set[Route] = field(default_factory=set)
    bypass: set[str] = field(default_factory=set)


@dataclass
class Meeting:
    """Participants, the active speaker, the slot pool, and current routing."""

    participants: dict[str, Participant]
    pool: GpuPool
    active_speaker: Optional[str] = None
    routing: RoutingTable = field(default_factory=RoutingTable)
    pipelines: dict[str, PipelineInstance] = field(default_factory=dict)
    pipeline_seq: int = 0

    @classmethod
    def create(
        cls, participants: Iterable[Participant], pool_capacity: int
    ) -> "Meeting":
        members: dict[str, Participant] = {}
        for p in participants:
            if p.id in members:
                raise ValidationError(f"duplicate participant id {p.id!r}")
            members[p.id] = p
        return cls(participants=members, pool=GpuPool(capacity=pool_capacity))

    def new_pipeline_id(self) -> str:
        self.pipeline_seq += 1
        return f"pl{self.pipeline_seq:04d}"

    @property
    def size(self) -> int:
        return len(self.participants)


@dataclass(frozen=True)
class CostModel:
    """Cost of one pipeline instance; dimensionless by default so totals read
    as "number of pipeline instances"."""

    unit_cost: float = 1.0

    def __post_init__(self) -> None:
        if not self.unit_cost > 0:
            raise ValidationError("unit_cost must be positive")


def cost_naive(n: int, cost: CostModel = CostModel()) -> float:
    """Total cost of the brute-force design where each of ``n`` participants
    processes every other participant's stream: C * n * (n - 1)."""
    if n < 2:
        raise MeetingSizeError(f"meeting size must be >= 2, got {n}")
    return cost.unit_cost * n * (n - 1)


def cost_token(
    listener_languages: Iterable["LanguageTag | str"],
    cost: CostModel = CostModel(),
) -> tuple[int, float]:
    """Cost under shared per-language pipelines: (k, C * k) with k the number
    of distinct listener target languages.

    An empty listener set is a degenerate meeting of one: returns (0, 0.0)
    and emits a DegenerateMeetingWarning rather than failing, so simulations
    can pass through single-participant states.
    """
    unique = {as_language(lang) for lang in listener_languages}
    k = len(unique)
    if k == 0:
        warnings.warn(
            "cost_token over an empty listener set (meeting of one)",
            DegenerateMeetingWarning,
            stacklevel=2,
        )
    return k, cost.unit_cost * k

"""Speaker-turn orchestration: per-turn reconciliation of the pipeline set.

On every active-speaker change the meeting reconciles its translation
pipelines against the languages listeners actually need.  Pipelines are
keyed by target language, so the running count is bounded by the number of
distinct listener languages, never by the number of participant pairs.

The transition is deterministic: languages are visited in normalized
lexicographic order, stale pipelines are released before new ones are
allocated (so scarce slots reach newly required languages), and pool
exhaustion produces an allocation-failed event for the affected language
instead of aborting the pass.  Listeners who share the speaker's language
receive the raw stream via bypass unless ``translate_same_language`` forces
an identity pipeline for them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .core import (
    SPEAKER_RAW,
    LanguageTag,
    Meeting,
    PipelineInstance,
    PipelineState,
    Route,
    RoutingTable,
    UnknownParticipantError,
    ValidationError,
)

__all__ = [
    "EventKind",
    "OrchestrationEvent",
    "Route",
    "RoutingTable",
    "required_languages",
    "update_orchestration",
    "verify_invariants",
]

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    PIPELINE_ALLOCATED = "pipeline-allocated"
    PIPELINE_REUSED = "pipeline-reused"
    PIPELINE_DECOMMISSIONED = "pipeline-decommissioned"
    ROUTE_ADDED = "route-added"
    ALLOCATION_FAILED = "allocation-failed"
    SPEAKER_BYPASSED = "speaker-bypassed"


@dataclass(frozen=True)
class OrchestrationEvent:
    """One observable effect of an orchestration pass.

    ``time`` is the caller's virtual timestamp (the simulator clock).
    ``reinitialized`` is meaningful only for pipeline-reused: True when the
    source language changed and the pipeline restarts cold.
    """

    kind: EventKind
    time: float = 0.0
    language: Optional[LanguageTag] = None
    pipeline_id: Optional[str] = None
    participant: Optional[str] = None
    reinitialized: bool = False


def required_languages(
    meeting: Meeting,
    speaker: Optional[str],
    *,
    translate_same_language: bool = False,
) -> set[LanguageTag]:
    """Distinct languages of the non-speakers; the speaker's own language is
    excluded unless identity translation is requested.  ``speaker=None``
    (no one holds the floor) requires nothing."""
    if speaker is None:
        return set()
    if speaker not in meeting.participants:
        raise UnknownParticipantError(f"unknown participant id {speaker!r}")
    langs = {
        p.language for pid, p in meeting.participants.items() if pid != speaker
    }
    if not translate_same_language:
        langs.discard(meeting.participants[speaker].language)
    return langs


def update_orchestration(
    meeting: Meeting,
    new_speaker: Optional[str],
    *,
    time: float = 0.0,
    translate_same_language: bool = False,
) -> tuple[Meeting, list[OrchestrationEvent]]:
    """Atomically hand the floor to ``new_speaker`` and reconcile pipelines.

    Returns the (mutated in place) meeting and the events of this pass.
    ``new_speaker=None`` releases the floor: every pipeline is decommissioned
    and all routes dropped.  An unknown speaker id raises before any state
    is touched.
    """
    if new_speaker is not None and new_speaker not in meeting.participants:
        raise UnknownParticipantError(f"unknown participant id {new_speaker!r}")

    events: list[OrchestrationEvent] = []
    previous_routes = set(meeting.routing.routes)
    required = required_languages(
        meeting, new_speaker, translate_same_language=translate_same_language
    )
    meeting.active_speaker = new_speaker
    speaker_language = (
        meeting.participants[new_speaker].language if new_speaker else None
    )
    pipeline_map = meeting.routing.pipeline_map

    # Stale first: released slots must be reusable within this same pass.
    for language in sorted(set(pipeline_map) - required):
        pipeline_id = pipeline_map.pop(language)
        meeting.pipelines[pipeline_id].decommission()
        meeting.pool.release(pipeline_id)
        events.append(
            OrchestrationEvent(
                kind=EventKind.PIPELINE_DECOMMISSIONED,
                time=time,
                language=language,
                pipeline_id=pipeline_id,
            )
        )

    for language in sorted(required):
        if language in pipeline_map:
            pipeline = meeting.pipelines[pipeline_map[language]]
            reinitialized = pipeline.source_language != speaker_language
            if reinitialized:
                pipeline.reinitialize(speaker_language)
            events.append(
                OrchestrationEvent(
                    kind=EventKind.PIPELINE_REUSED,
                    time=time,
                    language=language,
                    pipeline_id=pipeline.id,
                    reinitialized=reinitialized,
                )
            )
            continue
        try:
            meeting.pool.allocate(placeholder := meeting.new_pipeline_id())
        except ValidationError:
            logger.error(
                "no free pipeline slot for language %s (capacity %d)",
                language,
                meeting.pool.capacity,
            )
            events.append(
                OrchestrationEvent(
                    kind=EventKind.ALLOCATION_FAILED, time=time, language=language
                )
            )
            continue
        pipeline = PipelineInstance(
            id=placeholder,
            source_language=speaker_language,
            target_language=language,
        )
        meeting.pipelines[pipeline.id] = pipeline
        pipeline_map[language] = pipeline.id
        events.append(
            OrchestrationEvent(
                kind=EventKind.PIPELINE_ALLOCATED,
                time=time,
                language=language,
                pipeline_id=pipeline.id,
            )
        )

    routes: set[Route] = set()
    bypass: set[str] = set()
    if new_speaker is not None:
        bypass.add(new_speaker)
        events.append(
            OrchestrationEvent(
                kind=EventKind.SPEAKER_BYPASSED,
                time=time,
                participant=new_speaker,
                language=speaker_language,
            )
        )
    for participant_id in sorted(meeting.participants):
        if participant_id == new_speaker:
            continue
        language = meeting.participants[participant_id].language
        if not translate_same_language and language == speaker_language:
            bypass.add(participant_id)
            continue
        if language not in pipeline_map:
            continue  # allocation failed: surfaced above, listener unrouted
        pipeline_id = pipeline_map[language]
        routes.add(Route(source=SPEAKER_RAW, destination=pipeline_id))
        delivery = Route(source=pipeline_id, destination=participant_id)
        routes.add(delivery)
        if delivery not in previous_routes:
            events.append(
                OrchestrationEvent(
                    kind=EventKind.ROUTE_ADDED,
                    time=time,
                    language=language,
                    pipeline_id=pipeline_id,
                    participant=participant_id,
                )
            )
    meeting.routing.routes = routes
    meeting.routing.bypass = bypass
    return meeting, events


def verify_invariants(
    meeting: Meeting, *, translate_same_language: bool = False
) -> list[str]:
    """Check the three structural guarantees of an orchestrated meeting.

    Returns human-readable violation descriptions; an empty list means the
    state is consistent.  Violations are data, not errors: the checker never
    raises on bad state.
    """
    violations: list[str] = []
    routing = meeting.routing
    speaker = meeting.active_speaker

    # 1. Speaker bypass: the speaker is never a pipeline consumer.
    if speaker is not None:
        if speaker not in routing.bypass:
            violations.append(f"active speaker {speaker!r} not in bypass set")
        for route in routing.routes:
            if route.destination == speaker:
                violations.append(
                    f"active speaker {speaker!r} consumes route from {route.source!r}"
                )

    # 2. Minimal allocation: one pipeline per required language, short only
    #    when the pool ran dry.
    required = required_languages(
        meeting, speaker, translate_same_language=translate_same_language
    )
    mapped = set(routing.pipeline_map)
    if not mapped <= required:
        extra = ", ".join(sorted(str(lang) for lang in mapped - required))
        violations.append(f"pipelines kept for unrequired languages: {extra}")
    if len(mapped) < len(required) and meeting.pool.free_slots > 0:
        violations.append(
            f"{len(mapped)} pipelines for {len(required)} required languages "
            "with free slots remaining"
        )
    active_ids = {
        pid
        for pid, pipe in meeting.pipelines.items()
        if pipe.state is not PipelineState.DECOMMISSIONED
    }
    if active_ids != set(routing.pipeline_map.values()):
        violations.append(
            "live pipelines and pipeline_map disagree "
            f"({sorted(active_ids)} vs {sorted(routing.pipeline_map.values())})"
        )
    if meeting.pool.allocated != active_ids:
        violations.append(
            "pool allocation does not match live pipelines "
            f"({sorted(meeting.pool.allocated)} vs {sorted(active_ids)})"
        )

    # 3. No decommissioned pipeline referenced anywhere.
    decommissioned = {
        pid
        for pid, pipe in meeting.pipelines.items()
        if pipe.state is PipelineState.DECOMMISSIONED
    }
    for route in routing.routes:
        if route.source in decommissioned or route.destination in decommissioned:
            violations.append(
                f"route {route.source!r}->{route.destination!r} references "
                "a decommissioned pipeline"
            )

    # Routing completeness: every listener whose language has a pipeline is
    # fed by exactly one route from it.
    for participant_id, participant in meeting.participants.items():
        if participant_id == speaker or participant_id in routing.bypass:
            continue
        pipeline_id = routing.pipeline_map.get(participant.language)
        if pipeline_id is None:
            continue
        feeds = [
            r
            for r in routing.routes
            if r.destination == participant_id and r.source == pipeline_id
        ]
        if len(feeds) != 1:
            violations.append(
                f"listener {participant_id!r} has {len(feeds)} routes from "
                f"pipeline {pipeline_id!r}, expected exactly 1"
            )
    return violations

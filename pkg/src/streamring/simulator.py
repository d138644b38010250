"""Scenario-driven meeting simulation on a deterministic virtual clock.

A scenario declares the initial roster, a slot pool, a latency model, a
chunk duration (or "auto"), and a time-ordered event list (speaker changes,
joins, leaves, language changes).  Every event triggers an orchestration
pass, so the pipeline set always matches the current roster; between
passes, each live pipeline processes the speaker's stream as a chunked
session whose playback timeline comes from the segmented scheduler.

Session boundaries: a speaker hand-off closes and reopens every session
(cold when the pipeline was reallocated or re-pointed at a new source
language, warm otherwise); membership events leave untouched pipelines'
sessions running, so a listener joining mid-turn does not reset anyone
else's stream.  A repeated speaker-change to the current speaker is a
no-op.  Stall seconds accrue to the listeners of a session's language at
the moment the session closes.

Same-timestamp events apply in a fixed order — leaves, joins, language
changes, speaker changes, each by participant id — which makes reports
byte-reproducible and order-independent for semantically independent
events.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from .core import (
    CostModel,
    LanguageTag,
    Meeting,
    Participant,
    ValidationError,
    cost_naive,
)
from .latency import (
    FORM_TABLE,
    LatencyModel,
    ThroughputPoint,
    fit,
    fit_auto,
    load_bundled_measurements,
    model_from_json,
    model_to_json,
    t_opt_continuous,
    t_opt_discrete,
    table_model,
)
from .orchestrator import EventKind, update_orchestration
from .segproc import StreamSpec, check_viability, schedule_stream

__all__ = [
    "MetricsSample",
    "MetricsSeries",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "ScenarioEvent",
    "ScenarioEventKind",
    "SweepRow",
    "TurnStartup",
    "load_scenario",
    "metrics_csv_rows",
    "report_to_json",
    "run_scenario",
    "save_scenario",
    "scenario_digest",
    "scenario_from_json",
    "scenario_to_json",
    "sweep_cost",
    "validate_scenario",
    "write_metrics_csv",
]

METRICS_CSV_HEADER = (
    "time_s",
    "k",
    "token_cost",
    "naive_cost",
    "alloc_failures",
    "stalls_cum",
)


class ScenarioError(ValidationError):
    """The scenario violates its structural invariants; the message lists
    every violation found, not just the first."""


class ScenarioEventKind(str, Enum):
    SPEAKER_CHANGE = "speaker-change"
    JOIN = "join"
    LEAVE = "leave"
    LANGUAGE_CHANGE = "language-change"


# fixed application order for same-timestamp events
_KIND_RANK = {
    ScenarioEventKind.LEAVE: 0,
    ScenarioEventKind.JOIN: 1,
    ScenarioEventKind.LANGUAGE_CHANGE: 2,
    ScenarioEventKind.SPEAKER_CHANGE: 3,
}


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    kind: ScenarioEventKind
    participant: str
    language: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ScenarioEventKind):
            try:
                object.__setattr__(self, "kind", ScenarioEventKind(self.kind))
            except ValueError:
                raise ValidationError(f"unknown event kind {self.kind!r}") from None


@dataclass
class Scenario:
    """Declarative simulation input.  ``model_spec`` is either a latency
    model JSON object or ``{"fixture": label, "form": ...}`` referring to the
    bundled hardware measurements; it is kept verbatim so the scenario
    round-trips to disk unchanged."""

    participants: list[tuple[str, str]]
    pool_capacity: int
    model_spec: dict
    segment_duration: Union[float, str]
    run_duration: float
    events: list[ScenarioEvent] = field(default_factory=list)
    unit_cost: float = 1.0
    translate_same_language: bool = False


@dataclass(frozen=True)
class MetricsSample:
    time_s: float
    k: int
    token_cost: float
    naive_cost: float
    alloc_failures: int
    stalls_cum: float


@dataclass(frozen=True)
class TurnStartup:
    """One session's buffering cost: when it opened, for which language, how
    long its listeners waited, and whether the pipeline started cold."""

    time: float
    language: str
    startup_delay: float
    cold: bool


@dataclass
class MetricsSeries:
    samples: list[MetricsSample] = field(default_factory=list)
    listener_stalls: dict[str, float] = field(default_factory=dict)
    turn_startups: list[TurnStartup] = field(default_factory=list)


@dataclass
class RunReport:
    scenario_digest: str
    resolved_segment_duration: float
    series: MetricsSeries
    max_k: int
    mean_k: float
    total_stall_seconds: float
    cost_ratio: float
    warnings: tuple[str, ...]


# ---------------------------------------------------------------------------
# Scenario JSON


def scenario_to_json(scenario: Scenario) -> dict:
    return {
        "participants": [
            {"id": pid, "language": lang} for pid, lang in scenario.participants
        ],
        "pool_capacity": scenario.pool_capacity,
        "latency_model": scenario.model_spec,
        "segment_duration": scenario.segment_duration,
        "run_duration": scenario.run_duration,
        "events": [
            {
                "time": e.time,
                "kind": e.kind.value,
                "participant": e.participant,
                **({"language": e.language} if e.language is not None else {}),
            }
            for e in scenario.events
        ],
        "unit_cost": scenario.unit_cost,
        "translate_same_language": scenario.translate_same_language,
    }


def scenario_from_json(data: dict) -> Scenario:
    try:
        participants = [
            (str(p["id"]), str(p["language"])) for p in data["participants"]
        ]
        events = [
            ScenarioEvent(
                time=float(e["time"]),
                kind=e["kind"],
                participant=str(e["participant"]),
                language=e.get("language"),
            )
            for e in data.get("events", [])
        ]
        return Scenario(
            participants=participants,
            pool_capacity=int(data["pool_capacity"]),
            model_spec=dict(data["latency_model"]),
            segment_duration=data["segment_duration"],
            run_duration=float(data["run_duration"]),
            events=events,
            unit_cost=float(data.get("unit_cost", 1.0)),
            translate_same_language=bool(data.get("translate_same_language", False)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scenario JSON: {exc}") from None


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    return scenario_from_json(data)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_json(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def scenario_digest(scenario: Scenario) -> str:
    canonical = json.dumps(
        scenario_to_json(scenario), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Validation and resolution


def resolve_model(spec: dict) -> LatencyModel:
    """Turn a scenario's model reference into a LatencyModel: either a
    bundled-fixture reference fitted on the fly, or inline model JSON."""
    if "fixture" in spec:
        label = spec["fixture"]
        sets = load_bundled_measurements()
        if label not in sets:
            raise ValidationError(
                f"unknown fixture label {label!r}; available: {sorted(sets)}"
            )
        form = spec.get("form", "auto")
        cold = float(spec.get("cold_start_extra", 0.0))
        mset = sets[label]
        if form == "table":
            return table_model(mset, cold)
        if form == "auto":
            return fit_auto(mset, cold)[0]
        return fit(mset, form, cold)[0]
    return model_from_json(spec)


def resolve_segment_duration(
    model: LatencyModel, requested: Union[float, str]
) -> tuple[float, list[str]]:
    """A numeric request passes through; "auto" picks the smallest real-time
    viable duration (tabulated grid for table models, continuous crossing
    otherwise).  A never-viable model falls back to the largest calibrated
    duration, loudly."""
    if requested != "auto":
        return float(requested), []
    if model.form == FORM_TABLE:
        points = [ThroughputPoint(t=t, p=p) for t, p in model.points]
        chosen = t_opt_discrete(points)
        if chosen is not None:
            return chosen, []
        fallback = model.points[-1][0]
        return fallback, [
            "model is not real-time viable at any tabulated duration; "
            f"falling back to the largest, {fallback} s"
        ]
    chosen = t_opt_continuous(model)
    if chosen is not None:
        return chosen, []
    if model.valid_range is not None:
        fallback = model.valid_range[1]
        return fallback, [
            "model never reaches real time; falling back to the largest "
            f"calibrated duration, {fallback} s"
        ]
    raise ValidationError(
        "cannot auto-resolve segment duration: model never reaches real time "
        "and has no calibrated range"
    )


def _ordered_events(scenario: Scenario) -> list[ScenarioEvent]:
    return sorted(
        scenario.events,
        key=lambda e: (e.time, _KIND_RANK[e.kind], e.participant),
    )


def validate_scenario(scenario: Scenario) -> list[str]:
    """Collect every structural violation (empty list means valid)."""
    violations: list[str] = []
    if not scenario.run_duration > 0:
        violations.append(f"run_duration must be > 0, got {scenario.run_duration}")
    if scenario.pool_capacity < 0:
        violations.append(
            f"pool_capacity must be >= 0, got {scenario.pool_capacity}"
        )
    if not scenario.unit_cost > 0:
        violations.append(f"unit_cost must be > 0, got {scenario.unit_cost}")
    if scenario.segment_duration != "auto":
        try:
            if not float(scenario.segment_duration) > 0:
                violations.append(
                    "segment_duration must be positive or 'auto', got "
                    f"{scenario.segment_duration!r}"
                )
        except (TypeError, ValueError):
            violations.append(
                f"segment_duration must be a number or 'auto', got "
                f"{scenario.segment_duration!r}"
            )
    try:
        resolve_model(scenario.model_spec)
    except ValidationError as exc:
        violations.append(f"latency model: {exc}")

    roster: dict[str, str] = {}
    for pid, lang in scenario.participants:
        if pid in roster:
            violations.append(f"duplicate participant id {pid!r}")
            continue
        try:
            LanguageTag(lang)
        except ValidationError as exc:
            violations.append(f"participant {pid!r}: {exc}")
            continue
        roster[pid] = lang

    times = [e.time for e in scenario.events]
    if times != sorted(times):
        violations.append("events are not sorted by time")

    speaker: Optional[str] = None
    for event in _ordered_events(scenario):
        where = f"event at t={event.time} ({event.kind.value} {event.participant!r})"
        if event.time < 0 or event.time > scenario.run_duration:
            violations.append(f"{where}: time outside [0, run_duration]")
        needs_language = event.kind in (
            ScenarioEventKind.JOIN,
            ScenarioEventKind.LANGUAGE_CHANGE,
        )
        if needs_language:
            if event.language is None:
                violations.append(f"{where}: missing language")
                continue
            try:
                LanguageTag(event.language)
            except ValidationError as exc:
                violations.append(f"{where}: {exc}")
                continue
        if event.kind is ScenarioEventKind.JOIN:
            if event.participant in roster:
                violations.append(f"{where}: participant already present")
            else:
                roster[event.participant] = event.language or ""
        elif event.kind is ScenarioEventKind.LEAVE:
            if event.participant not in roster:
                violations.append(f"{where}: participant not present")
            else:
                del roster[event.participant]
                if speaker == event.participant:
                    speaker = None
        elif event.kind is ScenarioEventKind.LANGUAGE_CHANGE:
            if event.participant not in roster:
                violations.append(f"{where}: participant not present")
            else:
                roster[event.participant] = event.language or ""
        elif event.kind is ScenarioEventKind.SPEAKER_CHANGE:
            if event.participant not in roster:
                violations.append(f"{where}: participant not present")
            else:
                speaker = event.participant
    return violations


# ---------------------------------------------------------------------------
# The event loop


@dataclass
class _OpenSession:
    language: LanguageTag
    started_at: float
    cold: bool


@dataclass
class _ClosedSession:
    language: LanguageTag
    started_at: float
    closed_at: float
    cold: bool
    startup_delay: float
    stall_total: float
    listeners: tuple[str, ...]
    boundaries: tuple[tuple[float, float], ...]  # (absolute time, stall seconds)


@dataclass(frozen=True)
class _StatePoint:
    time: float
    k: int
    n: int
    failures_cum: int


def run_scenario(scenario: Scenario) -> RunReport:
    """Execute the scenario deterministically and report the metrics series
    plus aggregates.  Raises ScenarioError listing all structural violations
    when the scenario is malformed."""
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioError(
            "invalid scenario:\n" + "\n".join(f"  - {v}" for v in violations)
        )

    model = resolve_model(scenario.model_spec)
    segment_duration, warnings = resolve_segment_duration(
        model, scenario.segment_duration
    )
    viability = check_viability(model, segment_duration)
    if not viability.viable:
        warnings.append(
            f"segment duration {segment_duration:g} s is not real-time viable "
            f"(tau={viability.tau:.3f}); playback will lag behind the stream"
        )

    cost = CostModel(unit_cost=scenario.unit_cost)
    meeting = Meeting.create(
        [
            Participant(id=pid, language=LanguageTag(lang))
            for pid, lang in scenario.participants
        ],
        pool_capacity=scenario.pool_capacity,
    )

    open_sessions: dict[LanguageTag, _OpenSession] = {}
    closed_sessions: list[_ClosedSession] = []
    states: list[_StatePoint] = []
    failures = 0

    cold_model = model
    warm_model = (
        model
        if model.cold_start_extra == 0.0
        else replace(model, cold_start_extra=0.0)
    )

    def close_session(language: LanguageTag, when: float) -> None:
        session = open_sessions.pop(language, None)
        if session is None:
            return
        duration = when - session.started_at
        if duration <= 1e-9:
            return
        session_model = cold_model if session.cold else warm_model
        jobs, play = schedule_stream(
            StreamSpec(duration), session_model, segment_duration
        )
        listeners = tuple(
            sorted(
                pid
                for pid, member in meeting.participants.items()
                if member.language == language and pid != meeting.active_speaker
            )
        )
        closed_sessions.append(
            _ClosedSession(
                language=language,
                started_at=session.started_at,
                closed_at=when,
                cold=session.cold,
                startup_delay=play.startup_delay,
                stall_total=play.stall_total,
                listeners=listeners,
                boundaries=tuple(
                    (session.started_at + job.available_at, timing.stall)
                    for job, timing in zip(jobs, play.per_segment)
                ),
            )
        )

    def record_state(when: float) -> None:
        states.append(
            _StatePoint(
                time=when,
                k=len(meeting.routing.pipeline_map),
                n=meeting.size,
                failures_cum=failures,
            )
        )

    def orchestration_pass(
        when: float, speaker: Optional[str], turnover: bool
    ) -> None:
        nonlocal failures
        _, events = update_orchestration(
            meeting,
            speaker,
            time=when,
            translate_same_language=scenario.translate_same_language,
        )
        for event in events:
            if event.kind is EventKind.PIPELINE_DECOMMISSIONED:
                close_session(event.language, when)
            elif event.kind is EventKind.PIPELINE_ALLOCATED:
                close_session(event.language, when)
                open_sessions[event.language] = _OpenSession(
                    language=event.language, started_at=when, cold=True
                )
            elif event.kind is EventKind.PIPELINE_REUSED:
                if event.reinitialized:
                    close_session(event.language, when)
                    open_sessions[event.language] = _OpenSession(
                        language=event.language, started_at=when, cold=True
                    )
                elif turnover:
                    close_session(event.language, when)
                    open_sessions[event.language] = _OpenSession(
                        language=event.language, started_at=when, cold=False
                    )
            elif event.kind is EventKind.ALLOCATION_FAILED:
                failures += 1
                warnings.append(
                    f"allocation failed for language {event.language} at "
                    f"t={when:g} s (pool capacity {meeting.pool.capacity})"
                )
        record_state(when)

    record_state(0.0)
    for event in _ordered_events(scenario):
        when = event.time
        if event.kind is ScenarioEventKind.SPEAKER_CHANGE:
            if event.participant == meeting.active_speaker:
                continue  # repeated floor grant: nothing changes
            orchestration_pass(when, event.participant, turnover=True)
            continue
        if event.kind is ScenarioEventKind.JOIN:
            meeting.participants[event.participant] = Participant(
                id=event.participant, language=LanguageTag(event.language)
            )
        elif event.kind is ScenarioEventKind.LEAVE:
            del meeting.participants[event.participant]
        elif event.kind is ScenarioEventKind.LANGUAGE_CHANGE:
            meeting.participants[event.participant] = Participant(
                id=event.participant, language=LanguageTag(event.language)
            )
        speaker = meeting.active_speaker
        if speaker is not None and speaker not in meeting.participants:
            speaker = None  # the active speaker just left
        orchestration_pass(when, speaker, turnover=False)

    for language in sorted(open_sessions):
        close_session(language, scenario.run_duration)
    record_state(scenario.run_duration)

    return _assemble_report(
        scenario, segment_duration, cost, states, closed_sessions, warnings
    )


def _assemble_report(
    scenario: Scenario,
    segment_duration: float,
    cost: CostModel,
    states: list[_StatePoint],
    sessions: list[_ClosedSession],
    warnings: list[str],
) -> RunReport:
    # collapse same-time state points, keeping the last (post-event) one
    deduped: list[_StatePoint] = []
    for point in states:
        if deduped and deduped[-1].time == point.time:
            deduped[-1] = point
        else:
            deduped.append(point)

    series = MetricsSeries()
    for session in sessions:
        series.turn_startups.append(
            TurnStartup(
                time=session.started_at,
                language=session.language.code,
                startup_delay=session.startup_delay,
                cold=session.cold,
            )
        )
        for listener in session.listeners:
            series.listener_stalls[listener] = (
                series.listener_stalls.get(listener, 0.0) + session.stall_total
            )
    series.turn_startups.sort(key=lambda s: (s.time, s.language))

    # merge state-change samples with per-segment boundary samples; at equal
    # times a boundary belongs to the interval that is ending, so it sorts
    # before the state change
    entries: list[tuple[float, int, str, object]] = []
    for point in deduped:
        entries.append((point.time, 1, "", point))
    for session in sessions:
        for when, stall in session.boundaries:
            entries.append((when, 0, session.language.code, stall))
    entries.sort(key=lambda item: (item[0], item[1], item[2]))

    current = deduped[0]
    stalls_cum = 0.0
    for when, priority, _, payload in entries:
        if priority == 1:
            current = payload  # type: ignore[assignment]
        else:
            stalls_cum += payload  # type: ignore[operator]
        series.samples.append(
            MetricsSample(
                time_s=when,
                k=current.k,
                token_cost=cost.unit_cost * current.k,
                naive_cost=cost_naive(current.n, cost) if current.n >= 2 else 0.0,
                alloc_failures=current.failures_cum,
                stalls_cum=stalls_cum,
            )
        )

    token_integral = 0.0
    naive_integral = 0.0
    k_integral = 0.0
    for point, nxt in zip(deduped, deduped[1:]):
        dt = nxt.time - point.time
        k_integral += point.k * dt
        token_integral += cost.unit_cost * point.k * dt
        if point.n >= 2:
            naive_integral += cost_naive(point.n, cost) * dt

    total_stall = sum(s.stall_total for s in sessions)
    return RunReport(
        scenario_digest=scenario_digest(scenario),
        resolved_segment_duration=segment_duration,
        series=series,
        max_k=max(point.k for point in deduped),
        mean_k=k_integral / scenario.run_duration,
        total_stall_seconds=total_stall,
        cost_ratio=token_integral / naive_integral if naive_integral > 0 else 0.0,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# Cost sweeps


@dataclass(frozen=True)
class SweepRow:
    n: int
    mean_k: float
    token_cost: float
    naive_cost: float


ASSIGNMENTS = ("uniform", "all-distinct", "all-same")


def sweep_cost(
    n_range: list[int],
    language_pool_size: int,
    assignment: str,
    cost: CostModel = CostModel(),
    trials: int = 1,
    seed: int = 42,
) -> list[SweepRow]:
    """Per-meeting-size pipeline counts under three language assignments.

    "all-distinct" is the worst case (every listener needs their own
    language, k = N-1); "all-same" the best (one shared listener language
    distinct from the speaker's, k = 1); "uniform" draws every language
    independently from a pool of the given size and averages k over seeded
    trials, with the speaker's own language excluded from the requirement.
    """
    import random

    if language_pool_size < 1:
        raise ValidationError("language_pool_size must be >= 1")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    for n in n_range:
        if n < 2:
            raise ValidationError(f"meeting sizes must be >= 2, got {n}")

    rng = random.Random(seed)
    rows = []
    for n in n_range:
        if assignment == "all-distinct":
            mean_k = float(n - 1)
        elif assignment == "all-same":
            mean_k = 1.0
        elif assignment == "uniform":
            total = 0
            for _ in range(trials):
                langs = [rng.randrange(language_pool_size) for _ in range(n)]
                total += len(set(langs[1:]) - {langs[0]})
            mean_k = total / trials
        else:
            raise ValidationError(
                f"assignment must be one of {ASSIGNMENTS}, got {assignment!r}"
            )
        rows.append(
            SweepRow(
                n=n,
                mean_k=mean_k,
                token_cost=cost.unit_cost * mean_k,
                naive_cost=cost_naive(n, cost),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Report serialization


def report_to_json(report: RunReport) -> dict:
    return {
        "scenario_digest": report.scenario_digest,
        "resolved_segment_duration": report.resolved_segment_duration,
        "aggregates": {
            "max_k": report.max_k,
            "mean_k": report.mean_k,
            "total_stall_seconds": report.total_stall_seconds,
            "cost_ratio": report.cost_ratio,
        },
        "warnings": list(report.warnings),
        "samples": [
            {
                "time_s": s.time_s,
                "k": s.k,
                "token_cost": s.token_cost,
                "naive_cost": s.naive_cost,
                "alloc_failures": s.alloc_failures,
                "stalls_cum": s.stalls_cum,
            }
            for s in report.series.samples
        ],
        "listener_stalls": dict(sorted(report.series.listener_stalls.items())),
        "turn_startups": [
            {
                "time": t.time,
                "language": t.language,
                "startup_delay": t.startup_delay,
                "cold": t.cold,
            }
            for t in report.series.turn_startups
        ],
    }


def metrics_csv_rows(report: RunReport) -> list[list]:
    rows: list[list] = [list(METRICS_CSV_HEADER)]
    for s in report.series.samples:
        rows.append(
            [s.time_s, s.k, s.token_cost, s.naive_cost, s.alloc_failures, s.stalls_cum]
        )
    return rows


def write_metrics_csv(report: RunReport, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(metrics_csv_rows(report))

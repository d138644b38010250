"""Segmented stream processing on a deterministic virtual clock.

A stream of ``total_duration`` seconds is cut into fixed chunks of
``segment_duration`` (the tail may be shorter), each chunk is processed as a
FIFO job on a bounded worker pool, and completed chunks are emitted strictly
in index order.  Playback starts when the first job finishes — the one-time
startup buffering — and from then on segment k is needed exactly k chunk
durations later.  When the latency model satisfies p(T) < T a single worker
keeps that schedule with zero stalls; when p(T) > T the backlog grows
linearly and the report quantifies it.

Stall accounting follows a player that pauses only when a segment is not
ready at its (already pause-shifted) deadline: the pause before segment k is
the amount by which its lag exceeds the worst lag seen so far.  A
re-buffering player would distribute the same total differently, so
``stall_total`` is the robust quantity and ``stall_count`` the
policy-sensitive one.

``run_external`` is the wall-clock twin of the virtual scheduler: it
materializes chunk files, runs a user command per chunk, and reports real
measured latencies in the measurement-CSV schema of the latency module.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .core import ValidationError
from .latency import LatencyModel, MeasurementSet

__all__ = [
    "ExternalRunResult",
    "PlaybackReport",
    "SegmentJob",
    "SegmentTiming",
    "StreamMode",
    "StreamSpec",
    "ViabilityCheck",
    "check_viability",
    "run_external",
    "schedule_stream",
]

logger = logging.getLogger(__name__)

SEGMENT_FILE_PATTERN = "seg_%05d"


class StreamMode(str, Enum):
    LIVE = "live"  # segment k finishes arriving at (k+1)*T
    BATCH = "batch"  # all data on disk at time 0


@dataclass(frozen=True)
class StreamSpec:
    """A stream to be chunked.  Zero duration is constructible (useful as a
    sentinel in scenario files) but yields no segments to schedule."""

    total_duration: float
    mode: StreamMode = StreamMode.LIVE

    def __post_init__(self) -> None:
        if self.total_duration < 0:
            raise ValidationError("total_duration must be non-negative")
        if not isinstance(self.mode, StreamMode):
            try:
                object.__setattr__(self, "mode", StreamMode(self.mode))
            except ValueError:
                raise ValidationError(
                    f"mode must be 'live' or 'batch', got {self.mode!r}"
                ) from None


@dataclass(frozen=True)
class SegmentJob:
    """One chunk's lifecycle on the virtual clock: it finishes arriving at
    ``available_at``, processing occupies [start_at, finish_at]."""

    index: int
    duration: float
    available_at: float
    start_at: float
    finish_at: float


@dataclass(frozen=True)
class SegmentTiming:
    """Playback view of one segment: when it became emittable, when the
    player needed it, and how long the player paused for it."""

    ready: float
    needed: float
    stall: float


@dataclass(frozen=True)
class ViabilityCheck:
    viable: bool
    tau: float


@dataclass(frozen=True)
class PlaybackReport:
    startup_delay: float
    glass_latency: float
    stall_count: int
    stall_total: float
    per_segment: tuple[SegmentTiming, ...]
    viability: Optional[ViabilityCheck] = None


def check_viability(model: LatencyModel, segment_duration: float) -> ViabilityCheck:
    """Strict real-time test: viable iff p(T)/T < 1.  A ratio of exactly 1.0
    is classified not viable — such a schedule has zero slack and any
    perturbation stalls it."""
    if segment_duration <= 0:
        raise ValidationError(
            f"segment duration must be positive, got {segment_duration}"
        )
    tau = model.tau(segment_duration)
    return ViabilityCheck(viable=tau < 1.0, tau=tau)


def _segments(total_duration: float, segment_duration: float) -> list[tuple[float, float]]:
    """Cut the stream into (duration, live_available_at) pairs.

    Full chunks carry ``segment_duration`` itself (never a subtraction
    residue, so p(duration) is p(T) bit-for-bit); a tail shorter than one
    chunk becomes a final short segment available when the stream ends.
    Durations within 1e-9 s of a whole chunk count as whole.
    """
    if segment_duration <= 0:
        raise ValidationError(
            f"segment duration must be positive, got {segment_duration}"
        )
    n_full = int(total_duration / segment_duration + 1e-9)
    out = [
        (segment_duration, (k + 1) * segment_duration) for k in range(n_full)
    ]
    tail = total_duration - n_full * segment_duration
    if tail > 1e-9:
        out.append((tail, total_duration))
    if not out:
        raise ValidationError("no segments: stream has zero duration")
    return out


def schedule_stream(
    stream: StreamSpec,
    model: LatencyModel,
    segment_duration: float,
    workers: int = 1,
) -> tuple[list[SegmentJob], PlaybackReport]:
    """Deterministic virtual-clock schedule of the chunked stream.

    Jobs are dispatched FIFO to the earliest-free worker; each worker's
    first job pays ``model.cold_start_extra`` on top of p(duration).  A
    non-viable (p(T) >= T) configuration is not rejected — the lag shows up
    in the report, and ``report.viability`` flags it.
    """
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    segments = _segments(stream.total_duration, segment_duration)
    live = stream.mode is StreamMode.LIVE

    worker_free = [0.0] * workers
    worker_started = [False] * workers
    jobs: list[SegmentJob] = []
    startup_delay = 0.0
    for index, (duration, live_available) in enumerate(segments):
        available = live_available if live else 0.0
        w = min(range(workers), key=worker_free.__getitem__)
        start = max(available, worker_free[w])
        processing = model.evaluate(duration)
        if not worker_started[w]:
            processing += model.cold_start_extra
            worker_started[w] = True
        if index == 0:
            # kept as the model's own output (not finish-start), so the
            # reported startup is p(T) with no rounding residue
            startup_delay = processing
        finish = start + processing
        worker_free[w] = finish
        jobs.append(
            SegmentJob(
                index=index,
                duration=duration,
                available_at=available,
                start_at=start,
                finish_at=finish,
            )
        )

    report = _playback_report(
        jobs,
        segment_duration,
        startup_delay,
        live_full_first=live and segments[0][0] == segment_duration,
        viability=check_viability(model, segment_duration),
    )
    return jobs, report


def _playback_report(
    jobs: list[SegmentJob],
    segment_duration: float,
    startup_delay: float,
    live_full_first: bool,
    viability: Optional[ViabilityCheck],
) -> PlaybackReport:
    """Derive the playback timeline from scheduled jobs.

    Segment k is emittable once jobs 0..k have all finished (FIFO front
    emission) and needed at playback_start + k*T, where playback_start is
    the first job's finish.  For a live stream whose first chunk is whole,
    the needed time is computed as (k+1)*T + startup so that it is the same
    float expression as an on-time job's finish — equality, not just
    closeness, in the viable single-worker case.
    """
    if live_full_first:
        needed_times = [
            (k + 1) * segment_duration + startup_delay for k in range(len(jobs))
        ]
    else:
        first_available = jobs[0].available_at
        needed_times = [
            first_available + startup_delay + k * segment_duration
            for k in range(len(jobs))
        ]

    per_segment: list[SegmentTiming] = []
    emittable = jobs[0].finish_at
    worst_lag = 0.0
    stall_count = 0
    stall_total = 0.0
    for job, needed in zip(jobs, needed_times):
        emittable = max(emittable, job.finish_at)
        lag = emittable - needed
        if lag < 0.0:
            lag = 0.0
        stall = lag - worst_lag
        if stall > 0.0:
            worst_lag = lag
            stall_count += 1
            stall_total += stall
        else:
            stall = 0.0
        per_segment.append(SegmentTiming(ready=emittable, needed=needed, stall=stall))

    return PlaybackReport(
        startup_delay=startup_delay,
        glass_latency=jobs[0].duration + startup_delay,
        stall_count=stall_count,
        stall_total=stall_total,
        per_segment=tuple(per_segment),
        viability=viability,
    )


@dataclass(frozen=True)
class ExternalRunResult:
    """Outcome of a wall-clock run: measured rows (possibly partial on
    failure) plus the playback report over whatever segments completed."""

    measurements: MeasurementSet
    report: Optional[PlaybackReport]
    failed_segment: Optional[int] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failed_segment is None


def run_external(
    command_template: str,
    stream: StreamSpec,
    segment_duration: float,
    workdir: "Path | str",
    label: str = "external",
) -> ExternalRunResult:
    """Benchmark a real per-segment command against the chunked schedule.

    Chunks are materialized as opaque files ``seg_%05d`` under ``workdir``;
    the template's ``{input}``/``{output}`` tokens are substituted per
    segment and the command runs once per chunk, serialized FIFO.  In live
    mode the runner sleeps until each chunk would have finished arriving.
    A non-zero exit aborts the run, keeping the rows measured so far.
    """
    if not command_template.strip():
        raise ValidationError("command template must be non-empty")
    segments = _segments(stream.total_duration, segment_duration)
    live = stream.mode is StreamMode.LIVE
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    argv_template = shlex.split(command_template)

    inputs = []
    for index, (duration, _) in enumerate(segments):
        path = workdir / (SEGMENT_FILE_PATTERN % index)
        path.write_bytes(b"segment %d duration %r\n" % (index, duration))
        inputs.append(path)

    measurements = MeasurementSet(label=label)
    jobs: list[SegmentJob] = []
    origin = time.monotonic()
    for index, (duration, live_available) in enumerate(segments):
        available = live_available if live else 0.0
        if live:
            wait = origin + available - time.monotonic()
            if wait > 0:
                time.sleep(wait)
        out_path = workdir / (SEGMENT_FILE_PATTERN % index + ".out")
        argv = [
            token.replace("{input}", str(inputs[index])).replace(
                "{output}", str(out_path)
            )
            for token in argv_template
        ]
        started = time.monotonic() - origin
        proc = subprocess.run(argv, capture_output=True, text=True)
        finished = time.monotonic() - origin
        if proc.returncode != 0:
            logger.error(
                "segment %d command exited %d: %s",
                index,
                proc.returncode,
                proc.stderr.strip(),
            )
            return ExternalRunResult(
                measurements=measurements,
                report=_external_report(jobs, segment_duration),
                failed_segment=index,
                error=proc.stderr.strip() or f"exit status {proc.returncode}",
            )
        measurements.add(duration, finished - started, run=index)
        jobs.append(
            SegmentJob(
                index=index,
                duration=duration,
                available_at=available,
                start_at=started,
                finish_at=finished,
            )
        )
    return ExternalRunResult(
        measurements=measurements, report=_external_report(jobs, segment_duration)
    )


def _external_report(
    jobs: list[SegmentJob], segment_duration: float
) -> Optional[PlaybackReport]:
    if not jobs:
        return None
    startup = jobs[0].finish_at - jobs[0].available_at
    return _playback_report(
        jobs, segment_duration, startup, live_full_first=False, viability=None
    )

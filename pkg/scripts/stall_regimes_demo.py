#!/usr/bin/env python3
"""Playback regimes per hardware tier: smooth after one buffering event
when tau(T) < 1, unbounded lag growth when tau(T) > 1.

For each bundled tier, schedules a two-party live meeting at the tier's
preferred segment duration (smallest tabulated duration with tau < 1, or
the largest tabulated duration when none qualifies) and prints startup
delay, glass latency, and accumulated stalls.
"""

from __future__ import annotations

import argparse

from streamring.simulator import Scenario, ScenarioEvent, run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-seconds", type=float, default=60.0,
                        help="meeting length to simulate (default 60)")
    args = parser.parse_args()

    for label in ("A100", "RTX4060", "T4"):
        scenario = Scenario(
            participants=[("speaker", "en"), ("listener", "de")],
            pool_capacity=1,
            model_spec={"fixture": label, "form": "table"},
            segment_duration="auto",
            run_duration=args.run_seconds,
            events=[
                ScenarioEvent(time=0.0, kind="speaker-change",
                              participant="speaker")
            ],
        )
        report = run_scenario(scenario)
        (startup,) = report.series.turn_startups
        glass = report.resolved_segment_duration + startup.startup_delay
        stalls = report.series.listener_stalls["listener"]
        regime = "real-time" if stalls == 0.0 else "lagging"
        print(f"== {label}  ({regime})")
        print(f"   segment duration: {report.resolved_segment_duration:g} s")
        print(f"   startup delay:    {startup.startup_delay:.2f} s"
              f"   glass latency: {glass:.2f} s")
        print(f"   stalls over {args.run_seconds:g} s: "
              f"{stalls:.2f} s total")
        for warning in report.warnings:
            print(f"   note: {warning}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

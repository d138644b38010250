"""Processing-latency models, throughput analysis, and calibration.

A model maps segment duration t to pipeline processing time p(t).  The ratio
tau(t) = p(t)/t decides viability: tau < 1 means the pipeline runs ahead of
real time for segments of that length.  Three parameterizations are
supported:

  affine  p(t) = a + b*t
  log     p(t) = a + b*ln(t)
  table   monotone piecewise-linear interpolation of measured (t, p) points

Calibration fits the parametric forms to per-duration means of a
MeasurementSet by least squares; the solvers locate the smallest segment
duration with tau < 1, either over a measured grid or continuously.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import warnings
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import ValidationError

FORM_AFFINE = "affine"
FORM_LOG = "log"
FORM_TABLE = "table"
_FORMS = (FORM_AFFINE, FORM_LOG, FORM_TABLE)

MEASUREMENT_CSV_HEADER = ("label", "t_seconds", "run", "p_seconds")

_BUNDLED_CSV = Path(__file__).parent / "data" / "hardware_tiers.csv"

#: Default upper limit for the continuous viability search, in seconds.
DEFAULT_T_SEARCH_MAX = 600.0


class InsufficientDataError(ValidationError):
    """Calibration needs at least two distinct segment durations."""


class ExtrapolationWarning(UserWarning):
    """A table model was evaluated outside its measured duration range."""


@dataclass(frozen=True)
class LatencyModel:
    """p(t) in one of the three parameterizations.

    ``cold_start_extra`` is added to the first segment a pipeline processes
    after (re)initialization; it is applied by the scheduler, not by
    ``evaluate``.  ``valid_range`` bounds the measured durations for table
    models; evaluation outside it extrapolates with the clamped end-segment
    slope and warns.
    """

    form: str
    a: float = 0.0
    b: float = 0.0
    points: tuple[tuple[float, float], ...] = ()
    valid_range: Optional[tuple[float, float]] = None
    cold_start_extra: float = 0.0

    def __post_init__(self) -> None:
        if self.form not in _FORMS:
            raise ValidationError(f"unknown model form {self.form!r}")
        if self.cold_start_extra < 0:
            raise ValidationError("cold_start_extra must be non-negative")
        if self.form == FORM_TABLE:
            if len(self.points) < 2:
                raise ValidationError("table model needs at least 2 points")
            ts = [t for t, _ in self.points]
            if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])):
                raise ValidationError("table durations must be strictly increasing")
            if any(t <= 0 for t in ts) or any(p <= 0 for _, p in self.points):
                raise ValidationError("table durations and latencies must be positive")
            if self.valid_range is None:
                object.__setattr__(self, "valid_range", (ts[0], ts[-1]))
        else:
            if self.a < 0:
                raise ValidationError("intercept a must be non-negative")
            if self.b < 0:
                raise ValidationError("slope b must be non-negative")
            if self.a == 0 and self.b == 0:
                raise ValidationError("model is identically zero")

    def evaluate(self, t: float) -> float:
        """Processing time p(t) for a segment of duration ``t`` seconds."""
        if t <= 0:
            raise ValidationError(f"segment duration must be positive, got {t}")
        if self.form == FORM_AFFINE:
            return self.a + self.b * t
        if self.form == FORM_LOG:
            p = self.a + self.b * math.log(t)
            if p <= 0:
                raise ValidationError(
                    f"log model is non-positive at t={t} (outside meaningful range)"
                )
            return p
        return self._interpolate(t)

    def tau(self, t: float) -> float:
        """Reciprocal throughput p(t)/t; < 1 means ahead of real time."""
        return self.evaluate(t) / t

    def _interpolate(self, t: float) -> float:
        ts = [pt for pt, _ in self.points]
        ps = [pp for _, pp in self.points]
        if t < ts[0] or t > ts[-1]:
            warnings.warn(
                f"t={t} outside measured range [{ts[0]}, {ts[-1]}]; "
                "extrapolating with clamped end-segment slope",
                ExtrapolationWarning,
                stacklevel=3,
            )
            if t < ts[0]:
                slope = (ps[1] - ps[0]) / (ts[1] - ts[0])
                return ps[0] + slope * (t - ts[0])
            slope = (ps[-1] - ps[-2]) / (ts[-1] - ts[-2])
            return ps[-1] + slope * (t - ts[-1])
        i = bisect_left(ts, t)
        if ts[i] == t:
            return ps[i]
        frac = (t - ts[i - 1]) / (ts[i] - ts[i - 1])
        return ps[i - 1] + frac * (ps[i] - ps[i - 1])


@dataclass(frozen=True)
class ThroughputPoint:
    """A measured (t, p) pair with its exact ratio tau = p/t."""

    t: float
    p: float
    tau: float = field(init=False)

    def __post_init__(self) -> None:
        if self.t <= 0:
            raise ValidationError("duration must be positive")
        object.__setattr__(self, "tau", self.p / self.t)


@dataclass(frozen=True)
class MeasurementSample:
    t: float
    p: float
    run: int


@dataclass
class MeasurementSet:
    """Timing samples for one hardware/pipeline label, possibly multiple runs
    per duration.  Aggregation is by per-duration mean and standard deviation."""

    label: str
    samples: list[MeasurementSample] = field(default_factory=list)

    def add(self, t: float, p: float, run: int = 0) -> None:
        if t <= 0:
            raise ValidationError(f"duration must be positive, got {t}")
        self.samples.append(MeasurementSample(t=t, p=p, run=run))

    def durations(self) -> list[float]:
        return sorted({s.t for s in self.samples})

    def means(self) -> list[tuple[float, float]]:
        out = []
        for t in self.durations():
            runs = [s.p for s in self.samples if s.t == t]
            out.append((t, statistics.fmean(runs)))
        return out

    def stdevs(self) -> list[tuple[float, float]]:
        out = []
        for t in self.durations():
            runs = [s.p for s in self.samples if s.t == t]
            out.append((t, statistics.stdev(runs) if len(runs) > 1 else 0.0))
        return out

    def throughput_points(self) -> list[ThroughputPoint]:
        return [ThroughputPoint(t=t, p=p) for t, p in self.means()]


@dataclass(frozen=True)
class FitDiagnostics:
    form: str
    rmse: float
    residuals: tuple[tuple[float, float], ...]
    n_durations: int


def fit(
    measurements: MeasurementSet,
    form: str,
    cold_start_extra: float = 0.0,
) -> tuple[LatencyModel, FitDiagnostics]:
    """Least-squares fit of the affine or log form to per-duration means.

    Raises InsufficientDataError with fewer than two distinct durations and
    ValidationError if the fitted parameters fall outside the model's
    admissible region (negative slope or intercept).
    """
    if form not in (FORM_AFFINE, FORM_LOG):
        raise ValidationError(f"can only fit 'affine' or 'log', got {form!r}")
    means = measurements.means()
    if len(means) < 2:
        raise InsufficientDataError(
            f"need >= 2 distinct durations to fit, got {len(means)}"
        )
    ts = [t for t, _ in means]
    ps = [p for _, p in means]
    xs = ts if form == FORM_AFFINE else [math.log(t) for t in ts]
    b, a = statistics.linear_regression(xs, ps)  # returns (slope, intercept)
    # Least squares on data whose true parameter is 0 can land at -1e-17;
    # snap those artifacts back instead of rejecting the fit.
    if -1e-9 < a < 0.0:
        a = 0.0
    if -1e-9 < b < 0.0:
        b = 0.0
    model = LatencyModel(
        form=form,
        a=a,
        b=b,
        valid_range=(ts[0], ts[-1]),
        cold_start_extra=cold_start_extra,
    )
    residuals = tuple((t, p - model.evaluate(t)) for t, p in means)
    rmse = math.sqrt(statistics.fmean([r * r for _, r in residuals]))
    return model, FitDiagnostics(
        form=form, rmse=rmse, residuals=residuals, n_durations=len(means)
    )


def fit_auto(
    measurements: MeasurementSet, cold_start_extra: float = 0.0
) -> tuple[LatencyModel, FitDiagnostics]:
    """Fit both parametric forms and keep the one with lower RMSE."""
    candidates = []
    for form in (FORM_AFFINE, FORM_LOG):
        try:
            candidates.append(fit(measurements, form, cold_start_extra))
        except InsufficientDataError:
            raise
        except ValidationError:
            continue
    if not candidates:
        raise ValidationError("no admissible parametric fit for this data")
    return min(candidates, key=lambda pair: pair[1].rmse)


def table_model(
    measurements: MeasurementSet, cold_start_extra: float = 0.0
) -> LatencyModel:
    """Non-parametric model interpolating the per-duration means directly."""
    means = measurements.means()
    if len(means) < 2:
        raise InsufficientDataError(
            f"need >= 2 distinct durations for a table model, got {len(means)}"
        )
    return LatencyModel(
        form=FORM_TABLE,
        points=tuple(means),
        cold_start_extra=cold_start_extra,
    )


def t_opt_discrete(points: Iterable[ThroughputPoint]) -> Optional[float]:
    """Smallest measured duration with tau < 1.0, or None if none qualifies."""
    pts = sorted(points, key=lambda p: p.t)
    if not pts:
        raise ValidationError("need at least one throughput point")
    if len({p.t for p in pts}) != len(pts):
        raise ValidationError("throughput points must have distinct durations")
    for point in pts:
        if point.tau < 1.0:
            return point.t
    return None


def t_opt_continuous(
    model: LatencyModel, t_search_max: float = DEFAULT_T_SEARCH_MAX
) -> Optional[float]:
    """Least t with tau(t) < 1, or None if the model never reaches real time
    below ``t_search_max``.

    Affine models solve in closed form: t = a / (1 - b), impossible for
    b >= 1.  Log and table models bisect on t - p(t), walking down from
    t_search_max to bracket the lag-to-viable crossing.
    """
    if model.form == FORM_AFFINE:
        if model.b >= 1.0:
            return None
        crossing = model.a / (1.0 - model.b)
        return crossing if crossing <= t_search_max else None
    return _bisect_crossing(model, t_search_max)


def _bisect_crossing(model: LatencyModel, t_search_max: float) -> Optional[float]:
    def gap(t: float) -> float:
        return t - model.evaluate(t)

    if gap(t_search_max) <= 0:
        return None
    # Walk down geometrically until inside the lag regime (gap <= 0).
    hi = t_search_max
    lo = t_search_max / 2.0
    floor = 1e-6
    while lo > floor:
        try:
            if gap(lo) <= 0:
                break
        except ValidationError:
            # Below the model's meaningful range: everything above was viable.
            return lo * 2.0
        hi = lo
        lo /= 2.0
    else:
        return lo * 2.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if gap(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12:
            break
    return (lo + hi) / 2.0


# ---------------------------------------------------------------------------
# Measurement CSV and model JSON interchange


def write_measurement_csv(
    path: "Path | str", sets: Iterable[MeasurementSet]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENT_CSV_HEADER)
        for mset in sets:
            for s in mset.samples:
                writer.writerow([mset.label, s.t, s.run, s.p])


def read_measurement_csv(path: "Path | str") -> dict[str, MeasurementSet]:
    """Parse a measurement CSV into per-label sets; raises ValidationError
    with the offending line number on malformed rows."""
    sets: dict[str, MeasurementSet] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InsufficientDataError(f"{path}: insufficient data (empty file)")
        if [h.strip() for h in header] != list(MEASUREMENT_CSV_HEADER):
            raise ValidationError(
                f"{path}: line 1: expected header "
                f"{','.join(MEASUREMENT_CSV_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ValidationError(
                    f"{path}: line {lineno}: expected 4 fields, got {len(row)}"
                )
            label = row[0].strip()
            if not label:
                raise ValidationError(f"{path}: line {lineno}: empty label")
            try:
                t = float(row[1])
                run = int(row[2])
                p = float(row[3])
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
            if t <= 0:
                raise ValidationError(
                    f"{path}: line {lineno}: duration must be positive, got {t}"
                )
            sets.setdefault(label, MeasurementSet(label=label)).add(t, p, run)
    return sets


def load_bundled_measurements() -> dict[str, MeasurementSet]:
    """The packaged hardware-tier calibration fixture (per-duration means)."""
    return read_measurement_csv(_BUNDLED_CSV)


def model_to_json(model: LatencyModel) -> dict:
    params: dict
    if model.form == FORM_TABLE:
        params = {"points": [[t, p] for t, p in model.points]}
    else:
        params = {"a": model.a, "b": model.b}
    return {
        "form": model.form,
        "params": params,
        "valid_range": list(model.valid_range) if model.valid_range else None,
        "cold_start_extra": model.cold_start_extra,
    }


def model_from_json(data: dict) -> LatencyModel:
    try:
        form = data["form"]
        params = data["params"]
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"model JSON missing field: {exc}") from None
    if form not in _FORMS:
        raise ValidationError(f"unknown model form {form!r}")
    valid_range = data.get("valid_range")
    kwargs = {
        "form": form,
        "valid_range": tuple(valid_range) if valid_range else None,
        "cold_start_extra": float(data.get("cold_start_extra", 0.0)),
    }
    try:
        if form == FORM_TABLE:
            kwargs["points"] = tuple((float(t), float(p)) for t, p in params["points"])
        else:
            kwargs["a"] = float(params["a"])
            kwargs["b"] = float(params["b"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ValidationError(f"malformed model params: {exc}") from None
    return LatencyModel(**kwargs)


def save_model(model: LatencyModel, path: "Path | str") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: "Path | str") -> LatencyModel:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    return model_from_json(data)


def with_cold_start(model: LatencyModel, cold_start_extra: float) -> LatencyModel:
    return replace(model, cold_start_extra=cold_start_extra)

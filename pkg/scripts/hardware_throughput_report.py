#!/usr/bin/env python3
"""Per-tier throughput report from the bundled calibration fixture.

For each hardware label: the measured tau = p(t)/t table, the auto-selected
parametric fit with its RMSE, the smallest tabulated real-time-viable
segment duration, and the continuous tau = 1 crossing.  With --out, also
writes the plot-ready long-format CSV (label, t_seconds, p_seconds, tau).
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from streamring.latency import (
    fit_auto,
    load_bundled_measurements,
    t_opt_continuous,
    t_opt_discrete,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None,
                        help="write the long-format tau CSV here")
    args = parser.parse_args()

    rows = []
    for label, mset in sorted(load_bundled_measurements().items()):
        model, diag = fit_auto(mset)
        points = mset.throughput_points()
        discrete = t_opt_discrete(points)
        continuous = t_opt_continuous(model)
        print(f"== {label}")
        print(f"   fit: {model.form}  a={model.a:.4f}  b={model.b:.4f}  "
              f"rmse={diag.rmse:.4g}")
        for pt in points:
            regime = "real-time" if pt.tau < 1.0 else "lagging"
            print(f"   T={pt.t:>4g}  p={pt.p:>6.2f}  tau={pt.tau:.3f}  {regime}")
            rows.append([label, pt.t, pt.p, pt.tau])
        fmt = lambda v: "none" if v is None else f"{v:.3f}"
        print(f"   T_opt tabulated: {fmt(discrete)}   "
              f"continuous crossing: {fmt(continuous)}")

    if args.out is not None:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "t_seconds", "p_seconds", "tau"])
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Render figures from run directories.

Usage: render.py --runs DIR [DIR ...] --out DIR

Reads only diagnostics.csv and manifest.json from each run directory.
Always writes energy_law.svg; writes decay_and_scaling.svg when at
least one run carries a decay budget column.  Exit code 2 flags
unreadable or malformed inputs.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

if __package__:
    from .figures import plot_decay_and_scaling, plot_energy_law
    from .runseries import RunSeries, SchemaMismatch
else:  # executed as a plain script
    from figures import plot_decay_and_scaling, plot_energy_law
    from runseries import RunSeries, SchemaMismatch


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", nargs="+", required=True, metavar="DIR")
    parser.add_argument("--out", required=True, metavar="DIR")
    args = parser.parse_args(argv)

    try:
        runs = [RunSeries.load(d) for d in args.runs]
    except (SchemaMismatch, OSError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 2

    written = [plot_energy_law(runs, f"{args.out}/energy_law.svg")]
    budgeted = [r for r in runs if np.isfinite(r.column("xi_running")).any()]
    if budgeted:
        written.append(
            plot_decay_and_scaling(budgeted, f"{args.out}/decay_and_scaling.svg")
        )
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

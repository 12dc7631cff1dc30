"""Parsed view of one run directory: diagnostics columns plus manifest.

The column schema must match the solver package's CSV header exactly;
anything else raises SchemaMismatch rather than guessing.  Values are
floats with empty cells mapped to NaN, so optional columns (E_big,
xi_running, picard_iters) stay addressable without special cases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from prestrain_lab.diagnostics import CSV_COLUMNS


class SchemaMismatch(Exception):
    """diagnostics.csv does not have the documented shape."""


def _parse_cell(cell: str) -> float:
    return float(cell) if cell else float("nan")


@dataclass(frozen=True)
class RunSeries:
    """Columns of one diagnostics.csv plus its manifest metadata."""

    path: Path
    columns: dict = field(repr=False)
    manifest: dict = field(repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"no column {name!r} in {self.path}")
        return self.columns[name]

    @property
    def eps(self) -> float:
        return float(self.manifest.get("config", {}).get("scheme", {}).get("eps", 0.0))

    @property
    def dt(self) -> float:
        return float(self.manifest.get("config", {}).get("scheme", {}).get("dt", 0.0))

    @property
    def amplitude(self) -> float:
        return float(
            self.manifest.get("config", {}).get("data", {}).get("amplitude", 0.0)
        )

    @property
    def label(self) -> str:
        return self.path.name

    @classmethod
    def load(cls, run_dir) -> "RunSeries":
        run_dir = Path(run_dir)
        csv_path = run_dir / "diagnostics.csv"
        if not csv_path.is_file():
            raise SchemaMismatch(f"{run_dir}: no diagnostics.csv")
        lines = csv_path.read_text(encoding="ascii").splitlines()
        if not lines:
            raise SchemaMismatch(f"{csv_path}: empty file")
        header = lines[0].split(",")
        if header != list(CSV_COLUMNS):
            raise SchemaMismatch(
                f"{csv_path}: header {header} does not match the documented schema"
            )
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            cells = line.split(",")
            if len(cells) != len(CSV_COLUMNS):
                raise SchemaMismatch(
                    f"{csv_path}:{lineno}: {len(cells)} cells for "
                    f"{len(CSV_COLUMNS)} columns"
                )
            try:
                rows.append([_parse_cell(c) for c in cells])
            except ValueError as exc:
                raise SchemaMismatch(f"{csv_path}:{lineno}: {exc}") from exc
        if not rows:
            raise SchemaMismatch(f"{csv_path}: no data rows")
        data = np.asarray(rows, dtype=float)
        t = data[:, 0]
        if np.any(np.diff(t) <= 0.0):
            raise SchemaMismatch(f"{csv_path}: rows not strictly increasing in t")

        manifest_path = run_dir / "manifest.json"
        manifest = {}
        if manifest_path.is_file():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        columns = {name: data[:, i] for i, name in enumerate(CSV_COLUMNS)}
        return cls(path=run_dir, columns=columns, manifest=manifest)

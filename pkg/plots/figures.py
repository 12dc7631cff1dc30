"""Deterministic SVG figures over parsed run series.

Figures are pure views of the CSV columns: the only arithmetic applied
is the trapezoid accumulation of the recorded dissipation and log-log
slope fits, and every fitted slope is annotated together with its fit
residual.  Styles, ids, and metadata are pinned so the same inputs
produce byte-identical SVG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.integrate import cumulative_trapezoid

_RC = {
    "svg.hashsalt": "prestrain-lab",
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "path.simplify": False,
}

_COLORS = plt.cm.tab10.colors


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def _energy_column(run) -> tuple[np.ndarray, str]:
    if run.eps > 0.0:
        return run.column("E_eps"), "E_eps"
    return run.column("E0"), "E0"


def plot_energy_law(runs, out_path) -> Path:
    """Energy plus accumulated dissipation, overlaid on its t=0 value.

    Top panel: the balance curve per run against a dashed line at the
    initial energy.  Bottom panel: the balance defect on a symlog axis,
    so exact closures sit on the zero line and dt-halved runs stack in
    order of their step size.
    """
    if not runs:
        raise ValueError("plot_energy_law needs at least one run")
    runs = sorted(runs, key=lambda r: (-r.dt, r.label))
    with plt.rc_context(_RC):
        fig, (ax_balance, ax_defect) = plt.subplots(
            2, 1, sharex=True, height_ratios=(2, 1)
        )
        for i, run in enumerate(runs):
            color = _COLORS[i % len(_COLORS)]
            energy, name = _energy_column(run)
            t = run.t
            balance = energy + cumulative_trapezoid(
                run.column("dissipation"), t, initial=0.0
            )
            label = f"{run.label} (dt={run.dt:g}"
            label += f", eps={run.eps:g})" if run.eps > 0.0 else ")"
            ax_balance.plot(t, balance, color=color, lw=1.2, label=label)
            ax_balance.axhline(energy[0], color=color, lw=0.7, ls="--")
            ax_defect.plot(t, balance - energy[0], color=color, lw=1.0)
        ax_balance.set_ylabel(f"{name} + integrated dissipation")
        ax_balance.legend(loc="best")
        ax_defect.set_yscale("symlog", linthresh=1e-14)
        ax_defect.set_ylabel("balance defect")
        ax_defect.set_xlabel("t")
        fig.align_ylabels()
        return _save(fig, out_path)


def _scaling_points(runs) -> tuple[np.ndarray, np.ndarray]:
    amps, xis = [], []
    for run in runs:
        xi = run.column("xi_running")
        finite = np.isfinite(xi)
        if finite.any() and run.amplitude > 0.0:
            amps.append(run.amplitude)
            xis.append(float(xi[finite][-1]))
    return np.asarray(amps), np.asarray(xis)


def plot_decay_and_scaling(runs, out_path) -> Path:
    """Decay curves next to the amplitude scaling of the decay budget.

    Left: sqrt(2 E0) per run, the energy-derived size of the state,
    which for the diffusive solver decays monotonically.  Right: final
    accumulated budget against seed amplitude on log-log axes with the
    fitted slope and its fit residual annotated.
    """
    if not runs:
        raise ValueError("plot_decay_and_scaling needs at least one run")
    runs = sorted(runs, key=lambda r: (-r.amplitude, r.label))
    with plt.rc_context(_RC):
        fig, (ax_decay, ax_scale) = plt.subplots(
            1, 2, figsize=(7.6, 3.4), constrained_layout=True
        )
        for i, run in enumerate(runs):
            color = _COLORS[i % len(_COLORS)]
            size = np.sqrt(2.0 * np.maximum(run.column("E0"), 0.0))
            ax_decay.plot(run.t, size, color=color, lw=1.2, label=run.label)
        ax_decay.set_xlabel("t")
        ax_decay.set_ylabel("sqrt(2 E0)")
        ax_decay.set_yscale("log")
        ax_decay.legend(loc="best")

        amps, xis = _scaling_points(runs)
        if amps.size >= 2:
            x, y = np.log(amps), np.log(xis)
            slope, intercept = np.polyfit(x, y, 1)
            fit_residual = float(np.max(np.abs(y - (slope * x + intercept))))
            grid = np.linspace(x.min(), x.max(), 64)
            ax_scale.plot(
                np.exp(grid), np.exp(slope * grid + intercept), color="0.4", lw=0.9
            )
            ax_scale.set_title(
                f"slope = {slope:.3f} (fit residual {fit_residual:.2e})", fontsize=9
            )
        else:
            ax_scale.set_title("slope not fitted: need >= 2 budgeted runs", fontsize=9)
        if amps.size:
            ax_scale.plot(amps, xis, "o", color=_COLORS[0], ms=4)
        ax_scale.set_xscale("log")
        ax_scale.set_yscale("log")
        ax_scale.set_xlabel("seed amplitude")
        ax_scale.set_ylabel("final decay budget")
        return _save(fig, out_path)

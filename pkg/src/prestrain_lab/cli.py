"""Command surface binding solvers, diagnostics, and run directories.

Every command materializes a self-describing run directory: the
effective configuration echo (config.txt), a manifest (manifest.json:
status, wall time, versions, config), diagnostics.csv in the documented
column order, and final-state field blobs.  diagnostics.csv is a pure
function of config + seed, so identical invocations produce identical
bytes; the manifest carries timing and is not byte-stable.

Exit codes: 0 success, 2 configuration problems, 3 solver failure (the
failing time lands in the manifest), 4 verification failure.

Sweep commands fan out their member runs on a thread pool capped by
PRESTRAIN_LAB_THREADS (default 1: strictly sequential).
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from .config import (
    RunConfig,
    config_as_dict,
    parse_config,
    render_config,
    validate,
)
from .diagnostics import (
    decay_budget_update,
    energy_law_residual,
    gather_record,
    twin_divergence,
    write_csv,
)
from .dynamic import DynamicConfig, DynamicState, run_dynamic
from .energy import (
    appendix_inequality_check,
    axiom_check,
    coercivity_check,
)
from .errors import ParseError, PrestrainLabError, ValidationError
from .initial_data import (
    build_initial_data,
    grid_from_config,
    model_from_config,
    perturb_phi,
)
from .quasistatic import advance_quasistatic, assemble_symbols
from .spectral import ScalarField, VectorField, gradient
from .threads import thread_cap

__all__ = ["main"]

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_SOLVER = 3
_EXIT_VERIFY = 4


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("prestrain-lab")
    except Exception:
        return "unknown"


def _dyn_config(config: RunConfig) -> DynamicConfig:
    s = config.scheme
    return DynamicConfig(
        dt=s.dt,
        t_end=s.t_end,
        eps=s.eps,
        n_galerkin=s.n_galerkin,
        a_split=s.a_split,
        cfl_safety=s.cfl_safety,
        cfl_check_every=s.cfl_check_every,
        growth_factor=s.growth_factor,
    )


def _prepare_out(config: RunConfig) -> Path:
    out = Path(config.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(render_config(config), encoding="ascii")
    return out


def _write_manifest(
    out: Path,
    verb: str,
    config: RunConfig,
    status: str,
    wall: float,
    extra: dict | None = None,
    failure: dict | None = None,
) -> None:
    manifest = {
        "verb": verb,
        "status": status,
        "wall_time_s": wall,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "prestrain_lab": _package_version(),
        },
        "config": config_as_dict(config),
    }
    if extra:
        manifest.update(extra)
    if failure:
        manifest["failure"] = failure
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _failure_dict(exc: PrestrainLabError) -> dict:
    info = {"error": type(exc).__name__, "message": str(exc)}
    failing_time = getattr(exc, "time", None)
    if failing_time is not None:
        info["time"] = failing_time
    return info


def _save_state(out: Path, state) -> None:
    (out / "final_w.bin").write_bytes(state.w.to_bytes())
    (out / "final_phi.bin").write_bytes(state.phi.to_bytes())
    v = getattr(state, "v", None)
    if v is not None:
        (out / "final_v.bin").write_bytes(v.to_bytes())


def _heavy(config: RunConfig, record_index: int) -> bool:
    stride = config.io.heavy_stride
    return stride > 0 and record_index % stride == 0


# -- simulate ----------------------------------------------------------------


def _run_simulate(config: RunConfig, out: Path, sinks=()) -> tuple[int, list, dict]:
    """Shared dynamic-run driver: records, CSV, blobs, manifest pieces."""
    model = model_from_config(config)
    init = build_initial_data(config)
    records = []

    def record_sink(state):
        records.append(
            gather_record(
                state,
                model,
                eps=config.scheme.eps,
                heavy=_heavy(config, len(records)),
            )
        )

    start = time.perf_counter()
    try:
        summary = run_dynamic(
            _dyn_config(config),
            model,
            init,
            sinks=(record_sink,) + tuple(sinks),
            stride=config.io.stride,
        )
    except PrestrainLabError as exc:
        write_csv(records, out / "diagnostics.csv")
        _write_manifest(
            out,
            "simulate",
            config,
            "failed",
            time.perf_counter() - start,
            failure=_failure_dict(exc),
        )
        return _EXIT_SOLVER, records, {}
    wall = time.perf_counter() - start
    write_csv(records, out / "diagnostics.csv")
    if config.io.save_final_state:
        _save_state(out, summary.final_state)
    extra = {"steps": summary.steps, "final_t": summary.final_state.t}
    _write_manifest(out, "simulate", config, "completed", wall, extra=extra)
    return _EXIT_OK, records, {"final_state": summary.final_state}


def cmd_simulate(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    code, _, _ = _run_simulate(config, out)
    return code


# -- quasistatic -------------------------------------------------------------


def cmd_quasistatic(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    model = model_from_config(config)
    grid = grid_from_config(config)
    scheme = config.scheme
    quasi = config.quasi
    records = []
    budget = None
    start = time.perf_counter()

    def record(state, iters):
        nonlocal budget
        budget = decay_budget_update(budget, state)
        records.append(
            gather_record(
                state,
                model,
                heavy=_heavy(config, len(records)),
                xi=budget.value,
                picard_iters=iters,
            )
        )

    try:
        symbols = assemble_symbols(model, grid)
        stats: dict = {}
        state = advance_quasistatic(
            build_initial_data(config, quasi=True),
            0.0,
            model,
            symbols,
            picard_tol=quasi.picard_tol,
            max_iter=quasi.max_iter,
            elliptic_tol=quasi.elliptic_tol,
            stats=stats,
        )
        record(state, stats["iterations"])
        nsteps = max(0, int(round(scheme.t_end / scheme.dt)))
        for istep in range(1, nsteps + 1):
            state = advance_quasistatic(
                state,
                scheme.dt,
                model,
                symbols,
                picard_tol=quasi.picard_tol,
                max_iter=quasi.max_iter,
                elliptic_tol=quasi.elliptic_tol,
                stats=stats,
            )
            if istep % config.io.stride == 0 or istep == nsteps:
                record(state, stats["iterations"])
    except PrestrainLabError as exc:
        write_csv(records, out / "diagnostics.csv")
        _write_manifest(
            out,
            "quasistatic",
            config,
            "failed",
            time.perf_counter() - start,
            failure=_failure_dict(exc),
        )
        return _EXIT_SOLVER
    wall = time.perf_counter() - start
    write_csv(records, out / "diagnostics.csv")
    if config.io.save_final_state:
        _save_state(out, state)
    _write_manifest(
        out,
        "quasistatic",
        config,
        "completed",
        wall,
        extra={"steps": nsteps, "final_t": state.t},
    )
    return _EXIT_OK


# -- twin --------------------------------------------------------------------


def cmd_twin(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    model = model_from_config(config)
    grid = grid_from_config(config)
    delta = args.delta
    base_init = build_initial_data(config)
    other_init = perturb_phi(base_init, config, delta)
    start = time.perf_counter()

    snapshots: list[tuple[float, np.ndarray, np.ndarray]] = []
    rows: list[tuple[float, float]] = []

    def sink_a(state):
        snapshots.append((state.t, state.phi.coeffs.copy(), state.w.coeffs.copy()))

    def sink_b(state):
        t_a, phi_a, w_a = snapshots[len(rows)]
        shadow = DynamicState(
            VectorField(grid, w_a), state.v, ScalarField(grid, phi_a), t_a
        )
        rows.append((state.t, twin_divergence(state, shadow)))

    try:
        for sub, sink in (("a", sink_a), ("b", sink_b)):
            sub_config = replace(
                config, io=replace(config.io, out_dir=str(out / sub))
            )
            sub_out = _prepare_out(sub_config)
            init = base_init if sub == "a" else other_init
            records = []

            def record_sink(state, records=records, sub_config=sub_config):
                records.append(
                    gather_record(
                        state,
                        model,
                        eps=sub_config.scheme.eps,
                        heavy=_heavy(sub_config, len(records)),
                    )
                )

            sub_start = time.perf_counter()
            summary = run_dynamic(
                _dyn_config(sub_config),
                model,
                init,
                sinks=(record_sink, sink),
                stride=sub_config.io.stride,
            )
            sub_wall = time.perf_counter() - sub_start
            write_csv(records, sub_out / "diagnostics.csv")
            if sub_config.io.save_final_state:
                _save_state(sub_out, summary.final_state)
            _write_manifest(
                sub_out,
                "twin",
                sub_config,
                "completed",
                sub_wall,
                extra={"twin_member": sub, "delta": delta if sub == "b" else 0.0},
            )
    except PrestrainLabError as exc:
        _write_manifest(
            out,
            "twin",
            config,
            "failed",
            time.perf_counter() - start,
            failure=_failure_dict(exc),
        )
        return _EXIT_SOLVER

    if len(rows) != len(snapshots):
        raise RuntimeError("twin runs recorded different numbers of snapshots")
    lines = ["t,twin_divergence"]
    lines += [f"{t!r},{d!r}" for t, d in rows]
    (out / "twin.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    _write_manifest(
        out,
        "twin",
        config,
        "completed",
        time.perf_counter() - start,
        extra={"delta": delta, "final_divergence": rows[-1][1]},
    )
    return _EXIT_OK


# -- convergence -------------------------------------------------------------


def _fan_out(jobs):
    workers = thread_cap()
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def cmd_convergence(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    start = time.perf_counter()
    levels = args.levels

    def run_level(k: int):
        sub = replace(
            config,
            scheme=replace(config.scheme, dt=config.scheme.dt / 2**k),
            io=replace(config.io, out_dir=str(out / f"level_{k}")),
        )
        sub_out = _prepare_out(sub)
        code, records, _ = _run_simulate(sub, sub_out)
        field = "E_eps" if sub.scheme.eps > 0.0 else "E0"
        residual = energy_law_residual(records, field) if code == _EXIT_OK else None
        return code, sub.scheme.dt, residual

    results = _fan_out([lambda k=k: run_level(k) for k in range(levels)])
    failed = any(code != _EXIT_OK for code, _, _ in results)

    lines = ["level,dt,energy_law_residual,ratio_to_previous"]
    prev = None
    for k, (code, dt, residual) in enumerate(results):
        if residual is None:
            lines.append(f"{k},{dt!r},,")
            prev = None
            continue
        ratio = "" if prev is None or residual == 0.0 else repr(prev / residual)
        lines.append(f"{k},{dt!r},{residual!r},{ratio}")
        prev = residual
    (out / "convergence.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    _write_manifest(
        out,
        "convergence",
        config,
        "failed" if failed else "completed",
        time.perf_counter() - start,
        extra={"levels": levels},
    )
    return _EXIT_SOLVER if failed else _EXIT_OK


# -- galerkin sweep ----------------------------------------------------------


def _state_distance(a, b) -> float:
    dv = VectorField(a.grid, a.v.coeffs - b.v.coeffs)
    base = twin_divergence(a, b)
    return float(np.sqrt(base + dv.l2_norm() ** 2))


def cmd_galerkin_sweep(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    start = time.perf_counter()
    eps_values = args.eps_list or []
    n_values = args.n_list or []

    members = [("baseline", 0.0, None, "baseline")]
    members += [("eps", e, None, f"eps_{e:g}") for e in eps_values]
    members += [("galerkin", 0.0, n, f"n_{n}") for n in n_values]

    def run_member(kind, eps, n_galerkin, name):
        sub = replace(
            config,
            scheme=replace(config.scheme, eps=eps, n_galerkin=n_galerkin),
            io=replace(config.io, out_dir=str(out / name)),
        )
        sub_out = _prepare_out(sub)
        code, records, info = _run_simulate(sub, sub_out)
        field = "E_eps" if eps > 0.0 else "E0"
        residual = energy_law_residual(records, field) if code == _EXIT_OK else None
        return kind, eps, n_galerkin, code, residual, info.get("final_state")

    results = _fan_out([lambda m=m: run_member(*m) for m in members])
    failed = any(code != _EXIT_OK for _, _, _, code, _, _ in results)
    baseline_state = results[0][5]

    lines = ["kind,eps,n_galerkin,energy_law_residual,distance_to_baseline"]
    for kind, eps, n_galerkin, code, residual, final_state in results:
        if code != _EXIT_OK:
            lines.append(f"{kind},{eps!r},{'' if n_galerkin is None else n_galerkin},,")
            continue
        dist = (
            ""
            if kind == "baseline" or baseline_state is None
            else repr(_state_distance(final_state, baseline_state))
        )
        ncell = "" if n_galerkin is None else str(n_galerkin)
        lines.append(f"{kind},{eps!r},{ncell},{residual!r},{dist}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    _write_manifest(
        out,
        "galerkin-sweep",
        config,
        "failed" if failed else "completed",
        time.perf_counter() - start,
        extra={"eps_values": eps_values, "n_values": n_values},
    )
    return _EXIT_SOLVER if failed else _EXIT_OK


# -- verify-density ----------------------------------------------------------

_AXIOM_FIELDS = {
    "i": "rotation_invariance",
    "ii": "compression_blowup",
    "iii": "zero_at_identity",
    "iv": "rotation_distance_bound",
}


def cmd_verify_density(config: RunConfig, args) -> int:
    out = _prepare_out(config)
    start = time.perf_counter()
    model = model_from_config(config)

    requested = [a.strip() for a in args.axioms.split(",") if a.strip()]
    unknown = [a for a in requested if a not in _AXIOM_FIELDS]
    if unknown:
        print(f"unknown axiom labels: {', '.join(unknown)}", file=sys.stderr)
        return _EXIT_CONFIG
    if not 0.0 < args.appendix_c < 1.0:
        print(f"--appendix-c must lie in (0, 1), got {args.appendix_c}", file=sys.stderr)
        return _EXIT_CONFIG

    coercivity = coercivity_check(model)
    axioms = axiom_check(model.base, samples=args.samples, seed=config.data.seed)
    appendix = appendix_inequality_check(
        args.appendix_c, config.m_b_matrix(), seed=config.data.seed
    )

    gate = [coercivity.passed, appendix.certified]
    gate += [getattr(axioms, _AXIOM_FIELDS[a]).passed for a in requested]
    passed = all(gate)

    report = {
        "coercivity": coercivity.as_dict(),
        "axioms": axioms.as_dict(),
        "appendix": appendix.as_dict(),
        "axioms_gating_exit": requested,
        "pass": passed,
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(
        out,
        "verify-density",
        config,
        "completed" if passed else "verification_failed",
        time.perf_counter() - start,
        extra={"report": report},
    )
    print(json.dumps(report["coercivity"]))
    return _EXIT_OK if passed else _EXIT_VERIFY


# -- argument parsing --------------------------------------------------------


def _float_list(raw: str) -> list[float]:
    return [float(p) for p in raw.split(",") if p.strip()]


def _int_list(raw: str) -> list[int]:
    return [int(p) for p in raw.split(",") if p.strip()]


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="configuration file (defaults apply without it)")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable; wins over the file)",
    )
    sub.add_argument("--out", help="shorthand for io.out_dir")
    sub.add_argument("--stride", type=int, help="shorthand for io.stride")
    sub.add_argument("--seed", type=int, help="shorthand for data.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prestrain-lab",
        description="Pseudo-spectral runs of the coupled elastic-diffusive system",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    verbs.add_parser("simulate", help="inertial run with diagnostics")
    verbs.add_parser("quasistatic", help="quasi-static run with diagnostics")
    twin = verbs.add_parser("twin", help="paired runs with a perturbed order parameter")
    twin.add_argument("--delta", type=float, required=True, help="phi perturbation size")
    conv = verbs.add_parser("convergence", help="dt-halving ladder of inertial runs")
    conv.add_argument("--levels", type=int, default=3, help="number of halvings + 1")
    sweep = verbs.add_parser(
        "galerkin-sweep", help="viscosity and mode-truncation sweep against a baseline"
    )
    sweep.add_argument("--eps-list", type=_float_list, default=[], metavar="E1,E2,...")
    sweep.add_argument("--n-list", type=_int_list, default=[], metavar="N1,N2,...")
    verify = verbs.add_parser("verify-density", help="structural checks of the density")
    verify.add_argument("--samples", type=int, default=10_000)
    verify.add_argument(
        "--axioms",
        default="i,ii,iii,iv",
        help="comma list of axiom labels gating the exit code",
    )
    verify.add_argument(
        "--appendix-c",
        type=float,
        default=0.25,
        dest="appendix_c",
        help="coercivity constant probed by the quadratic-form sampler",
    )
    for sub in verbs.choices.values():
        _add_common(sub)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "quasistatic": cmd_quasistatic,
    "twin": cmd_twin,
    "convergence": cmd_convergence,
    "galerkin-sweep": cmd_galerkin_sweep,
    "verify-density": cmd_verify_density,
}


def _load_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"io.out_dir={args.out}")
    if args.stride is not None:
        overrides.append(f"io.stride={args.stride}")
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    if args.config is not None:
        return parse_config(args.config, tuple(overrides), verb=args.verb)
    # no file: defaults plus overrides, validated the same way
    from .config import apply_assignments

    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        pairs[key] = raw
    config, violations = apply_assignments(RunConfig(), pairs)
    violations += validate(config, verb=args.verb)
    if violations:
        raise ValidationError(violations)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
    except (ParseError, ValidationError) as exc:
        print(str(exc), file=sys.stderr)
        return _EXIT_CONFIG
    try:
        return _COMMANDS[args.verb](config, args)
    except PrestrainLabError as exc:
        # anything a command did not turn into a manifest entry itself
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return _EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``rdmol <command> [options]``.

Exit codes: 0 success, 2 configuration/input error, 3 integrator failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, kernels
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .expr import ExpressionError, resolve_initial_data
from .integrate import IntegrationError, integrate, network_steady_state, write_monitor_csv, write_trajectory_csv
from .mol import Grid, ProjectionError
from .multicell import expand, lift_equilibrium
from .network import NetworkError, conservation_laws, dump_network, is_complex_balanced, load_network

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION = 0, 2, 3


class UsageError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _clean(obj):
    """Recursively turn numpy scalars/arrays into JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


class Run:
    """Output directory bookkeeping and the manifest written at the end of every command."""

    def __init__(self, args, config: ExperimentConfig):
        self.args = args
        self.config = config
        self.out = Path(args.out or config.output.directory)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.formats = set(config.output.formats)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def manifest(self, extra: dict | None = None) -> None:
        arguments = {k: v for k, v in vars(self.args).items() if k not in ("func", "config", "out")}
        write_json(
            self.out / "manifest.json",
            {
                "version": __version__,
                "command": self.args.command,
                "arguments": arguments,
                "config_file": self.args.config,
                "config": self.config.to_dict(),
                "files": sorted(self.files),
                **(extra or {}),
            },
        )


def _svg_loglog(path: Path, series: dict[str, tuple], xlabel: str, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "rdmol", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label, (xs, ys) in series.items():
            ax.loglog(xs, ys, "o-", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def cmd_simulate(args, run: Run) -> int:
    spec = run.config.problem.to_spec()
    t_end = spec.T if args.t_end is None else args.t_end
    if not t_end > 0:
        raise UsageError(f"t_end must be positive, got {t_end}")
    times = [t for t in run.config.study.times if t <= t_end]
    traj = integrate(spec, Grid(args.N), run.config.integrator, t_end, times)
    write_trajectory_csv(traj, run.path("trajectory.csv"))
    write_monitor_csv(traj, run.path("monitors.csv"))
    m = traj.monitors["mass"]
    drift = float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] else float(np.max(np.abs(m)))
    summary = {"N": args.N, "t_end": t_end, "mass_drift": drift, "min": traj.min_value, "max": traj.max_value, "stats": traj.stats}
    if "json" in run.formats:
        write_json(run.path("summary.json"), summary)
    print(f"simulated N={args.N} to t={t_end:g}: {traj.stats['steps']} steps, mass drift {drift:.3g}")
    run.manifest()
    return EXIT_OK


def _check_nesting(Ns, N_ref):
    bad = [N for N in Ns if N_ref % N]
    if bad:
        raise UsageError(f"study grids {bad} do not nest in N_ref={N_ref}")


def cmd_convergence(args, run: Run) -> int:
    st = run.config.study
    spec = run.config.problem.to_spec()
    _check_nesting(st.Ns, st.N_ref)
    report = analysis.run_convergence_study(
        spec, st.Ns, st.N_ref, st.times, run.config.integrator, convergence_time=st.convergence_time,
        consistency_times=st.consistency_times, delta=st.delta, threads=args.threads,
    )
    data = report.to_dict()
    rows = []
    for label, table in (("left", report.errors), ("average", report.errors_average)):
        for N, s in table.items():
            rows += [(N, float(t), label, float(e), float(math.sqrt(2 * e))) for t, e in zip(s.times, s.eN)]
    write_csv(run.path("errors.csv"), ["N", "t", "sampling", "eN", "E"], rows)
    crow = []
    for label, table in (("center", report.consistency), ("left", report.consistency_left)):
        for N, reps in table.items():
            crow += [(N, r.t, label, r.residual_sup, r.residual_l2, N * r.residual_sup) for r in reps]
    write_csv(run.path("consistency.csv"), ["N", "t", "sampling", "sup", "l2", "N_times_sup"], crow)
    if "json" in run.formats:
        write_json(run.path("report.json"), data)
    if "svg" in run.formats:
        E = data["E_at_convergence_time"]
        _svg_loglog(run.path("convergence.svg"), {"E(N)": ([int(k) for k in E], list(E.values()))}, "N", "L2 error")
    for name, ok in sorted(report.flags.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"order_observed = {report.order:.4f}")
    run.manifest({"flags": report.flags})
    return EXIT_OK


def cmd_consistency(args, run: Run) -> int:
    st = run.config.study
    spec = run.config.problem.to_spec()
    Ns = _int_list(args.N) if args.N else list(st.Ns)
    _check_nesting(Ns, st.N_ref)
    tau = args.tau
    times = list(st.consistency_times)
    ref_times = sorted(set(times) | {t - 2 * tau for t in times})
    ref = analysis.ReferenceSolution.compute(spec, st.N_ref, ref_times, run.config.integrator)
    rows, constants = [], {}
    for N in Ns:
        for t in times:
            r = analysis.consistency_residual(spec, Grid(N), ref, t, args.sampling, st.delta, tau)
            rows.append((N, t, args.sampling, r.residual_sup, r.residual_l2, N * r.residual_sup))
            constants.setdefault(repr(t), []).append(N * r.residual_sup)
    write_csv(run.path("consistency.csv"), ["N", "t", "sampling", "sup", "l2", "N_times_sup"], rows)
    if "json" in run.formats:
        write_json(run.path("consistency.json"), {"Ns": Ns, "N_ref": st.N_ref, "sampling": args.sampling, "tau": tau,
                                                  "N_times_sup": constants})
    for row in rows:
        print(f"N={row[0]:<5d} t={row[1]:<6g} sup={row[3]:.6e} N*sup={row[5]:.6e}")
    run.manifest()
    return EXIT_OK


def cmd_kernels(args, run: Run) -> int:
    ts = _float_list(args.t)
    if not ts or any(not t > 0 for t in ts):
        raise UsageError("kernel times must be positive")
    res = args.resolution
    rows: list = []
    if args.kind == "f":
        header = ["t", "value"]
        rows = [(t, float(kernels.eval_f(t))) for t in ts]
    elif args.kind == "distance":
        header = ["N", "t", "distance"]
        rows = [(N, t, kernels.kernel_distance(N, args.kappa, t)) for N in _int_list(args.N or "8,16,32,64") for t in ts]
    elif args.kind == "discrete":
        header = ["N", "t", "x", "y", "value"]
        xs = (np.arange(res) + 0.5) / res
        for N in _int_list(args.N or "16"):
            for t in ts:
                vals = kernels.eval_discrete(N, args.kappa, t, xs[:, None], xs[None, :])
                rows += [(N, t, x, y, v) for x, line in zip(xs, vals) for y, v in zip(xs, line)]
    else:
        header = ["t", "x", "y", "value"]
        xs = np.linspace(0.0, 1.0, res)
        spec = kernels.KernelSpec(args.kind, args.kappa)
        for t in ts:
            vals = kernels.eval_continuous(spec, t, xs[:, None], xs[None, :])
            rows += [(t, x, y, v) for x, line in zip(xs, vals) for y, v in zip(xs, line)]
    rows = [tuple(int(v) if i == 0 and header[0] == "N" else float(v) for i, v in enumerate(r)) for r in rows]
    write_csv(run.path(f"kernel_{args.kind}.csv"), header, rows)
    if args.kind in ("f", "distance"):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([header] + [[_fmt(v) if isinstance(v, float) else v for v in r] for r in rows])
        sys.stdout.write(buf.getvalue())
    run.manifest()
    return EXIT_OK


def _format_law(v, names) -> str:
    out = ""
    for i, c in enumerate(v):
        if not c:
            continue
        sign = "-" if c < 0 else "+"
        term = names[i] if abs(c) == 1 else f"{abs(c)} {names[i]}"
        out += (f"{'-' if c < 0 else ''}{term}" if not out else f" {sign} {term}")
    return out


def cmd_multicell(args, run: Run) -> int:
    base = load_network(args.network)
    if args.N < 2:
        raise UsageError(f"multicell expansion needs N >= 2, got {args.N}")
    rates = _float_list(args.transport)
    mc = expand(base, args.N, rates[0] if len(rates) == 1 else rates)
    net = mc.expanded
    if args.equilibrium:
        y = np.array(_float_list(args.equilibrium))
        if y.shape != (base.n_species,):
            raise UsageError(f"equilibrium needs {base.n_species} values")
        source = "supplied"
    else:
        y = network_steady_state(base, np.ones(base.n_species))
        source = "solved"
    base_laws = conservation_laws(base)
    laws = conservation_laws(net)
    balanced_base = bool(np.all(y > 0)) and is_complex_balanced(base, y)
    balanced = bool(np.all(y > 0)) and is_complex_balanced(net, lift_equilibrium(y, args.N))
    run.path("expanded.net").write_text(dump_network(net), encoding="utf-8")
    summary = {
        "cells": args.N,
        "species": net.n_species,
        "reactions": net.n_reactions,
        "conservation_laws": [list(v) for v in laws],
        "conservation_dimension": len(laws),
        "base_conservation_dimension": len(base_laws),
        "equilibrium": y.tolist(),
        "equilibrium_source": source,
        "base_complex_balanced": balanced_base,
        "lifted_complex_balanced": balanced,
    }
    if "json" in run.formats:
        write_json(run.path("multicell.json"), summary)
    print(f"species: {net.n_species}")
    print(f"reactions: {net.n_reactions}")
    print(f"conservation laws: {len(laws)}")
    names = net.species_names
    for v in laws:
        print("  " + _format_law(v, names))
    print(f"complex balanced at lifted {source} equilibrium: {str(balanced).lower()}")
    run.manifest()
    return EXIT_OK


def cmd_project(args, run: Run) -> int:
    try:
        f = resolve_initial_data(args.f)
    except ExpressionError as exc:
        raise UsageError(str(exc)) from None
    Ns = _int_list(args.N)
    if not Ns or any(N < 1 for N in Ns):
        raise UsageError("N values must be positive")
    res = analysis.projection_convergence(f, Ns, args.p)
    write_csv(run.path("projection.csv"), ["N", "error"], [(N, float(e)) for N, e in zip(res["Ns"], res["errors"])])
    if "json" in run.formats:
        write_json(run.path("projection.json"), {"f": args.f, **res})
    for N, e in zip(res["Ns"], res["errors"]):
        print(f"N={N:<6d} error={e:.17g}")
    print(f"order = {res['order']:.6f}")
    run.manifest()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdmol", description="Method-of-lines reaction-diffusion experiments.")
    p.add_argument("--version", action="version", version=f"rdmol {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI sections problem/study/integrator/output)")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-grid jobs")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized sampling; never changes results")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="integrate one grid and write trajectory/monitor CSVs")
    s.add_argument("--N", type=int, default=64)
    s.add_argument("--t-end", type=float, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("convergence", parents=[common], help="grid-convergence study against a fine reference")
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("consistency", parents=[common], help="consistency residuals of the sampled reference")
    s.add_argument("--N", default=None, help="comma-separated grid sizes (default: study Ns)")
    s.add_argument("--sampling", choices=("center", "left"), default="center")
    s.add_argument("--tau", type=float, default=1e-3, help="time step of the difference quotient")
    s.set_defaults(func=cmd_consistency)

    s = sub.add_parser("kernels", parents=[common], help="tabulate heat kernels, f and kernel distances")
    s.add_argument("--kind", choices=("neumann", "dirichlet", "discrete", "f", "distance"), required=True)
    s.add_argument("--t", required=True, help="comma-separated positive times")
    s.add_argument("--N", default=None, help="comma-separated grid sizes")
    s.add_argument("--kappa", type=float, default=1.0)
    s.add_argument("--resolution", type=int, default=21, help="points per axis for x, y tables")
    s.set_defaults(func=cmd_kernels)

    s = sub.add_parser("multicell", parents=[common], help="expand a network file to a linear chain of cells")
    s.add_argument("network", help="network definition file")
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--transport", default="1", help="transport rate(s), one value or one per species")
    s.add_argument("--equilibrium", default=None, help="base equilibrium (comma-separated); solved if omitted")
    s.set_defaults(func=cmd_multicell)

    s = sub.add_parser("project", parents=[common], help="L^p error of cell-average projections")
    s.add_argument("--f", default="2 + cos(pi*x)", help="expression, catalog name or step:breaks;values")
    s.add_argument("--N", default="8,16,32,64,128")
    s.add_argument("--p", type=float, default=2.0)
    s.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else default_config()
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        run = Run(args, config)
        return args.func(args, run)
    except IntegrationError as exc:
        print(f"rdmol: integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except (ConfigError, UsageError, NetworkError, ExpressionError, ProjectionError, kernels.KernelError,
            analysis.StudyError, ValueError, OSError) as exc:
        print(f"rdmol: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

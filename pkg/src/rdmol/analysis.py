"""Error and consistency functionals and grid-convergence studies.

The exact solution is replaced by a fine-grid reference (:class:`ReferenceSolution`)
or, for linear test problems, by closed-form functions (:class:`AnalyticReference`).
Point values are recovered from cell averages by fourth-order reconstruction:
the cell primitive is known exactly at faces, a quartic through five
consecutive face values is differentiated at the requested point, and the
averages are padded by even reflection to respect the zero-flux walls.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import mol
from .integrate import IntegrationError, IntegratorConfig, Trajectory, integrate
from .mol import Grid, ProblemSpec

__all__ = [
    "StudyError",
    "l2_cell_norm",
    "reconstruct",
    "ReferenceSolution",
    "AnalyticReference",
    "ErrorSeries",
    "ConsistencyReport",
    "ConvergenceReport",
    "sample_points",
    "error_series",
    "consistency_residual",
    "fit_order",
    "run_convergence_study",
    "projection_convergence",
    "DEFAULT_DELTA",
]

DEFAULT_DELTA = 0.01
SAMPLINGS = ("left", "center", "average")


class StudyError(ValueError):
    """Invalid study setup: non-nested grids, degenerate sweeps, times out of range."""


def l2_cell_norm(u, v, N: int) -> float:
    """``sqrt((1/N) sum (u_k - v_k)^2)``, the L2 norm of the piecewise-constant difference."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape[-1] != N:
        raise ValueError(f"need two cell vectors of length {N}, got {u.shape} and {v.shape}")
    d = u - v
    return math.sqrt(float(np.sum(d * d)) / N)


def reconstruct(averages, x) -> np.ndarray:
    """Fourth-order point values at ``x`` in [0, 1] from cell averages (last axis)."""
    avg = np.asarray(averages, dtype=float)
    M = avg.shape[-1]
    if M < 3:
        raise ValueError("reconstruction needs at least 3 cells")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("reconstruction points must lie in [0, 1]")
    h = 1.0 / M
    padded = np.concatenate([avg[..., 1::-1], avg, avg[..., : M - 3 : -1]], axis=-1)
    prim = np.concatenate([np.zeros(avg.shape[:-1] + (1,)), np.cumsum(padded, axis=-1) * h], axis=-1)
    # padded face i sits at (i - 2) h; pick five faces centred on the nearest one
    centre = np.clip(np.rint(x / h).astype(int) + 2, 2, M + 2)
    nodes = centre[:, None] + np.arange(-2, 3)[None, :]
    s = (x - (centre - 2) * h) / h  # offset from the centre face in cell widths
    offs = np.arange(-2, 3, dtype=float)
    weights = np.zeros((x.size, 5))
    # derivative of the Lagrange basis through offsets -2..2, evaluated at s
    for j in range(5):
        others = [m for m in range(5) if m != j]
        denom = np.prod([offs[j] - offs[m] for m in others])
        total = np.zeros_like(s)
        for skip in others:
            term = np.ones_like(s)
            for m in others:
                if m != skip:
                    term = term * (s - offs[m])
            total = total + term
        weights[:, j] = total / denom
    return np.einsum("...pj,pj->...p", prim[..., nodes], weights) / h


def sample_points(N: int, sampling: str) -> np.ndarray:
    if sampling == "left":
        return np.arange(N) / N
    if sampling == "center":
        return (np.arange(N) + 0.5) / N
    raise ValueError(f"no point set for sampling {sampling!r}")


@dataclass
class ReferenceSolution:
    """Fine-grid solution standing in for the exact solution."""

    spec: ProblemSpec
    grid: Grid
    trajectory: Trajectory
    config: IntegratorConfig
    window_config: IntegratorConfig = field(
        default_factory=lambda: IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, dt_init=1e-8, dt_max=1e-3)
    )
    _windows: dict = field(default_factory=dict, repr=False)

    @classmethod
    def compute(cls, spec: ProblemSpec, N_ref: int, times: Sequence[float], config: IntegratorConfig | None = None,
                t_end: float | None = None) -> "ReferenceSolution":
        cfg = config or IntegratorConfig()
        grid = Grid(N_ref)
        t_end = max(times) if t_end is None else t_end
        traj = integrate(spec, grid, cfg, t_end, times)
        return cls(spec, grid, traj, cfg)

    @property
    def N(self) -> int:
        return self.grid.N

    def cells(self, t: float) -> np.ndarray:
        return self.trajectory.state(t).reshape(3, self.N)

    def point_values(self, t: float, x) -> np.ndarray:
        return reconstruct(self.cells(t), x)

    def averages(self, t: float, N: int) -> np.ndarray:
        if self.N % N:
            raise StudyError(f"grid N={N} does not nest in reference N={self.N}")
        return self.cells(t).reshape(3, N, self.N // N).mean(axis=-1)

    def window(self, t: float, tau: float) -> np.ndarray:
        """Cell states at ``t + j tau`` for ``j = -2..2``, integrated tightly from the sample at ``t - 2 tau``."""
        key = (float(t), float(tau))
        if key not in self._windows:
            try:
                start = self.trajectory.state(t - 2 * tau)
            except KeyError:
                raise StudyError(f"reference was not sampled at t - 2 tau = {t - 2 * tau:g}") from None
            offsets = [tau, 2 * tau, 3 * tau]
            local = integrate(self.spec, self.grid, self.window_config, 4 * tau, offsets, y0=start)
            self._windows[key] = local.states.reshape(5, 3, self.N)
        return self._windows[key]

    def time_derivative(self, t: float, x, tau: float = 1e-3, method: str = "fd") -> np.ndarray:
        """``d/dt`` of the reconstructed point values.

        ``fd`` uses the fourth-order centred difference over a tightly
        integrated window; ``rhs`` reconstructs the reference vector field.
        """
        if method == "rhs":
            u = self.trajectory.state(t)
            return reconstruct(mol.rhs(self.spec, self.grid, u).reshape(3, self.N), x)
        if method != "fd":
            raise ValueError(f"unknown time-derivative method {method!r}")
        w = reconstruct(self.window(t, tau), x)
        return (w[0] - 8 * w[1] + 8 * w[3] - w[4]) / (12 * tau)


@dataclass
class AnalyticReference:
    """Closed-form solution ``(alpha, beta, gamma)``, each a callable ``(t, x)``.

    ``derivatives`` supplies the time derivatives; without it a centred
    difference with step ``tau`` is used.
    """

    functions: Sequence[Callable]
    derivatives: Sequence[Callable] | None = None
    N: int | None = None

    def point_values(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(f(t, x), dtype=float), x.shape) for f in self.functions])

    def averages(self, t: float, N: int, order: int = 8) -> np.ndarray:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        x = (np.arange(N)[:, None] + 0.5 * (nodes[None, :] + 1)) / N
        vals = self.point_values(t, x.ravel()).reshape(3, N, order)
        return 0.5 * vals @ weights

    def time_derivative(self, t: float, x, tau: float = 1e-4, method: str = "fd") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.derivatives is not None:
            return np.stack([np.broadcast_to(np.asarray(g(t, x), dtype=float), x.shape) for g in self.derivatives])
        p = lambda s: self.point_values(s, x)
        return (p(t - 2 * tau) - 8 * p(t - tau) + 8 * p(t + tau) - p(t + 2 * tau)) / (12 * tau)


def _sampled(reference, t: float, N: int, sampling: str) -> np.ndarray:
    if sampling == "average":
        return reference.averages(t, N)
    return reference.point_values(t, sample_points(N, sampling))


def _check_nested(reference, N: int) -> None:
    Nr = getattr(reference, "N", None)
    if Nr is not None and Nr % N:
        raise StudyError(f"grid N={N} does not nest in reference N={Nr}")


@dataclass
class ErrorSeries:
    """``e^N(t)`` at the sample times, from the cell-norm form and the vector form."""

    N: int
    times: np.ndarray
    eN: np.ndarray
    eN_vector: np.ndarray
    sampling: str

    @property
    def E(self) -> np.ndarray:
        """L2 error ``sqrt(2 e^N)``."""
        return np.sqrt(2 * self.eN)

    def at(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-14):
            raise KeyError(t)
        return float(self.eN[i])


def error_series(spec: ProblemSpec, grid: Grid, reference, trajectory: Trajectory, times=None,
                 sampling: str = "left") -> ErrorSeries:
    """Compare a study trajectory with the reference sampled on ``grid``.

    ``sampling`` picks the reference values: point values at left cell
    endpoints (default), at cell centres, or exact cell averages.
    """
    if sampling not in SAMPLINGS:
        raise ValueError(f"sampling must be one of {SAMPLINGS}")
    N = grid.N
    _check_nested(reference, N)
    times = trajectory.times if times is None else np.asarray(times, dtype=float)
    e_norm, e_vec = [], []
    for t in times:
        u = trajectory.state(t).reshape(3, N)
        v = _sampled(reference, t, N, sampling)
        e_norm.append(0.5 * sum(l2_cell_norm(u[s], v[s], N) ** 2 for s in range(3)))
        d = (u - v).ravel()
        e_vec.append(float(d @ d) / (2 * N))
    return ErrorSeries(N, np.asarray(times, dtype=float), np.asarray(e_norm), np.asarray(e_vec), sampling)


@dataclass
class ConsistencyReport:
    """Residual of the sampled exact solution in the semi-discrete scheme at one ``(N, t)``."""

    N: int
    t: float
    residual: np.ndarray
    sampling: str

    @property
    def residual_sup(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def residual_l2(self) -> float:
        return float(np.linalg.norm(self.residual) / math.sqrt(self.N))


def consistency_residual(spec: ProblemSpec, grid: Grid, reference, t: float, sampling: str = "center",
                         delta: float = DEFAULT_DELTA, tau: float | None = None,
                         time_derivative: str = "fd") -> ConsistencyReport:
    """``eps = d/dt v - F(v) - Lap v`` for the reference sampled on ``grid``.

    Cell-centre sampling is the default; ``sampling="left"`` uses left cell
    endpoints, whose residual does not vanish in the boundary cells.
    """
    if sampling not in ("left", "center"):
        raise ValueError("consistency sampling must be 'left' or 'center'")
    if t < delta:
        raise StudyError(f"t={t} is inside the initial layer (t < delta={delta})")
    _check_nested(reference, grid.N)
    x = sample_points(grid.N, sampling)
    kwargs = {"method": time_derivative}
    if tau is not None:
        kwargs["tau"] = tau
    dv = reference.time_derivative(t, x, **kwargs)
    v = reference.point_values(t, x)
    eps = dv.ravel() - mol.rhs(spec, grid, v.ravel())
    return ConsistencyReport(grid.N, float(t), eps, sampling)


def fit_order(Ns, errors) -> float:
    """Least-squares slope of ``-log(error)`` against ``log N``."""
    Ns = np.asarray(Ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return math.nan
    slope = np.polyfit(np.log(Ns), np.log(errors), 1)[0]
    return float(-slope)


@dataclass
class _Run:
    N: int
    trajectory: Trajectory | None
    error: str | None = None


@dataclass
class ConvergenceReport:
    Ns: list[int]
    N_ref: int
    target_times: list[float]
    errors: dict[int, ErrorSeries]
    errors_average: dict[int, ErrorSeries]
    consistency: dict[int, list[ConsistencyReport]]
    consistency_left: dict[int, list[ConsistencyReport]]
    drift: dict[int, float]
    minimum: dict[int, float]
    maximum: dict[int, float]
    order: float
    consistency_constants: dict[float, float]
    reference_ratio: float | None
    temporal_change: dict[int, float]
    initial_layer: dict[float, float]
    failures: dict[int, str]
    flags: dict[str, bool]
    convergence_time: float

    def to_dict(self) -> dict:
        def series(d):
            return {str(N): {"times": s.times.tolist(), "eN": s.eN.tolist(), "E": s.E.tolist()} for N, s in d.items()}

        def cons(d):
            return {
                str(N): [{"t": r.t, "sup": r.residual_sup, "l2": r.residual_l2, "N_times_sup": N * r.residual_sup} for r in rs]
                for N, rs in d.items()
            }

        return {
            "Ns": self.Ns,
            "N_ref": self.N_ref,
            "target_times": self.target_times,
            "convergence_time": self.convergence_time,
            "E_at_convergence_time": {str(N): float(math.sqrt(2 * s.at(self.convergence_time))) for N, s in self.errors.items()},
            "order_observed": self.order,
            "errors_left": series(self.errors),
            "errors_average": series(self.errors_average),
            "consistency_center": cons(self.consistency),
            "consistency_left": cons(self.consistency_left),
            "consistency_constants": {repr(t): c for t, c in self.consistency_constants.items()},
            "conservation_drift": {str(N): v for N, v in self.drift.items()},
            "min_value": {str(N): v for N, v in self.minimum.items()},
            "max_value": {str(N): v for N, v in self.maximum.items()},
            "reference_ratio": self.reference_ratio,
            "temporal_change": {str(N): v for N, v in self.temporal_change.items()},
            "initial_layer": {repr(d): v for d, v in self.initial_layer.items()},
            "failures": {str(N): v for N, v in self.failures.items()},
            "flags": dict(self.flags),
        }


def _validate_study(Ns, N_ref):
    Ns = [int(N) for N in Ns]
    if len(Ns) < 2:
        raise StudyError("a convergence study needs at least two grid sizes")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise StudyError("study Ns must be strictly increasing")
    if Ns[0] < 3:
        raise StudyError("study grids need at least 3 cells")
    if N_ref < 4 * Ns[-1]:
        raise StudyError(f"N_ref={N_ref} must be at least 4x the largest study N={Ns[-1]}")
    bad = [N for N in Ns if N_ref % N]
    if bad:
        raise StudyError(f"study grids {bad} do not nest in N_ref={N_ref}")
    return Ns


def run_convergence_study(
    spec: ProblemSpec,
    Ns: Sequence[int],
    N_ref: int,
    target_times: Sequence[float],
    config: IntegratorConfig | None = None,
    convergence_time: float = 0.25,
    consistency_times: Sequence[float] = (0.1, 0.25, 0.5),
    consistency_fit_N: int | None = None,
    consistency_margin: float = 1.5,
    delta: float = DEFAULT_DELTA,
    tau: float = 1e-3,
    layer_deltas: Sequence[float] = (0.01, 0.005, 0.0025),
    check_reference: bool = True,
    check_temporal: bool = True,
    threads: int = 1,
) -> ConvergenceReport:
    """Integrate the reference once and every study grid, then assemble all checks.

    Flags: ``convergence`` (errors strictly decreasing and fitted order over
    the three largest grids at least 0.9), ``consistency`` (centre residuals
    within ``margin * C/N`` with ``C`` fitted at ``consistency_fit_N``),
    ``conservation`` (relative drift at most 1e-8), ``nonnegative``,
    ``bounded`` (max over each run varies by under 5%), ``reference_adequate``
    and ``temporal_subordinate``.
    """
    cfg = config or IntegratorConfig()
    Ns = _validate_study(Ns, N_ref)
    target_times = sorted({float(t) for t in target_times})
    t_end = max(target_times)
    if not t_end > 0:
        raise StudyError("target times must include a positive time")
    if convergence_time not in target_times:
        raise StudyError(f"convergence time {convergence_time} is not a target time")
    cons_times = [t for t in consistency_times if t <= t_end]
    for t in cons_times:
        if t < delta or t - 2 * tau < 0:
            raise StudyError(f"consistency time {t} incompatible with delta={delta}, tau={tau}")
    layer = [d for d in layer_deltas if 0 < d <= t_end]
    study_times = sorted(set(target_times) | set(layer))
    ref_times = sorted(set(study_times) | {t - 2 * tau for t in cons_times})

    reference = ReferenceSolution.compute(spec, N_ref, ref_times, cfg, t_end=t_end)

    def job(N):
        try:
            return _Run(N, integrate(spec, Grid(N), cfg, t_end, study_times))
        except IntegrationError as exc:
            return _Run(N, None, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        runs = list(pool.map(job, Ns))

    failures = {r.N: r.error for r in runs if r.error is not None}
    good = [r for r in runs if r.trajectory is not None]
    errors, errors_avg, cons, cons_left = {}, {}, {}, {}
    drift, mins, maxs = {}, {}, {}
    for r in good:
        g = Grid(r.N)
        errors[r.N] = error_series(spec, g, reference, r.trajectory, sampling="left")
        errors_avg[r.N] = error_series(spec, g, reference, r.trajectory, sampling="average")
        cons[r.N] = [consistency_residual(spec, g, reference, t, "center", delta, tau) for t in cons_times]
        cons_left[r.N] = [consistency_residual(spec, g, reference, t, "left", delta, tau) for t in cons_times]
        m = r.trajectory.monitors["mass"]
        drift[r.N] = float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] != 0 else float(np.max(np.abs(m)))
        mins[r.N] = r.trajectory.min_value
        maxs[r.N] = r.trajectory.max_value

    flags: dict[str, bool] = {"all_runs_completed": not failures}
    conv_N = [N for N in Ns if N in errors]
    E = [math.sqrt(2 * errors[N].at(convergence_time)) for N in conv_N]
    tail = conv_N[-3:]
    order = fit_order(tail, [math.sqrt(2 * errors[N].at(convergence_time)) for N in tail]) if len(tail) >= 2 else math.nan
    flags["errors_decreasing"] = len(E) == len(Ns) and all(b < a for a, b in zip(E, E[1:]))
    flags["order_observed"] = bool(order >= 0.9)
    flags["convergence"] = flags["errors_decreasing"] and flags["order_observed"]

    fit_N = consistency_fit_N if consistency_fit_N is not None else (32 if 32 in Ns and Ns[-1] > 32 else Ns[max(0, len(Ns) - 3)])
    constants: dict[float, float] = {}
    ok = fit_N in cons and bool(cons_times)
    for i, t in enumerate(cons_times):
        if fit_N not in cons:
            break
        C = fit_N * cons[fit_N][i].residual_sup
        constants[t] = C
        for N in Ns:
            if N > fit_N:
                ok = ok and N in cons and cons[N][i].residual_sup <= consistency_margin * C / N
    flags["consistency"] = bool(ok)
    flags["conservation"] = bool(drift) and all(v <= 1e-8 for v in drift.values()) and not failures
    flags["nonnegative"] = bool(mins) and all(v >= -1e-9 for v in mins.values())
    if maxs:
        hi, lo = max(maxs.values()), min(maxs.values())
        flags["bounded"] = (hi - lo) / lo < 0.05 if lo > 0 else False
    else:
        flags["bounded"] = False

    ratio = None
    if check_reference:
        half = Grid(N_ref // 2)
        tr = integrate(spec, half, cfg, t_end, target_times)
        e_half = error_series(spec, half, reference, tr, target_times, sampling="left")
        e_min = errors[Ns[0]] if Ns[0] in errors else None
        if e_min is not None:
            ratio = float(min(e_min.at(t) / e_half.at(t) for t in target_times if e_half.at(t) > 0))
            flags["reference_adequate"] = ratio >= 4.0

    temporal: dict[int, float] = {}
    if check_temporal:
        finer = cfg.scaled(0.5)
        for r in good:
            tr = integrate(spec, Grid(r.N), finer, t_end, study_times)
            e2 = error_series(spec, Grid(r.N), reference, tr, [t_end], sampling="left").eN[0]
            e1 = errors[r.N].at(t_end)
            temporal[r.N] = abs(e2 - e1) / e1 if e1 > 0 else 0.0
        flags["temporal_subordinate"] = all(v < 0.01 for v in temporal.values())

    layer_err = {}
    if layer and Ns[-1] in errors:
        layer_err = {d: errors[Ns[-1]].at(d) for d in layer}
        ordered = sorted(layer_err)
        flags["initial_layer_decreasing"] = all(layer_err[a] < layer_err[b] for a, b in zip(ordered, ordered[1:]))

    return ConvergenceReport(
        Ns=Ns, N_ref=N_ref, target_times=target_times, errors=errors, errors_average=errors_avg,
        consistency=cons, consistency_left=cons_left, drift=drift, minimum=mins, maximum=maxs, order=order,
        consistency_constants=constants, reference_ratio=ratio, temporal_change=temporal,
        initial_layer=layer_err, failures=failures, flags=flags, convergence_time=convergence_time,
    )


def projection_convergence(f, Ns: Sequence[int], p: float = 2.0, order: int = 12, panels: int = 4) -> dict:
    """``||f - f^N||_{L^p}`` for the cell-average projections ``f^N``.

    Each cell is split into ``panels`` Gauss-Legendre panels of ``order``
    nodes; polynomial data up to degree ``order`` are integrated exactly.
    Returns the errors together with the least-squares order over all ``Ns``.
    """
    if not p >= 1 or not math.isfinite(p):
        raise ValueError(f"p must lie in [1, inf), got {p}")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    errs = []
    for N in Ns:
        means = mol.project_initial(f, N)
        sub = np.arange(N * panels)
        x = ((sub[:, None] + 0.5 * (nodes[None, :] + 1)) / (N * panels)).ravel()
        vals = mol._evaluate(f, x).reshape(N, panels * order)
        dev = np.abs(vals - means[:, None]) ** p
        integral = float(np.sum(dev.reshape(N * panels, order) @ weights)) * 0.5 / (N * panels)
        errs.append(integral ** (1.0 / p))
    errs = np.asarray(errs)
    return {"Ns": [int(N) for N in Ns], "p": p, "errors": errs, "order": fit_order(Ns, errs) if len(Ns) > 1 else math.nan}

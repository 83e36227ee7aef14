"""Implicit time integration of the stiff semi-discrete system.

Theta methods (trapezoid, backward Euler) with a simplified Newton iteration
on a sparse LU factorization of ``I - theta dt J`` and step-doubling error
control.  Implicit trial states are never clipped: any undershoot below zero
is recorded by the monitors instead, which keeps linear invariants exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import mol
from .mol import Grid, ProblemSpec, StateVector

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "integrate_system",
    "steady_state",
    "network_steady_state",
    "write_trajectory_csv",
    "write_monitor_csv",
]

_METHODS = {"implicit-trapezoid": (0.5, 2), "backward-euler": (1.0, 1)}


class IntegrationError(RuntimeError):
    """Newton failure at the minimum step, blow-up, or no convergence to steady state."""


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "implicit-trapezoid"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_init: float = 1e-6
    dt_min: float = 1e-14
    dt_max: float = 0.05
    newton_tol: float = 1e-3
    newton_max_iter: int = 8
    blowup: float = 1e6

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {sorted(_METHODS)}, got {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")

    def scaled(self, factor: float) -> "IntegratorConfig":
        """Copy with both error tolerances multiplied by ``factor``."""
        return IntegratorConfig(
            self.method, self.rel_tol * factor, self.abs_tol * factor, min(self.dt_init, self.dt_max),
            self.dt_min, self.dt_max, self.newton_tol, self.newton_max_iter, self.blowup,
        )


@dataclass
class Trajectory:
    """States at the requested sample times plus per-step monitor records."""

    times: np.ndarray
    states: np.ndarray
    grid: Grid | None = None
    monitors: dict[str, np.ndarray] = field(default_factory=dict)
    stats: dict[str, int] = field(default_factory=dict)

    def state(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-14):
            raise KeyError(f"time {t} was not sampled")
        return self.states[i]

    def state_vector(self, t: float) -> StateVector:
        return StateVector(self.state(t), self.grid)

    @property
    def min_value(self) -> float:
        return float(self.monitors["min"].min()) if self.monitors else float(self.states.min())

    @property
    def max_value(self) -> float:
        return float(self.monitors["max"].max()) if self.monitors else float(self.states.max())


def _weights(y0, y1, cfg):
    return cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))


def _rms(v):
    return math.sqrt(float(np.mean(v * v)))


class _Stepper:
    def __init__(self, fun, jac, cfg: IntegratorConfig):
        self.fun, self.jac, self.cfg = fun, jac, cfg
        self.theta, self.order = _METHODS[cfg.method]
        self.stats = {"steps": 0, "rejected": 0, "newton_failures": 0, "rhs_evals": 0, "factorizations": 0}

    def _factor(self, J, dt):
        self.stats["factorizations"] += 1
        n = J.shape[0]
        return splu((sparse.identity(n, format="csc") - (self.theta * dt) * J).tocsc())

    def _solve(self, y0, f0, dt, lu):
        """Simplified Newton for ``y = y0 + dt((1-theta) f0 + theta f(y))``; ``None`` on failure."""
        cfg = self.cfg
        base = y0 + (1.0 - self.theta) * dt * f0
        y = y0.copy()
        fy = f0
        prev = math.inf
        for _ in range(cfg.newton_max_iter):
            G = y - base - self.theta * dt * fy
            delta = lu.solve(G)
            y = y - delta
            fy = self.fun(y)
            self.stats["rhs_evals"] += 1
            size = _rms(delta / _weights(y0, y, cfg))
            if not np.all(np.isfinite(y)) or size > 2.0 * prev:
                return None
            if size <= cfg.newton_tol:
                return y, fy
            prev = size
        return None

    def step(self, t, y0, f0, dt):
        """Attempt one step-doubled step; returns ``(y1, f1, err)`` or ``None`` if Newton failed."""
        J = self.jac(y0)
        full = self._solve(y0, f0, dt, self._factor(J, dt))
        if full is None:
            return None
        lu_half = self._factor(J, 0.5 * dt)
        half = self._solve(y0, f0, 0.5 * dt, lu_half)
        if half is None:
            return None
        second = self._solve(half[0], half[1], 0.5 * dt, lu_half)
        if second is None:
            return None
        y1, f1 = second
        est = (y1 - full[0]) / (2**self.order - 1)
        return y1, f1, _rms(est / _weights(y0, y1, self.cfg))


def integrate_system(
    fun: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], sparse.spmatrix],
    y0,
    t_end: float,
    sample_times: Sequence[float] = (),
    config: IntegratorConfig | None = None,
    monitor: Callable[[float, np.ndarray], dict] | None = None,
    stop: Callable[[float, np.ndarray, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Integrate ``y' = fun(y)`` from ``t = 0`` to ``t_end``.

    The solution is recorded at ``0``, every entry of ``sample_times`` and
    ``t_end`` (steps are shortened to land on them exactly).  ``monitor`` is
    called after every accepted step and its dict entries are collected.
    ``stop(t, y, f)`` ends the integration early when it returns true; the
    final state is then appended to the samples.
    """
    cfg = config or IntegratorConfig()
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    samples = sorted({float(s) for s in sample_times} | {float(t_end)})
    if samples[0] < 0 or samples[-1] > t_end:
        raise ValueError("sample times must lie in [0, t_end]")
    samples = [s for s in samples if s > 0]

    y = np.array(y0, dtype=float)
    stepper = _Stepper(fun, jac, cfg)
    f = fun(y)
    t = 0.0
    times, states = [0.0], [y.copy()]
    records: dict[str, list] = {}

    def record(t, y):
        if monitor is not None:
            for key, val in monitor(t, y).items():
                records.setdefault(key, []).append(val)

    record(t, y)
    dt = cfg.dt_init
    facmax, facmin, safety = 4.0, 0.2, 0.9
    p = stepper.order
    stopped = stop is not None and stop(t, y, f)
    for target in samples:
        if stopped:
            break
        while t < target and not stopped:
            remaining = target - t
            last = dt >= remaining * (1 - 1e-12)
            h = remaining if last else dt
            result = stepper.step(t, y, f, h)
            if result is None:
                stepper.stats["newton_failures"] += 1
                dt = 0.25 * h
                if dt < cfg.dt_min:
                    raise IntegrationError(f"Newton iteration failed at t={t:.6g} with dt below dt_min={cfg.dt_min}")
                continue
            y1, f1, err = result
            factor = safety * (err ** (-1.0 / (p + 1)) if err > 0 else facmax)
            if err > 1.0:
                stepper.stats["rejected"] += 1
                dt = h * max(facmin, factor)
                if dt < cfg.dt_min:
                    raise IntegrationError(f"step size fell below dt_min={cfg.dt_min} at t={t:.6g}")
                continue
            t = target if last else t + h
            y, f = y1, f1
            stepper.stats["steps"] += 1
            if np.max(np.abs(y)) > cfg.blowup:
                raise IntegrationError(f"solution blew up (|u| > {cfg.blowup:g}) at t={t:.6g}")
            record(t, y)
            dt = min(cfg.dt_max, h * min(facmax, max(facmin, factor)))
            if last:
                dt = max(dt, min(cfg.dt_max, h))
            if stop is not None and stop(t, y, f):
                stopped = True
        if t >= target:
            times.append(target)
            states.append(y.copy())
    if stopped and times[-1] != t:
        times.append(t)
        states.append(y.copy())
    monitors = {k: np.asarray(v, dtype=float) for k, v in records.items()}
    return Trajectory(np.asarray(times), np.asarray(states), None, monitors, stepper.stats)


def integrate(
    spec: ProblemSpec,
    grid: Grid,
    config: IntegratorConfig | None = None,
    t_end: float | None = None,
    sample_times: Sequence[float] = (),
    y0=None,
) -> Trajectory:
    """Integrate the semi-discrete reaction-diffusion system on ``grid``.

    Monitors record, per accepted step, the time, the conserved total
    ``h sum(a + b + 2c)``, the extreme state values and the logarithmic norm
    of the reaction Jacobian.
    """
    t_end = spec.T if t_end is None else t_end
    N = grid.N
    lap = sparse.block_diag([mol.laplacian(N, k).matrix() for k in spec.diffusion], format="csr")

    def fun(u):
        return mol.rhs(spec, grid, u)

    def jac(u):
        return mol.reaction_jacobian(spec, grid, u) + lap

    def monitor(t, u):
        return {
            "t": t,
            "mass": mol.mass(u, N),
            "min": float(u.min()),
            "max": float(u.max()),
            "mu_log": mol.reaction_log_norm(spec, u, N),
        }

    u0 = spec.initial_state(grid) if y0 is None else np.asarray(y0, dtype=float)
    traj = integrate_system(fun, jac, u0, t_end, sample_times, config, monitor)
    traj.grid = grid
    return traj


def steady_state(
    spec: ProblemSpec,
    grid: Grid,
    config: IntegratorConfig | None = None,
    tol: float | None = None,
    t_cap: float = 1e3,
    y0=None,
) -> StateVector:
    """Integrate until ``max|rhs| <= tol`` (default ``config.abs_tol``)."""
    cfg = config or IntegratorConfig(dt_max=1.0)
    tol = cfg.abs_tol if tol is None else tol
    u0 = spec.initial_state(grid) if y0 is None else np.asarray(y0, dtype=float)
    done = lambda t, y, f: float(np.max(np.abs(f))) <= tol
    if done(0.0, u0, mol.rhs(spec, grid, u0)):
        return StateVector(u0, grid)
    lap = sparse.block_diag([mol.laplacian(grid.N, k).matrix() for k in spec.diffusion], format="csr")
    traj = integrate_system(
        lambda u: mol.rhs(spec, grid, u),
        lambda u: mol.reaction_jacobian(spec, grid, u) + lap,
        u0, t_cap, (), cfg, stop=done,
    )
    final = traj.states[-1]
    if not done(traj.times[-1], final, mol.rhs(spec, grid, final)):
        raise IntegrationError(f"no steady state within t_cap={t_cap}")
    return StateVector(final, grid)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path: str | Path, species=("a", "b", "c")) -> None:
    """Long-format CSV with columns ``t, species, cell, value`` (cells numbered from 1)."""
    N = traj.grid.N
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "species", "cell", "value"])
        for t, u in zip(traj.times, traj.states):
            for s, name in enumerate(species):
                for k in range(N):
                    w.writerow([_fmt(t), name, k + 1, _fmt(u[s * N + k])])


def write_monitor_csv(traj: Trajectory, path: str | Path) -> None:
    m = traj.monitors
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mass", "min", "max", "mu_log"])
        for row in zip(m["t"], m["mass"], m["min"], m["max"], m["mu_log"]):
            w.writerow([_fmt(v) for v in row])


def network_steady_state(network, x0, config: IntegratorConfig | None = None, tol: float = 1e-12,
                         t_cap: float = 1e4) -> np.ndarray:
    """Well-mixed mass-action steady state of ``network`` reached from ``x0``."""
    from .network import mass_action_jacobian, mass_action_rates

    gamma = network.gamma.astype(float)
    fun = lambda x: gamma @ mass_action_rates(network, x, allow_negative=True)
    jac = lambda x: sparse.csr_matrix(mass_action_jacobian(network, x, allow_negative=True))
    done = lambda t, y, f: float(np.max(np.abs(f))) <= tol
    x0 = np.asarray(x0, dtype=float)
    if done(0.0, x0, fun(x0)):
        return x0
    cfg = config or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13, dt_max=10.0)
    traj = integrate_system(fun, jac, x0, t_cap, (), cfg, stop=done)
    x = traj.states[-1]
    if not done(0.0, x, fun(x)):
        raise IntegrationError(f"no steady state within t_cap={t_cap}")
    return x

"""Method-of-lines semi-discretization of A + B <=> C with zero-flux boundaries.

The unit interval is split into ``N`` cells of width ``h = 1/N``.  The state
is ordered species-major, ``[a_1..a_N, b_1..b_N, c_1..c_N]``.  Diffusion uses
the three-point stencil with ghost cells ``u_0 = u_1`` and ``u_{N+1} = u_N``,
which folds into the corner entries of the Laplacian (``-1`` instead of
``-2``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, sparse

from .multicell import MulticellNetwork, expand, expanded_rhs, to_cell_major, to_species_major
from .network import ReactionNetwork, build_network

__all__ = [
    "Grid",
    "ProblemSpec",
    "StateVector",
    "LaplacianOperator",
    "PiecewiseConstant",
    "ProjectionError",
    "laplacian",
    "project_initial",
    "rhs",
    "jacobian",
    "reaction_jacobian",
    "log_norm_reaction",
    "reaction_log_norm",
    "mass",
    "GenericMolSystem",
    "abc_network",
]

InitialData = Union[float, int, Callable[[np.ndarray], np.ndarray], Polynomial, "PiecewiseConstant"]


class ProjectionError(RuntimeError):
    """Adaptive quadrature failed to reach the requested cell tolerance."""


@dataclass(frozen=True)
class Grid:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"grid needs N >= 2 cells, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    @property
    def left_edges(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    def cell_of(self, x) -> np.ndarray:
        """Index of the cell ``[(k-1)/N, k/N)`` containing ``x`` (0-based; ``x = 1`` maps to the last cell)."""
        return np.minimum(np.floor(np.asarray(x) * self.N).astype(int), self.N - 1)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Step function with ``values[i]`` on ``[breaks[i], breaks[i+1])``."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.values) + 1:
            raise ValueError("need one more break than values")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be strictly increasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def cell_means(self, N: int) -> np.ndarray:
        edges = np.arange(N + 1) / N
        out = np.zeros(N)
        for v, lo, hi in zip(self.values, self.breaks[:-1], self.breaks[1:]):
            overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
            out += v * overlap
        return out * N


@dataclass(frozen=True)
class ProblemSpec:
    """Rates, diffusion coefficients and initial data of the reaction-diffusion problem.

    ``k1``/``k_minus1`` may be zero (pure diffusion); diffusion coefficients
    must be positive.  ``M`` is the declared bound on the initial data; it is
    estimated from samples when omitted.
    """

    k1: float
    k_minus1: float
    kA: float
    kB: float
    kC: float
    a0: InitialData
    b0: InitialData
    c0: InitialData
    T: float = 1.0
    M: float | None = None

    def __post_init__(self):
        for name in ("k1", "k_minus1"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a nonnegative finite number, got {v!r}")
        for name in ("kA", "kB", "kC"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T!r}")
        if self.M is not None and self.M < 0:
            raise ValueError("initial-data bound M must be nonnegative")

    @property
    def diffusion(self) -> np.ndarray:
        return np.array([self.kA, self.kB, self.kC])

    @property
    def initial_data(self) -> tuple:
        return (self.a0, self.b0, self.c0)

    def initial_state(self, grid: Grid) -> np.ndarray:
        return np.concatenate([project_initial(f, grid.N) for f in self.initial_data])

    def bound(self, samples: int = 4097) -> float:
        if self.M is not None:
            return float(self.M)
        xs = np.linspace(0.0, 1.0, samples)
        return float(max(np.max(np.abs(_evaluate(f, xs))) for f in self.initial_data))

    def network(self) -> ReactionNetwork:
        return abc_network(self.k1, self.k_minus1)


@dataclass(frozen=True)
class StateVector:
    data: np.ndarray
    grid: Grid

    def __post_init__(self):
        d = np.array(self.data, dtype=float)
        if d.shape != (3 * self.grid.N,):
            raise ValueError(f"state must have length {3 * self.grid.N}, got {d.shape}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def a(self) -> np.ndarray:
        return self.data[: self.grid.N]

    @property
    def b(self) -> np.ndarray:
        return self.data[self.grid.N : 2 * self.grid.N]

    @property
    def c(self) -> np.ndarray:
        return self.data[2 * self.grid.N :]


@dataclass(frozen=True)
class LaplacianOperator:
    """Neumann three-point Laplacian ``scale * T`` where ``T`` has rows (1, -2, 1) and corners -1."""

    N: int
    scale: float
    _matrix: sparse.csr_matrix = field(repr=False, compare=False)

    def matrix(self) -> sparse.csr_matrix:
        return self._matrix

    def dense(self) -> np.ndarray:
        return self._matrix.toarray()

    def apply(self, v) -> np.ndarray:
        return _neumann_second_difference(np.asarray(v, dtype=float)) * self.scale


def laplacian(N: int, coefficient: float = 1.0) -> LaplacianOperator:
    """Discrete Neumann Laplacian on ``N`` cells, scaled by ``coefficient * N**2``."""
    if int(N) != N or N < 2:
        raise ValueError(f"laplacian needs N >= 2, got {N}")
    N = int(N)
    scale = float(coefficient) * N * N
    diag = np.full(N, -2.0)
    diag[0] = diag[-1] = -1.0
    off = np.ones(N - 1)
    mat = sparse.diags([off, diag, off], [-1, 0, 1], format="csr") * scale
    return LaplacianOperator(N, scale, mat)


def _neumann_second_difference(v: np.ndarray) -> np.ndarray:
    padded = np.concatenate([v[..., :1], v, v[..., -1:]], axis=-1)
    return padded[..., :-2] - 2.0 * v + padded[..., 2:]


def _evaluate(f: InitialData, x: np.ndarray) -> np.ndarray:
    if isinstance(f, (int, float)):
        return np.full_like(x, float(f), dtype=float)
    return np.broadcast_to(np.asarray(f(x), dtype=float), np.shape(x))


def project_initial(f: InitialData, N: int, tol: float = 1e-12) -> np.ndarray:
    """Cell averages ``N * int_{(k-1)/N}^{k/N} f``.

    Constants, :class:`~numpy.polynomial.Polynomial`, :class:`PiecewiseConstant`
    and objects exposing a ``polynomial`` attribute (parsed expressions) are
    averaged exactly; other callables use adaptive Gauss-Kronrod quadrature
    with absolute tolerance ``tol`` on each cell mean.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"need N >= 1 cells, got {N}")
    N = int(N)
    if isinstance(f, (int, float)):
        return np.full(N, float(f))
    if isinstance(f, PiecewiseConstant):
        return f.cell_means(N)
    poly = f if isinstance(f, Polynomial) else getattr(f, "polynomial", None)
    if poly is not None:
        P = poly.integ()
        edges = np.arange(N + 1) / N
        return np.diff(P(edges)) * N
    h = 1.0 / N
    out = np.empty(N)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for k in range(N):
            try:
                val, err = integrate.quad(lambda x: float(f(x)), k * h, (k + 1) * h, epsabs=tol * h, epsrel=0.0, limit=200)
            except integrate.IntegrationWarning as exc:
                raise ProjectionError(f"cell {k + 1}/{N}: {exc}") from None
            if err > tol * h:
                raise ProjectionError(f"cell {k + 1}/{N}: quadrature error estimate {err:.3g} exceeds tolerance")
            out[k] = val * N
    return out


def _split(u: np.ndarray, N: int):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 3 * N:
        raise ValueError(f"state must have length {3 * N}, got {u.shape[-1]}")
    return u[..., :N], u[..., N : 2 * N], u[..., 2 * N :]


def rhs(spec: ProblemSpec, grid: Grid, u) -> np.ndarray:
    """Semi-discrete vector field: reaction term plus block-diagonal Laplacian."""
    if isinstance(u, StateVector):
        u = u.data
    N = grid.N
    a, b, c = _split(u, N)
    F = -spec.k1 * a * b + spec.k_minus1 * c
    n2 = float(N * N)
    return np.concatenate(
        [
            F + spec.kA * n2 * _neumann_second_difference(a),
            F + spec.kB * n2 * _neumann_second_difference(b),
            -F + spec.kC * n2 * _neumann_second_difference(c),
        ],
        axis=-1,
    )


def reaction_jacobian(spec: ProblemSpec, grid: Grid, u) -> sparse.csr_matrix:
    """Jacobian of the reaction field: blocks ``[[B, A, C], [B, A, C], [-B, -A, -C]]``."""
    if isinstance(u, StateVector):
        u = u.data
    a, b, c = _split(u, grid.N)
    A = sparse.diags(-spec.k1 * a)
    B = sparse.diags(-spec.k1 * b)
    C = sparse.identity(grid.N) * spec.k_minus1
    return sparse.bmat([[B, A, C], [B, A, C], [-B, -A, -C]], format="csr")


def jacobian(spec: ProblemSpec, grid: Grid, u) -> sparse.csr_matrix:
    """Full Jacobian of :func:`rhs` (reaction blocks plus diffusion)."""
    lap = sparse.block_diag([laplacian(grid.N, k).matrix() for k in spec.diffusion], format="csr")
    return (reaction_jacobian(spec, grid, u) + lap).tocsr()


def reaction_log_norm(spec: ProblemSpec, u, N: int | None = None) -> float:
    """Largest eigenvalue of the symmetric part of the reaction Jacobian.

    The reaction Jacobian is block diagonal over cells with rank-one blocks
    ``p q^T``, ``p = (1, 1, -1)``, ``q = (-k1 b, -k1 a, k_-1)``, whose symmetric
    part has top eigenvalue ``(p.q + |p||q|) / 2``.
    """
    u = np.asarray(u, dtype=float)
    N = N if N is not None else u.shape[-1] // 3
    a, b, _ = _split(u, N)
    pq = -spec.k1 * (a + b) - spec.k_minus1
    qn = np.sqrt((spec.k1 * a) ** 2 + (spec.k1 * b) ** 2 + spec.k_minus1**2)
    return float(np.max(0.5 * (pq + math.sqrt(3.0) * qn)))


def log_norm_reaction(spec: ProblemSpec, u, M_tilde: float) -> float:
    """Logarithmic norm of the reaction Jacobian for a state inside ``[0, M_tilde]``."""
    if isinstance(u, StateVector):
        u = u.data
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > M_tilde):
        raise ValueError(f"state components must lie in [0, {M_tilde}]")
    return reaction_log_norm(spec, u)


def mass(u, N: int) -> float:
    """Discrete conserved total ``h * sum(a + b + 2c)``."""
    a, b, c = _split(u, N)
    return float(np.sum(a + b + 2.0 * c, axis=-1) / N)


def abc_network(k1: float, k_minus1: float) -> ReactionNetwork:
    """A + B -> C (rate ``k1``) and C -> A + B (rate ``k_minus1``).

    Zero rates drop the corresponding reaction.
    """
    reactions = []
    if k1 > 0:
        reactions.append(("A + B", "C", k1))
    if k_minus1 > 0:
        reactions.append(("C", "A + B", k_minus1))
    return build_network(["A", "B", "C"], reactions)


class GenericMolSystem:
    """Semi-discrete system of an arbitrary network via its multicell expansion.

    Diffusion of species ``i`` becomes transport between neighbouring cells
    with rate ``D_i * N**2``.  States are species-major, like :func:`rhs`.
    """

    def __init__(self, network: ReactionNetwork, diffusion, N: int):
        self.network = network
        self.N = int(N)
        self.diffusion = np.asarray(diffusion, dtype=float)
        self.multicell: MulticellNetwork = expand(network, self.N, self.diffusion * self.N**2)

    def rhs(self, u) -> np.ndarray:
        n = self.network.n_species
        x = to_cell_major(u, n, self.N)
        return to_species_major(expanded_rhs(self.multicell, x), n, self.N)

"""Heat kernels on the unit interval and their semi-discrete counterpart.

Continuous kernels are evaluated from their eigenfunction series with a
certified truncation index; the discrete Neumann kernel is synthesized from
the closed-form eigenpairs of the discrete Laplacian.  A diffusion
coefficient ``kappa`` enters only through the time rescaling ``t -> kappa t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

__all__ = [
    "KernelSpec",
    "EigenSystem",
    "KernelError",
    "eval_f",
    "truncation_index",
    "eval_continuous",
    "kernel_dx",
    "kernel_dy",
    "eigen_system",
    "discrete_propagator",
    "discrete_kernel_matrix",
    "eval_discrete",
    "kernel_distance",
    "duhamel_eval",
    "derivative_integral_check",
    "derivative_envelope",
    "MIN_SCALED_TIME",
]

MIN_SCALED_TIME = 1e-5
_KINDS = ("dirichlet", "neumann", "discrete")


class KernelError(ValueError):
    """Invalid kernel arguments or an evaluation that cannot be certified."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "neumann"
    diffusion: float = 1.0
    truncation_tol: float = 1e-12
    N: int | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in _KINDS:
            raise KernelError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.diffusion > 0:
            raise KernelError("diffusion must be positive")
        if not self.truncation_tol > 0:
            raise KernelError("truncation_tol must be positive")
        if kind == "discrete" and (self.N is None or self.N < 2):
            raise KernelError("discrete kernel needs N >= 2")


# --- special function --------------------------------------------------------

def _exp_square_sum(s: float, tol: float) -> float:
    """``sum_{k>=1} exp(-k^2 s)`` with tail bounded by ``tol``."""
    total = 0.0
    k = 1
    while True:
        total += math.exp(-k * k * s)
        tail = math.exp(-(k + 1) ** 2 * s) / -math.expm1(-(2 * k + 3) * s)
        if tail <= tol:
            return total
        k += 1


def eval_f(t, tol: float = 1e-15):
    """``f(t) = sum_{k>=1} exp(-k^2 t)`` to absolute accuracy ``tol``.

    For ``t < pi`` the theta-function identity
    ``1 + 2 f(t) = sqrt(pi/t) (1 + 2 f(pi^2/t))`` gives a rapidly converging
    series; larger ``t`` uses the direct series.  Both tails are bounded by
    the geometric estimate ``e^{-(n+1)^2 s} / (1 - e^{-(2n+3) s})``.
    """
    if np.ndim(t):
        return np.vectorize(lambda s: eval_f(s, tol), otypes=[float])(t)
    t = float(t)
    if not t > 0:
        raise KernelError(f"f(t) is only defined for t > 0, got {t}")
    if t >= math.pi:
        return _exp_square_sum(t, tol)
    scale = math.sqrt(math.pi / t)
    dual = _exp_square_sum(math.pi**2 / t, tol / scale)
    return 0.5 * (scale * (1.0 + 2.0 * dual) - 1.0)


# --- continuous kernels ------------------------------------------------------

def _scaled_time(spec: KernelSpec, t: float) -> float:
    if not t > 0:
        raise KernelError(f"continuous kernels need t > 0, got {t}")
    s = spec.diffusion * t
    if s < MIN_SCALED_TIME:
        raise KernelError(f"kappa*t = {s:.3g} below {MIN_SCALED_TIME}; series too slow to certify")
    return s


def truncation_index(s: float, tol: float) -> int:
    """Smallest ``J`` whose series tail ``2 sum_{j>J} e^{-j^2 pi^2 s}`` is certified below ``tol``."""
    a = math.pi**2 * s
    J = 0
    while 2.0 * math.exp(-((J + 1) ** 2) * a) / -math.expm1(-(2 * J + 3) * a) > tol:
        J += 1
    return J


def _derivative_truncation_index(s: float, tol: float) -> int:
    # tail of 2 pi sum j e^{-j^2 a} <= pi e^{-J^2 a} / a once j e^{-j^2 a} is decreasing
    a = math.pi**2 * s
    J = max(1, math.ceil(1.0 / math.sqrt(2.0 * a)))
    while math.pi * math.exp(-J * J * a) / a > tol:
        J += 1
    return J


def _modes(J: int, s: float):
    j = np.arange(1, J + 1, dtype=float)
    return j, np.exp(-(j**2) * math.pi**2 * s)


def eval_continuous(spec: KernelSpec, t: float, x, y):
    """Neumann or Dirichlet kernel at ``(kappa t, x, y)``; ``x`` and ``y`` broadcast."""
    if spec.kind == "discrete":
        raise KernelError("use eval_discrete for the discrete kernel")
    s = _scaled_time(spec, t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    j, w = _modes(truncation_index(s, spec.truncation_tol), s)
    trig = np.cos if spec.kind == "neumann" else np.sin
    terms = trig(np.multiply.outer(x, j) * math.pi) * trig(np.multiply.outer(y, j) * math.pi)
    series = 2.0 * (terms @ w)
    return 1.0 + series if spec.kind == "neumann" else series


def kernel_dx(spec: KernelSpec, t: float, x, y):
    """Term-by-term ``d/dx`` of the continuous kernel."""
    return _kernel_derivative(spec, t, x, y, wrt="x")


def kernel_dy(spec: KernelSpec, t: float, x, y):
    """Term-by-term ``d/dy`` of the continuous kernel."""
    return _kernel_derivative(spec, t, x, y, wrt="y")


def _kernel_derivative(spec: KernelSpec, t, x, y, wrt: str):
    if spec.kind == "discrete":
        raise KernelError("derivatives are only defined for continuous kernels")
    s = _scaled_time(spec, t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    j, w = _modes(_derivative_truncation_index(s, spec.truncation_tol), s)
    px = np.multiply.outer(x, j) * math.pi
    py = np.multiply.outer(y, j) * math.pi
    if wrt == "y":
        px, py = py, px
    # differentiate the factor in the variable `wrt` (now px)
    if spec.kind == "neumann":
        terms = -np.sin(px) * np.cos(py)
    else:
        terms = np.cos(px) * np.sin(py)
    return 2.0 * math.pi * (terms @ (j * w))


# --- discrete kernel ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Closed-form eigenpairs of the Neumann Laplacian ``N^2 tridiag(1, -2, 1)``, corners ``-1``.

    ``vectors[:, j]`` is the ``j``-th (0-based) orthonormal eigenvector with
    eigenvalue ``values[j] = -4 N^2 sin^2(j pi / 2N)``.
    """

    N: int
    values: np.ndarray
    vectors: np.ndarray

    def propagator(self, t: float, kappa: float = 1.0) -> np.ndarray:
        """``V exp(D kappa t) V^T``, the solution operator of the discrete heat flow."""
        return (self.vectors * np.exp(self.values * (kappa * t))) @ self.vectors.T


def eigen_system(N: int) -> EigenSystem:
    if int(N) != N or N < 2:
        raise KernelError(f"eigen_system needs N >= 2, got {N}")
    N = int(N)
    j = np.arange(N)
    values = -4.0 * N * N * np.sin(j * math.pi / (2 * N)) ** 2
    i = np.arange(1, N + 1)
    vectors = math.sqrt(2.0 / N) * np.cos(np.outer(i - 0.5, j) * math.pi / N)
    vectors[:, 0] = 1.0 / math.sqrt(N)
    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenSystem(N, values, vectors)


def discrete_propagator(N: int, kappa: float, t: float) -> np.ndarray:
    if t < 0:
        raise KernelError("discrete kernel needs t >= 0")
    return eigen_system(N).propagator(t, kappa)


def discrete_kernel_matrix(N: int, kappa: float, t: float) -> np.ndarray:
    """Cell values ``H^N_{ij} = N A_{ij}`` of the discrete kernel."""
    return N * discrete_propagator(N, kappa, t)


def eval_discrete(N: int, kappa: float, t: float, x, y):
    """Discrete Neumann kernel, piecewise constant on the ``N x N`` cell grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any((y < 0) | (y > 1)):
        raise KernelError("x and y must lie in [0, 1]")
    H = discrete_kernel_matrix(N, kappa, t)
    i = np.minimum((x * N).astype(int), N - 1)
    k = np.minimum((y * N).astype(int), N - 1)
    return H[i, k]


def kernel_distance(N: int, kappa: float, t: float, tol: float = 1e-12) -> float:
    """Max of ``|H^N - H|`` over all pairs of cell midpoints."""
    spec = KernelSpec("neumann", kappa, tol)
    mid = (np.arange(N) + 0.5) / N
    s = _scaled_time(spec, t)
    j, w = _modes(truncation_index(s, tol), s)
    C = np.cos(np.outer(mid, j) * math.pi)
    H = 1.0 + 2.0 * (C * w) @ C.T
    return float(np.max(np.abs(discrete_kernel_matrix(N, kappa, t) - H)))


# --- Duhamel representation --------------------------------------------------

class _SpectralProjector:
    """Cosine/sine coefficients of smooth functions on (0,1) by composite Gauss-Legendre."""

    def __init__(self, kind: str, panels: int = 256, order: int = 16):
        xg, wg = roots_legendre(order)
        edges = np.linspace(0.0, 1.0, panels + 1)
        h = np.diff(edges)
        self.nodes = (edges[:-1, None] + 0.5 * h[:, None] * (xg[None, :] + 1.0)).ravel()
        self.weights = (0.5 * h[:, None] * wg[None, :]).ravel()
        self.kind = kind
        self.jmax = len(self.nodes) // 4
        self._weighted_basis = (self.basis(self.nodes, self.jmax) * self.weights[:, None]).T

    def basis(self, x, J: int) -> np.ndarray:
        j = np.arange(0 if self.kind == "neumann" else 1, J + 1)
        trig = np.cos if self.kind == "neumann" else np.sin
        return trig(np.multiply.outer(np.asarray(x, dtype=float), j) * math.pi)

    def coefficients(self, values: np.ndarray, J: int) -> np.ndarray:
        rows = J + 1 if self.kind == "neumann" else J
        return self._weighted_basis[:rows] @ values

    def synthesize(self, coeffs: np.ndarray, x, s: float) -> np.ndarray:
        J = len(coeffs) - (1 if self.kind == "neumann" else 0)
        j = np.arange(0 if self.kind == "neumann" else 1, J + 1)
        gain = 2.0 * np.exp(-(j**2) * math.pi**2 * s)
        if self.kind == "neumann":
            gain[0] = 1.0
        return self.basis(x, J) @ (gain * coeffs)


@lru_cache(maxsize=2)
def _projector(kind: str) -> _SpectralProjector:
    return _SpectralProjector(kind)


def duhamel_eval(
    spec: KernelSpec,
    initial,
    source: Callable | None,
    t: float,
    x=None,
    delta: float | None = None,
    floor: float = 1e-6,
    tol: float = 1e-10,
):
    """Evaluate ``u(t) = int H(t,.,y) u0(y) dy + int_0^t int H(t-s,.,y) f(s,y) dy ds``.

    For the discrete kernel ``initial`` is a cell vector (or a function,
    projected to cell averages) and ``source(s, y)`` is sampled at cell
    centres; the result is the cell vector at time ``t``.  Spatial integrals
    are then exact cell sums and the time integral is adaptive.

    For continuous kernels ``initial(y)`` and ``source(s, y)`` are callables
    and the result is evaluated at the points ``x``.  The time integral is
    split at ``t - delta/2`` and stops at ``t - floor``; the last sliver,
    where the kernel series needs too many modes, is done by the trapezoid
    rule (error ``O(floor^3)`` for smooth sources).

    Raises
    ------
    KernelError
        If the adaptive time quadrature does not reach ``tol``; reduce the
        tolerance or raise ``floor``.
    """
    if not t > 0:
        raise KernelError(f"duhamel_eval needs t > 0, got {t}")
    kappa = spec.diffusion
    if spec.kind == "discrete":
        return _duhamel_discrete(spec.N, kappa, initial, source, t, tol)

    if x is None:
        raise KernelError("continuous Duhamel evaluation needs evaluation points x")
    x = np.asarray(x, dtype=float)
    proj = _projector(spec.kind)

    def heat(values, s):
        J = truncation_index(s, spec.truncation_tol)
        if J > proj.jmax:
            raise KernelError(f"kappa*t = {s:.3g} needs {J} modes, beyond the {proj.jmax} the projector resolves")
        return proj.synthesize(proj.coefficients(values, J), x, s)

    u0 = initial(proj.nodes) if callable(initial) else np.full_like(proj.nodes, float(initial))
    result = heat(np.asarray(u0, dtype=float), _scaled_time(spec, t))
    if source is None:
        return result

    floor = min(floor, 0.5 * t)
    if kappa * floor < MIN_SCALED_TIME:
        floor = MIN_SCALED_TIME / kappa
        if floor >= t:
            raise KernelError("t too small for the Duhamel floor; increase t or lower MIN_SCALED_TIME")
    delta = t if delta is None else min(delta, t)
    split = max(t - 0.5 * delta, 0.0)

    def integrand(s):
        vals = np.asarray(source(s, proj.nodes), dtype=float)
        return heat(np.broadcast_to(vals, proj.nodes.shape), kappa * (t - s))

    total = np.zeros_like(x)
    for lo, hi in ((0.0, split), (split, t - floor)):
        if hi <= lo:
            continue
        val, err = integrate.quad_vec(integrand, lo, hi, epsabs=tol, epsrel=0.0, limit=500)
        if err > 10 * tol:
            raise KernelError(f"time quadrature on [{lo:.3g}, {hi:.3g}] failed: error {err:.3g}")
        total += val
    # trapezoid rule on the last sliver [t - floor, t]
    at_t = np.broadcast_to(np.asarray(source(t, x), dtype=float), x.shape)
    return result + total + 0.5 * floor * (at_t + integrand(t - floor))


def _duhamel_discrete(N, kappa, initial, source, t, tol):
    from .mol import project_initial

    es = eigen_system(N)
    u0 = np.asarray(initial, dtype=float) if np.ndim(initial) else None
    if u0 is None:
        u0 = project_initial(initial, N)
    if u0.shape != (N,):
        raise KernelError(f"initial cell vector must have length {N}")
    result = es.propagator(t, kappa) @ u0
    if source is None:
        return result
    centres = (np.arange(N) + 0.5) / N
    # A(kappa s) f(t - s): smooth in s, no singular endpoint for the discrete kernel
    def integrand(s):
        f = np.broadcast_to(np.asarray(source(t - s, centres), dtype=float), (N,))
        return es.vectors @ (np.exp(es.values * kappa * s) * (es.vectors.T @ f))

    val, err = integrate.quad_vec(integrand, 0.0, t, epsabs=tol, epsrel=0.0, limit=500)
    if err > 10 * tol:
        raise KernelError(f"time quadrature failed: error {err:.3g}")
    return result + val


# --- derivative integrals ----------------------------------------------------

def derivative_integral_check(spec: KernelSpec, t: float, x: float, tol: float = 1e-9) -> float:
    """``int_0^1 |d/dy H(kappa t, x, y)| dy`` for a continuous kernel."""
    if spec.kind == "discrete":
        raise KernelError("derivative integrals are defined for continuous kernels only")
    if spec.diffusion * t < 1e-4:
        raise KernelError(f"kappa*t = {spec.diffusion * t:.3g} below the 1e-4 floor")
    g = lambda y: abs(float(kernel_dy(spec, t, x, y)))
    pts = [p for p in (x,) if 0.0 < p < 1.0]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(g, 0.0, 1.0, points=pts or None, epsabs=tol, epsrel=1e-10, limit=500)
        except integrate.IntegrationWarning as exc:
            raise KernelError(f"derivative integral did not converge at t={t}: {exc}") from None
    return val


def derivative_envelope(spec: KernelSpec, ts, x: float, small_t: float = 1e-2) -> dict:
    """Fit ``int |d_y H| dy <= C t^{-3/4}`` over a sweep of times.

    Returns the sampled values, the smallest envelope constant ``C`` valid on
    the sweep, and the least-squares log-log slope over ``t <= small_t``
    (the short-time regime where the kernel is not yet spectrally damped).
    """
    ts = np.asarray(sorted(ts), dtype=float)
    vals = np.array([derivative_integral_check(spec, t, x) for t in ts])
    C = float(np.max(vals * ts**0.75))
    mask = ts <= small_t
    slope = float(np.polyfit(np.log(ts[mask]), np.log(vals[mask]), 1)[0]) if mask.sum() >= 2 else float("nan")
    return {"t": ts, "values": vals, "C": C, "small_t_slope": slope}

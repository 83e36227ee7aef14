import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rdmol import kernels as K
from rdmol.kernels import KernelError, KernelSpec

F1 = 0.38631860241332605  # sum_k exp(-k^2) summed directly to double precision


def brute_f(t):
    k = np.arange(1, 20000)
    return float(np.sum(np.exp(-(k.astype(float) ** 2) * t)))


def test_f_at_one():
    assert K.eval_f(1.0) == pytest.approx(0.3863186, abs=1e-6)
    assert K.eval_f(1.0) == pytest.approx(F1, abs=1e-15)


@pytest.mark.parametrize("t", [1e-3, 0.01, 0.5, 3.0, math.pi, 3.2, 10.0])
def test_f_branches_agree_with_direct_sum(t):
    assert K.eval_f(t) == pytest.approx(brute_f(t), rel=1e-13)


def test_f_rejects_nonpositive():
    for t in (0.0, -1.0):
        with pytest.raises(KernelError):
            K.eval_f(t)


@settings(max_examples=80, deadline=None)
@given(st.floats(1e-4, 50.0), st.floats(1e-4, 50.0))
def test_f_positive_decreasing_above_first_term(s, t):
    fs, ft = K.eval_f(s), K.eval_f(t)
    assert fs >= math.exp(-s) * (1 - 1e-15)
    if s < t:
        assert fs >= ft


def test_truncation_index_is_minimal():
    for s in (1e-3, 0.01, 0.1, 1.0):
        J = K.truncation_index(s, 1e-12)
        tail = lambda J: 2 * sum(math.exp(-j * j * math.pi**2 * s) for j in range(J + 1, J + 400))
        assert tail(J) <= 1e-12
        if J > 0:
            assert 2 * math.exp(-((J) ** 2) * math.pi**2 * s) / -math.expm1(-(2 * J + 1) * math.pi**2 * s) > 1e-12


def test_neumann_normalisation():
    spec = KernelSpec("neumann")
    for t in (1e-3, 0.05, 1.0):
        for x in (0.0, 0.3, 1.0):
            val, _ = integrate.quad(lambda y: K.eval_continuous(spec, t, x, y), 0, 1, points=[x] if 0 < x < 1 else None,
                                    limit=200, epsabs=1e-12)
            assert val == pytest.approx(1.0, abs=1e-9)


def test_symmetry_and_bound(rng):
    for kind in ("neumann", "dirichlet"):
        spec = KernelSpec(kind, 0.7)
        for _ in range(30):
            t, x, y = rng.uniform(0.001, 1), rng.uniform(), rng.uniform()
            assert K.eval_continuous(spec, t, x, y) == K.eval_continuous(spec, t, y, x)
            assert abs(K.eval_continuous(spec, t, x, y)) <= 1 + 2 * K.eval_f(4 * 0.7 * t) + 1e-10


def test_dirichlet_vanishes_on_boundary():
    spec = KernelSpec("dirichlet")
    assert abs(K.eval_continuous(spec, 0.1, 0.0, 0.4)) <= 1e-15
    assert abs(K.eval_continuous(spec, 0.1, 1.0, 0.4)) <= 1e-12


def test_continuous_errors():
    spec = KernelSpec("neumann")
    with pytest.raises(KernelError):
        K.eval_continuous(spec, 0.0, 0.5, 0.5)
    with pytest.raises(KernelError):
        K.eval_continuous(spec, 1e-7, 0.5, 0.5)
    with pytest.raises(KernelError):
        KernelSpec("periodic")
    with pytest.raises(KernelError):
        KernelSpec("discrete")


def test_diffusion_is_time_rescaling():
    a = K.eval_continuous(KernelSpec("neumann", 0.25), 0.4, 0.2, 0.7)
    b = K.eval_continuous(KernelSpec("neumann", 1.0), 0.1, 0.2, 0.7)
    assert a == pytest.approx(b, rel=1e-14)


def test_mixed_derivative_identity(rng):
    H, HD = KernelSpec("neumann"), KernelSpec("dirichlet")
    for _ in range(25):
        t, x, y = rng.uniform(0.005, 1), rng.uniform(), rng.uniform()
        assert abs(K.kernel_dx(H, t, x, y) + K.kernel_dy(HD, t, x, y)) <= 1e-8


def test_kernel_derivative_matches_finite_difference():
    spec = KernelSpec("neumann")
    t, x, y, h = 0.05, 0.3, 0.55, 1e-6
    fd = (K.eval_continuous(spec, t, x, y + h) - K.eval_continuous(spec, t, x, y - h)) / (2 * h)
    assert K.kernel_dy(spec, t, x, y) == pytest.approx(fd, rel=1e-6)


def test_eigen_system_examples():
    es = K.eigen_system(3)
    assert es.values[0] == 0
    assert es.values[1] == pytest.approx(-9.0, abs=1e-12)
    assert np.allclose(es.vectors[:, 0], 1 / math.sqrt(3))
    with pytest.raises(KernelError):
        K.eigen_system(1)


@pytest.mark.parametrize("N", [2, 5, 16, 100])
def test_eigen_system_orthonormal_and_ordered(N):
    es = K.eigen_system(N)
    assert np.max(np.abs(es.vectors.T @ es.vectors - np.eye(N))) <= 1e-12
    assert np.all(np.diff(es.values) < 0)


def test_discrete_kernel_limits():
    N = 6
    H0 = K.discrete_kernel_matrix(N, 1.0, 0.0)
    assert np.allclose(H0, N * np.eye(N), atol=1e-12)
    assert np.allclose(K.discrete_kernel_matrix(N, 1.0, 50.0), 1.0, atol=1e-12)


def test_discrete_row_sums_and_positivity():
    for N in (4, 17, 64):
        for t in (1e-4, 0.01, 0.3):
            H = K.discrete_kernel_matrix(N, 1.0, t)
            assert np.max(np.abs(H.sum(axis=1) / N - 1)) <= 1e-12
            assert H.min() >= -1e-12


def test_chapman_kolmogorov():
    N = 20
    A = lambda t: K.discrete_propagator(N, 0.3, t)
    assert np.max(np.abs(A(0.07) - A(0.03) @ A(0.04))) <= 1e-10


def test_discrete_propagator_is_matrix_exponential():
    from scipy.linalg import expm

    from rdmol.mol import laplacian

    N = 12
    assert np.allclose(K.discrete_propagator(N, 0.2, 0.5), expm(0.2 * 0.5 * laplacian(N).dense()), atol=1e-12)


def test_eval_discrete_piecewise_constant():
    N = 4
    H = K.discrete_kernel_matrix(N, 1.0, 0.1)
    assert K.eval_discrete(N, 1.0, 0.1, 0.1, 0.6) == H[0, 2]
    assert K.eval_discrete(N, 1.0, 0.1, 0.24, 0.74) == H[0, 2]
    assert K.eval_discrete(N, 1.0, 0.1, 1.0, 1.0) == H[3, 3]


def test_kernel_distance_decreases():
    d = [K.kernel_distance(N, 1.0, 0.1) for N in (8, 16, 32, 64, 128)]
    assert all(b < a for a, b in zip(d, d[1:]))
    assert K.kernel_distance(8, 1.0, 10.0) <= 1e-8
    with pytest.raises(KernelError):
        K.kernel_distance(8, 1.0, 0.0)


def test_duhamel_constant_initial():
    for kind in ("neumann", "discrete"):
        spec = KernelSpec(kind, 0.5, N=8 if kind == "discrete" else None)
        x = np.linspace(0, 1, 5)
        out = K.duhamel_eval(spec, lambda y: 2.0 + 0 * y, None, 0.3, x)
        assert np.allclose(out, 2.0, atol=1e-12)


def test_duhamel_single_mode():
    spec = KernelSpec("neumann")
    x = np.linspace(0, 1, 9)
    out = K.duhamel_eval(spec, lambda y: np.cos(np.pi * y), None, 0.2, x)
    assert np.max(np.abs(out - np.exp(-np.pi**2 * 0.2) * np.cos(np.pi * x))) <= 1e-12


def test_duhamel_dirichlet_single_mode():
    spec = KernelSpec("dirichlet", 0.5)
    x = np.linspace(0, 1, 9)
    out = K.duhamel_eval(spec, lambda y: np.sin(2 * np.pi * y), None, 0.1, x)
    assert np.max(np.abs(out - np.exp(-4 * np.pi**2 * 0.05) * np.sin(2 * np.pi * x))) <= 1e-12


def test_duhamel_manufactured_source():
    # u = t cos(pi x) solves u_t = u_xx + (1 + pi^2 t) cos(pi x) with u(0) = 0
    spec = KernelSpec("neumann")
    x = np.linspace(0, 1, 7)
    t = 0.3
    out = K.duhamel_eval(spec, lambda y: 0 * y, lambda s, y: np.cos(np.pi * y) * (1 + np.pi**2 * s), t, x)
    assert np.max(np.abs(out - t * np.cos(np.pi * x))) <= 1e-9


def test_duhamel_discrete_manufactured_source():
    # v(t) = t w with w an eigenvector solves v' = L v + (1 - lambda t) w
    N = 16
    es = K.eigen_system(N)
    w, lam = es.vectors[:, 2], es.values[2]
    spec = KernelSpec("discrete", 1.0, N=N)

    def source(s, y):
        idx = np.minimum((np.asarray(y) * N).astype(int), N - 1)
        return (1 - lam * s) * w[idx]

    out = K.duhamel_eval(spec, np.zeros(N), source, 0.05)
    assert np.max(np.abs(out - 0.05 * w)) <= 1e-9


def test_duhamel_errors():
    with pytest.raises(KernelError):
        K.duhamel_eval(KernelSpec("neumann"), lambda y: y, None, 0.0, [0.5])
    with pytest.raises(KernelError):
        K.duhamel_eval(KernelSpec("neumann"), lambda y: y, None, 0.5)


def test_derivative_integral_values():
    for kind in ("neumann", "dirichlet"):
        spec = KernelSpec(kind)
        v = K.derivative_integral_check(spec, 1.0, 0.3)
        assert math.isfinite(v) and v >= 0
    with pytest.raises(KernelError):
        K.derivative_integral_check(KernelSpec("neumann"), 1e-5, 0.3)


def test_derivative_envelope():
    spec = KernelSpec("neumann")
    ts = [1e-3, 2e-3, 5e-3, 1e-2, 0.1, 1.0]
    env = K.derivative_envelope(spec, ts, 0.3)
    assert env["small_t_slope"] >= -0.75 - 0.1
    assert np.all(env["values"] <= env["C"] * np.asarray(ts) ** -0.75 * (1 + 1e-12))
    assert env["values"][-1] <= env["C"]

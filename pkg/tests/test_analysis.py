import math

import numpy as np
import pytest

from rdmol import analysis as A
from rdmol import mol
from rdmol.expr import Expression
from rdmol.integrate import IntegratorConfig, integrate
from rdmol.mol import Grid, ProblemSpec


def test_l2_cell_norm_examples():
    u = np.array([0.3, -1.2, 4.0])
    assert A.l2_cell_norm(u, u, 3) == 0
    for N in (1, 5, 64):
        assert A.l2_cell_norm(np.ones(N), np.zeros(N), N) == pytest.approx(1.0, abs=1e-15)
    assert A.l2_cell_norm([1.0, -1.0], [0.0, 0.0], 2) == 1.0
    with pytest.raises(ValueError):
        A.l2_cell_norm([1.0], [1.0, 2.0], 2)


def _averages(F, M):
    edges = np.arange(M + 1) / M
    return np.diff(F(edges)) * M


def test_reconstruct_exact_for_cubics_in_interior():
    F = lambda x: x**4 / 4 - x**3 / 3 + 0.5 * x  # primitive of x^3 - x^2 + 0.5
    f = lambda x: x**3 - x**2 + 0.5
    x = np.linspace(0.2, 0.8, 13)
    assert np.max(np.abs(A.reconstruct(_averages(F, 20), x) - f(x))) <= 1e-12


def test_reconstruct_fourth_order_with_walls():
    f = lambda x: np.cos(np.pi * x) + 0.3 * np.cos(3 * np.pi * x)
    F = lambda x: np.sin(np.pi * x) / np.pi + 0.1 * np.sin(3 * np.pi * x) / np.pi
    x = np.linspace(0, 1, 101)
    errs = [np.max(np.abs(A.reconstruct(_averages(F, M), x) - f(x))) for M in (32, 64, 128)]
    assert A.fit_order([32, 64, 128], errs) >= 3.8


def test_reconstruct_vectorised_over_species():
    avg = np.vstack([np.full(8, 1.0), np.full(8, 2.0)])
    out = A.reconstruct(avg, [0.0, 0.5, 1.0])
    assert out.shape == (2, 3)
    assert np.allclose(out, [[1, 1, 1], [2, 2, 2]], atol=1e-14)
    with pytest.raises(ValueError):
        A.reconstruct(avg, [1.5])


def test_fit_order():
    Ns = [8, 16, 32]
    assert A.fit_order(Ns, [1 / N**2 for N in Ns]) == pytest.approx(2.0)
    assert math.isnan(A.fit_order(Ns, [1.0, 0.0, 1.0]))


@pytest.fixture(scope="module")
def small_reference():
    spec = ProblemSpec(1.0, 2.0, 0.1, 0.15, 0.2, Expression("2 + cos(pi*x)"), Expression("1 + 0.5*cos(2*pi*x)"),
                       Expression("0.5*(1 - x*(1 - x))"))
    ref = A.ReferenceSolution.compute(spec, 64, [0.1 - 2e-3, 0.1, 0.25], t_end=0.25)
    return spec, ref


def test_error_series_self_comparison_average(small_reference):
    spec, ref = small_reference
    es = A.error_series(spec, ref.grid, ref, ref.trajectory, [0.1, 0.25], sampling="average")
    assert np.all(es.eN == 0)


def test_error_series_two_forms_agree(small_reference):
    spec, ref = small_reference
    g = Grid(16)
    tr = integrate(spec, g, t_end=0.25, sample_times=[0.1])
    for sampling in ("left", "center", "average"):
        es = A.error_series(spec, g, ref, tr, [0.1, 0.25], sampling=sampling)
        assert np.all(es.eN >= 0)
        assert np.allclose(es.eN, es.eN_vector, rtol=1e-13, atol=0)
    left = A.error_series(spec, g, ref, tr, [0.25], sampling="left")
    avg = A.error_series(spec, g, ref, tr, [0.25], sampling="average")
    assert left.eN[0] > 10 * avg.eN[0]  # the left-endpoint sampling offset dominates


def test_error_series_requires_nesting(small_reference):
    spec, ref = small_reference
    g = Grid(24)
    tr = integrate(spec, g, t_end=0.1)
    with pytest.raises(A.StudyError):
        A.error_series(spec, g, ref, tr, [0.1])


def test_reference_time_derivative_methods_agree(small_reference):
    spec, ref = small_reference
    x = np.linspace(0, 1, 9)
    fd = ref.time_derivative(0.1, x, tau=1e-3, method="fd")
    ex = ref.time_derivative(0.1, x, method="rhs")
    assert np.max(np.abs(fd - ex)) <= 1e-6 * np.max(np.abs(ex))


def _mode(j, kappa):
    return lambda t, x: np.exp(-kappa * (j * np.pi) ** 2 * t) * np.cos(j * np.pi * x)


def _mode_dt(j, kappa):
    return lambda t, x: -kappa * (j * np.pi) ** 2 * np.exp(-kappa * (j * np.pi) ** 2 * t) * np.cos(j * np.pi * x)


@pytest.mark.parametrize("use_fd", [False, True])
def test_consistency_symbol_mismatch(use_fd):
    kap = (0.1, 0.15, 0.2)
    modes = (1, 2, 3)
    spec = ProblemSpec(0.0, 0.0, *kap, 0.0, 0.0, 0.0)
    ref = A.AnalyticReference([_mode(j, k) for j, k in zip(modes, kap)],
                              None if use_fd else [_mode_dt(j, k) for j, k in zip(modes, kap)])
    t = 0.2
    for N in (8, 32, 128):
        rep = A.consistency_residual(spec, Grid(N), ref, t, tau=1e-3)
        x = Grid(N).centers
        expected = np.concatenate([
            k * (4 * N**2 * math.sin(j * math.pi / (2 * N)) ** 2 - (j * math.pi) ** 2) * _mode(j, k)(t, x)
            for j, k in zip(modes, kap)
        ])
        assert np.max(np.abs(rep.residual - expected)) <= 1e-6
        assert rep.residual_l2 == pytest.approx(np.linalg.norm(rep.residual) / math.sqrt(N))


def test_consistency_constant_reference_is_zero():
    spec = ProblemSpec(2.0, 1.0, 0.1, 0.15, 0.2, 1.0, 1.0, 2.0)
    const = lambda v: (lambda t, x: np.full_like(np.asarray(x, dtype=float), v))
    ref = A.AnalyticReference([const(1.0), const(1.0), const(2.0)], [const(0.0)] * 3)
    rep = A.consistency_residual(spec, Grid(16), ref, 0.5)
    assert rep.residual_sup <= 1e-14


def test_consistency_rejects_initial_layer():
    spec = ProblemSpec(0.0, 0.0, 1, 1, 1, 0, 0, 0)
    ref = A.AnalyticReference([_mode(1, 1)] * 3, [_mode_dt(1, 1)] * 3)
    with pytest.raises(A.StudyError):
        A.consistency_residual(spec, Grid(8), ref, 0.005)


def test_reference_consistency_centre_decays_left_does_not(small_reference):
    spec, ref = small_reference
    centre = [A.consistency_residual(spec, Grid(N), ref, 0.1).residual_sup for N in (4, 8, 16)]
    assert A.fit_order([4, 8, 16], centre) >= 1.5
    left = A.consistency_residual(spec, Grid(16), ref, 0.1, sampling="left")
    interior = np.abs(left.residual.reshape(3, 16)[:, 2:-2]).max()
    boundary = np.abs(left.residual.reshape(3, 16)[:, [0, -1]]).max()
    assert boundary > 10 * interior


def test_study_rejects_degenerate_setups():
    spec = ProblemSpec(1, 1, 1, 1, 1, 1, 1, 1)
    with pytest.raises(A.StudyError):
        A.run_convergence_study(spec, [8], 8, [0.25])
    with pytest.raises(A.StudyError):
        A.run_convergence_study(spec, [8, 12], 64, [0.25])
    with pytest.raises(A.StudyError):
        A.run_convergence_study(spec, [8, 16], 32, [0.25])
    with pytest.raises(A.StudyError):
        A.run_convergence_study(spec, [16, 8], 128, [0.25])


def test_small_study_report(default_spec):
    rep = A.run_convergence_study(default_spec, [4, 8, 16], 64, [0.1, 0.25], layer_deltas=(), check_temporal=False,
                                  consistency_times=(0.1,), threads=2)
    assert rep.Ns == [4, 8, 16]
    assert list(rep.errors) == [4, 8, 16]
    assert rep.flags["conservation"] and rep.flags["nonnegative"]
    assert rep.flags["errors_decreasing"]
    d = rep.to_dict()
    assert set(d["flags"]) >= {"convergence", "consistency", "conservation", "nonnegative", "bounded"}
    assert d["consistency_constants"]


def test_study_threads_do_not_change_results(default_spec):
    kw = dict(layer_deltas=(), check_temporal=False, check_reference=False, consistency_times=(0.1,))
    a = A.run_convergence_study(default_spec, [4, 8], 32, [0.1], convergence_time=0.1, **kw)
    b = A.run_convergence_study(default_spec, [4, 8], 32, [0.1], convergence_time=0.1, threads=2, **kw)
    assert a.to_dict() == b.to_dict()


def test_projection_examples():
    res = A.projection_convergence(3.0, [2, 8], 2)
    assert np.all(res["errors"] == 0)
    res = A.projection_convergence(Expression("x"), [4, 16, 64], 2)
    expected = [1 / (N * 2 * math.sqrt(3)) for N in (4, 16, 64)]
    assert np.allclose(res["errors"], expected, rtol=1e-12)


def test_projection_order_and_lipschitz_bound():
    f = Expression("2 + cos(pi*x)")
    Ns = [8, 16, 32, 64, 128]
    for p in (1, 2, 3.5):
        res = A.projection_convergence(f, Ns, p)
        assert np.all(np.diff(res["errors"]) < 0)
        assert res["order"] >= 0.99
        assert np.all(res["errors"] <= math.pi / np.asarray(Ns))


def test_projection_step_function():
    step = mol.PiecewiseConstant((0.0, 0.5, 1.0), (1.0, 0.0))
    res = A.projection_convergence(step, [2, 4, 8], 1)
    assert np.all(res["errors"] <= 1e-14)
    with pytest.raises(ValueError):
        A.projection_convergence(step, [2], 0.5)

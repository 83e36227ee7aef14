from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdmol.network import (
    Complex,
    NetworkError,
    build_network,
    conservation_laws,
    dump_network,
    is_complex_balanced,
    mass_action_jacobian,
    mass_action_rates,
    parse_network,
)


def abc(k1=1.0, km1=1.0):
    return build_network(["A", "B", "C"], [("A + B", "C", k1), ("C", "A + B", km1)])


def test_gamma_abc():
    assert abc().gamma.tolist() == [[-1, 1], [-1, 1], [1, -1]]


def test_gamma_autocatalytic_and_dimerisation():
    assert build_network(["A"], [("A", "2 A", 1.0)]).gamma.tolist() == [[1]]
    assert build_network(["A", "B"], [("2A", "B", 1.0)]).gamma.tolist() == [[-2], [1]]


@pytest.mark.parametrize(
    "reactions",
    [[("A", "D", 1.0)], [({5: 1}, {0: 1}, 1.0)], [("A", "B", 0.0)], [("A", "B", -1.0)], [("A", "A", 1.0)]],
)
def test_build_rejects_invalid(reactions):
    with pytest.raises(NetworkError):
        build_network(["A", "B"], reactions)


def test_duplicate_species_rejected():
    with pytest.raises(NetworkError):
        build_network(["A", "A"], [])


def test_complex_registry_deduplicates():
    net = abc()
    assert len(net.complexes) == 2
    assert net.source_index.tolist() == [0, 1]
    assert net.target_index.tolist() == [1, 0]


def test_mass_action_rates_examples():
    net = build_network(["A", "B", "C"], [("A + B", "C", 1.0)])
    assert mass_action_rates(net, [2.0, 3.0, 7.0])[0] == 6.0
    assert mass_action_rates(net, [0.0, 0.0, 0.0])[0] == 0.0
    x = np.ones(3)
    assert np.all(abc().gamma @ mass_action_rates(abc(), x) == 0)


def test_mass_action_rates_reject_negative():
    with pytest.raises(NetworkError):
        mass_action_rates(abc(), [-1.0, 1.0, 1.0])


def test_empty_source_rate_is_constant():
    net = build_network(["A"], [("0", "A", 2.5), ("A", "0", 1.0)])
    assert mass_action_rates(net, [3.0]).tolist() == [2.5, 3.0]


def test_conservation_laws_examples():
    assert conservation_laws(abc()) == [(1, -1, 0), (1, 0, 1)]
    assert conservation_laws(build_network(["A", "B"], [("A", "B", 1.0), ("B", "A", 1.0)])) == [(1, 1)]
    full = build_network(["A", "B"], [("0", "A", 1.0), ("0", "B", 1.0)])
    assert conservation_laws(full) == []


def test_conservation_laws_span_total_mass():
    laws = np.array(conservation_laws(abc()), dtype=float)
    coeffs, *_ = np.linalg.lstsq(laws.T, np.array([1.0, 1.0, 2.0]), rcond=None)
    assert np.allclose(laws.T @ coeffs, [1, 1, 2])


def test_conservation_laws_exact_rational():
    net = build_network(["A", "B", "C", "D"], [("2A + B", "3C", 1.0), ("C", "D", 2.0), ("D + A", "B", 1.0)])
    for law in conservation_laws(net):
        for col in net.gamma.T:
            assert sum(Fraction(int(a)) * int(b) for a, b in zip(law, col)) == 0


def test_complex_balance_examples():
    assert is_complex_balanced(abc(2.0, 1.0), [1.0, 1.0, 2.0])
    assert not is_complex_balanced(abc(1.0, 1.0), [1.0, 1.0, 3.0])
    ab = build_network(["A", "B"], [("A", "B", 2.0), ("B", "A", 1.0)])
    assert is_complex_balanced(ab, [1.0, 2.0])


def test_complex_balance_rejects_nonpositive():
    with pytest.raises(NetworkError):
        is_complex_balanced(abc(), [1.0, 0.0, 1.0])


def test_equilibrium_that_is_not_complex_balanced():
    # A -> B and 2B -> 2A: (2, 1) is an equilibrium but complex A has outflow and no inflow
    net = build_network(["A", "B"], [("A", "B", 1.0), ("2B", "2A", 1.0)])
    x = np.array([2.0, 1.0])
    assert np.allclose(net.gamma @ mass_action_rates(net, x), 0.0)
    assert not is_complex_balanced(net, x)


positive = st.floats(min_value=0.05, max_value=5.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(positive, min_size=3, max_size=3), positive, positive)
def test_conservation_orthogonal_to_vector_field(x, k1, km1):
    net = abc(k1, km1)
    f = net.gamma @ mass_action_rates(net, x)
    for law in conservation_laws(net):
        assert abs(np.dot(law, f)) <= 1e-12 * (1 + np.abs(f).sum())


@settings(max_examples=60, deadline=None)
@given(st.lists(positive, min_size=4, max_size=4))
def test_rates_homogeneous_in_source_order(x):
    net = build_network(["A", "B", "C", "D"], [("2A + B", "C", 1.5), ("C", "D", 2.0), ("0", "A", 1.0)])
    v1 = mass_action_rates(net, x)
    v2 = mass_action_rates(net, 2 * np.asarray(x))
    orders = np.array([c.order for c in (r.source for r in net.reactions)])
    assert np.allclose(v2, v1 * 2.0**orders, rtol=1e-13)


@settings(max_examples=40, deadline=None)
@given(positive, positive, positive, positive)
def test_complex_balance_implies_equilibrium(k1, km1, a, b):
    net = abc(k1, km1)
    c = k1 * a * b / km1
    x = np.array([a, b, c])
    assert is_complex_balanced(net, x)
    assert np.max(np.abs(net.gamma @ mass_action_rates(net, x))) <= 1e-9


def test_jacobian_matches_finite_differences(rng):
    net = build_network(["A", "B", "C"], [("2A + B", "C", 1.5), ("C", "A", 2.0)])
    x = rng.uniform(0.5, 2.0, 3)
    J = mass_action_jacobian(net, x)
    f = lambda z: net.gamma @ mass_action_rates(net, z)
    eps = 1e-7
    fd = np.column_stack([(f(x + eps * e) - f(x - eps * e)) / (2 * eps) for e in np.eye(3)])
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-8)


NET_TEXT = """
# reversible binding
[species]
names = A, B, C

[reaction]
source = A + B
target = C
rate = 1.0   ; forward

[reaction]
source = C
target = A + B
rate = 0.1
"""


def test_parse_network():
    net = parse_network(NET_TEXT)
    assert net.species_names == ["A", "B", "C"]
    assert net.gamma.tolist() == [[-1, 1], [-1, 1], [1, -1]]
    assert net.rate_constants.tolist() == [1.0, 0.1]


def test_dump_round_trip():
    net = build_network(["X", "Y"], [("2 X", "Y", 1 / 3), ("Y", "0", 0.7), ("0", "X", 2.0)])
    back = parse_network(dump_network(net))
    assert back.species_names == net.species_names
    assert np.array_equal(back.gamma, net.gamma)
    assert np.array_equal(back.rate_constants, net.rate_constants)


@pytest.mark.parametrize(
    "text",
    [
        "[species]\nA\n[reaction]\nsource = A\ntarget = 0\n",
        "[species]\nA\n[reaction]\nsource = A\ntarget = Z\nrate = 1\n",
        "[species]\nA\n[bogus]\n",
        "A\n",
        "[species]\nA\n[reaction]\nsource = A\ntarget = 0\nrate = fast\n",
        "[species]\nA\n[reaction]\nsource = A\nsource = A\n",
    ],
)
def test_parse_errors(text):
    with pytest.raises(NetworkError):
        parse_network(text)


def test_complex_value_semantics():
    assert Complex.from_mapping({1: 1, 0: 2}) == Complex.from_mapping({0: 2, 1: 1})
    assert Complex.from_mapping({0: 0}) == Complex()

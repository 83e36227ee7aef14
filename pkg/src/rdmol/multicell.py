"""Linear-chain multicell networks.

``expand`` replicates a base network in ``N`` cells and links neighbouring
copies of the same species by a reversible transport pair with equal rate
constants.  Species are ordered cell-major (all species of cell 1, then
cell 2, ...), reactions as ``v(x^1), w(x^1, x^2), v(x^2), ..., v(x^N)``,
so the expanded stoichiometric matrix is the block matrix with ``Gamma`` on
the diagonal and ``-I``/``I`` transport blocks between cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .network import (
    Complex,
    NetworkError,
    Reaction,
    ReactionNetwork,
    build_network,
    mass_action_rates,
)

__all__ = [
    "MulticellNetwork",
    "expand",
    "lift_equilibrium",
    "expanded_rhs",
    "to_cell_major",
    "to_species_major",
]


@dataclass(frozen=True, eq=False)
class MulticellNetwork:
    base: ReactionNetwork
    cells: int
    transport_rates: np.ndarray
    expanded: ReactionNetwork


def _transport_vector(base: ReactionNetwork, transport_rates) -> np.ndarray:
    if isinstance(transport_rates, Mapping):
        missing = set(base.species_names) - set(transport_rates)
        if missing:
            raise NetworkError(f"missing transport rate for {', '.join(sorted(missing))}")
        rates = np.array([float(transport_rates[n]) for n in base.species_names])
    else:
        rates = np.atleast_1d(np.asarray(transport_rates, dtype=float))
        if rates.size == 1:
            rates = np.full(base.n_species, rates[0])
    if rates.shape != (base.n_species,):
        raise NetworkError(f"need {base.n_species} transport rates, got {rates.size}")
    if np.any(~(rates > 0)) or not np.all(np.isfinite(rates)):
        raise NetworkError("transport rates must be positive and finite")
    return rates


def expand(base: ReactionNetwork, N: int, transport_rates) -> MulticellNetwork:
    """Build the ``N``-cell linear-chain network of ``base``."""
    if int(N) != N or N < 2:
        raise NetworkError(f"multicell expansion needs N >= 2 cells, got {N}")
    N = int(N)
    rates = _transport_vector(base, transport_rates)
    n = base.n_species
    names = [f"{s}_{k}" for k in range(1, N + 1) for s in base.species_names]

    def shift(cpx: Complex, k: int) -> Complex:
        return Complex(tuple((sid + k * n, c) for sid, c in cpx.coefficients))

    reactions: list[Reaction] = []
    for k in range(N):
        for rx in base.reactions:
            reactions.append(Reaction(shift(rx.source, k), shift(rx.target, k), rx.rate_constant))
        if k < N - 1:
            for i in range(n):
                here = Complex(((k * n + i, 1),))
                there = Complex((((k + 1) * n + i, 1),))
                reactions.append(Reaction(here, there, rates[i]))
                reactions.append(Reaction(there, here, rates[i]))
    expanded = build_network(names, reactions)
    rates.setflags(write=False)
    return MulticellNetwork(base=base, cells=N, transport_rates=rates, expanded=expanded)


def lift_equilibrium(y, N: int) -> np.ndarray:
    """Replicate a positive base state into every cell (``1 (x) y``)."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise NetworkError("base state must be a vector")
    if np.any(~(y > 0)):
        raise NetworkError("lifted state must be strictly positive")
    if int(N) != N or N < 2:
        raise NetworkError(f"lifting needs N >= 2 cells, got {N}")
    return np.kron(np.ones(int(N)), y)


def expanded_rhs(mc: MulticellNetwork, x, allow_negative: bool = True) -> np.ndarray:
    """Mass-action vector field ``Gamma_exp v(x)`` of the expanded network (cell-major ``x``)."""
    x = np.asarray(x, dtype=float)
    v = mass_action_rates(mc.expanded, x, allow_negative=allow_negative)
    return v @ mc.expanded.gamma.T


def to_cell_major(u, n: int, N: int) -> np.ndarray:
    """Species-major ``[a_1..a_N, b_1..b_N, ...]`` to cell-major ``[a_1, b_1, ..., a_N, b_N, ...]``."""
    u = np.asarray(u)
    return u.reshape(u.shape[:-1] + (n, N)).swapaxes(-1, -2).reshape(u.shape)


def to_species_major(x, n: int, N: int) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(x.shape[:-1] + (N, n)).swapaxes(-1, -2).reshape(x.shape)

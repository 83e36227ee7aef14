"""Mass-action chemical reaction networks.

A network is a list of species and a list of reactions between complexes.
The stoichiometric matrix has one column per reaction holding the net change
of every species (target minus source).  Conservation laws are computed by
exact rational elimination so that their bases are reproducible bit for bit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Species",
    "Complex",
    "Reaction",
    "ReactionNetwork",
    "NetworkError",
    "build_network",
    "mass_action_rates",
    "mass_action_jacobian",
    "conservation_laws",
    "is_complex_balanced",
    "parse_complex",
    "format_complex",
    "parse_network",
    "load_network",
    "dump_network",
]


class NetworkError(ValueError):
    """Raised for malformed networks, files, or invalid inputs."""


@dataclass(frozen=True)
class Species:
    id: int
    name: str


@dataclass(frozen=True)
class Complex:
    """Formal nonnegative integer combination of species.

    ``coefficients`` is stored as a sorted tuple of ``(species_id, coeff)``
    pairs with zero coefficients dropped, so equal complexes hash equally.
    The empty complex (no pairs) is allowed.
    """

    coefficients: tuple[tuple[int, int], ...] = ()

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "Complex":
        items = []
        for sid, c in mapping.items():
            if int(c) != c or c < 0:
                raise NetworkError(f"stoichiometric coefficient must be a nonnegative integer, got {c!r}")
            if c:
                items.append((int(sid), int(c)))
        return cls(tuple(sorted(items)))

    def as_dict(self) -> dict[int, int]:
        return dict(self.coefficients)

    def vector(self, n: int) -> np.ndarray:
        v = np.zeros(n, dtype=np.int64)
        for sid, c in self.coefficients:
            v[sid] = c
        return v

    @property
    def order(self) -> int:
        return sum(c for _, c in self.coefficients)


@dataclass(frozen=True)
class Reaction:
    source: Complex
    target: Complex
    rate_constant: float


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    """Immutable network with assembled stoichiometry.

    Use :func:`build_network` rather than the constructor; it validates the
    reactions and fills in ``gamma`` and the complex registry.
    """

    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    gamma: np.ndarray
    complexes: tuple[Complex, ...] = field(repr=False)
    source_index: np.ndarray = field(repr=False)
    target_index: np.ndarray = field(repr=False)
    source_matrix: np.ndarray = field(repr=False)
    rate_constants: np.ndarray = field(repr=False)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    def species_id(self, name: str) -> int:
        for s in self.species:
            if s.name == name:
                return s.id
        raise NetworkError(f"unknown species {name!r}")


def build_network(
    species: Sequence[str | Species],
    reactions: Iterable[Reaction | tuple],
) -> ReactionNetwork:
    """Assemble a :class:`ReactionNetwork`.

    Parameters
    ----------
    species : sequence of str or Species
        Species names in index order.
    reactions : iterable
        :class:`Reaction` objects, or ``(source, target, rate)`` tuples where
        source/target are mappings ``species-id -> coefficient``, complex
        strings such as ``"A + B"``, or :class:`Complex` instances.

    Returns
    -------
    ReactionNetwork
    """
    sp: list[Species] = []
    for i, s in enumerate(species):
        if isinstance(s, Species):
            if s.id != i:
                raise NetworkError(f"species ids must be consecutive from 0, got {s.id} at position {i}")
            sp.append(s)
        else:
            sp.append(Species(i, str(s)))
    names = [s.name for s in sp]
    if len(set(names)) != len(names):
        raise NetworkError("species names must be unique")
    name_to_id = {s.name: s.id for s in sp}
    n = len(sp)

    def as_complex(obj) -> Complex:
        if isinstance(obj, Complex):
            cpx = obj
        elif isinstance(obj, str):
            cpx = parse_complex(obj, name_to_id)
        else:
            cpx = Complex.from_mapping(obj)
        for sid, _ in cpx.coefficients:
            if not 0 <= sid < n:
                raise NetworkError(f"reaction references invalid species id {sid}")
        return cpx

    rxns: list[Reaction] = []
    for r in reactions:
        if isinstance(r, Reaction):
            src, tgt, k = as_complex(r.source), as_complex(r.target), r.rate_constant
        else:
            src, tgt, k = r
            src, tgt = as_complex(src), as_complex(tgt)
        k = float(k)
        if not (k > 0 and math.isfinite(k)):
            raise NetworkError(f"rate constant must be positive and finite, got {k!r}")
        if src == tgt:
            raise NetworkError("reaction source and target complexes must differ")
        rxns.append(Reaction(src, tgt, k))

    r = len(rxns)
    gamma = np.zeros((n, r), dtype=np.int64)
    smat = np.zeros((n, r), dtype=np.int64)
    registry: dict[Complex, int] = {}
    src_idx = np.empty(r, dtype=np.int64)
    tgt_idx = np.empty(r, dtype=np.int64)
    for j, rx in enumerate(rxns):
        smat[:, j] = rx.source.vector(n)
        gamma[:, j] = rx.target.vector(n) - smat[:, j]
        src_idx[j] = registry.setdefault(rx.source, len(registry))
        tgt_idx[j] = registry.setdefault(rx.target, len(registry))

    for arr in (gamma, smat, src_idx, tgt_idx):
        arr.setflags(write=False)
    rates = np.array([rx.rate_constant for rx in rxns], dtype=float)
    rates.setflags(write=False)
    return ReactionNetwork(
        species=tuple(sp),
        reactions=tuple(rxns),
        gamma=gamma,
        complexes=tuple(registry),
        source_index=src_idx,
        target_index=tgt_idx,
        source_matrix=smat,
        rate_constants=rates,
    )


def mass_action_rates(net: ReactionNetwork, x, allow_negative: bool = False) -> np.ndarray:
    """Reaction rate vector ``v_j = k_j prod_i x_i**s_ij``.

    ``x`` may carry extra leading axes; the species axis is last.  Negative
    concentrations are rejected unless ``allow_negative`` is set (implicit
    integrators evaluate trial states slightly outside the orthant).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_species:
        raise NetworkError(f"expected {net.n_species} concentrations, got {x.shape[-1]}")
    if not allow_negative and np.any(x < 0):
        raise NetworkError("negative concentration")
    v = np.broadcast_to(net.rate_constants, x.shape[:-1] + (net.n_reactions,)).copy()
    s = net.source_matrix
    for i, j in zip(*np.nonzero(s)):
        v[..., j] *= x[..., i] ** s[i, j]
    return v


def mass_action_jacobian(net: ReactionNetwork, x, allow_negative: bool = False) -> np.ndarray:
    """Jacobian of ``Gamma v(x)`` with respect to ``x`` (dense, n x n)."""
    x = np.asarray(x, dtype=float)
    if not allow_negative and np.any(x < 0):
        raise NetworkError("negative concentration")
    s = net.source_matrix
    n, r = s.shape
    dv = np.zeros((r, n))
    for j in range(r):
        for i in np.nonzero(s[:, j])[0]:
            d = net.rate_constants[j] * s[i, j] * x[i] ** (s[i, j] - 1)
            for l in np.nonzero(s[:, j])[0]:
                if l != i:
                    d *= x[l] ** s[l, j]
            dv[j, i] = d
    return net.gamma @ dv


def _rref_nullspace(rows: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    """Right nullspace basis of a rational matrix via reduced row echelon form."""
    m = [row[:] for row in rows]
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        p = m[r][c]
        m[r] = [v / p for v in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * ncols
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -m[i][fc]
        basis.append(vec)
    return basis


def _canonical_integer(vec: list[Fraction]) -> tuple[int, ...]:
    denom = 1
    for v in vec:
        denom = denom * v.denominator // math.gcd(denom, v.denominator)
    ints = [int(v * denom) for v in vec]
    g = 0
    for v in ints:
        g = math.gcd(g, abs(v))
    ints = [v // g for v in ints]
    first = next(v for v in ints if v != 0)
    if first < 0:
        ints = [-v for v in ints]
    return tuple(ints)


def conservation_laws(net: ReactionNetwork) -> list[tuple[int, ...]]:
    """Exact basis of the left nullspace of the stoichiometric matrix.

    Each basis vector ``nu`` satisfies ``nu @ gamma == 0``; entries are
    integers with gcd 1 and a positive first nonzero entry.  The basis comes
    from the reduced row echelon form of ``gamma.T`` so it is deterministic.
    """
    n = net.n_species
    rows = [[Fraction(int(v)) for v in col] for col in net.gamma.T]
    return [_canonical_integer(v) for v in _rref_nullspace(rows, n)]


def is_complex_balanced(net: ReactionNetwork, x_star, tol: float = 1e-10) -> bool:
    """Check that total flux into every complex equals the flux out of it."""
    x_star = np.asarray(x_star, dtype=float)
    if x_star.shape != (net.n_species,):
        raise NetworkError(f"expected {net.n_species} concentrations, got shape {x_star.shape}")
    if np.any(x_star <= 0):
        raise NetworkError("complex-balanced equilibria must be strictly positive")
    v = mass_action_rates(net, x_star)
    nc = len(net.complexes)
    inflow = np.bincount(net.target_index, weights=v, minlength=nc)
    outflow = np.bincount(net.source_index, weights=v, minlength=nc)
    return bool(np.max(np.abs(inflow - outflow), initial=0.0) <= tol)


# --- text format -------------------------------------------------------------

_TERM = re.compile(r"^(?:(\d+)\s*\*?\s*)?([A-Za-z_][\w.@]*)$")


def parse_complex(text: str, name_to_id: Mapping[str, int]) -> Complex:
    """Parse ``"A + 2 B"`` style complexes; ``"0"`` or ``""`` is the empty complex."""
    text = text.strip()
    if text in ("", "0", "∅"):
        return Complex()
    coeffs: dict[int, int] = {}
    for term in text.split("+"):
        m = _TERM.match(term.strip())
        if m is None:
            raise NetworkError(f"cannot parse complex term {term.strip()!r} in {text!r}")
        c = int(m.group(1)) if m.group(1) else 1
        name = m.group(2)
        if name not in name_to_id:
            raise NetworkError(f"unknown species {name!r} in complex {text!r}")
        sid = name_to_id[name]
        coeffs[sid] = coeffs.get(sid, 0) + c
    return Complex.from_mapping(coeffs)


def format_complex(cpx: Complex, names: Sequence[str]) -> str:
    if not cpx.coefficients:
        return "0"
    return " + ".join(names[s] if c == 1 else f"{c} {names[s]}" for s, c in cpx.coefficients)


def parse_network(text: str) -> ReactionNetwork:
    """Parse the sectioned network definition format.

    ::

        [species]
        A
        B
        C

        [reaction]
        source = A + B
        target = C
        rate = 1.0

    Species may also be listed on one line as ``names = A, B, C``.  Every
    ``[reaction]`` header starts a new reaction.  ``#`` and ``;`` start
    comments.
    """
    species: list[str] = []
    raw_reactions: list[dict[str, str]] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = re.split(r"[#;]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section == "reaction":
                raw_reactions.append({})
            elif section != "species":
                raise NetworkError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "species":
            if "=" in line:
                key, val = (p.strip() for p in line.split("=", 1))
                if key != "names":
                    raise NetworkError(f"line {lineno}: unknown species key {key!r}")
                species.extend(v.strip() for v in val.split(",") if v.strip())
            else:
                species.extend(v.strip() for v in line.split(",") if v.strip())
        elif section == "reaction":
            if "=" not in line:
                raise NetworkError(f"line {lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in ("source", "target", "rate"):
                raise NetworkError(f"line {lineno}: unknown reaction key {key!r}")
            if key in raw_reactions[-1]:
                raise NetworkError(f"line {lineno}: duplicate key {key!r}")
            raw_reactions[-1][key] = val
        else:
            raise NetworkError(f"line {lineno}: content outside of a section")
    if not species:
        raise NetworkError("network defines no species")
    reactions = []
    for i, rd in enumerate(raw_reactions):
        missing = {"source", "target", "rate"} - rd.keys()
        if missing:
            raise NetworkError(f"reaction {i + 1}: missing {', '.join(sorted(missing))}")
        try:
            rate = float(rd["rate"])
        except ValueError:
            raise NetworkError(f"reaction {i + 1}: bad rate {rd['rate']!r}") from None
        reactions.append((rd["source"], rd["target"], rate))
    return build_network(species, reactions)


def load_network(path: str | Path) -> ReactionNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8"))


def dump_network(net: ReactionNetwork) -> str:
    names = net.species_names
    lines = ["[species]"]
    lines.extend(names)
    for rx in net.reactions:
        lines += [
            "",
            "[reaction]",
            f"source = {format_complex(rx.source, names)}",
            f"target = {format_complex(rx.target, names)}",
            f"rate = {rx.rate_constant!r}",
        ]
    return "\n".join(lines) + "\n"

"""Mass-action reaction networks: parsing, stoichiometry and propensities.

Network definition files are line oriented::

    species: X
    omega: 100
    convention: falling          # or binomial
    reaction r1: 0 -> X @ rate_scaled=22.5
    reaction r3: 2 X -> 3 X @ rate_scaled=18

``rate=`` gives the count-scale constant directly; ``rate_scaled=`` gives the
concentration-scale constant and is converted using ``omega``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import factorial, prod
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .polynomial import Polynomial

MAX_ORDER = 3
CONVENTIONS = ("falling", "binomial")


class NetworkSyntaxError(ValueError):
    """Malformed network definition; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Reaction:
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    rate_constant: float
    label: str = ""

    def __post_init__(self):
        for side in (self.reactants, self.products):
            for name, nu in side.items():
                if int(nu) != nu or nu < 0:
                    raise ValueError(f"stoichiometric coefficient of {name} must be a nonnegative integer")
        if not self.rate_constant >= 0:
            raise ValueError(f"rate constant of {self.label!r} must be nonnegative")
        if self.order > MAX_ORDER:
            raise ValueError(f"reaction {self.label!r} has order {self.order} > {MAX_ORDER}")

    @property
    def order(self) -> int:
        return int(sum(self.reactants.values()))


@dataclass(frozen=True)
class ReactionNetwork:
    """Immutable mass-action network with count-scale rate constants.

    ``omega`` is the system size used for rescaling to concentrations.
    """

    species: tuple[str, ...]
    reactions: tuple[Reaction, ...]
    omega: float = 1.0
    convention: str = "falling"

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if not self.species:
            raise ValueError("network needs at least one species")
        if not self.reactions:
            raise ValueError("network needs at least one reaction")
        if len(set(self.species)) != len(self.species):
            raise ValueError("duplicate species name")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown propensity convention {self.convention!r}")
        known = set(self.species)
        for r in self.reactions:
            for name in (*r.reactants, *r.products):
                if name not in known:
                    raise ValueError(f"reaction {r.label!r} references unknown species {name!r}")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @cached_property
    def reactant_matrix(self) -> np.ndarray:
        """n x m matrix of reactant coefficients."""
        idx = {s: i for i, s in enumerate(self.species)}
        nu = np.zeros((self.n_species, self.n_reactions), dtype=np.int64)
        for j, r in enumerate(self.reactions):
            for name, c in r.reactants.items():
                nu[idx[name], j] = c
        return nu

    @cached_property
    def product_matrix(self) -> np.ndarray:
        idx = {s: i for i, s in enumerate(self.species)}
        nu = np.zeros((self.n_species, self.n_reactions), dtype=np.int64)
        for j, r in enumerate(self.reactions):
            for name, c in r.products.items():
                nu[idx[name], j] = c
        return nu

    @cached_property
    def net_effect(self) -> np.ndarray:
        return self.product_matrix - self.reactant_matrix

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([r.rate_constant for r in self.reactions], dtype=float)

    @cached_property
    def orders(self) -> np.ndarray:
        return self.reactant_matrix.sum(axis=0)

    @cached_property
    def polynomials(self) -> tuple[Polynomial, ...]:
        return propensity_polynomials(self)

    @cached_property
    def jacobian_polynomials(self) -> tuple[tuple[Polynomial, ...], ...]:
        return tuple(tuple(p.derivative(i) for i in range(self.n_species)) for p in self.polynomials)

    def with_rates(self, rates: Sequence[float]) -> ReactionNetwork:
        reactions = tuple(
            Reaction(dict(r.reactants), dict(r.products), float(k), r.label)
            for r, k in zip(self.reactions, rates)
        )
        return ReactionNetwork(self.species, reactions, self.omega, self.convention)


# ---------------------------------------------------------------------------
# parsing

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_TERM_RE = re.compile(rf"^\s*(\d+)?\s*({_NAME})\s*$")
_REACTION_RE = re.compile(rf"^reaction\s+({_NAME})\s*:(.*)$")
# a bare number is shorthand for rate=
_RATE_RE = re.compile(rf"^\s*(?:(rate|rate_scaled)\s*=\s*)?({_NUMBER})\s*$")


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def _parse_side(text: str, lineno: int, col: int) -> dict[str, int]:
    stripped = text.strip()
    if stripped == "0":
        return {}
    if not stripped:
        raise NetworkSyntaxError("empty reaction side (use 0 for nothing)", lineno, col)
    side: dict[str, int] = {}
    offset = col
    for piece in text.split("+"):
        m = _TERM_RE.match(piece)
        if not m:
            raise NetworkSyntaxError(f"cannot parse term {piece.strip()!r}", lineno,
                                     offset + len(piece) - len(piece.lstrip()))
        coef = int(m.group(1)) if m.group(1) else 1
        side[m.group(2)] = side.get(m.group(2), 0) + coef
        offset += len(piece) + 1
    return side


def parse_network(text: str) -> ReactionNetwork:
    """Parse a network definition; see the module docstring for the grammar."""
    species: list[str] | None = None
    species_line = 0
    omega: float | None = None
    convention = "falling"
    pending = []  # (label, reactants, products, kind, value, lineno, col)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.strip()
        if body.startswith("species:"):
            if species is not None:
                raise NetworkSyntaxError("species declared twice", lineno, indent + 1)
            names = [s.strip() for s in body[len("species:"):].split(",")]
            for name in names:
                if not re.fullmatch(_NAME, name):
                    raise NetworkSyntaxError(f"invalid species name {name!r}", lineno,
                                             line.find(name) + 1 if name else indent + 9)
            species = names
            species_line = lineno
        elif body.startswith("omega:"):
            value = body[len("omega:"):].strip()
            if not re.fullmatch(_NUMBER, value):
                raise NetworkSyntaxError(f"invalid omega {value!r}", lineno, line.find(value) + 1)
            omega = float(value)
            if not omega > 0:
                raise NetworkSyntaxError("omega must be positive", lineno, line.find(value) + 1)
        elif body.startswith("convention:"):
            value = body[len("convention:"):].strip()
            if value not in CONVENTIONS:
                raise NetworkSyntaxError(f"unknown convention {value!r}", lineno, line.find(value) + 1)
            convention = value
        elif body.startswith("reaction"):
            m = _REACTION_RE.match(body)
            if not m:
                raise NetworkSyntaxError("expected 'reaction <label>: <lhs> -> <rhs> @ <rate>'",
                                         lineno, indent + 1)
            label, rest = m.group(1), m.group(2)
            rest_col = indent + m.start(2) + 1
            if rest.count("->") != 1:
                raise NetworkSyntaxError("reaction needs exactly one '->'", lineno, rest_col)
            if rest.count("@") != 1:
                raise NetworkSyntaxError("reaction needs exactly one '@' before the rate", lineno, rest_col)
            eq, rate_text = rest.split("@")
            lhs, rhs = eq.split("->")
            reactants = _parse_side(lhs, lineno, rest_col)
            products = _parse_side(rhs, lineno, rest_col + len(lhs) + 2)
            rate_col = rest_col + len(eq) + 1
            rm = _RATE_RE.match(rate_text)
            if not rm:
                raise NetworkSyntaxError(f"invalid rate specification {rate_text.strip()!r}", lineno, rate_col)
            value = float(rm.group(2))
            if not value > 0:
                raise NetworkSyntaxError(f"nonpositive rate {value}", lineno, rate_col)
            order = sum(reactants.values())
            if order > MAX_ORDER:
                raise NetworkSyntaxError(f"reaction order {order} exceeds {MAX_ORDER}", lineno, rest_col)
            pending.append((label, reactants, products, rm.group(1) or "rate", value, lineno, rest_col))
        else:
            raise NetworkSyntaxError(f"unrecognised statement {body.split()[0]!r}", lineno, indent + 1)

    if species is None:
        raise NetworkSyntaxError("missing species declaration", max(1, len(text.splitlines())))
    known = set(species)
    reactions = []
    for label, reactants, products, kind, value, lineno, col in pending:
        for name in (*reactants, *products):
            if name not in known:
                raise NetworkSyntaxError(f"unknown species {name!r}", lineno, col)
        if kind == "rate_scaled":
            if omega is None:
                raise NetworkSyntaxError("rate_scaled requires an omega declaration", lineno, col)
            value = value / omega ** (sum(reactants.values()) - 1)
        reactions.append(Reaction(reactants, products, value, label))
    if not reactions:
        raise NetworkSyntaxError("network has no reactions", species_line)
    return ReactionNetwork(tuple(species), tuple(reactions), omega if omega is not None else 1.0, convention)


def load_network(path: str | Path) -> ReactionNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8"))


def _format_side(side: Mapping[str, int]) -> str:
    terms = [name if c == 1 else f"{c} {name}" for name, c in side.items() if c]
    return " + ".join(terms) if terms else "0"


def format_network(net: ReactionNetwork) -> str:
    """Serialise with count-scale ``rate=`` values (round-trips through parse_network)."""
    lines = [f"species: {', '.join(net.species)}", f"omega: {net.omega!r}",
             f"convention: {net.convention}"]
    for r in net.reactions:
        lines.append(f"reaction {r.label}: {_format_side(r.reactants)} -> "
                     f"{_format_side(r.products)} @ rate={r.rate_constant!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# stoichiometry and propensities

def net_effect_matrix(net: ReactionNetwork) -> np.ndarray:
    """n x m integer matrix of product minus reactant coefficients."""
    return net.net_effect.copy()


def _combinatorial_factor(x: Sequence[int], nu: np.ndarray, binomial: bool) -> Fraction:
    value = Fraction(1)
    for xi, ni in zip(x, nu):
        ni = int(ni)
        ff = prod(range(xi - ni + 1, xi + 1)) if xi >= ni else 0
        value *= Fraction(ff, factorial(ni)) if binomial else ff
    return value


def propensity(net: ReactionNetwork, x) -> np.ndarray:
    """Mass-action propensities at an integer state."""
    x = np.asarray(x)
    if x.shape != (net.n_species,):
        raise ValueError(f"state must have shape ({net.n_species},)")
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(x == np.round(x)):
            raise ValueError("propensity needs an integer state")
        x = x.astype(np.int64)
    if np.any(x < 0):
        raise ValueError("state has a negative component")
    xs = [int(v) for v in x]
    binomial = net.convention == "binomial"
    nu = net.reactant_matrix
    return np.array([
        r.rate_constant * float(_combinatorial_factor(xs, nu[:, j], binomial))
        for j, r in enumerate(net.reactions)
    ])


def propensity_polynomials(net: ReactionNetwork) -> tuple[Polynomial, ...]:
    """Expanded propensity polynomial for every reaction."""
    n = net.n_species
    binomial = net.convention == "binomial"
    out = []
    for j, r in enumerate(net.reactions):
        poly = Polynomial.constant(n)
        denom = 1
        for i in range(n):
            nu = int(net.reactant_matrix[i, j])
            if nu:
                poly = poly * Polynomial.falling_factorial(n, i, nu)
                denom *= factorial(nu)
        terms = {a: c / denom for a, c in poly.terms.items()} if binomial else poly.terms
        out.append(Polynomial(n, terms, r.rate_constant))
    return tuple(out)


def propensity_real(net: ReactionNetwork, x) -> np.ndarray:
    """Polynomial extension of the propensities to real states."""
    x = np.asarray(x, dtype=float)
    return np.array([p(x) for p in net.polynomials])


def propensity_jacobian(net: ReactionNetwork, x) -> np.ndarray:
    """m x n matrix of partial derivatives of the propensity polynomials."""
    x = np.asarray(x, dtype=float)
    return np.array([[d(x) for d in row] for row in net.jacobian_polynomials]).reshape(
        net.n_reactions, net.n_species)


def rescale_rate_constants(net: ReactionNetwork, direction: str = "forward",
                           rates: Sequence[float] | None = None) -> np.ndarray:
    """Convert between count-scale and concentration-scale rate constants.

    ``forward`` maps count-scale ``k`` to ``omega**(order - 1) * k``;
    ``backward`` inverts it. ``rates`` defaults to the network's own constants
    (count scale), so ``backward`` needs them passed explicitly.
    """
    k = net.rates if rates is None else np.asarray(rates, dtype=float)
    power = net.orders.astype(float) - 1.0
    if direction == "forward":
        return k * net.omega ** power
    if direction == "backward":
        return k / net.omega ** power
    raise ValueError("direction must be 'forward' or 'backward'")


def concentration_propensity(net: ReactionNetwork, z) -> np.ndarray:
    """Thermodynamic-limit propensities: falling factorials become plain powers."""
    z = np.asarray(z, dtype=float)
    kt = rescale_rate_constants(net, "forward")
    nu = net.reactant_matrix
    powers = np.prod(z[:, None] ** nu, axis=0)
    if net.convention == "binomial":
        powers = powers / np.prod([[factorial(int(v)) for v in row] for row in nu], axis=0)
    return kt * powers


def rate_equation_rhs(net: ReactionNetwork, z) -> np.ndarray:
    """Right-hand side of the deterministic rate equation in concentration units."""
    return net.net_effect @ concentration_propensity(net, z)


def rate_equation_jacobian(net: ReactionNetwork, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    kt = rescale_rate_constants(net, "forward")
    nu = net.reactant_matrix
    n, m = nu.shape
    jac = np.zeros((m, n))
    for j in range(m):
        for i in range(n):
            if nu[i, j] == 0:
                continue
            e = nu[:, j].copy()
            e[i] -= 1
            jac[j, i] = kt[j] * nu[i, j] * np.prod(z ** e)
    if net.convention == "binomial":
        jac /= np.array([np.prod([factorial(int(v)) for v in nu[:, j]]) for j in range(m)])[:, None]
    return net.net_effect @ jac


def rate_equation_fixed_points_1d(net: ReactionNetwork) -> np.ndarray:
    """Real nonnegative zeros of a one-species rate equation, ascending."""
    if net.n_species != 1:
        raise ValueError("only defined for one-species networks")
    kt = rescale_rate_constants(net, "forward")
    coef = np.zeros(MAX_ORDER + 1)
    for j in range(net.n_reactions):
        d = int(net.reactant_matrix[0, j])
        scale = 1.0 / factorial(d) if net.convention == "binomial" else 1.0
        coef[d] += net.net_effect[0, j] * kt[j] * scale
    roots = np.roots(coef[::-1][np.argmax(coef[::-1] != 0):])
    real = roots[np.abs(roots.imag) < 1e-9].real
    return np.sort(real[real >= 0])


_DATA = Path(__file__).with_name("data")


def builtin_network(name: str) -> ReactionNetwork:
    """Load one of the bundled networks (``bistable`` or ``limitcycle``)."""
    path = _DATA / f"{name}.net"
    if not path.exists():
        raise ValueError(f"no bundled network named {name!r}")
    return load_network(path)

"""Pauli-string algebra, lattice models and the Liouvillian sandwich expansion.

Conventions used throughout the package:

* character ``j`` of a Pauli label (and of a bitstring) refers to site ``j``;
* site ``j`` is bit ``j`` of a basis-state index (little endian);
* bit value 1 is spin down, the -1 eigenstate of Z. With
  ``sigma^- = (X - iY)/2`` the all-ones state is dark.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_LETTERS = "IXYZ"

# single-site products: (a, b) -> (phase, a*b)
_MUL_TABLE = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

COEFF_CUTOFF = 1e-15


class DimensionError(ValueError):
    """Operands act on different numbers of qubits."""


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis with a complex prefactor."""

    letters: str
    phase: complex = 1.0

    def __post_init__(self):
        if not self.letters or any(c not in _LETTERS for c in self.letters):
            raise ValueError(f"invalid Pauli label {self.letters!r}")
        if self.phase == 0:
            raise ValueError("Pauli string phase must be nonzero")
        object.__setattr__(self, "phase", complex(self.phase))

    @classmethod
    def identity(cls, n: int) -> PauliString:
        return cls("I" * n)

    @classmethod
    def from_sites(cls, n: int, ops: dict[int, str], phase: complex = 1.0) -> PauliString:
        """Build a string from a ``{site: letter}`` map, identity elsewhere."""
        chars = ["I"] * n
        for site, letter in ops.items():
            if not 0 <= site < n:
                raise ValueError(f"site {site} outside 0..{n - 1}")
            chars[site] = letter
        return cls("".join(chars), phase)

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def is_identity(self) -> bool:
        return set(self.letters) == {"I"}

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    def unit(self) -> PauliString:
        """Same letters with phase 1."""
        return PauliString(self.letters)

    def __mul__(self, other):
        if isinstance(other, PauliString):
            return pauli_mul(self, other)
        return PauliString(self.letters, self.phase * other)

    __matmul__ = __mul__

    def __rmul__(self, scalar):
        return PauliString(self.letters, self.phase * scalar)

    def to_matrix(self) -> np.ndarray:
        """Dense ``2^n x 2^n`` matrix; site 0 is the least significant bit."""
        mat = np.array([[1.0 + 0j]])
        for c in self.letters:
            mat = np.kron(_SINGLE[c], mat)
        return self.phase * mat

    def __str__(self):
        if self.phase == 1:
            return self.letters
        return f"({self.phase:g}){self.letters}"


def pauli_mul(a: PauliString, b: PauliString) -> PauliString:
    """Product ``a @ b`` as a single string with accumulated phase."""
    if a.n != b.n:
        raise DimensionError(f"cannot multiply {a.n}-qubit and {b.n}-qubit strings")
    phase = a.phase * b.phase
    chars = []
    for x, y in zip(a.letters, b.letters):
        ph, c = _MUL_TABLE[x, y]
        phase *= ph
        chars.append(c)
    return PauliString("".join(chars), phase)


@lru_cache(maxsize=4096)
def pauli_action(letters: str) -> tuple[np.ndarray, np.ndarray]:
    """Index map and factors with ``(P v)[c] = factor[c] * v[perm[c]]`` for unit phase."""
    n = len(letters)
    xmask = zmask = 0
    n_y = 0
    for j, c in enumerate(letters):
        if c in "XY":
            xmask |= 1 << j
        if c in "ZY":
            zmask |= 1 << j
        n_y += c == "Y"
    idx = np.arange(2**n)
    perm = idx ^ xmask
    # Y = iXZ per site, so P|b> = i^nY (-1)^{popcount(b & zmask)} |b ^ xmask>
    parity = np.zeros(2**n, dtype=np.int64)
    masked = perm & zmask
    for j in range(n):
        parity ^= (masked >> j) & 1
    factor = (1j**n_y) * (1 - 2 * parity).astype(complex)
    perm.setflags(write=False)
    factor.setflags(write=False)
    return perm, factor


def apply_string(p: PauliString, v: np.ndarray) -> np.ndarray:
    """Return ``p @ v`` for a ket (or a stack of kets along the last axis)."""
    v = np.asarray(v)
    if v.shape[-1] != 2**p.n:
        raise DimensionError(f"string on {p.n} qubits applied to vector of length {v.shape[-1]}")
    perm, factor = pauli_action(p.letters)
    return (p.phase * factor) * v[..., perm]


@dataclass(frozen=True)
class PauliSum:
    """Linear combination of Pauli strings, canonicalized on construction.

    Strings are stored with unit phase, duplicates are merged and coefficients
    below ``COEFF_CUTOFF`` in magnitude are dropped.
    """

    n: int
    terms: tuple[tuple[complex, PauliString], ...] = ()

    def __post_init__(self):
        merged: dict[str, complex] = {}
        for coeff, string in self.terms:
            if string.n != self.n:
                raise DimensionError(f"term {string} does not act on {self.n} qubits")
            merged[string.letters] = merged.get(string.letters, 0) + complex(coeff) * string.phase
        canon = tuple(
            (c, PauliString(k)) for k, c in merged.items() if abs(c) >= COEFF_CUTOFF
        )
        object.__setattr__(self, "terms", canon)

    @classmethod
    def from_terms(cls, n: int, terms) -> PauliSum:
        return cls(n, tuple(terms))

    @classmethod
    def from_string(cls, p: PauliString, coeff: complex = 1.0) -> PauliSum:
        return cls(p.n, ((coeff, p),))

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other: PauliSum) -> PauliSum:
        if other.n != self.n:
            raise DimensionError("cannot add sums on different qubit counts")
        return PauliSum(self.n, self.terms + other.terms)

    def __mul__(self, other):
        if isinstance(other, PauliSum):
            if other.n != self.n:
                raise DimensionError("cannot multiply sums on different qubit counts")
            return PauliSum(
                self.n,
                tuple((a * b, pauli_mul(p, q)) for (a, p), (b, q) in itertools.product(self.terms, other.terms)),
            )
        return PauliSum(self.n, tuple((c * other, p) for c, p in self.terms))

    __rmul__ = __mul__

    def dagger(self) -> PauliSum:
        return PauliSum(self.n, tuple((np.conj(c), p) for c, p in self.terms))

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return all(abs(c.imag) <= atol for c, _ in self.terms)

    def to_matrix(self) -> np.ndarray:
        mat = np.zeros((2**self.n, 2**self.n), dtype=complex)
        for c, p in self.terms:
            mat += c * p.to_matrix()
        return mat


@dataclass(frozen=True)
class Lattice:
    """Sites ``0..n-1`` and undirected nearest-neighbour edges ``(j, k)``, ``j < k``."""

    n: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("lattice needs at least one site")
        norm = []
        for j, k in self.edges:
            if j == k or not (0 <= j < self.n and 0 <= k < self.n):
                raise ValueError(f"invalid edge ({j}, {k}) for {self.n} sites")
            norm.append((min(j, k), max(j, k)))
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @classmethod
    def chain(cls, length: int) -> Lattice:
        """Open 1D chain."""
        return cls(length, tuple((j, j + 1) for j in range(length - 1)))

    @classmethod
    def grid(cls, rows: int, cols: int) -> Lattice:
        """Open ``rows x cols`` square lattice, site index ``r * cols + c``."""
        edges = []
        for r in range(rows):
            for c in range(cols):
                s = r * cols + c
                if c + 1 < cols:
                    edges.append((s, s + 1))
                if r + 1 < rows:
                    edges.append((s, s + cols))
        return cls(rows * cols, tuple(edges))


@dataclass(frozen=True)
class LindbladModel:
    n: int
    hamiltonian: PauliSum
    dissipators: tuple[tuple[float, PauliSum], ...] = ()

    def __post_init__(self):
        if self.hamiltonian.n != self.n:
            raise DimensionError("Hamiltonian acts on the wrong number of qubits")
        if not self.hamiltonian.is_hermitian():
            raise ValueError("Hamiltonian coefficients must be real")
        for rate, jump in self.dissipators:
            if rate < 0:
                raise ValueError(f"negative dissipation rate {rate}")
            if jump.n != self.n:
                raise DimensionError("jump operator acts on the wrong number of qubits")


@dataclass(frozen=True)
class SuperopTerm:
    """One ``coeff * left @ rho @ right`` term of a Liouvillian."""

    coeff: complex
    left: PauliString
    right: PauliString

    def __post_init__(self):
        if self.left.n != self.right.n:
            raise DimensionError("left and right strings differ in size")


def sigma_minus(n: int, site: int) -> PauliSum:
    """Lowering operator ``(X - iY)/2`` on ``site``; annihilates bit value 1."""
    return PauliSum(
        n,
        (
            (0.5, PauliString.from_sites(n, {site: "X"})),
            (-0.5j, PauliString.from_sites(n, {site: "Y"})),
        ),
    )


def build_tfim(lattice: Lattice, jz: float, h: float, gamma: float) -> LindbladModel:
    """Dissipative transverse-field Ising model with sigma^- decay on every site."""
    n = lattice.n
    terms = [(jz, PauliString.from_sites(n, {j: "Z", k: "Z"})) for j, k in lattice.edges]
    terms += [(h, PauliString.from_sites(n, {j: "X"})) for j in range(n)]
    ham = PauliSum(n, tuple(terms))
    dissipators = tuple((float(gamma), sigma_minus(n, j)) for j in range(n))
    return LindbladModel(n, ham, dissipators)


def liouvillian_expand(model: LindbladModel) -> list[SuperopTerm]:
    """Rewrite the Lindblad generator as ``sum_r c_r L_r rho R_r`` over Pauli strings."""
    n = model.n
    ident = PauliString.identity(n)
    acc: dict[tuple[str, str], complex] = {}

    def add(coeff, left: PauliString, right: PauliString):
        coeff = coeff * left.phase * right.phase
        key = (left.letters, right.letters)
        acc[key] = acc.get(key, 0) + coeff

    for h, p in model.hamiltonian:
        add(-1j * h, p, ident)
        add(1j * h, ident, p)

    for rate, jump in model.dissipators:
        if rate == 0:
            continue
        # c rho c^dag; strings are Hermitian so (a_j P_j)^dag = conj(a_j) P_j
        for a, p in jump:
            for b, q in jump:
                add(rate * a * np.conj(b), p, q)
        cdc = jump.dagger() * jump
        for c, q in cdc:
            add(-0.5 * rate * c, q, ident)
            add(-0.5 * rate * c, ident, q)

    return [
        SuperopTerm(c, PauliString(lk), PauliString(rk))
        for (lk, rk), c in acc.items()
        if abs(c) >= COEFF_CUTOFF
    ]


def apply_superop(terms: list[SuperopTerm], rho: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_r c_r L_r rho R_r`` without dense Pauli matrices."""
    out = np.zeros(rho.shape, dtype=complex)
    for t in terms:
        left = apply_string(t.left, rho.T).T
        out += t.coeff * right_multiply(left, t.right)
    return out


def right_multiply(mat: np.ndarray, p: PauliString) -> np.ndarray:
    """Return ``mat @ p``."""
    perm, factor = pauli_action(p.letters)
    # (M P)[r, c] = M[r, c ^ xmask] * f(c), and factor[c] = f(c ^ xmask)
    return p.phase * mat[..., perm] * factor[perm]

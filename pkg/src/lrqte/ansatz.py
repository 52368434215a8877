"""Low-rank variational states: a weighted mixture of circuit-rotated basis states."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .statevector import CircuitSpec, Sweep, apply_circuit, basis_ket, derivative_sweep, tfim_circuit

MAX_DENSE_QUBITS = 12


class CapabilityError(RuntimeError):
    """Requested a dense representation that is too large."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class AnsatzKind(enum.Enum):
    I = "I"  # one shared unitary, orthogonal mixture
    II = "II"  # one unitary per basis state

    @classmethod
    def parse(cls, value) -> AnsatzKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ConfigError(f"unknown ansatz kind {value!r}; expected 'I' or 'II'") from None


def hamming_basis(x0: str, rank: int, flip_sites=None) -> list[str]:
    """``x0`` followed by its Hamming-distance-1, 2, ... neighbours, truncated to ``rank``.

    Within one distance the flipped-site tuples are visited in lexicographic
    order. Sites outside ``flip_sites`` are only flipped once the allowed
    sites are exhausted.
    """
    n = len(x0)
    if rank < 1 or rank > 2**n:
        raise ValueError(f"rank {rank} not in 1..{2**n}")
    allowed = sorted(range(n) if flip_sites is None else set(flip_sites))
    out = [x0]
    seen = {x0}

    def flip(sites):
        chars = list(x0)
        for s in sites:
            chars[s] = "1" if chars[s] == "0" else "0"
        return "".join(chars)

    pools = [allowed, list(range(n))]
    for pool in pools:
        for d in range(1, len(pool) + 1):
            for sites in itertools.combinations(pool, d):
                if len(out) == rank:
                    return out
                x = flip(sites)
                if x not in seen:
                    seen.add(x)
                    out.append(x)
    return out


@dataclass(frozen=True)
class LowRankState:
    """``rho = sum_i alpha_i U_i |x_i><x_i| U_i^dag``.

    For ansatz I ``theta`` has shape ``(N_theta,)`` and every ``U_i`` is the
    same; for ansatz II it has shape ``(R, N_theta)``.
    """

    kind: AnsatzKind
    basis: tuple[str, ...]
    alpha: np.ndarray
    theta: np.ndarray
    circuit: CircuitSpec

    def __post_init__(self):
        if len(set(self.basis)) != len(self.basis):
            raise ValueError("basis states must be distinct")
        if any(len(x) != self.circuit.n for x in self.basis):
            raise ValueError("basis bitstrings do not match the circuit size")
        alpha = np.asarray(self.alpha, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if alpha.shape != (len(self.basis),):
            raise ValueError("need one weight per basis state")
        if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
            raise ValueError("weights must be finite and nonnegative")
        want = (self.circuit.n_params,) if self.kind is AnsatzKind.I else (len(self.basis), self.circuit.n_params)
        if theta.shape != want:
            raise ValueError(f"theta has shape {theta.shape}, expected {want}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)

    @property
    def rank(self) -> int:
        return len(self.basis)

    @property
    def n(self) -> int:
        return self.circuit.n

    @property
    def n_params(self) -> int:
        return self.rank + self.theta.size

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector: weights first, then angles (row-major for ansatz II)."""
        return np.concatenate([self.alpha, self.theta.ravel()])

    def with_params(self, beta) -> LowRankState:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {beta.shape}")
        R = self.rank
        return replace(self, alpha=beta[:R].copy(), theta=beta[R:].reshape(self.theta.shape).copy())

    def basis_kets(self) -> np.ndarray:
        return np.stack([basis_ket(x) for x in self.basis])

    def kets(self) -> np.ndarray:
        """Mixture components ``U_i |x_i>`` as rows."""
        x = self.basis_kets()
        if self.kind is AnsatzKind.I:
            return apply_circuit(self.circuit, self.theta, x)
        return np.stack([apply_circuit(self.circuit, th, xi) for th, xi in zip(self.theta, x)])

    def sweep(self, echo: bool = False):
        """Components and their inserted-generator states (see ``derivative_sweep``)."""
        x = self.basis_kets()
        if self.kind is AnsatzKind.I:
            return derivative_sweep(self.circuit, self.theta, x, echo=echo)
        parts = [derivative_sweep(self.circuit, th, xi, echo=echo) for th, xi in zip(self.theta, x)]
        return Sweep(
            np.stack([s.final for s in parts]),
            np.stack([s.inserted for s in parts]),
            np.stack([s.echo for s in parts]) if echo else None,
        )

    def complement_labels(self) -> list[str]:
        """Basis labels with 0 and 1 exchanged (the opposite spin convention)."""
        return ["".join("1" if c == "0" else "0" for c in x) for x in self.basis]


def init_state(cfg) -> LowRankState:
    """Pure all-down start: ``theta = 0`` and a small weight floor on the extra states."""
    kind = AnsatzKind.parse(cfg.kind)
    R, eps = cfg.rank, cfg.epsilon
    if (R - 1) * eps >= 1:
        raise ConfigError(f"weight floor {eps} too large for rank {R}")
    n = cfg.lattice.n
    x0 = cfg.initial or "1" * n
    if cfg.basis is None or cfg.basis == "hamming":
        basis = hamming_basis(x0, R)
    else:
        basis = list(cfg.basis)
        if len(basis) != R:
            raise ConfigError(f"explicit basis has {len(basis)} states but rank is {R}")
        if basis[0] != x0:
            raise ConfigError("explicit basis must start with the initial bitstring")
    circuit = tfim_circuit(cfg.lattice, cfg.layers)
    alpha = np.full(R, eps)
    alpha[0] = 1 - (R - 1) * eps
    shape = (circuit.n_params,) if kind is AnsatzKind.I else (R, circuit.n_params)
    return LowRankState(kind, tuple(basis), alpha, np.zeros(shape), circuit)


def density_matrix(s: LowRankState) -> np.ndarray:
    if s.n > MAX_DENSE_QUBITS:
        raise CapabilityError(f"dense density matrix for {s.n} qubits is not supported")
    psi = s.kets()
    return (psi.T * s.alpha) @ psi.conj()


def state_trace(s: LowRankState) -> float:
    return float(np.sum(s.alpha))

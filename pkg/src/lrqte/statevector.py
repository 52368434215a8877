"""Dense statevector engine for the layered Rzz/Rx circuit.

Kets are plain complex numpy arrays of length ``2**n``; every routine also
accepts a stack of kets along leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paulis import DimensionError, Lattice, PauliString, PauliSum, apply_string, pauli_action


def _bits(x) -> list[int]:
    if isinstance(x, str):
        if any(c not in "01" for c in x):
            raise ValueError(f"invalid bitstring {x!r}")
        return [int(c) for c in x]
    return [int(b) for b in x]


def bitstring_index(x) -> int:
    """Basis index of a bitstring; character ``j`` is bit ``j``."""
    return sum(b << j for j, b in enumerate(_bits(x)))


def index_bitstring(index: int, n: int) -> str:
    return "".join(str((index >> j) & 1) for j in range(n))


def basis_ket(x) -> np.ndarray:
    bits = _bits(x)
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[bitstring_index(bits)] = 1.0
    return v


def permutation_string(xp, xq) -> PauliString:
    """X on every site where the bitstrings differ; maps ``|xq>`` to ``|xp>``."""
    bp, bq = _bits(xp), _bits(xq)
    if len(bp) != len(bq):
        raise DimensionError("bitstrings have different lengths")
    return PauliString("".join("X" if a != b else "I" for a, b in zip(bp, bq)))


@dataclass(frozen=True)
class CircuitSpec:
    """Ordered Pauli-rotation gates ``exp(-i theta_k G / 2)``.

    ``gates`` is in application order (first applied first); each entry is
    ``(generator, parameter index)``.
    """

    n: int
    layers: int
    gates: tuple[tuple[PauliString, int], ...]

    def __post_init__(self):
        idx = sorted(k for _, k in self.gates)
        if idx != list(range(len(self.gates))):
            raise ValueError("parameter indices must be 0..N-1, each used once")
        for g, _ in self.gates:
            if g.n != self.n or g.phase != 1:
                raise ValueError(f"generator {g} must be a unit-phase {self.n}-qubit string")

    @property
    def n_params(self) -> int:
        return len(self.gates)

    def inverse(self) -> CircuitSpec:
        """Reversed gate order; apply with ``-theta`` to undo the circuit."""
        return CircuitSpec(self.n, self.layers, tuple(reversed(self.gates)))


def tfim_circuit(lattice: Lattice, layers: int) -> CircuitSpec:
    """Problem-inspired ansatz: per layer all Rzz edge gates, then all Rx site gates."""
    if layers < 1:
        raise ValueError("need at least one layer")
    n = lattice.n
    gates = []
    for _ in range(layers):
        for j, k in lattice.edges:
            gates.append(PauliString.from_sites(n, {j: "Z", k: "Z"}))
        for j in range(n):
            gates.append(PauliString.from_sites(n, {j: "X"}))
    return CircuitSpec(n, layers, tuple((g, i) for i, g in enumerate(gates)))


def _rotate(v: np.ndarray, letters: str, angle: float) -> np.ndarray:
    perm, factor = pauli_action(letters)
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if "X" in letters or "Y" in letters:
        return c * v - 1j * s * (factor * v[..., perm])
    # diagonal generator
    return (c - 1j * s * factor) * v


def _check(c: CircuitSpec, theta, v) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (c.n_params,):
        raise ValueError(f"expected {c.n_params} parameters, got shape {theta.shape}")
    if np.shape(v)[-1] != 2**c.n:
        raise DimensionError(f"circuit on {c.n} qubits applied to vector of length {np.shape(v)[-1]}")
    return theta


def apply_circuit(c: CircuitSpec, theta, v: np.ndarray) -> np.ndarray:
    theta = _check(c, theta, v)
    out = np.asarray(v, dtype=complex)
    for g, k in c.gates:
        out = _rotate(out, g.letters, theta[k])
    return out


def apply_circuit_derivative(c: CircuitSpec, theta, k: int, v: np.ndarray) -> np.ndarray:
    """``dU/dtheta_k @ v = -i/2 U_{N:k} G_k U_{k-1:1} v``."""
    theta = _check(c, theta, v)
    if not 0 <= k < c.n_params:
        raise IndexError(f"parameter index {k} out of range")
    out = np.asarray(v, dtype=complex)
    for g, idx in c.gates:
        if idx == k:
            out = apply_string(g, out)
        out = _rotate(out, g.letters, theta[idx])
    return -0.5j * out


@dataclass
class Sweep:
    """Result of :func:`derivative_sweep`.

    ``final`` is ``U v``; ``inserted[..., k, :]`` is ``U_{N:k} G_k U_{k-1:1} v``
    so that ``dU/dtheta_k v = -i/2 * inserted[..., k, :]``. When requested,
    ``echo[..., k, j]`` (``k`` applied before ``j``) holds
    ``<chi|G_j|chi>`` with ``chi = U_{j-1:k} G_k U_{k-1:1} v``, which the
    ancilla-free estimator needs.
    """

    final: np.ndarray
    inserted: np.ndarray
    echo: np.ndarray | None = None


def derivative_sweep(c: CircuitSpec, theta, v: np.ndarray, echo: bool = False) -> Sweep:
    """All parameter-derivative states of ``U(theta) v`` in one forward pass."""
    theta = _check(c, theta, v)
    v = np.asarray(v, dtype=complex)
    lead = v.shape[:-1]
    K, D = c.n_params, v.shape[-1]
    rows = np.zeros(lead + (K, D), dtype=complex)
    echo_arr = np.zeros(lead + (K, K)) if echo else None
    main = v
    for pos, (g, k) in enumerate(c.gates):
        if echo and pos:
            done = rows[..., :pos, :]
            prev = [kk for _, kk in c.gates[:pos]]
            vals = np.einsum("...kd,...kd->...k", done.conj(), apply_string(g, done)).real
            echo_arr[..., prev, k] = vals
        rows[..., pos, :] = apply_string(g, main)
        rows[..., : pos + 1, :] = _rotate(rows[..., : pos + 1, :], g.letters, theta[k])
        main = _rotate(main, g.letters, theta[k])
    order = [k for _, k in c.gates]
    inserted = np.empty_like(rows)
    inserted[..., order, :] = rows
    return Sweep(main, inserted, echo_arr)


def sandwich(bra: np.ndarray, op, ket: np.ndarray) -> complex:
    """``<bra| op |ket>`` for a PauliString, PauliSum or ``None`` (identity)."""
    bra, ket = np.asarray(bra), np.asarray(ket)
    if bra.shape != ket.shape:
        raise DimensionError("bra and ket have different dimensions")
    if op is None:
        return complex(np.vdot(bra, ket))
    if isinstance(op, PauliString):
        return complex(np.vdot(bra, apply_string(op, ket)))
    if isinstance(op, PauliSum):
        return sum((c * complex(np.vdot(bra, apply_string(p, ket))) for c, p in op), 0j)
    raise TypeError(f"unsupported operator type {type(op).__name__}")


def circuit_matrix(c: CircuitSpec, theta) -> np.ndarray:
    """Dense unitary, for tests and small-system diagnostics."""
    eye = np.eye(2**c.n, dtype=complex)
    return apply_circuit(c, theta, eye).T

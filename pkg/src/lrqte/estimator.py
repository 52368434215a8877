"""Expectation-value backends for the equations of motion.

Every matrix element of ``M`` and ``V`` is built from four primitive
families, evaluated here either exactly or by emulated shot sampling:

* ``DerivDeriv``  ``<x_p| dU_k^dag dU_j |x_p>``
* ``DerivU``      ``<x_p| dU_k^dag U |x_q>``
* ``USigmaU``     ``<x_p| U^dag sigma U |x_q>``
* ``DerivSigmaU`` ``<x_p| dU_k^dag sigma U |x_q>``

With a unit-coefficient Pauli generator, ``dU_k = -i/2 U~_k`` where ``U~_k``
is the circuit with the generator inserted, so each primitive is a known
prefactor times an amplitude of modulus at most one. The shot backend
computes the exact outcome distribution of the measuring circuit and samples
it; no ancilla is simulated.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ansatz import AnsatzKind, LowRankState
from .paulis import PauliString, apply_string

METHODS = ("hadamard", "ancilla_free", "hybrid")


class EstimatorError(RuntimeError):
    """Inconsistent input to a sampling routine."""


class Form(enum.Enum):
    DERIV_DERIV = "DerivDeriv"
    DERIV_U = "DerivU"
    U_SIGMA_U = "USigmaU"
    DERIV_SIGMA_U = "DerivSigmaU"


@dataclass(frozen=True)
class Primitive:
    """One primitive expectation value bound to mixture indices.

    ``DerivDeriv`` uses ``p, k, j`` (and ``q`` for ansatz II cross terms,
    defaulting to ``p``); ``DerivU`` uses ``p, q, k``; ``USigmaU`` uses
    ``p, q, sigma``; ``DerivSigmaU`` uses ``p, q, k, sigma``.
    """

    form: Form
    p: int
    q: int | None = None
    k: int | None = None
    j: int | None = None
    sigma: PauliString | None = None


@dataclass(frozen=True)
class ShotPlan:
    method: str = "hybrid"
    shots: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if int(self.shots) <= 0:
            raise ValueError("shots must be positive")


# -- exact -------------------------------------------------------------------


class ExactPrimitives:
    """All primitive families for one state, from a single derivative sweep."""

    def __init__(self, state: LowRankState, echo: bool = False):
        self.state = state
        self.kind = state.kind
        self.R = state.rank
        self.K = state.circuit.n_params
        sw = state.sweep(echo=echo)
        self.psi = sw.final  # (R, D)
        self.tilde = sw.inserted  # (R, K, D)
        self.echo = sw.echo
        self._es: dict[str, np.ndarray] = {}
        self._et: dict[str, np.ndarray] = {}

    # exact unit-bounded amplitudes

    @cached_property
    def exact_overlap(self) -> np.ndarray:
        return self.psi.conj() @ self.psi.T

    @cached_property
    def exact_y(self) -> np.ndarray:
        """``<x_p|U~_k^dag U~_j|x_p>`` (ansatz I, ``(R,K,K)``) or the full Gram ``(R,K,R,K)``."""
        if self.kind is AnsatzKind.I:
            return np.einsum("pkd,pjd->pkj", self.tilde.conj(), self.tilde)
        flat = self.tilde.reshape(self.R * self.K, -1)
        return (flat.conj() @ flat.T).reshape(self.R, self.K, self.R, self.K)

    @cached_property
    def exact_w(self) -> np.ndarray:
        """``<x_p|U~_k^dag U|x_q>`` as ``[p, q, k]``."""
        return np.einsum("pkd,qd->pqk", self.tilde.conj(), self.psi)

    def exact_s(self, sigma: PauliString) -> np.ndarray:
        key = sigma.letters
        if key not in self._es:
            self._es[key] = self.psi.conj() @ apply_string(sigma, self.psi).T
        return self._es[key]

    def exact_t(self, sigma: PauliString) -> np.ndarray:
        key = sigma.letters
        if key not in self._et:
            self._et[key] = np.einsum("pkd,qd->pqk", self.tilde.conj(), apply_string(sigma, self.psi))
        return self._et[key]

    # amplitudes as seen by the assembly; ``replica`` selects an independent
    # estimate and only matters for sampling backends

    def amp_overlap(self, replica: int = 0) -> np.ndarray:
        return self.exact_overlap

    def amp_y(self, replica: int = 0) -> np.ndarray:
        return self.exact_y

    def amp_w(self, replica: int = 0) -> np.ndarray:
        return self.exact_w

    def amp_s(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        return self.exact_s(sigma)

    def amp_t(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        return self.exact_t(sigma)

    # primitives with their prefactors

    def overlap(self, replica: int = 0) -> np.ndarray:
        return self.amp_overlap(replica)

    def deriv_deriv(self, replica: int = 0) -> np.ndarray:
        return 0.25 * self.amp_y(replica)

    def deriv_u(self, replica: int = 0) -> np.ndarray:
        return 0.5j * self.amp_w(replica)

    def u_sigma_u(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        return self.amp_s(sigma, replica)

    def deriv_sigma_u(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        return 0.5j * self.amp_t(sigma, replica)


class ExactEvaluator:
    """Zero-variance backend."""

    name = "exact"

    def primitives(self, state: LowRankState, step: int = 0) -> ExactPrimitives:
        return ExactPrimitives(state)


# -- sampling kernels ----------------------------------------------------------


def _check_bounded(z):
    if np.any(np.abs(z) > 1 + 1e-9):
        raise EstimatorError("amplitude of modulus > 1 passed to a sampling routine")


def _prob(x):
    return np.clip(0.5 * (1 + np.asarray(x, dtype=float)), 0.0, 1.0)


def sample_pm1_mean(mean, shots, rng) -> np.ndarray:
    """Empirical mean of ``shots`` +-1 outcomes with expectation ``mean``."""
    k = rng.binomial(shots, _prob(mean))
    return 2.0 * k / shots - 1.0


def hadamard_sample(z, shots, rng, imag=True) -> np.ndarray:
    """Hadamard-test estimate: ``2 P(0) - 1`` with ``P(0) = (1 + Re z)/2`` (and the Im circuit)."""
    z = np.asarray(z, dtype=complex)
    _check_bounded(z)
    re = sample_pm1_mean(z.real, shots, rng)
    if not imag:
        return re + 0j
    im = sample_pm1_mean(z.imag, shots, rng)
    return re + 1j * im


def ancilla_free_sample(z, s, a0, a1, shots, rng, imag=True) -> np.ndarray:
    """Two-measurement estimate of ``z = <phi|A sigma1|phi>``.

    ``s = <phi|sigma1|phi>``, ``a0 = <phi|A|phi>`` and
    ``a1 = <phi|sigma1 A sigma1|phi>`` fix the exact outcome distributions.
    Real part: measure ``sigma1`` (branch ``+-`` with probability
    ``(1 +- s)/2``), then ``A`` in the collapsed state; each shot contributes
    the product of the two outcomes. Imaginary part: ``A`` measured after
    ``exp(+-i pi sigma1 / 4)``, half of the shots on each circuit.
    """
    z = np.asarray(z, dtype=complex)
    _check_bounded(z)
    s, a0, a1 = (np.asarray(x, dtype=float) for x in (s, a0, a1))
    p_plus = _prob(s)
    n_plus = rng.binomial(shots, p_plus)
    n_minus = shots - n_plus
    half = 0.25 * (a0 + a1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_plus = np.where(p_plus > 0, (half + 0.5 * z.real) / p_plus, 0.0)
        e_minus = np.where(p_plus < 1, (half - 0.5 * z.real) / (1 - p_plus), 0.0)
    k_plus = rng.binomial(n_plus, _prob(e_plus))
    k_minus = rng.binomial(n_minus, _prob(e_minus))
    re = ((2 * k_plus - n_plus) - (2 * k_minus - n_minus)) / shots
    if not imag:
        return re + 0j
    h = max(shots // 2, 1)
    mid = 0.5 * (a0 + a1)
    e_rot_plus = sample_pm1_mean(mid - z.imag, h, rng)
    e_rot_minus = sample_pm1_mean(mid + z.imag, h, rng)
    return re + 0.5j * (e_rot_minus - e_rot_plus)


def _direct_sample(z, shots, rng):
    """Real expectation of a Hermitian unitary observable: one measurement circuit."""
    z = np.asarray(z)
    _check_bounded(z)
    return sample_pm1_mean(np.real(z), shots, rng) + 0j


# -- shot backend -----------------------------------------------------------

_FAMILY_IDS = {"overlap": 0, "y": 1, "w": 2, "s": 3, "t": 4}


class ShotPrimitives(ExactPrimitives):
    """Primitive families estimated from sampled outcome distributions.

    Each distinct primitive is sampled once per step and reused wherever it
    appears; conjugate-related entries share a sample. When the assembly
    multiplies two estimates of the same family, it asks for the second
    factor from an independent ``replica`` so that the product stays
    unbiased. Ancilla-free estimation needs a single shared unitary, so it is
    used for ansatz I only; ansatz II and every ``DerivSigmaU`` term go
    through the Hadamard test.
    """

    def __init__(self, state: LowRankState, plan: ShotPlan, step: int):
        super().__init__(state, echo=plan.method != "hadamard" and state.kind is AnsatzKind.I)
        self.plan = plan
        self.step = step
        self.shots = int(plan.shots)
        self.order = np.empty(self.K, dtype=int)
        for pos, (_, k) in enumerate(state.circuit.gates):
            self.order[k] = pos
        self._cache: dict[tuple, np.ndarray] = {}

    def _rng(self, family: str, sigma: PauliString | None, replica: int) -> np.random.Generator:
        tag = zlib.crc32(sigma.letters.encode()) if sigma is not None else 0
        key = (self.step, _FAMILY_IDS[family], tag, replica)
        return np.random.default_rng(np.random.SeedSequence(self.plan.seed, spawn_key=key))

    def _cached(self, family, sigma, replica, fn):
        key = (family, None if sigma is None else sigma.letters, replica)
        if key not in self._cache:
            self._cache[key] = fn(self._rng(family, sigma, replica))
        return self._cache[key]

    @property
    def _ancilla_free(self) -> bool:
        return self.plan.method != "hadamard" and self.kind is AnsatzKind.I

    def _hermitian_pairs(self, exact: np.ndarray, rng) -> np.ndarray:
        """Sample ``exact[p, q, ...]`` given ``exact[q, p] = conj(exact[p, q])`` (real diagonal)."""
        R = exact.shape[0]
        out = np.empty_like(exact)
        iu, ju = np.triu_indices(R, 1)
        d = np.arange(R)
        if self._ancilla_free:
            diag = np.real(exact[d, d])
            upper = ancilla_free_sample(exact[iu, ju], 0.0, diag[iu], diag[ju], self.shots, rng)
        else:
            upper = hadamard_sample(exact[iu, ju], self.shots, rng)
        out[iu, ju] = upper
        out[ju, iu] = upper.conj()
        out[d, d] = _direct_sample(exact[d, d], self.shots, rng)
        return out

    def amp_overlap(self, replica: int = 0) -> np.ndarray:
        if self.kind is AnsatzKind.I:
            return np.eye(self.R, dtype=complex)

        def draw(rng):
            out = np.eye(self.R, dtype=complex)
            iu, ju = np.triu_indices(self.R, 1)
            est = hadamard_sample(self.exact_overlap[iu, ju], self.shots, rng)
            out[iu, ju], out[ju, iu] = est, est.conj()
            return out

        return self._cached("overlap", None, replica, draw)

    def amp_w(self, replica: int = 0) -> np.ndarray:
        exact = self.exact_w

        def draw(rng):
            if self.kind is AnsatzKind.I:
                # w[q, p, k] = conj(w[p, q, k]) because U^dag G_k U is Hermitian
                return self._hermitian_pairs(exact, rng)
            out = hadamard_sample(exact, self.shots, rng)
            d = np.arange(self.R)
            out[d, d] = _direct_sample(exact[d, d], self.shots, rng)
            return out

        return self._cached("w", None, replica, draw)

    def amp_y(self, replica: int = 0) -> np.ndarray:
        exact = self.exact_y

        def draw_ii(rng):
            P = self.R * self.K
            out = np.eye(P, dtype=complex)
            iu, ju = np.triu_indices(P, 1)
            est = hadamard_sample(exact.reshape(P, P)[iu, ju], self.shots, rng)
            out[iu, ju], out[ju, iu] = est, est.conj()
            return out.reshape(exact.shape)

        def draw_i(rng):
            out = np.empty_like(exact)
            ks, js = np.triu_indices(self.K, 1)
            # a is applied before b in the circuit
            swap = self.order[ks] > self.order[js]
            a = np.where(swap, js, ks)
            b = np.where(swap, ks, js)
            if self._ancilla_free:
                R = np.arange(self.R)[:, None]
                d = np.arange(self.R)
                wd = np.real(self.exact_w[d, d])  # (R, K)
                # z = <phi|A G_a|phi> = conj(y[p, a, b]) with phi = U_{a-1:1}|x_p>
                z = exact[R, b, a]
                est = ancilla_free_sample(z, wd[:, a], wd[:, b], self.echo[R, a, b], self.shots, rng)
                y_ab = est.conj()
            else:
                y_ab = hadamard_sample(exact[:, a, b], self.shots, rng)
            out[:, a, b] = y_ab
            out[:, b, a] = y_ab.conj()
            d = np.arange(self.K)
            out[:, d, d] = 1.0
            return out

        return self._cached("y", None, replica, draw_i if self.kind is AnsatzKind.I else draw_ii)

    def amp_s(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        if sigma.is_identity:
            return self.amp_overlap(replica)
        return self._cached("s", sigma, replica, lambda rng: self._hermitian_pairs(self.exact_s(sigma), rng))

    def amp_t(self, sigma: PauliString, replica: int = 0) -> np.ndarray:
        if sigma.is_identity:
            return self.amp_w(replica)
        return self._cached("t", sigma, replica, lambda rng: hadamard_sample(self.exact_t(sigma), self.shots, rng))


class ShotEvaluator:
    """Shot-noise backend with a deterministic stream per (step, family, Pauli string)."""

    name = "shots"

    def __init__(self, plan: ShotPlan):
        self.plan = plan

    def primitives(self, state: LowRankState, step: int = 0) -> ShotPrimitives:
        return ShotPrimitives(state, self.plan, step)


# -- single-primitive interface ---------------------------------------------


def exact_value(prim: Primitive, s: LowRankState) -> complex:
    ex = ExactPrimitives(s)
    return complex(_lookup(prim, ex, scaled=True))


def _lookup(prim: Primitive, ex: ExactPrimitives, scaled: bool):
    q = prim.p if prim.q is None else prim.q
    f = prim.form
    if f is Form.DERIV_DERIV:
        amp = ex.exact_y[prim.p, prim.k, prim.j] if ex.kind is AnsatzKind.I else ex.exact_y[prim.p, prim.k, q, prim.j]
        return 0.25 * amp if scaled else amp
    if f is Form.DERIV_U:
        amp = ex.exact_w[prim.p, q, prim.k]
        return 0.5j * amp if scaled else amp
    if f is Form.U_SIGMA_U:
        return ex.exact_s(prim.sigma)[prim.p, q]
    amp = ex.exact_t(prim.sigma)[prim.p, q, prim.k]
    return 0.5j * amp if scaled else amp


def estimate(prim: Primitive, s: LowRankState, plan: ShotPlan | None = None, rng=None, size: int | None = None):
    """Estimate one primitive; ``plan=None`` returns the exact value.

    Uses the same kernels as the shot backend: ancilla-free circuits for the
    first three families under ``hybrid``/``ancilla_free`` (ansatz I), the
    Hadamard test otherwise. With ``size`` an array of that many independent
    estimates is returned.
    """
    if plan is None:
        val = exact_value(prim, s)
        return val if size is None else np.full(size, val)
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    ex = ExactPrimitives(s, echo=s.kind is AnsatzKind.I)
    shots = int(plan.shots)
    shape = () if size is None else (size,)

    def rep(x):
        return np.broadcast_to(np.asarray(x), shape)

    def done(x):
        x = np.asarray(x, dtype=complex)
        return complex(x) if size is None else x

    q = prim.p if prim.q is None else prim.q
    f = prim.form
    prefactor = {Form.DERIV_DERIV: 0.25, Form.U_SIGMA_U: 1.0}.get(f, 0.5j)
    amp = _lookup(prim, ex, scaled=False)
    af = plan.method != "hadamard" and s.kind is AnsatzKind.I and f is not Form.DERIV_SIGMA_U
    same = prim.p == q

    if f is Form.DERIV_DERIV and prim.k == prim.j and same:
        return done(rep(prefactor))
    if f is Form.U_SIGMA_U and prim.sigma.is_identity and s.kind is AnsatzKind.I:
        return done(rep(float(same)))
    if af and f is Form.DERIV_DERIV:
        order = {k: pos for pos, (_, k) in enumerate(s.circuit.gates)}
        a, b = (prim.k, prim.j) if order[prim.k] < order[prim.j] else (prim.j, prim.k)
        wd = np.real(np.diagonal(ex.exact_w, axis1=0, axis2=1))[:, prim.p]
        z = ex.exact_y[prim.p, b, a]
        est = ancilla_free_sample(rep(z), wd[a], wd[b], ex.echo[prim.p, a, b], shots, rng)
        # the circuit measures conj(y[p, a, b])
        y_ab = est.conj()
        return done(prefactor * (y_ab if (a, b) == (prim.k, prim.j) else y_ab.conj()))
    if af:
        full = ex.exact_w[..., prim.k] if f is Form.DERIV_U else ex.exact_s(prim.sigma)
        if same:
            return done(prefactor * _direct_sample(rep(amp), shots, rng))
        est = ancilla_free_sample(rep(amp), 0.0, full[prim.p, prim.p].real, full[q, q].real, shots, rng)
        return done(prefactor * est)
    real_known = same and (f is Form.U_SIGMA_U or (f is Form.DERIV_U and s.kind is AnsatzKind.I))
    if real_known:
        return done(prefactor * _direct_sample(rep(amp), shots, rng))
    return done(prefactor * hadamard_sample(rep(amp), shots, rng))


# -- cost model ---------------------------------------------------------------

BLOCKS = ("M_aa", "M_at", "M_tt", "V_a", "V_t")

TABLE1_CLASSES = {
    AnsatzKind.I: {
        "M_aa": "0", "M_at": "0", "M_tt": "O(R^2) per entry",
        "M": "O(R^2 N_theta + R N_theta^2)",
        "V_a": "O(LR) per entry", "V_t": "O(LR^2) per entry",
        "V": "O(L R^2 N_theta)",
        "total": "O(L R^2 N_theta + R N_theta^2)",
    },
    AnsatzKind.II: {
        "M_aa": "O(1) per entry", "M_at": "O(1) per entry", "M_tt": "O(1) per entry",
        "M": "O((R + N_theta)^2)",
        "V_a": "O(LR) per entry", "V_t": "O(LR) per entry",
        "V": "O(L R^2 + L R N_theta)",
        "total": "O(L R^2 + L R N_theta + N_theta^2)",
    },
}


def count_circuits(kind, R: int, n_theta: int, L: int) -> dict[str, int]:
    """Distinct primitive expectation values needed for one ``(M, V)`` assembly.

    ``n_theta`` is the parameter count of one circuit (ansatz II therefore has
    ``R * n_theta`` angles in total) and ``L`` the number of distinct
    non-identity Pauli strings in the Liouvillian expansion. Entries related
    by complex conjugation count once. Every primitive that appears in a
    block's formula counts, including those whose value is fixed by
    normalization; blocks that reduce to constants (``M_aa`` and ``M_at`` for
    ansatz I) count zero. Identity-string factors in ``V`` reduce to
    ``M``-block families and are counted there. Per-block counts include
    primitives shared with other blocks; ``M``, ``V`` and ``total`` are
    counts of unions.
    """
    kind = AnsatzKind.parse(kind)
    if min(R, n_theta, L) < 1:
        raise ValueError("R, n_theta and L must be positive")
    pairs = R * (R + 1) // 2
    s_prims = L * pairs
    t_prims = L * R * R * n_theta
    if kind is AnsatzKind.I:
        y = R * n_theta * (n_theta + 1) // 2
        w = n_theta * pairs
        blocks = {"M_aa": 0, "M_at": 0, "M_tt": y + w, "V_a": s_prims, "V_t": t_prims + s_prims}
        m = y + w
    else:
        P = R * n_theta
        ov = pairs
        w = R * R * n_theta
        y = P * (P + 1) // 2
        blocks = {"M_aa": ov, "M_at": w + ov, "M_tt": y + w + ov, "V_a": s_prims, "V_t": t_prims + s_prims}
        m = ov + w + y
    v = s_prims + t_prims
    blocks.update(M=m, V=v, total=m + v)
    return blocks


def table1_expression(kind, R: int, n_theta: int, L: int) -> float:
    """Leading-order total from the asymptotic classes, with unit constants."""
    kind = AnsatzKind.parse(kind)
    if kind is AnsatzKind.I:
        return L * R**2 * n_theta + R * n_theta**2
    total = R * n_theta
    return L * R**2 + L * R * total + total**2

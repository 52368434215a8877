"""McLachlan equations of motion: assembly of ``M beta_dot = V``, regularized solve, Euler stepping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ansatz import AnsatzKind, LowRankState, init_state, state_trace
from .estimator import ExactEvaluator, ShotEvaluator, ShotPlan
from .paulis import SuperopTerm, build_tfim, liouvillian_expand

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """Non-finite entries reached the linear solver."""


@dataclass(frozen=True)
class EOMSystem:
    """``M`` and ``V`` with the parameter ordering of :attr:`LowRankState.params`."""

    M: np.ndarray
    V: np.ndarray
    kind: AnsatzKind
    rank: int

    @property
    def dim(self) -> int:
        return self.V.shape[0]


# -- assembly -----------------------------------------------------------------


def _backend(backend):
    return ExactEvaluator() if backend is None else backend


def _v_pieces(prims, terms, R, K):
    """Accumulate ``sum_r c_r S1[p,q] S2[q,p]`` and the two ``V_theta`` contractions.

    A product of two estimates of the same string takes the second factor
    from an independent replica (a no-op for exact primitives).
    """
    va = np.zeros((R, R), dtype=complex)  # [p, q] before weighting
    vt = np.zeros((R, R, K), dtype=complex)  # [p, q, k]
    for t in terms:
        s1 = prims.u_sigma_u(t.left)
        rep = int(t.left.letters == t.right.letters)
        s2 = prims.u_sigma_u(t.right, replica=rep)
        d1 = prims.deriv_sigma_u(t.left)
        d2 = prims.deriv_sigma_u(t.right, replica=rep)
        va += t.coeff * s1 * s2.T
        vt += t.coeff * (d1 * s2.T[:, :, None] + d2.conj() * s1[:, :, None])
    return va, vt


def assemble_ansatz1(s: LowRankState, terms: list[SuperopTerm], backend=None, step: int = 0) -> EOMSystem:
    if s.kind is not AnsatzKind.I:
        raise ValueError("assemble_ansatz1 needs an ansatz-I state")
    prims = _backend(backend).primitives(s, step)
    R, K = s.rank, s.circuit.n_params
    a = s.alpha
    A = prims.deriv_deriv()  # (R, K, K)
    B = prims.deriv_u()  # (R, R, K)
    mtt = np.einsum("p,pkj->kj", a**2, A) + np.einsum("p,q,pqk,qpj->kj", a, a, B, prims.deriv_u(replica=1))
    M = np.zeros((R + K, R + K))
    M[:R, :R] = np.eye(R)
    M[R:, R:] = 2 * mtt.real
    va, vt = _v_pieces(prims, terms, R, K)
    V = np.empty(R + K)
    V[:R] = (va @ a).real
    V[R:] = np.einsum("p,q,pqk->k", a, a, vt).real
    return EOMSystem(M, V, s.kind, R)


def assemble_ansatz2(s: LowRankState, terms: list[SuperopTerm], backend=None, step: int = 0) -> EOMSystem:
    if s.kind is not AnsatzKind.II:
        raise ValueError("assemble_ansatz2 needs an ansatz-II state")
    prims = _backend(backend).primitives(s, step)
    R, K = s.rank, s.circuit.n_params
    a = s.alpha
    O = prims.overlap()  # (R, R)
    B = prims.deriv_u()  # (R, R, K)
    G = prims.deriv_deriv()  # (R, K, R, K), G[q, j, p, k] = <d psi_qj | d psi_pk>
    dim = R + R * K
    M = np.zeros((dim, dim))
    M[:R, :R] = (O * prims.overlap(replica=1).conj()).real
    # [p, q, j]: alpha_p with theta^(q)_j
    mat = 2 * a[None, :, None] * (B.conj().transpose(1, 0, 2) * O.T[:, :, None]).real
    M[:R, R:] = mat.reshape(R, R * K)
    M[R:, :R] = M[:R, R:].T
    # [p, k, q, j]
    cross = O[:, None, :, None] * G.transpose(2, 3, 0, 1) + np.einsum("pqk,qpj->pkqj", B, prims.deriv_u(replica=1))
    mtt = 2 * (a[:, None, None, None] * a[None, None, :, None]) * cross.real
    M[R:, R:] = mtt.reshape(R * K, R * K)
    va, vt = _v_pieces(prims, terms, R, K)
    V = np.empty(dim)
    V[:R] = (va @ a).real
    V[R:] = (a[:, None] * np.einsum("q,pqk->pk", a, vt).real).ravel()
    return EOMSystem(M, V, s.kind, R)


def assemble(s: LowRankState, terms, backend=None, step: int = 0) -> EOMSystem:
    if s.kind is AnsatzKind.I:
        return assemble_ansatz1(s, terms, backend, step)
    return assemble_ansatz2(s, terms, backend, step)


# -- regularization -----------------------------------------------------------


@dataclass(frozen=True)
class EigenRescale:
    """Smoothly suppressed pseudoinverse: ``1/s -> (1/s) / (1 + (lam2/s)**6)``."""

    a_c: float = 1e-4
    r_c: float = 1e-4

    def __post_init__(self):
        if self.a_c <= 0 or self.r_c <= 0:
            raise ValueError("a_c and r_c must be positive")


@dataclass(frozen=True)
class EigenTruncate:
    """Pseudoinverse keeping eigenvalues above ``delta_c``."""

    delta_c: float = 1e-9

    def __post_init__(self):
        if self.delta_c <= 0:
            raise ValueError("delta_c must be positive")


@dataclass(frozen=True)
class DiagonalShift:
    """Shifted solve ``(M + lam I)^-1`` refined by ``order`` Neumann-type corrections."""

    lam: float = 0.04
    order: int = 2

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.order < 0:
            raise ValueError("order must be nonnegative")


def default_scheme(kind, backend_mode: str = "exact"):
    if backend_mode == "shots":
        return DiagonalShift(0.04, 2)
    if AnsatzKind.parse(kind) is AnsatzKind.I:
        return EigenRescale(1e-4, 1e-4)
    return EigenTruncate(1e-9)


@dataclass(frozen=True)
class Solution:
    velocity: np.ndarray
    stalled: bool = False
    retained: int | None = None  # eigen-directions kept by EigenTruncate


def regularized_solve(sys: EOMSystem, scheme) -> Solution:
    M, V = np.asarray(sys.M, dtype=float), np.asarray(sys.V, dtype=float)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(V))):
        raise NumericalError("non-finite entries in M or V")
    M = 0.5 * (M + M.T)
    if isinstance(scheme, DiagonalShift):
        lu = sla.lu_factor(M + scheme.lam * np.eye(len(V)))
        b = sla.lu_solve(lu, V)
        out = b.copy()
        for i in range(1, scheme.order + 1):
            b = sla.lu_solve(lu, b)
            out += scheme.lam**i * b
        return Solution(out)
    s, Q = np.linalg.eigh(M)
    proj = Q.T @ V
    if isinstance(scheme, EigenRescale):
        lam2 = max(scheme.a_c, scheme.r_c * max(s.max(), 0.0))
        sp = np.clip(s, 0.0, None)
        inv = sp**5 / (sp**6 + lam2**6)
        return Solution(Q @ (inv * proj))
    if isinstance(scheme, EigenTruncate):
        keep = s > scheme.delta_c
        if not keep.any():
            return Solution(np.zeros_like(V), stalled=True, retained=0)
        return Solution(Q[:, keep] @ (proj[keep] / s[keep]), retained=int(keep.sum()))
    raise TypeError(f"unknown regularization scheme {scheme!r}")


def euler_step(s: LowRankState, beta_dot, dt: float) -> LowRankState:
    beta_dot = np.asarray(beta_dot, dtype=float)
    if beta_dot.shape != (s.n_params,):
        raise ValueError(f"velocity has shape {beta_dot.shape}, expected ({s.n_params},)")
    beta = s.params + dt * beta_dot
    R = s.rank
    beta[:R] = np.clip(beta[:R], 0.0, None)
    return s.with_params(beta)


# -- time stepping --------------------------------------------------------------


@dataclass
class StepRecord:
    """Everything the posterior bound and diagnostics need about one Euler step."""

    step: int
    t: float
    dt: float
    beta: np.ndarray
    beta_next: np.ndarray
    velocity: np.ndarray
    M: np.ndarray
    V: np.ndarray
    exact: bool
    stalled: bool
    min_eig: float
    max_eig: float
    residual: float
    trace: float


def n_steps(dt: float, t_final: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    return int(math.ceil(t_final / dt - 1e-9))


def make_backend(cfg):
    if getattr(cfg, "backend", "exact") == "shots":
        return ShotEvaluator(ShotPlan(cfg.method, cfg.shots, cfg.seed))
    return ExactEvaluator()


@dataclass
class Evolution:
    """Raw output of :func:`run_steps`: recorded times, states and per-step records."""

    times: list[float] = field(default_factory=list)
    states: list[LowRankState] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)


def run_steps(cfg, observers=(), state: LowRankState | None = None, keep_states: bool = False) -> Evolution:
    """Iterate assemble, solve and Euler step from ``t = 0`` to ``t_final``.

    Each observer is called as ``obs(t, state, record)`` at ``t = 0`` (with
    ``record=None``) and after every step.
    """
    model = build_tfim(cfg.lattice, cfg.jz, cfg.h, cfg.gamma)
    terms = liouvillian_expand(model)
    s = init_state(cfg) if state is None else state
    scheme = cfg.scheme if cfg.scheme is not None else default_scheme(s.kind, cfg.backend)
    backend = make_backend(cfg)
    exact = isinstance(backend, ExactEvaluator)
    out = Evolution()

    def emit(t, st, rec):
        out.times.append(t)
        if keep_states:
            out.states.append(st)
        for obs in observers:
            obs(t, st, rec)

    emit(0.0, s, None)
    for i in range(n_steps(cfg.dt, cfg.t_final)):
        sys = assemble(s, terms, backend, step=i)
        sol = regularized_solve(sys, scheme)
        nxt = euler_step(s, sol.velocity, cfg.dt)
        eig = np.linalg.eigvalsh(0.5 * (sys.M + sys.M.T))
        rec = StepRecord(
            step=i, t=(i + 1) * cfg.dt, dt=cfg.dt, beta=s.params, beta_next=nxt.params,
            velocity=sol.velocity, M=sys.M, V=sys.V, exact=exact, stalled=sol.stalled,
            min_eig=float(eig[0]), max_eig=float(eig[-1]),
            residual=float(np.linalg.norm(sys.M @ sol.velocity - sys.V)), trace=state_trace(nxt),
        )
        if sol.stalled:
            log.warning("step %d: every eigenvalue truncated, holding parameters", i)
        log.debug(
            "step %d t=%.6g eig=[%.3e, %.3e] residual=%.3e trace=%.12f",
            i, rec.t, rec.min_eig, rec.max_eig, rec.residual, rec.trace,
        )
        out.records.append(rec)
        s = nxt
        emit(rec.t, s, rec)
    return out


def evolve(cfg, observers=(), reference=None):
    """Run the variational evolution and return its metrics :class:`~lrqte.oracle.TimeSeries`.

    ``reference`` is an optional dense trajectory on the same time grid;
    extra ``observers`` are called after the built-in metrics collector.
    """
    from .oracle import MetricsObserver

    model = build_tfim(cfg.lattice, cfg.jz, cfg.h, cfg.gamma)
    metrics = MetricsObserver(
        model, reference, bound=getattr(cfg, "bound", False), stride=getattr(cfg, "stride", 1),
        bures_mode=getattr(cfg, "bures_mode", "standard"),
    )
    run_steps(cfg, [metrics, *observers])
    return metrics.series

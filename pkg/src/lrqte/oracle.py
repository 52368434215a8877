"""Dense reference integrator and trajectory metrics."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ansatz import CapabilityError, LowRankState, density_matrix
from .paulis import DimensionError, LindbladModel, PauliString, PauliSum

MAX_ORACLE_QUBITS = 10


class ValidityError(ValueError):
    """A matrix that should be a physical state is not."""


# -- dense Lindblad generator ---------------------------------------------------

_SP = {
    "I": sp.identity(2, dtype=complex, format="csr"),
    "X": sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex)),
    "Y": sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex)),
    "Z": sp.csr_matrix(np.array([[1, 0], [0, -1]], dtype=complex)),
}


def _sparse_string(p: PauliString) -> sp.csr_matrix:
    # site 0 is the least significant bit, so it is the last Kronecker factor
    out = sp.identity(1, dtype=complex, format="csr")
    for ch in reversed(p.letters):
        out = sp.kron(out, _SP[ch], format="csr")
    return p.phase * out


def _sparse_sum(s: PauliSum) -> sp.csr_matrix:
    d = 2**s.n
    out = sp.csr_matrix((d, d), dtype=complex)
    for c, p in s:
        out = out + c * _sparse_string(p)
    return out.tocsr()


@dataclass(frozen=True)
class _Generator:
    H: sp.csr_matrix
    jumps: tuple[tuple[float, sp.csr_matrix, sp.csr_matrix], ...]  # (rate, c, c^dag)
    K: sp.csr_matrix  # -i H - 1/2 sum gamma c^dag c


@functools.lru_cache(maxsize=16)
def _generator(model: LindbladModel) -> _Generator:
    H = _sparse_sum(model.hamiltonian)
    K = -1j * H
    jumps = []
    for rate, jump in model.dissipators:
        if rate == 0:
            continue
        c = _sparse_sum(jump)
        cd = c.conj().T.tocsr()
        jumps.append((float(rate), c, cd))
        K = K - 0.5 * rate * (cd @ c)
    return _Generator(H, tuple(jumps), K.tocsr())


def lindblad_rhs(model: LindbladModel, rho: np.ndarray) -> np.ndarray:
    """``-i[H, rho] + sum_k gamma_k (c rho c^dag - 1/2 {c^dag c, rho})``."""
    rho = np.asarray(rho)
    d = 2**model.n
    if rho.shape != (d, d):
        raise DimensionError(f"expected a {d}x{d} density matrix, got {rho.shape}")
    g = _generator(model)
    out = g.K @ rho + (g.K @ rho.conj().T).conj().T
    for rate, c, cd in g.jumps:
        out = out + rate * (c @ (cd.T @ rho.T).T)
    return out


def integrate_exact(model: LindbladModel, rho0: np.ndarray, dt: float, t_final: float) -> list[np.ndarray]:
    """Classical RK4 trajectory at ``t = 0, dt, 2 dt, ...`` (same grid as the variational run)."""
    if model.n > MAX_ORACLE_QUBITS:
        raise CapabilityError(f"dense oracle limited to {MAX_ORACLE_QUBITS} qubits")
    from .eom import n_steps

    rho = np.array(rho0, dtype=complex)
    out = [rho.copy()]
    f = functools.partial(lindblad_rhs, model)
    for _ in range(n_steps(dt, t_final)):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        out.append(rho.copy())
    return out


def certify_oracle(model: LindbladModel, rho0: np.ndarray, dt: float, t_final: float, tol: float = 1e-6):
    """Compare the RK4 trajectory with a dt/10 run; return ``(trajectory, max observable change)``.

    Raises ``ValidityError`` when the refinement moves ``s_x`` or ``s_z`` by
    ``tol`` or more at any shared time.
    """
    coarse = integrate_exact(model, rho0, dt, t_final)
    fine = integrate_exact(model, rho0, dt / 10, t_final)[::10]
    obs_c = np.array([observables(r) for r in coarse])
    obs_f = np.array([observables(r) for r in fine[: len(coarse)]])
    err = float(np.max(np.abs(obs_c - obs_f)))
    if err >= tol:
        raise ValidityError(f"oracle not converged: dt/10 refinement changed observables by {err:.3g}")
    return coarse, err


# -- metrics ---------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _site_sums(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal of sum_j Z_j and the X-flip masks, for fast observables."""
    idx = np.arange(2**n)
    bits = (idx[:, None] >> np.arange(n)) & 1
    zdiag = (1 - 2 * bits).sum(axis=1).astype(float)
    return zdiag, np.array([1 << j for j in range(n)])


def observables(x) -> tuple[float, float]:
    """Site-averaged ``(s_x, s_z)``, normalized by the trace."""
    rho = density_matrix(x) if isinstance(x, LowRankState) else np.asarray(x)
    d = rho.shape[0]
    n = d.bit_length() - 1
    tr = np.trace(rho).real
    if abs(tr) < 1e-300:
        raise ValidityError("zero trace")
    zdiag, masks = _site_sums(n)
    sz = float(np.dot(zdiag, np.diag(rho).real)) / (n * tr)
    idx = np.arange(d)
    sx = sum(rho[idx ^ m, idx].real.sum() for m in masks) / (n * tr)
    return float(sx), sz


def normalize(rho: np.ndarray) -> np.ndarray:
    tr = np.trace(rho).real
    if tr <= 0:
        raise ValidityError("non-positive trace")
    return rho / tr


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    return float(np.vdot(rho, rho).real)


def _psd_sqrt(rho: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < -tol:
        raise ValidityError(f"matrix has eigenvalue {w.min():.3g} below -{tol:g}")
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


def root_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``Tr sqrt(sqrt(rho) sigma sqrt(rho))``."""
    r = _psd_sqrt(rho)
    inner = r @ sigma @ r
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if w.min() < -1e-8:
        raise ValidityError(f"matrix has eigenvalue {w.min():.3g} below -1e-08")
    # eigenvalues at rounding level would contribute their square root
    w[w < np.finfo(float).eps * len(w) * max(w.max(), 0.0)] = 0.0
    return float(np.sqrt(w).sum())


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    return min(root_fidelity(rho, sigma) ** 2, 1.0)


def l2_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(rho) - np.asarray(sigma)))


def bures_distance(rho, sigma, mode: str = "standard") -> float:
    """Standard ``sqrt(2 (1 - sqrt F))``; ``verbatim`` uses ``sqrt(2 Tr sqrt(sqrt rho sigma sqrt rho))``."""
    rf = root_fidelity(rho, sigma)
    if mode == "standard":
        return float(np.sqrt(max(2 * (1 - min(rf, 1.0)), 0.0)))
    if mode == "verbatim":
        return float(np.sqrt(2 * rf))
    raise ValueError(f"unknown Bures mode {mode!r}")


def bures_integrated(pairs, times, t_final: float | None = None, mode: str = "standard") -> float:
    """Trapezoid integral of the Bures distance over ``times``, divided by the final time."""
    pairs = list(pairs)
    times = np.asarray(times, dtype=float)
    if len(pairs) != len(times):
        raise ValueError("trajectory and time grid have different lengths")
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    T = float(times[-1] - times[0]) if t_final is None else float(t_final)
    d = np.array([bures_distance(a, b, mode) for a, b in pairs])
    if T <= 0 or len(times) < 2:
        return float(d[0]) if len(d) else 0.0
    return float(np.trapezoid(d, times) / T)


# -- posterior error bound --------------------------------------------------------


@dataclass(frozen=True)
class BoundRecord:
    """``M``, ``V`` and the dense state at ``beta``, plus the parameters one step later."""

    M: np.ndarray
    V: np.ndarray
    beta: np.ndarray
    beta_next: np.ndarray
    dt: float
    rho: np.ndarray


def step_cost(rec: BoundRecord, model: LindbladModel) -> float:
    """Discretized McLachlan cost with finite-difference velocities (not floored)."""
    v = (np.asarray(rec.beta_next) - np.asarray(rec.beta)) / rec.dt
    lr = lindblad_rhs(model, rec.rho)
    return float(v @ rec.M @ v - 2 * rec.V @ v + np.vdot(lr, lr).real)


def posterior_error_bound(records, model: LindbladModel, mode: str = "riemann") -> np.ndarray:
    """Partial sums ``E_p(t_1), ..., E_p(t_N)``.

    ``riemann`` accumulates ``sqrt(C_i) dt``; ``verbatim`` accumulates
    ``sqrt(C_i dt)``. Costs are floored at zero before the square root.
    """
    records = list(records)
    if not records:
        raise ValueError("no step records")
    inc = []
    for rec in records:
        if rec is None:
            raise ValueError("missing step record")
        c = max(step_cost(rec, model), 0.0)
        if mode == "riemann":
            inc.append(np.sqrt(c) * rec.dt)
        elif mode == "verbatim":
            inc.append(np.sqrt(c * rec.dt))
        else:
            raise ValueError(f"unknown bound mode {mode!r}")
    return np.cumsum(inc)


# -- time series --------------------------------------------------------------------

COLUMNS = ("t", "s_x", "s_z", "trace", "purity", "infidelity", "l2", "bures", "ep_riemann", "ep_verbatim")


@dataclass
class TimeSeries:
    """Rows of per-time metrics; optional columns hold ``nan`` when not computed."""

    rows: list[dict] = field(default_factory=list)
    alphas: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    stalls: list[float] = field(default_factory=list)

    def append(self, row: dict, alpha=None):
        if self.rows and row["t"] <= self.rows[-1]["t"]:
            raise ValueError("time must be strictly increasing")
        self.rows.append({c: row.get(c, float("nan")) for c in COLUMNS})
        if alpha is not None:
            self.alphas.append(np.array(alpha))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def __len__(self):
        return len(self.rows)


class MetricsObserver:
    """Collects metrics along a variational run, optionally against an oracle trajectory.

    ``reference`` is a list of dense states on the run's time grid. The
    posterior bound is tracked when ``bound=True``; it always uses exactly
    assembled ``M`` and ``V`` (re-assembled from the state when the run
    itself used the shot backend).
    """

    def __init__(self, model: LindbladModel, reference=None, bound: bool = False, stride: int = 1,
                 bures_mode: str = "standard"):
        if stride < 1:
            raise ValueError("stride must be positive")
        self.model = model
        self.reference = reference
        self.bound = bound
        self.stride = stride
        self.bures_mode = bures_mode
        self.series = TimeSeries()
        self.costs: list[float] = []
        self._ep = np.zeros(2)
        self._prev: tuple[LowRankState, np.ndarray] | None = None
        self._terms = None
        self._i = 0

    def _exact_system(self, s: LowRankState, rec):
        if rec.exact:
            return rec.M, rec.V
        from .eom import assemble
        from .paulis import liouvillian_expand

        if self._terms is None:
            self._terms = liouvillian_expand(self.model)
        sys = assemble(s, self._terms)
        return sys.M, sys.V

    def __call__(self, t: float, s: LowRankState, rec=None):
        rho_raw = density_matrix(s)
        if self.bound and rec is not None:
            prev_s, prev_rho = self._prev
            M, V = self._exact_system(prev_s, rec)
            c = step_cost(BoundRecord(M, V, rec.beta, rec.beta_next, rec.dt, prev_rho), self.model)
            self.costs.append(c)
            cf = max(c, 0.0)
            self._ep += (np.sqrt(cf) * rec.dt, np.sqrt(cf * rec.dt))
        if self.bound:
            self._prev = (s, rho_raw)
        i = self._i
        self._i += 1
        if rec is not None and rec.stalled:
            self.series.stalls.append(t)
        if i % self.stride:
            return
        if rec is not None:
            self.series.diagnostics.append(
                {"t": t, "min_eig": rec.min_eig, "max_eig": rec.max_eig, "residual": rec.residual, "trace": rec.trace}
            )
        tr = float(np.trace(rho_raw).real)
        rho = rho_raw / tr if tr > 0 else rho_raw
        sx, sz = observables(rho)
        row = {"t": t, "s_x": sx, "s_z": sz, "trace": tr, "purity": purity(rho)}
        if self.reference is not None:
            ref = self.reference[i]
            row["infidelity"] = 1 - fidelity(rho, ref)
            row["bures"] = bures_distance(rho, ref, self.bures_mode)
            row["l2"] = l2_distance(rho_raw, ref)
        if self.bound:
            row["ep_riemann"], row["ep_verbatim"] = self._ep
        self.series.append(row, s.alpha)

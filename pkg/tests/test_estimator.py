import itertools

import numpy as np
import pytest
from conftest import random_state

from lrqte.ansatz import AnsatzKind
from lrqte.eom import assemble
from lrqte.estimator import (
    TABLE1_CLASSES,
    EstimatorError,
    ExactEvaluator,
    Form,
    Primitive,
    ShotEvaluator,
    ShotPlan,
    ancilla_free_sample,
    count_circuits,
    estimate,
    hadamard_sample,
    table1_expression,
)
from lrqte.paulis import Lattice, PauliString, build_tfim, liouvillian_expand
from lrqte.statevector import sandwich

SIGMA = PauliString("XYZ")


def brute_count(kind, R, N, L):
    """Walk every M / V entry, list the primitives it uses and deduplicate symbolically.

    Keys are canonicalized by the symmetry that relates them: Hermitian
    families by ordering their index pairs, ansatz-I ``DerivU`` by
    ``w[p, q, k] = -conj(w[q, p, k])``. Identity-string factors reduce to
    overlaps (trivial for ansatz I).
    """
    kind = AnsatzKind.parse(kind)
    strings = [f"s{r}" for r in range(L)]
    blocks = {b: set() for b in ("M_aa", "M_at", "M_tt", "V_a", "V_t")}

    def ov(p, q):
        return ("O", min(p, q), max(p, q))

    def w(p, q, k):
        return ("w", min(p, q), max(p, q), k) if kind is AnsatzKind.I else ("w", p, q, k)

    def y(p, k, q, j):
        a, b = sorted([(p, k), (q, j)])
        return ("y", a, b)

    def s(sig, p, q):
        return ("s", sig, min(p, q), max(p, q))

    def t(sig, p, q, k):
        return ("t", sig, p, q, k)

    rng_R, rng_N = range(R), range(N)
    if kind is AnsatzKind.I:
        for k, j in itertools.product(rng_N, rng_N):
            for p in rng_R:
                blocks["M_tt"].add(y(p, k, p, j))
            for p, q in itertools.product(rng_R, rng_R):
                blocks["M_tt"] |= {w(p, q, k), w(q, p, j)}
    else:
        for p, q in itertools.product(rng_R, rng_R):
            blocks["M_aa"].add(ov(p, q))
            for j in rng_N:
                blocks["M_at"] |= {w(q, p, j), ov(q, p)}
        for (p, k), (q, j) in itertools.product(itertools.product(rng_R, rng_N), repeat=2):
            blocks["M_tt"] |= {ov(p, q), y(q, j, p, k), w(p, q, k), w(q, p, j)}
    for sig1, sig2 in itertools.product(strings, strings):
        for p, q in itertools.product(rng_R, rng_R):
            blocks["V_a"] |= {s(sig1, p, q), s(sig2, q, p)}
            for k in rng_N:
                blocks["V_t"] |= {t(sig1, p, q, k), s(sig2, q, p), t(sig2, p, q, k), s(sig1, q, p)}
    out = {b: len(v) for b, v in blocks.items()}
    m = blocks["M_aa"] | blocks["M_at"] | blocks["M_tt"]
    v = blocks["V_a"] | blocks["V_t"]
    out.update(M=len(m), V=len(v), total=len(m | v))
    return out


def test_shotplan_validation():
    with pytest.raises(ValueError):
        ShotPlan("hybrid", 0)
    with pytest.raises(ValueError):
        ShotPlan("magic", 10)


def test_bounded_check():
    rng = np.random.default_rng(0)
    with pytest.raises(EstimatorError):
        hadamard_sample(1.2 + 0j, 10, rng)
    with pytest.raises(EstimatorError):
        ancilla_free_sample(0.9 + 0.9j, 0.0, 1.0, 1.0, 10, rng)


def test_hadamard_zero_mean():
    rng = np.random.default_rng(1)
    shots = 400
    est = hadamard_sample(np.zeros(1000, complex), shots, rng)
    assert abs(est.real.mean()) <= 3 / np.sqrt(1000 * shots)
    assert abs(est.imag.mean()) <= 3 / np.sqrt(1000 * shots)


def test_hadamard_extremes_exact():
    rng = np.random.default_rng(1)
    est = hadamard_sample(np.array([1.0, -1.0, 1j]), 7, rng)
    assert est[0].real == 1 and est[1].real == -1 and est[2].imag == 1


def _prims(kind):
    p = [
        Primitive(Form.DERIV_DERIV, 0, k=1, j=4),
        Primitive(Form.DERIV_U, 0, 1, k=2),
        Primitive(Form.DERIV_U, 2, 2, k=3),
        Primitive(Form.U_SIGMA_U, 0, 2, sigma=SIGMA),
        Primitive(Form.U_SIGMA_U, 1, 1, sigma=SIGMA),
        Primitive(Form.DERIV_SIGMA_U, 2, 0, k=4, sigma=SIGMA),
    ]
    if kind == "II":
        p.append(Primitive(Form.DERIV_DERIV, 0, q=2, k=1, j=3))
    return p


@pytest.mark.parametrize("kind", ["I", "II"])
def test_exact_values_match_sandwich(rng, kind):
    s = random_state(rng, kind, 3, 1, 3)
    sw = s.sweep()
    psi = sw.final
    d = -0.5j * sw.inserted  # d psi_p / d theta_k, indexed [p, k]
    for pr in _prims(kind):
        q = pr.p if pr.q is None else pr.q
        if pr.form is Form.DERIV_DERIV:
            want = np.vdot(d[pr.p, pr.k], d[q, pr.j])
        elif pr.form is Form.DERIV_U:
            want = np.vdot(d[pr.p, pr.k], psi[q])
        elif pr.form is Form.U_SIGMA_U:
            want = sandwich(psi[pr.p], pr.sigma, psi[q])
        else:
            want = sandwich(d[pr.p, pr.k], pr.sigma, psi[q])
        assert abs(estimate(pr, s) - want) < 1e-12


@pytest.mark.parametrize("method", ["hadamard", "ancilla_free", "hybrid"])
def test_variance_scales_with_shots(rng, method):
    s = random_state(rng, "I", 3, 1, 3)
    pr = Primitive(Form.U_SIGMA_U, 0, 2, sigma=SIGMA)
    var = []
    for shots in (100, 400, 1600):
        est = estimate(pr, s, ShotPlan(method, shots, 0), np.random.default_rng(shots), size=2000)
        var.append(np.var(est.real) + np.var(est.imag))
    for a, b in zip(var, var[1:]):
        assert 2 <= a / b <= 8  # 4 within a factor of 2


def test_estimate_deterministic(rng):
    s = random_state(rng, "I", 3, 1, 3)
    pr = Primitive(Form.DERIV_SIGMA_U, 1, 0, k=2, sigma=SIGMA)
    plan = ShotPlan("hybrid", 100, 42)
    a, b = estimate(pr, s, plan, size=50), estimate(pr, s, plan, size=50)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, estimate(pr, s, ShotPlan("hybrid", 100, 43), size=50))


@pytest.mark.parametrize("kind", ["I", "II"])
def test_shot_backend_deterministic_and_close(rng, kind):
    s = random_state(rng, kind, 2, 1, 2)
    terms = liouvillian_expand(build_tfim(Lattice.chain(2), 1.0, 0.5, 1.0))
    plan = ShotPlan("hybrid", 10**6, 7)
    a = assemble(s, terms, ShotEvaluator(plan), step=3)
    b = assemble(s, terms, ShotEvaluator(plan), step=3)
    c = assemble(s, terms, ShotEvaluator(plan), step=4)
    ex = assemble(s, terms, ExactEvaluator())
    np.testing.assert_array_equal(a.M, b.M)
    np.testing.assert_array_equal(a.V, b.V)
    assert not np.array_equal(a.V, c.V)
    assert np.abs(a.M - ex.M).max() < 0.05
    assert np.abs(a.V - ex.V).max() < 0.05


def test_replica_streams_independent(rng):
    s = random_state(rng, "II", 2, 1, 2)
    prims = ShotEvaluator(ShotPlan("hybrid", 100, 0)).primitives(s, 0)
    a, b = prims.u_sigma_u(PauliString("XX")), prims.u_sigma_u(PauliString("XX"), replica=1)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, prims.u_sigma_u(PauliString("XX")))


def test_ansatz1_identity_primitives_exact(rng):
    s = random_state(rng, "I", 3, 1, 2)
    prims = ShotEvaluator(ShotPlan("hybrid", 10, 0)).primitives(s, 0)
    np.testing.assert_array_equal(prims.overlap(), np.eye(3))
    np.testing.assert_array_equal(prims.u_sigma_u(PauliString("II")), np.eye(3))


# -- cost model -----------------------------------------------------------------


def test_cost_ansatz1_alpha_blocks_zero():
    for R, N, L in itertools.product((1, 3), (2, 5), (1, 4)):
        c = count_circuits("I", R, N, L)
        assert c["M_aa"] == 0 and c["M_at"] == 0


def test_cost_smallest():
    c = count_circuits("I", 1, 1, 1)
    assert c["M_tt"] == 2 and c["V_a"] == 1


def test_cost_ansatz2_rank_one():
    c = count_circuits("II", 1, 6, 3)
    assert c["M_aa"] == 1 and c["M_at"] == 7
    assert TABLE1_CLASSES[AnsatzKind.II]["M_aa"].startswith("O(1)")


@pytest.mark.parametrize("kind", ["I", "II"])
def test_cost_matches_brute_small(kind):
    for R, N, L in itertools.product((1, 2, 3), (1, 2, 3), (1, 2)):
        assert count_circuits(kind, R, N, L) == brute_count(kind, R, N, L)


@pytest.mark.parametrize("kind", ["I", "II"])
def test_cost_monotone(kind):
    grid = list(itertools.product(range(1, 5), range(1, 8), range(1, 5)))
    tot = {g: count_circuits(kind, *g)["total"] for g in grid}
    for (R, N, L), v in tot.items():
        for d in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
            nxt = (R + d[0], N + d[1], L + d[2])
            if nxt in tot:
                assert tot[nxt] >= v


def test_cost_quadratic_in_parameters():
    for R in (1, 2, 4, 8):
        r = count_circuits("I", R, 4000, 1)["M"] / count_circuits("I", R, 2000, 1)["M"]
        assert abs(r - 4) < 0.01


def test_cost_rejects_nonpositive():
    with pytest.raises(ValueError):
        count_circuits("I", 0, 1, 1)


def test_table1_expression_positive():
    assert table1_expression("I", 2, 3, 1) == 1 * 4 * 3 + 2 * 9
    assert table1_expression("II", 2, 3, 1) == 4 + 2 * 6 + 36

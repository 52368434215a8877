"""Low-rank variational time evolution for Lindblad dynamics, with a dense reference integrator."""

__version__ = "0.1.0"

from .ansatz import AnsatzKind, LowRankState, density_matrix, hamming_basis, init_state, state_trace
from .config import RunConfig
from .eom import (
    DiagonalShift,
    EigenRescale,
    EigenTruncate,
    EOMSystem,
    assemble,
    assemble_ansatz1,
    assemble_ansatz2,
    euler_step,
    evolve,
    regularized_solve,
)
from .estimator import ExactEvaluator, Primitive, ShotEvaluator, ShotPlan, count_circuits, estimate
from .oracle import fidelity, integrate_exact, lindblad_rhs, observables, posterior_error_bound, purity
from .paulis import Lattice, LindbladModel, PauliString, PauliSum, build_tfim, liouvillian_expand, pauli_mul

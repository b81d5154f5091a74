"""Self-attention dynamics on products of unit spheres.

Simulation, equilibrium classification and Jacobian stability analysis for
the continuous-time self-attention ODE, the Oja flow and the multiagent Oja
flow.
"""

from attnflow.errors import (
    AttnflowError,
    CertificateUnavailable,
    ContractViolation,
    DegenerateState,
    GenerationFailure,
    NumericalFailure,
)
from attnflow.linalg import ValueSpectrum, symmetric_eigen
from attnflow.geometry import SphereConfiguration, sample_uniform_sphere
from attnflow.attention import ModelParams, attention_matrix, influence_vectors
from attnflow.dynamics import IntegrationOptions, Trajectory, integrate
from attnflow.stability import (
    AnalyticSpectrum,
    EquilibriumReport,
    bipartite_spectrum,
    bipartite_stability_test,
    classify_equilibrium,
    consensus_spectrum,
    jacobian_moja,
    jacobian_self,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticSpectrum",
    "AttnflowError",
    "CertificateUnavailable",
    "ContractViolation",
    "DegenerateState",
    "EquilibriumReport",
    "GenerationFailure",
    "IntegrationOptions",
    "ModelParams",
    "NumericalFailure",
    "SphereConfiguration",
    "Trajectory",
    "ValueSpectrum",
    "attention_matrix",
    "bipartite_spectrum",
    "bipartite_stability_test",
    "classify_equilibrium",
    "consensus_spectrum",
    "influence_vectors",
    "integrate",
    "jacobian_moja",
    "jacobian_self",
    "sample_uniform_sphere",
    "symmetric_eigen",
]

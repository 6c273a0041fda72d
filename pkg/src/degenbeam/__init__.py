"""Degenerate Euler-Bernoulli beam with delayed boundary feedback:
simulation, energy diagnostics and decay certificates."""

from .model import (
    AssumptionError,
    AxialForceProfile,
    CertificateConstants,
    Degeneracy,
    DelaySpec,
    GainSet,
    ModelConfig,
    RigidityProfile,
    certificate_constants,
    classify_degeneracy,
    reference_config,
    validate_assumptions,
)
from .spatial import assemble_forms, build_mesh
from .evolution import IntegratorConfig, assemble_closed_loop, simulate

__all__ = [
    "AssumptionError", "AxialForceProfile", "CertificateConstants", "Degeneracy", "DelaySpec",
    "GainSet", "ModelConfig", "RigidityProfile", "certificate_constants", "classify_degeneracy",
    "reference_config", "validate_assumptions", "assemble_forms", "build_mesh",
    "IntegratorConfig", "assemble_closed_loop", "simulate",
]

"""Robust distributed secondary control toolkit for networks of droop inverters.

Builds state-space models of DAPI-controlled inverter networks, synthesises
structured feedback gains and connective-strength bounds through an LMI
program solved by an embedded interior-point SDP solver, simulates load and
cyberattack scenarios on a reduced-order electrical network, and verifies
connective stability, invariant-ellipsoid containment and dissipativity.
"""

from .model import (
    CouplingSpec,
    DerParams,
    DerState,
    Disturbance,
    GainMatrix,
    ModelError,
    SystemMatrices,
    aggregate,
    build_der_matrices,
    build_uncertainty_blocks,
    check_bounds,
    make_coupling,
    with_couplings,
)

__version__ = "0.1.0"

__all__ = [
    "CouplingSpec", "DerParams", "DerState", "Disturbance", "GainMatrix",
    "ModelError", "SystemMatrices", "aggregate", "build_der_matrices",
    "build_uncertainty_blocks", "check_bounds", "make_coupling",
    "with_couplings", "__version__",
]

"""Chaos-matrix quantum stochastic calculus on a truncated, time-discretized Fock space."""
from .calculus import (
    FunctionSpec,
    QuadratureConfig,
    cmx_exp,
    duhamel_expansion,
    duhamel_integrands,
    duhamel_residual,
    ito_functional_residual,
    series_integrands,
    stratonovich_residual,
)
from .cmx import ChaosMatrix, ampliate, block_norms, control_matrix
from .fock import CapacityError, FockSpace, fock_space
from .processes import CmxProcess, Quadruple, scenario, scenario_names
from .qsi import ProbeFamily, integral_past, ito_product_residual, power_quadruple, qs_integral

__version__ = "0.1.0"

__all__ = [
    "FunctionSpec",
    "QuadratureConfig",
    "cmx_exp",
    "duhamel_expansion",
    "duhamel_integrands",
    "duhamel_residual",
    "ito_functional_residual",
    "series_integrands",
    "stratonovich_residual",
    "ChaosMatrix",
    "ampliate",
    "block_norms",
    "control_matrix",
    "CapacityError",
    "FockSpace",
    "fock_space",
    "CmxProcess",
    "Quadruple",
    "scenario",
    "scenario_names",
    "ProbeFamily",
    "integral_past",
    "ito_product_residual",
    "power_quadruple",
    "qs_integral",
]

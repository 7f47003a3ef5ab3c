"""Time-fractional phase-field solvers with fast Caputo history and coarsening-exponent fits."""
__version__ = "0.1.0"

from .caputo import CaputoState, SoeKernel, build_soe, fast_caputo, l1_caputo, soe_eval
from .models import ModelKind, ModelSpec, Mobility, SimState, initial_field, start, step
from .observables import PowerLawRegressor, TimeSeries, fit_power_law, mass, roughness
from .spectral import Field, Grid

__all__ = [
    "CaputoState",
    "SoeKernel",
    "build_soe",
    "fast_caputo",
    "l1_caputo",
    "soe_eval",
    "ModelKind",
    "ModelSpec",
    "Mobility",
    "SimState",
    "initial_field",
    "start",
    "step",
    "PowerLawRegressor",
    "TimeSeries",
    "fit_power_law",
    "mass",
    "roughness",
    "Field",
    "Grid",
]

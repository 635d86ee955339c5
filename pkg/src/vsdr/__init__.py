"""Dynamic models of a droop-controlled variable-speed refrigerator on a low-inertia grid."""
from .params import (INPUT_NAMES, STATE_NAMES, FullState, InputVector, ModelParameters,
                     ParameterError, default_inputs, dump_parameters, load_parameters)
from .simulation import (OUTPUT_NAMES, EquilibriumError, IntegrationError, OperatingPoint,
                         Scenario, Trajectory, assemble_derivative, find_equilibrium, integrate)
from .smallsignal import (LinearModel, ModalAnalysis, eigenanalysis, linearize,
                          parameter_sensitivity, stability_map)
from .reduction import (TransferFunctionModel, assemble_reduced_closed_loop, fit_transfer_function,
                        generate_step_battery, reference_models, rmse_metrics, tf_to_state_space)

__version__ = "0.1.0"

__all__ = [
    "INPUT_NAMES", "STATE_NAMES", "OUTPUT_NAMES", "FullState", "InputVector", "ModelParameters",
    "ParameterError", "default_inputs", "dump_parameters", "load_parameters",
    "EquilibriumError", "IntegrationError", "OperatingPoint", "Scenario", "Trajectory",
    "assemble_derivative", "find_equilibrium", "integrate",
    "LinearModel", "ModalAnalysis", "eigenanalysis", "linearize", "parameter_sensitivity",
    "stability_map", "TransferFunctionModel", "assemble_reduced_closed_loop",
    "fit_transfer_function", "generate_step_battery", "reference_models", "rmse_metrics",
    "tf_to_state_space",
]

"""Operator-learning lab for traffic state estimation from probe vehicles.

Subpackages: autodiff (tensor core), godunov (LWR solver), idm
(car-following microsim), pipeline (training-sample assembly and
dataset io), model (the attention branch/trunk operator network with
uncertainty outputs), training, evaluation, generate, cli.
"""

from .autodiff import Tensor, gradient_check
from .godunov import BoundarySchedule, Grid, godunov_flux, solve
from .idm import IDMParams, VehicleState, idm_acceleration, simulate
from .model import ModelConfig, PredictionField, init_params, predict
from .pipeline import Dataset, InputSet, Scenario, TrainingSample
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "gradient_check",
    "BoundarySchedule", "Grid", "godunov_flux", "solve",
    "IDMParams", "VehicleState", "idm_acceleration", "simulate",
    "ModelConfig", "PredictionField", "init_params", "predict",
    "Dataset", "InputSet", "Scenario", "TrainingSample",
    "TrainConfig", "TrainReport", "train",
    "__version__",
]

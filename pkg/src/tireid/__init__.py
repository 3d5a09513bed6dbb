"""Iterative Magic Formula tire identification with a learned residual corrector.

Modules: ``dynamics`` (single-track model, tire curve), ``plant`` (synthetic
ground-truth vehicle), ``vision`` (friction prior), ``ssm`` and ``residual``
(sequence-model corrector), ``optimize`` (Nelder-Mead), ``identify`` (outer
loop) and ``cli``.
"""

from .dynamics import AxlePacejka, TireParams, VehicleParams, VehicleState, pacejka_normalized
from .errors import (ConfigError, ContractError, DomainError, InstabilityError, StageError,
                     TireIdError, TrainingError)
from .identify import IdentifyReport, OuterConfig, SweepConfig, fit_axle, identify_iterative
from .optimize import NmOptions, nelder_mead
from .plant import PlantConfig, TelemetryLog, collect_telemetry
from .residual import TrainConfig
from .vision import FrictionBasis, FrictionPrior, expected_friction, warm_start_D

__version__ = "0.1.0"

"""mcvd: channel modeling toolkit for molecular communication via diffusion.

Simulates first-hitting reception between a reflecting spherical transmitter
and an absorbing spherical receiver, fits closed-form channel models to the
simulated received signal, and trains a small network to predict the model
coefficients directly from system parameters.
"""
from .analysis import RmseGroup, evaluate_vds, export_curves, rmse, spearman
from .channel import (
    erfc,
    model_hit_fraction,
    point_hit_fraction,
    sample_model,
    sample_point_formula,
    sir_curve,
)
from .fitting import FitProblem, FitResult, default_problem, fit, jacobian_check
from .network import CaseRecord, Network, TrainReport, forward, gradient_check, train
from .pipeline import (
    ParameterGrid,
    RunManifest,
    predict_vds,
    reduced_grids,
    run_phase1,
    run_phase2,
    study_grids,
)
from .simulate import Geometry, SimConfig, build_geometry, simulate_batch, simulate_case, step_molecule
from .types import (
    MissingArtifactError,
    ModelKind,
    ModelParams,
    NumericError,
    Provenance,
    ReceivedSignal,
    Source,
    SystemParams,
    TimeGrid,
    ValidationError,
)

__version__ = "0.1.0"

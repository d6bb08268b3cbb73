"""Linearised electrical impedance tomography on a 2-D tank with 32 electrodes.

Modules: ``mesh`` (disk meshes), ``levels`` (injection patterns and level
configurations), ``cem`` (complete electrode model solver), ``jacobian``,
``priors``, ``recon`` (regularised reconstruction and segmentation),
``interp`` (mesh/pixel transfer), ``sim`` (phantoms and datasets), ``eval``
(SSIM scoring) and ``cli``.
"""

from .cem import (CEMModel, MeasurementVector, apply_measurement_operator, assemble_system,
                  fit_background_conductivity, simulate_measurements, solve_forward)
from .errors import (ConfigError, DimensionError, EITError, FitError, GenerationError,
                     IllConditionedError, MeshError, NumericalError, ParseError, ScoringError)
from .eval import ScoreReport, SSIMConfig, score_run, score_segmentation, ssim
from .interp import MeshPixelInterpolator, mesh_to_pixel, pixel_to_mesh
from .jacobian import (compute_jacobian_direct, compute_jacobian_fast, compute_jacobian_fd,
                       load_jacobian, reduce_jacobian, save_jacobian)
from .levels import CurrentPatternSet, LevelConfig, challenge_patterns, level_config
from .mesh import DiskMeshSpec, TriMesh, build_disk_mesh, load_mesh, save_mesh
from .priors import build_fsm, build_lm, build_sm
from .recon import (NoiseModel, Priors, Reconstructor, RegWeights, build_ensemble,
                    build_noise_model, load_weights_config, reconstruct, reconstruct_ensemble,
                    segment)
from .sim import Phantom, PhantomSpec, add_noise, generate_dataset, generate_phantom

__version__ = "0.1.0"

__all__ = [
    "CEMModel",
    "MeasurementVector",
    "apply_measurement_operator",
    "assemble_system",
    "fit_background_conductivity",
    "simulate_measurements",
    "solve_forward",
    "ConfigError",
    "DimensionError",
    "EITError",
    "FitError",
    "GenerationError",
    "IllConditionedError",
    "MeshError",
    "NumericalError",
    "ParseError",
    "ScoringError",
    "ScoreReport",
    "SSIMConfig",
    "score_run",
    "score_segmentation",
    "ssim",
    "MeshPixelInterpolator",
    "mesh_to_pixel",
    "pixel_to_mesh",
    "compute_jacobian_direct",
    "compute_jacobian_fast",
    "compute_jacobian_fd",
    "load_jacobian",
    "reduce_jacobian",
    "save_jacobian",
    "CurrentPatternSet",
    "LevelConfig",
    "challenge_patterns",
    "level_config",
    "DiskMeshSpec",
    "TriMesh",
    "build_disk_mesh",
    "load_mesh",
    "save_mesh",
    "build_fsm",
    "build_lm",
    "build_sm",
    "NoiseModel",
    "Priors",
    "Reconstructor",
    "RegWeights",
    "build_ensemble",
    "build_noise_model",
    "load_weights_config",
    "reconstruct",
    "reconstruct_ensemble",
    "segment",
    "Phantom",
    "PhantomSpec",
    "add_noise",
    "generate_dataset",
    "generate_phantom",
]

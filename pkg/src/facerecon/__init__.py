"""Occlusion-robust detailed 3D face reconstruction from a single image.

Two stages: (1) occlusion masking and image completion, (2) morphable-model
fitting with spherical-harmonics shading plus bump-map depth detail.
"""

from .bump import BumpCodec, BumpMap, apply_bump, compute_bump, depth_to_mesh, extrapolate_bump
from .camera import CameraPose, project, project_landmarks, rotation_from_euler, transform_points
from .fitting import FitConfig, ReconstructionState, fit_landmarks, fit_photometric, solve_illumination
from .illumination import SHCoefficients, sh_basis, shade
from .losses import (FeatureExtractor, LossWeights, finite_difference_check,
                     geo_loss, gram, lmk_loss, pixel_loss, style_loss, synthesis_loss)
from .morphable import (CoefficientVector, Mesh, ModelFormatError, MorphableModel,
                        evaluate_expression, evaluate_geometry, evaluate_shape,
                        landmark_positions, load_model, save_model, vertex_normals)
from .occlusion import complete_baseline, compute_occlusion_mask, hollow_out, load_external_completion
from .pipeline import ConfigError, RunConfig, StageError, run_all, run_stage1, run_stage2
from .rasterizer import DepthMap, RasterOutput, coverage_mask, rasterize

__version__ = "0.1.0"

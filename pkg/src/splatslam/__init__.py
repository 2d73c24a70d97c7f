"""Multi-channel differentiable Gaussian splatting and dense RGB-D SLAM.

A CPU engine for scenes of isotropic Gaussians carrying appearance and
semantic color: forward rendering of color / depth / semantic / silhouette
channels with an exact analytic backward pass, and on top of it a tracking +
keyframing + mapping pipeline with label-driven scene editing.
"""

__version__ = "0.1.0"

from .camera import CameraPose, Intrinsics, splat_point  # noqa: F401
from .config import PipelineConfig, load_config  # noqa: F401
from .dataset import Frame, generate_synthetic, load_sequence  # noqa: F401
from .rasterizer import GradientSet, RenderOutput, backward, render  # noqa: F401
from .scene import GaussianMap, SemanticPalette, load_map, save_map  # noqa: F401

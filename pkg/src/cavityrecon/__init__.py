"""Watertight surface reconstruction of cavities from posed, uncertain depth
maps, with phantom ground truth and evaluation metrics."""

from .depth import DepthFrame, SparsePointCloud, apply_scale, nll_score, recover_scale
from .errors import DataError, NumericalError, ReconError
from .evaluation import (
    CrossSection,
    DistanceStats,
    RegistrationConfig,
    cross_section,
    cross_section_series,
    point_to_mesh,
    register_sim3,
)
from .fusion import FusionConfig, TsdfVolume, fuse_sequence, integrate_frame
from .geometry import CameraIntrinsics, RigidPose, SimilarityTransform, project, unproject
from .matching import AnalyticDescriptor, DescriptorMap, compute_response, match_subpixel
from .mesh import TriangleMesh, WatertightReport, check_watertight
from .phantom import PhantomSpec, RenderConfig, generate_phantom, generate_trajectory, render_depth, sample_sparse
from .surface import marching_cubes

__version__ = "0.1.0"

"""Multi-view clothed avatar reconstruction.

Joint multi-view body fitting over silhouettes, normal maps, landmarks, and an
upright-head regularizer; front/back normal-map integration anchored to the
fitted body; watertight fusion; and a mesh evaluation metric suite -- exercised
end to end on self-generated synthetic scenes.
"""

from .body import BodyModel, BodyParams, average_params, head_pitch_vector, joints3d, skin
from .camera import Camera, load_cameras, project, relative_rotation, save_cameras, unproject
from .fitting import FitConfig, FitResult, ViewObservation, optimize, total_loss
from .fusion import FuseConfig, OrientedPointCloud, assemble_cloud, fuse, is_closed
from .humanoid import default_model, pose_params
from .integration import IntegrationConfig, IntegrationProblem, harmonize_masks, integrate
from .mesh import SurfaceSample, SurfaceSamples, TriMesh, closest_point, sample_surface
from .mesh_io import load_mesh, save_mesh
from .metrics import (
    MetricConfig,
    MetricReport,
    chamfer,
    evaluate_pair,
    normal_consistency,
    p2s_accuracy,
    p2s_completeness,
)
from .normal_maps import ClothedNormalMap, OracleNormalProvider, oracle_normals, rotate_normal_map
from .pipeline import PipelineConfig, RunManifest, compare_runs, run_pipeline
from .raster import DepthField, RasterMaps, depth_to_mesh, rasterize
from .rotations import Rotation
from .synth import SyntheticScene, load_scene, make_clothed, make_scene, place_cameras, save_scene

__version__ = "0.1.0"

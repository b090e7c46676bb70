"""Jacobian-determinant and curl features via the deformation method, with MRI preprocessing
and segmentation metrics."""

__version__ = "0.1.0"

from .deformation import DeformationConfig, MonitorSpec, deform, generate_grid, monitor_from_image
from .features import ChannelStack, assemble_stack, crop_subvolumes, extract_jd_cv
from .field_core import DiffeoMap, LabelVolume, LatticeGeometry, ScalarField, VectorField, read_volume, write_volume
from .metrics import evaluate
from .recovery import RecoveryProblem, recover, synthesize_t0

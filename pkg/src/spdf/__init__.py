"""Saliency-based point-cloud density filtering for ICP registration."""

from .core import (
    DegenerateGeometryError,
    EmptyInputError,
    InsufficientPointsError,
    Label,
    PointCloud,
    RigidTransform,
    SpatialIndex,
)
from .density import DensityParams, expected_kernel_strength, expected_saliencies
from .pipeline import SpdfConfig, run_spdf, spdf, uniformize, label_and_reject
from .registration import IcpConfig, PerturbationSpec, icp, perturb, registration_errors
from .voting import VoteConfig, first_pass, second_pass

__version__ = "0.1.0"

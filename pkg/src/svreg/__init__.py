"""Rigid point-set registration with support-vector-parametrised Gaussian mixtures."""

from .ocsvm import SvmModel, train
from .pointset import PerturbationSpec, PointSet, RigidTransform, estimate_scale, perturb
from .registration import RegistrationConfig, RegistrationResult, svr
from .svgm import Svgm, gmmerge, svm_to_gmm

__all__ = [
    "PerturbationSpec",
    "PointSet",
    "RegistrationConfig",
    "RegistrationResult",
    "RigidTransform",
    "Svgm",
    "SvmModel",
    "estimate_scale",
    "gmmerge",
    "perturb",
    "svm_to_gmm",
    "svr",
    "train",
]

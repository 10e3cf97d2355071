"""Desk-scale diffusion guidance laboratory.

DDPM forward/reverse diffusion on synthetic labeled manifolds, ADM-G and
GeoGuide classifier guidance, and an experiment harness for the geometric
diagnostics (constant-norm guidance, manifold-distance law, cut-off
behavior, quality/diversity trade-off).
"""

from .schedule import NoiseSchedule, build_linear_beta, build_linear_alphabar, respace
from .data import ManifoldDescriptor, LabeledDataset, eight_gaussians, generate
from .guidance import GuidanceRule
from .sampler import sample

__all__ = [
    "NoiseSchedule", "build_linear_beta", "build_linear_alphabar", "respace",
    "ManifoldDescriptor", "LabeledDataset", "eight_gaussians", "generate",
    "GuidanceRule", "sample",
]

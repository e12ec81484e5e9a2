"""Low-rank latent subspaces of differentiable toy generators.

Robust PCA splits a region's Jacobian Gram into low-rank attribute structure
and sparse residue; null-space projection turns attribute directions into
edits that leave a second region alone.
"""

from .errors import (
    AmbiguousDirectionError,
    DivergenceError,
    FormatError,
    LorankError,
    NumericalError,
    VanishingDirectionError,
)
from .estimators import AttributeSubspace, NullSpaceProjector, RobustPCA
from .genzoo import Generator, Layer, default_zoo, forward, jacobian, make_blocky, make_linear, make_mlp
from .rpca import PcpConfig, PcpSolution, pcp
from .subspace import AttributeBasis, ProjectionSpec, RegionMask, local_direction, null_project, region_basis

__version__ = "0.1.0"

__all__ = [
    "AmbiguousDirectionError", "DivergenceError", "FormatError", "LorankError", "NumericalError",
    "VanishingDirectionError", "AttributeSubspace", "NullSpaceProjector", "RobustPCA", "Generator", "Layer",
    "default_zoo", "forward", "jacobian", "make_blocky", "make_linear", "make_mlp", "PcpConfig", "PcpSolution",
    "pcp", "AttributeBasis", "ProjectionSpec", "RegionMask", "local_direction", "null_project", "region_basis",
]

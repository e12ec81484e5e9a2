"""Region Gram matrices, attribute bases and null-space projection.

The pipeline for one region is: restrict the generator Jacobian to the
region's output rows, form the Gram ``J_r^T J_r``, split it with PCP, and take
the right singular vectors of the low-rank part.  The leading ``rank``
vectors are attribute directions; the rest span the region's null space.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguousDirectionError, FormatError, VanishingDirectionError
from .genzoo import forward, jacobian
from .numkernel import as_matrix, format_matrix, format_real, parse_matrix, svd
from .rpca import pcp

RANK_TOL = 1e-6
AMBIGUITY_TOL = 1e-10
VANISHING_TOL = 1e-10
RELAX_PRESETS = {"none": 0, "faces": 8, "small-mask": 20}


@dataclass(frozen=True)
class RegionMask:
    """Strictly increasing output indices."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in np.asarray(self.indices).reshape(-1))
        if not idx:
            raise ValueError("region mask must be nonempty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("region indices must be strictly increasing")
        if idx[0] < 0:
            raise ValueError("region indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @property
    def array(self):
        return np.array(self.indices, dtype=int)

    def check(self, size):
        if self.indices[-1] >= size:
            raise ValueError("region index %d out of range for %d outputs" % (self.indices[-1], size))
        return self

    def complement(self, size):
        keep = np.ones(size, dtype=bool)
        keep[self.check(size).array] = False
        return RegionMask(np.flatnonzero(keep))

    @classmethod
    def from_rect(cls, grid, x0, y0, x1, y1):
        """Pixels with ``x0 <= col < x1`` and ``y0 <= row < y1``.

        On a 4x4 grid, ``(1, 0, 3, 2)`` selects indices 1, 2, 5, 6.
        """
        if not (0 <= x0 < x1 <= grid and 0 <= y0 < y1 <= grid):
            raise ValueError("empty or out-of-range rectangle %s on a %dx%d grid" % ((x0, y0, x1, y1), grid, grid))
        return cls([r * grid + c for r in range(y0, y1) for c in range(x0, x1)])


def as_region(region, size=None):
    mask = region if isinstance(region, RegionMask) else RegionMask(region)
    return mask.check(size) if size is not None else mask


@dataclass(frozen=True, eq=False)
class AttributeBasis:
    v: np.ndarray
    sigma: np.ndarray
    rank: int
    region: RegionMask = None
    solution: object = field(default=None, repr=False)

    @property
    def attributes(self):
        return self.v[:, : self.rank]

    @property
    def null_space(self):
        return self.v[:, self.rank :]


@dataclass(frozen=True)
class ProjectionSpec:
    basis_b: AttributeBasis
    r_relax: int = 0

    def __post_init__(self):
        if not 0 <= self.r_relax <= self.basis_b.rank:
            raise ValueError("r_relax must lie in [0, %d], got %d" % (self.basis_b.rank, self.r_relax))

    @property
    def constrained(self):
        """Columns ``B1`` whose span is projected out."""
        return self.basis_b.v[:, : self.basis_b.rank - self.r_relax]


@dataclass(frozen=True, eq=False)
class EditRequest:
    z: np.ndarray
    direction: np.ndarray
    alpha: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(-1)
        if abs(np.linalg.norm(d) - 1.0) > 1e-10:
            raise ValueError("edit direction must have unit norm")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))


def region_gram(j, region):
    j = as_matrix(j, "jacobian")
    rows = j[as_region(region, j.shape[0]).array]
    return rows.T @ rows


def principal_direction(gram):
    """Unit eigenvector of the largest eigenvalue of a PSD Gram matrix."""
    r = svd(gram)
    top = r.sigma[0]
    second = r.sigma[1] if len(r.sigma) > 1 else 0.0
    if top == 0.0 or top - second <= AMBIGUITY_TOL * top:
        raise AmbiguousDirectionError(
            "top eigenvalue is degenerate (%.17g vs %.17g); the principal direction is not unique" % (top, second)
        )
    return r.v[:, 0].copy()


def attribute_basis(gram, pcp_config=None, rank_tol=RANK_TOL, region=None):
    """PCP-split ``gram``, then SVD the symmetrized low-rank part."""
    gram = as_matrix(gram, "gram")
    sol = pcp(gram, pcp_config)
    low = 0.5 * (sol.l + sol.l.T)
    r = svd(low)
    # Singular values below the solver's feasibility accuracy are noise.
    floor = sol.final_residual * np.linalg.norm(gram)
    cut = max(rank_tol * r.sigma[0], floor)
    rank = 0 if r.sigma[0] <= floor else int(np.count_nonzero(r.sigma > cut))
    return AttributeBasis(v=r.v, sigma=r.sigma, rank=rank, region=region, solution=sol)


def region_basis(j, region, pcp_config=None, rank_tol=RANK_TOL):
    region = as_region(region, np.shape(j)[0])
    return attribute_basis(region_gram(j, region), pcp_config, rank_tol, region=region)


def projection_residual(v, spec):
    """Unnormalized ``(I - B1 B1^T) v``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    b1 = spec.constrained
    return v - b1 @ (b1.T @ v)


def null_project(v, spec):
    """Remove from ``v`` its component in region B's retained attribute span."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("direction to project must have unit norm")
    p = projection_residual(v, spec)
    norm = np.linalg.norm(p)
    if norm <= VANISHING_TOL:
        raise VanishingDirectionError(norm)
    return p / norm


def edit(g, req):
    return forward(g, req.z + req.alpha * req.direction)


def local_direction(g, z, mask_a, mask_b=None, index=0, r_relax=0, pcp_config=None, rank_tol=RANK_TOL, project=True):
    """Attribute ``index`` of region A, null-projected against region B.

    Region B defaults to the complement of A.  Returns ``(direction, basis_a,
    basis_b)``; ``basis_b`` is ``None`` when ``project`` is false.
    """
    j = jacobian(g, z)
    mask_a = as_region(mask_a, g.d_x)
    mask_b = mask_a.complement(g.d_x) if mask_b is None else as_region(mask_b, g.d_x)
    basis_a = region_basis(j, mask_a, pcp_config, rank_tol)
    if not 0 <= index < max(basis_a.rank, 1):
        raise IndexError("attribute index %d outside [0, %d)" % (index, basis_a.rank))
    v = basis_a.v[:, index].copy()
    if not project:
        return v, basis_a, None
    basis_b = region_basis(j, mask_b, pcp_config, rank_tol)
    spec = ProjectionSpec(basis_b, min(r_relax, basis_b.rank))
    return null_project(v, spec), basis_a, basis_b


# -- text format -------------------------------------------------------------


def dumps_basis(basis):
    """v as a matrix block, one line of singular values, then ``rank idx...``."""
    lines = [format_matrix(basis.v).rstrip("\n")]
    lines.append(" ".join(format_real(s) for s in basis.sigma))
    region = basis.region.indices if basis.region is not None else ()
    lines.append(" ".join(str(x) for x in (basis.rank,) + tuple(region)))
    return "\n".join(lines) + "\n"


def loads_basis(text):
    lines = text.splitlines()
    v, pos = parse_matrix(lines, 0, what="basis")
    if pos >= len(lines):
        raise FormatError("missing singular value line", line=pos + 1)
    try:
        sigma = np.array([float(t) for t in lines[pos].split()])
    except ValueError as exc:
        raise FormatError("singular values: %s" % exc, line=pos + 1)
    if sigma.shape != (v.shape[1],):
        raise FormatError("expected %d singular values" % v.shape[1], line=pos + 1)
    if pos + 1 >= len(lines):
        raise FormatError("missing rank/region line", line=pos + 2)
    try:
        fields = [int(t) for t in lines[pos + 1].split()]
    except ValueError as exc:
        raise FormatError("rank/region: %s" % exc, line=pos + 2)
    if not fields or not 0 <= fields[0] <= v.shape[1]:
        raise FormatError("rank must lie in [0, %d]" % v.shape[1], line=pos + 2)
    if any(line.strip() for line in lines[pos + 2 :]):
        raise FormatError("trailing content after basis", line=pos + 3)
    try:
        region = RegionMask(fields[1:]) if len(fields) > 1 else None
    except ValueError as exc:
        raise FormatError(str(exc), line=pos + 2)
    return AttributeBasis(v=v, sigma=sigma, rank=fields[0], region=region)

"""Example domains and canonical test fields.

Each generator grids a bounding box and carves the domain out of it by the
defining inequalities.  The slit is one-dimensional, so on a grid it is
realized by deleting every point within h/2 of the segment; this is what
disconnects the neighbor relation across the slit while leaving the ambient
metric untouched, which is exactly the obstruction the examples probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from sobext.errors import ResolutionError
from sobext.space import (EUCLIDEAN, Field, Space, SubsetMask,
                          build_grid_space)

KINDS = ("disk", "slit_disk", "outward_cusp", "two_squares", "half_plane",
         "jordan_polygon")

_SQRT2 = math.sqrt(2.0)


@dataclass
class DomainSpec:
    """Recipe for a gridded example domain."""
    kind: str
    h: float
    params: dict = dc_field(default_factory=dict)
    metric_kind: str = EUCLIDEAN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.h <= 0:
            raise ValueError("h must be positive")


def _seg_distance(pts, a, b):
    """Distance from each point to the segment [a, b]."""
    a = np.asarray(a, dtype=np.float64)
    ab = np.asarray(b, dtype=np.float64) - a
    t = ((pts - a) @ ab) / (ab @ ab)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def _point_in_polygon(pts, verts):
    """Even-odd ray casting; boundary points count as outside."""
    inside = np.zeros(len(pts), dtype=bool)
    x, y = pts[:, 0], pts[:, 1]
    nv = len(verts)
    j = nv - 1
    for i in range(nv):
        xi, yi = verts[i]
        xj, yj = verts[j]
        crosses = ((yi > y) != (yj > y))
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xint)
        j = i
    return inside


def default_bbox(kind: str, params: dict):
    if kind in ("disk", "slit_disk", "two_squares", "half_plane"):
        return ((-1.0, 1.0), (-1.0, 1.0))
    if kind == "outward_cusp":
        return ((0.0, 2.0 + _SQRT2), (-_SQRT2, _SQRT2))
    if kind == "jordan_polygon":
        verts = np.asarray(params["vertices"], dtype=np.float64)
        lo = verts.min(axis=0) - 0.25
        hi = verts.max(axis=0) + 0.25
        return tuple((float(a), float(b)) for a, b in zip(lo, hi))
    raise ValueError(kind)


def gen_domain(spec: DomainSpec):
    """Grid the bounding box and return (Space, Omega)."""
    bbox = spec.params.get("bbox", default_bbox(spec.kind, spec.params))
    space = build_grid_space(bbox, spec.h, metric_kind=spec.metric_kind,
                             scale_unit=spec.params.get("scale_unit", 1.0))
    pts = space.points
    x, y = pts[:, 0], pts[:, 1]
    h = spec.h
    if spec.kind == "disk":
        member = x * x + y * y < 1.0
    elif spec.kind == "slit_disk":
        member = x * x + y * y < 1.0
        # delete the slit [0,1] x {0}: every point within h/2 of the segment
        dslit = _seg_distance(pts, (0.0, 0.0), (1.0, 0.0))
        member &= dslit > h / 2
    elif spec.kind == "two_squares":
        in_sq1 = (x >= -0.5) & (x <= 0.0) & (y >= -0.5) & (y <= 0.0)
        in_sq2 = (x >= 0.0) & (x <= 0.5) & (y >= 0.0) & (y <= 0.5)
        member = ~(in_sq1 | in_sq2)
    elif spec.kind == "half_plane":
        member = y < 0.0
    elif spec.kind == "outward_cusp":
        in_ball = (x - 2.0) ** 2 + y ** 2 < 2.0
        in_cusp = (x > 0.0) & (x <= 1.0) & (np.abs(y) <= x * x)
        member = in_ball | in_cusp
    elif spec.kind == "jordan_polygon":
        member = _point_in_polygon(pts, np.asarray(spec.params["vertices"]))
    else:  # pragma: no cover
        raise ValueError(spec.kind)
    if member.sum() < 10:
        raise ResolutionError(
            f"{spec.kind} at h={h} resolves to only {int(member.sum())} points")
    return space, SubsetMask(space, member)


# -- test fields ----------------------------------------------------------------


def gen_test_field(name: str, space: Space, omega: SubsetMask) -> Field:
    """Canonical scalar fields on a generated domain.

    Names: "constant:c", "linear:x|y|z", "radial", "radial_smooth",
    "random-smooth:<seed>", "slit_jump", "vertex_jump".
    """
    pts = space.points
    vals = np.zeros(space.n)
    if name.startswith("constant:"):
        vals[:] = float(name.split(":", 1)[1])
    elif name.startswith("linear:"):
        axis = {"x": 0, "y": 1, "z": 2}[name.split(":", 1)[1]]
        if axis >= space.dim:
            raise ValueError(f"{name} needs dimension > {axis}")
        vals = pts[:, axis].copy()
    elif name == "radial":
        vals = np.linalg.norm(pts, axis=1)
    elif name == "radial_smooth":
        vals = np.exp(-2.0 * (pts ** 2).sum(axis=1))
    elif name.startswith("random-smooth"):
        seed = int(name.split(":", 1)[1]) if ":" in name else 0
        vals = _random_smooth(space, seed)
    elif name == "slit_jump":
        vals = _slit_jump(pts)
    elif name == "vertex_jump":
        vals = _vertex_jump(pts)
    else:
        raise ValueError(f"unknown test field {name!r}")
    out = np.where(omega.member, vals, 0.0)
    return Field(space, out, omega)


def _slit_jump(pts):
    """Jump field for the slit disk: 1 above the slit for x > 1/4, 0 below,
    ramped along 0 < x < 1/4 so the two sides agree (at value 1/2) around
    the slit tip.  Its gradient lives in the strip {0 < x < 1/4} only, so
    the discrete upper gradient is bounded by 2 independently of h, while
    the jump across the deleted slit is invisible to the neighbor relation.
    """
    x, y = pts[:, 0], pts[:, 1]
    ramp = np.clip(4.0 * x, 0.0, 1.0)
    return 0.5 + 0.5 * np.sign(y) * ramp


def _vertex_jump(pts):
    """Two-squares variant: 1 on the quadrant strip {x<0<y}, 0 on {y<0<x},
    with angular ramps across the first and third quadrants.  The removed
    squares shield the ramps from the pinch at the origin, so the discrete
    upper gradient stays bounded (about 4/pi) while the field jumps across
    the vertex.
    """
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    k = np.empty(len(pts))
    # phi in [pi/2, pi]: +1 ; [-pi/2, 0]: -1 ; ramps in between
    k[:] = np.nan
    q2 = (phi >= math.pi / 2)
    q4 = (phi <= 0.0) & (phi >= -math.pi / 2)
    ramp1 = (phi > 0.0) & (phi < math.pi / 2)            # Q1 frame
    ramp3 = (phi < -math.pi / 2)                          # Q3 frame
    k[q2] = 1.0
    k[q4] = -1.0
    k[ramp1] = -1.0 + (4.0 / math.pi) * phi[ramp1]
    k[ramp3] = 1.0 - (4.0 / math.pi) * (phi[ramp3] + math.pi)
    return 0.5 + 0.5 * k


def _random_smooth(space: Space, seed: int):
    """Seeded Gaussian-smoothed noise on the grid, sup-normalized."""
    if space.grid is None:
        raise ValueError("random-smooth fields need a grid space")
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(space.grid.shape)
    sigma_phys = 0.15
    smooth = gaussian_filter(noise, sigma=sigma_phys / space.grid.h,
                             mode="nearest")
    smooth /= np.abs(smooth).max()
    return smooth.ravel()


def geometric_coordinate_field(base: Field, N: int):
    """Vector field with coordinates 2^{-(i-1)} * f, i = 1..N (sup norm).

    Dropping coordinates beyond k leaves a tail dominated by the first
    dropped one, so ||u - T_k u|| = 2^{-k} ||f|| exactly.
    """
    from sobext.space import VecField
    vals = np.stack([base.values * (0.5 ** i) for i in range(N)], axis=1)
    return VecField(base.space, vals, base.defined_on, norm_tag="sup")

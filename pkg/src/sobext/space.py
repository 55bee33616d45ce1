"""Finite weighted metric measure spaces and their basic operators.

A `Space` is a finite set of points in R^d (d <= 3) with strictly positive
weights mu(z) and a metric that is either the ambient Euclidean one or the
shortest-path metric of a supplied neighbor relation.  Continuum integrals
become weighted sums, balls are open, and suprema over radii run over the
finitely many realized radii, so every operator here is exact on the
discrete space.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from sobext import _kernels
from sobext.errors import ResolutionError

EUCLIDEAN = "euclidean"
GRAPH = "graph"

#: hard cap on grid sizes produced by build_grid_space
DEFAULT_POINT_BUDGET = 4_000_000

#: all-pairs shortest paths are precomputed up to this size, on-demand beyond
GRAPH_DENSE_LIMIT = 5000


@dataclass
class GridInfo:
    """Lattice metadata for spaces built from uniform grids."""
    lo: np.ndarray          # (d,) lower corner of the bounding box
    h: float                # spacing
    shape: tuple            # points per axis

    def index_of(self, multi):
        return int(np.ravel_multi_index(multi, self.shape))


class Space:
    """Finite metric measure space (Z, d, mu).

    Parameters
    ----------
    points : (n, d) array of coordinates, d in {1, 2, 3}.
    weights : (n,) strictly positive measures mu(z).
    metric : "euclidean" or "graph".
    edges : (m, 2) int array, required for the graph metric; edge lengths are
        the Euclidean distances between endpoints.
    scale_unit : the length playing the role of radius 1 in all scale-capped
        conditions (measure density, Whitney cutoffs, ...).
    """

    def __init__(self, points, weights, metric=EUCLIDEAN, edges=None,
                 scale_unit=1.0, grid: Optional[GridInfo] = None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (1, 2, 3):
            raise ValueError("points must be (n, d) with d in {1,2,3}")
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.weights.shape != (len(self.points),):
            raise ValueError("weights must be one per point")
        if not np.all(self.weights > 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be strictly positive and finite")
        if metric not in (EUCLIDEAN, GRAPH):
            raise ValueError(f"unknown metric kind {metric!r}")
        if metric == GRAPH and edges is None:
            raise ValueError("graph metric requires a neighbor relation")
        self.metric = metric
        self.edges = None if edges is None else np.asarray(edges, dtype=np.int64)
        self.scale_unit = float(scale_unit)
        if self.scale_unit <= 0:
            raise ValueError("scale_unit must be positive")
        self.grid = grid
        self._tree = None
        self._dense_d = None
        self._hash_cache = {}

    # -- basics ---------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_measure(self) -> float:
        return float(self.weights.sum())

    def __repr__(self):
        return (f"Space(n={self.n}, d={self.dim}, metric={self.metric}, "
                f"mu(Z)={self.total_measure:.6g})")

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def cell_hash(self, cell: float):
        key = round(float(cell), 15)
        if key not in self._hash_cache:
            if len(self._hash_cache) > 8:
                self._hash_cache.clear()
            self._hash_cache[key] = _kernels.build_hash(self.points, cell)
        return self._hash_cache[key]

    # -- metric ---------------------------------------------------------------

    def _edge_lengths(self):
        a, b = self.edges[:, 0], self.edges[:, 1]
        return np.linalg.norm(self.points[a] - self.points[b], axis=1)

    def _graph_matrix(self):
        from scipy.sparse import coo_matrix
        lens = self._edge_lengths()
        a, b = self.edges[:, 0], self.edges[:, 1]
        m = coo_matrix((np.r_[lens, lens], (np.r_[a, b], np.r_[b, a])),
                       shape=(self.n, self.n))
        return m.tocsr()

    def dense_distances(self) -> np.ndarray:
        """All-pairs distance matrix (graph metric only, n <= limit)."""
        if self._dense_d is None:
            if self.metric == EUCLIDEAN:
                diff = self.points[:, None, :] - self.points[None, :, :]
                self._dense_d = np.sqrt((diff ** 2).sum(-1))
            else:
                if self.n > GRAPH_DENSE_LIMIT:
                    raise ResolutionError(
                        f"all-pairs shortest paths limited to n <= "
                        f"{GRAPH_DENSE_LIMIT}, got {self.n}")
                from scipy.sparse.csgraph import shortest_path
                self._dense_d = shortest_path(self._graph_matrix(),
                                              method="D", directed=False)
        return self._dense_d

    def dist_row(self, i: int) -> np.ndarray:
        """Distances from point i to every point."""
        if self.metric == EUCLIDEAN:
            return np.linalg.norm(self.points - self.points[i], axis=1)
        if self.n <= GRAPH_DENSE_LIMIT:
            return self.dense_distances()[i]
        from scipy.sparse.csgraph import dijkstra
        return dijkstra(self._graph_matrix(), directed=False, indices=i)

    def dist_to_set(self, indices) -> np.ndarray:
        """d(z, S) for every z, with S given by indices."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return np.full(self.n, np.inf)
        if self.metric == EUCLIDEAN:
            d, _ = cKDTree(self.points[indices]).query(self.points)
            return d
        from scipy.sparse.csgraph import dijkstra
        return dijkstra(self._graph_matrix(), directed=False, indices=indices,
                        min_only=True)

    def grid_adjacency(self) -> np.ndarray:
        """Axis-neighbor edge list for grid spaces (distance exactly h)."""
        if self.grid is None:
            if self.edges is not None:
                return self.edges
            raise ValueError("space has no grid structure or explicit edges")
        shape = self.grid.shape
        idx = np.arange(self.n).reshape(shape)
        pairs = []
        for ax in range(len(shape)):
            a = np.take(idx, np.arange(shape[ax] - 1), axis=ax).ravel()
            b = np.take(idx, np.arange(1, shape[ax]), axis=ax).ravel()
            pairs.append(np.stack([a, b], axis=1))
        return np.concatenate(pairs, axis=0)

    def validate(self, rng=None, triples: int = 200):
        """Spot-check metric axioms (triangle inequality on sampled triples
        for the graph metric); raises on violation."""
        if self.metric == GRAPH and self.n <= GRAPH_DENSE_LIMIT:
            D = self.dense_distances()
            if not np.allclose(D, D.T):
                raise ValueError("graph metric is not symmetric")
            if np.any(np.diag(D) != 0):
                raise ValueError("graph metric has nonzero diagonal")
            rng = rng or np.random.default_rng(0)
            ii = rng.integers(0, self.n, size=(triples, 3))
            lhs = D[ii[:, 0], ii[:, 2]]
            rhs = D[ii[:, 0], ii[:, 1]] + D[ii[:, 1], ii[:, 2]]
            if np.any(lhs > rhs * (1 + 1e-12)):
                raise ValueError("triangle inequality violated")
        return True


@dataclass
class SubsetMask:
    """A measurable subset of a Space, with cached distance-to-set."""
    space: Space
    member: np.ndarray            # (n,) bool
    dist: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.member = np.asarray(self.member, dtype=bool)
        if self.member.shape != (self.space.n,):
            raise ValueError("mask length must match the space")
        if self.dist is None:
            self.dist = self.space.dist_to_set(np.flatnonzero(self.member))
            self.dist[self.member] = 0.0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    @property
    def size(self) -> int:
        return int(self.member.sum())

    def measure(self) -> float:
        return float(self.space.weights[self.member].sum())

    def complement(self) -> "SubsetMask":
        return SubsetMask(self.space, ~self.member)

    def __repr__(self):
        return f"SubsetMask({self.size}/{self.space.n} points)"


class Field:
    """Real-valued function on a Space, defined on a SubsetMask."""

    def __init__(self, space: Space, values, defined_on: Optional[SubsetMask] = None):
        self.space = space
        self.defined_on = defined_on or SubsetMask(space, np.ones(space.n, bool))
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (space.n,):
            raise ValueError("field values must be one per point")
        dom = self.defined_on.member
        if not np.all(np.isfinite(self.values[dom])):
            raise ValueError("field has non-finite values on its domain")

    def restricted_values(self) -> np.ndarray:
        return self.values[self.defined_on.member]

    def zero_extension(self) -> "Field":
        """Values kept on the domain, zero elsewhere, defined everywhere."""
        v = np.where(self.defined_on.member, self.values, 0.0)
        return Field(self.space, v)

    def lp_norm(self, p: float) -> float:
        return lp_norm(self.restricted_values(),
                       self.space.weights[self.defined_on.member], p)

    def __repr__(self):
        return f"Field(on {self.defined_on.size} pts)"


class VecField:
    """R^N-valued function on a Space with a norm tag ('sup' or ell_q)."""

    def __init__(self, space: Space, values, defined_on: Optional[SubsetMask] = None,
                 norm_tag="sup"):
        self.space = space
        self.defined_on = defined_on or SubsetMask(space, np.ones(space.n, bool))
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != space.n:
            raise ValueError("vector field values must be (n, N)")
        if self.values.shape[1] < 1:
            raise ValueError("target dimension N must be >= 1")
        dom = self.defined_on.member
        if not np.all(np.isfinite(self.values[dom])):
            raise ValueError("vector field has non-finite values on its domain")
        if norm_tag != "sup" and not (isinstance(norm_tag, tuple)
                                      and norm_tag[0] == "lq" and norm_tag[1] >= 1):
            raise ValueError("norm_tag must be 'sup' or ('lq', q)")
        self.norm_tag = norm_tag

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def coordinate(self, k: int) -> Field:
        return Field(self.space, self.values[:, k].copy(), self.defined_on)

    def pointwise_norm(self) -> Field:
        """|u(z)| in the tagged norm, as a scalar Field."""
        if self.norm_tag == "sup":
            v = np.abs(self.values).max(axis=1)
        else:
            q = self.norm_tag[1]
            v = (np.abs(self.values) ** q).sum(axis=1) ** (1.0 / q)
        return Field(self.space, v, self.defined_on)

    def lp_norm(self, p: float) -> float:
        nv = self.pointwise_norm()
        return nv.lp_norm(p)

    def __repr__(self):
        return f"VecField(N={self.N}, norm={self.norm_tag}, on {self.defined_on.size} pts)"


def lp_norm(values, weights, p: float) -> float:
    """Weighted L^p norm; p = inf gives the max over the domain."""
    if np.isinf(p):
        return float(np.abs(values).max()) if len(values) else 0.0
    return float((weights * np.abs(values) ** p).sum() ** (1.0 / p))


# -- constructors ---------------------------------------------------------------


def build_grid_space(bbox, h: float, metric_kind: str = EUCLIDEAN,
                     scale_unit: float = 1.0,
                     point_budget: int = DEFAULT_POINT_BUDGET) -> Space:
    """Uniform grid of cell centers over a box, weights h^d.

    bbox is ((lo_1, hi_1), ..., (lo_d, hi_d)) or (lo, hi) in one dimension.
    """
    bbox = np.atleast_2d(np.asarray(bbox, dtype=np.float64))
    if bbox.shape[1] != 2 or bbox.shape[0] not in (1, 2, 3):
        raise ValueError("bbox must be d pairs (lo, hi) with d in {1,2,3}")
    if h <= 0:
        raise ValueError("spacing h must be positive")
    ext = bbox[:, 1] - bbox[:, 0]
    if np.any(ext <= 0):
        raise ValueError("bbox is degenerate")
    counts = np.maximum(1, np.round(ext / h).astype(int))
    total = int(np.prod(counts))
    if total > point_budget:
        raise ResolutionError(
            f"grid of {total} points exceeds the budget of {point_budget}")
    axes = [bbox[k, 0] + (np.arange(counts[k]) + 0.5) * h
            for k in range(len(counts))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    d = len(counts)
    w = np.full(total, h ** d)
    grid = GridInfo(lo=bbox[:, 0].copy(), h=float(h), shape=tuple(counts))
    edges = None
    if metric_kind == GRAPH:
        space = Space(pts, w, metric=EUCLIDEAN, scale_unit=scale_unit, grid=grid)
        edges = space.grid_adjacency()
    return Space(pts, w, metric=metric_kind, edges=edges,
                 scale_unit=scale_unit, grid=grid)


# -- operators --------------------------------------------------------------------


def ball(space: Space, center: int, r: float) -> np.ndarray:
    """Indices of the open ball B(center, r), sorted by index."""
    if r <= 0:
        raise ValueError("radius must be positive")
    if space.metric == EUCLIDEAN:
        idx = space.tree().query_ball_point(space.points[center], r)
        idx = np.asarray(sorted(idx), dtype=np.int64)
        # KD query is closed; enforce the open ball
        d = np.linalg.norm(space.points[idx] - space.points[center], axis=1)
        return idx[d < r]
    d = space.dist_row(center)
    return np.flatnonzero(d < r)


def average(u, S, space: Optional[Space] = None):
    """Weighted integral average of u over the index set S.

    u may be a Field, a VecField (componentwise average) or a raw array
    paired with `space` for the weights.
    """
    if isinstance(u, (Field, VecField)):
        space = u.space
        vals = u.values
    else:
        vals = np.asarray(u, dtype=np.float64)
        if space is None:
            raise ValueError("raw arrays need an explicit space")
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ValueError("average over an empty set")
    w = space.weights[S]
    tot = w.sum()
    if tot <= 0:
        raise ValueError("average over a set of zero measure")
    if vals.ndim == 1:
        return float((w * vals[S]).sum() / tot)
    return (w[:, None] * vals[S]).sum(axis=0) / tot


def maximal(u, R: float = np.inf) -> Field:
    """Hardy-Littlewood maximal function, restricted to radii below R.

    At each x the sup runs over the finitely many realized ball prefixes of
    radius < R, including the degenerate ball {x}; hence M(u) >= |u|.
    """
    if isinstance(u, VecField):
        absu = u.pointwise_norm().values
        space = u.space
    elif isinstance(u, Field):
        if u.defined_on.size != u.space.n:
            raise ValueError("maximal operator needs a field on all of Z")
        absu = np.abs(u.values)
        space = u.space
    else:
        raise TypeError("maximal expects a Field or VecField")
    if space.metric == GRAPH:
        out = _maximal_dense(space, absu, R)
        return Field(space, out)
    if np.isinf(R):
        out = _kernels.maximal_full(space.points, space.weights, absu)
    else:
        cell = _query_cell(space, R)
        lo, dims, strides, c, order, starts = space.cell_hash(cell)
        out = _kernels.maximal_capped(space.points, space.weights, absu,
                                      float(R), lo, dims, strides, c, order,
                                      starts)
    return Field(space, out)


def _maximal_dense(space: Space, absu, R):
    D = space.dense_distances()
    n = space.n
    out = np.zeros(n)
    w = space.weights
    for i in range(n):
        order = np.argsort(D[i], kind="stable")
        d = D[i][order]
        cw = np.cumsum(w[order])
        cwu = np.cumsum((w * absu)[order])
        # prefix ends at the last index of each tie group
        last = np.flatnonzero(np.r_[d[1:] != d[:-1], True])
        ok = d[last] < R
        if ok.any():
            out[i] = (cwu[last][ok] / cw[last][ok]).max()
    return out


def _query_cell(space: Space, radius: float) -> float:
    """Cell side for hash queries: about one radius, floored near h."""
    if space.grid is not None:
        return max(radius, space.grid.h)
    return radius


def measure_density_constant(space: Space, omega: SubsetMask,
                             r_max: Optional[float] = None):
    """inf over x in Omega and realized radii r <= r_max of
    mu(B(x,r) & Omega) / mu(B(x,r)), with the minimizing witness.

    Returns (constant, (witness index, witness radius)).
    """
    if omega.size == 0:
        raise ValueError("Omega is empty")
    if r_max is None:
        r_max = space.scale_unit
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    members = omega.indices
    if space.metric == GRAPH:
        D = space.dense_distances()
        best, wit = 1.0, (int(members[0]), r_max)
        w = space.weights
        inm = omega.member
        for i in members:
            order = np.argsort(D[i], kind="stable")
            d = D[i][order]
            keep = d <= r_max
            order, d = order[keep], d[keep]
            cw = np.cumsum(w[order])
            cwo = np.cumsum((w * inm)[order])
            last = np.flatnonzero(np.r_[d[1:] != d[:-1], True])
            ratios = cwo[last] / cw[last]
            k = int(np.argmin(ratios))
            if ratios[k] < best:
                best = float(ratios[k])
                wit = (int(i), float(d[last][k]))
        return best, wit
    cell = _query_cell(space, r_max)
    lo, dims, strides, c, order, starts = space.cell_hash(cell)
    ratios, witr = _kernels.density_scan(space.points, space.weights,
                                         omega.member.astype(np.uint8),
                                         members, float(r_max), lo, dims,
                                         strides, c, order, starts)
    k = int(np.argmin(ratios))
    return float(ratios[k]), (int(members[k]), float(witr[k]))


class DoublingReport(float):
    """Doubling constant with the sampling plan attached."""
    plan: dict

    def __new__(cls, value, plan):
        obj = super().__new__(cls, value)
        obj.plan = plan
        return obj


def doubling_constant(space: Space, r_max: float, exact_limit: int = 2000,
                      n_radii: int = 12) -> DoublingReport:
    """sup over sampled (x, r), r <= r_max, of mu(B(x,2r)) / mu(B(x,r)).

    All centers are used.  Below `exact_limit` points every realized radius
    is tried; above, radii are logarithmically spaced.  The sampling plan is
    recorded on the returned value.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    n = space.n
    w = space.weights
    if n == 1:
        return DoublingReport(1.0, {"mode": "trivial", "centers": 1})
    if n <= exact_limit or space.metric == GRAPH:
        D = space.dense_distances()
        best = 0.0
        wit = None
        for i in range(n):
            d = D[i]
            radii = np.unique(d[(d > 0) & (d <= r_max)])
            if radii.size == 0:
                continue
            # mu(B(x, r)) at every realized r via sorted prefixes
            order = np.argsort(d, kind="stable")
            ds = d[order]
            cw = np.cumsum(w[order])
            for r in radii:
                m1 = cw[np.searchsorted(ds, r, side="left") - 1]
                m2 = cw[np.searchsorted(ds, 2 * r, side="left") - 1]
                q = m2 / m1
                if q > best:
                    best, wit = float(q), (i, float(r))
        return DoublingReport(best, {"mode": "exact", "centers": n,
                                     "witness": wit})
    # sampled: log-spaced radii, all centers
    rmin = space.grid.h if space.grid is not None else r_max / 2 ** n_radii
    radii = np.geomspace(max(rmin, r_max / 2 ** n_radii), r_max, n_radii)
    centers = np.arange(n, dtype=np.int64)
    best = 0.0
    wit = None
    for r in radii:
        cell = _query_cell(space, 2 * r)
        lo, dims, strides, c, order, starts = space.cell_hash(cell)
        m1 = _kernels.ball_measures(space.points, w, centers, float(r),
                                    lo, dims, strides, c, order, starts)
        m2 = _kernels.ball_measures(space.points, w, centers, float(2 * r),
                                    lo, dims, strides, c, order, starts)
        q = m2 / m1
        k = int(np.argmax(q))
        if q[k] > best:
            best, wit = float(q[k]), (int(k), float(r))
    return DoublingReport(best, {"mode": "sampled-log-radii",
                                 "centers": int(n), "n_radii": n_radii,
                                 "witness": wit})


# -- JSON round trips -------------------------------------------------------------


def space_to_json(space: Space) -> dict:
    doc = {
        "dimension": space.dim,
        "points": space.points.tolist(),
        "weights": space.weights.tolist(),
        "metric": {"kind": space.metric},
        "scale_unit": space.scale_unit,
    }
    if space.edges is not None:
        doc["metric"]["edges"] = space.edges.tolist()
    if space.grid is not None:
        doc["grid"] = {"lo": space.grid.lo.tolist(), "h": space.grid.h,
                       "shape": list(space.grid.shape)}
    return doc


def space_from_json(doc: dict) -> Space:
    grid = None
    if "grid" in doc:
        g = doc["grid"]
        grid = GridInfo(lo=np.asarray(g["lo"], dtype=np.float64),
                        h=float(g["h"]), shape=tuple(g["shape"]))
    edges = doc["metric"].get("edges")
    return Space(np.asarray(doc["points"], dtype=np.float64),
                 np.asarray(doc["weights"], dtype=np.float64),
                 metric=doc["metric"]["kind"],
                 edges=None if edges is None else np.asarray(edges),
                 scale_unit=doc.get("scale_unit", 1.0),
                 grid=grid)


def mask_to_json(mask: SubsetMask) -> dict:
    return {"indices": mask.indices.tolist()}


def mask_from_json(space: Space, doc: dict) -> SubsetMask:
    member = np.zeros(space.n, dtype=bool)
    member[np.asarray(doc["indices"], dtype=np.int64)] = True
    return SubsetMask(space, member)


def field_to_json(u) -> dict:
    idx = u.defined_on.indices
    doc = {"indices": idx.tolist()}
    if isinstance(u, VecField):
        doc["values"] = u.values[idx].tolist()
        doc["N"] = u.N
        doc["norm_tag"] = list(u.norm_tag) if isinstance(u.norm_tag, tuple) \
            else u.norm_tag
    else:
        doc["values"] = u.values[idx].tolist()
    return doc


def field_from_json(space: Space, doc: dict):
    idx = np.asarray(doc["indices"], dtype=np.int64)
    member = np.zeros(space.n, dtype=bool)
    member[idx] = True
    mask = SubsetMask(space, member)
    vals = np.asarray(doc["values"], dtype=np.float64)
    if "N" in doc:
        full = np.zeros((space.n, int(doc["N"])))
        full[idx] = vals
        tag = doc.get("norm_tag", "sup")
        if isinstance(tag, list):
            tag = (tag[0], float(tag[1]))
        return VecField(space, full, mask, norm_tag=tag)
    full = np.zeros(space.n)
    full[idx] = vals
    return Field(space, full, mask)

"""Extension operators from a measure-dense set F to the whole space.

Two constructions are implemented, following the Whitney machinery:

* the cutoff construction for p > 1: the partition extension
  E~(u) = sum_{i in I_1} phi_i(x) u_{B*_i & F} on the neighborhood
  U = B(F, 8), followed by the 1-Lipschitz cutoff phi = max(0, 1 - d(F, .)),
* the double-partition construction for p = 1: a second covering by balls of
  radius 1/10 centered in F, bump profiles equal to 1 on the 3-dilate and
  supported in the 5-dilate, multiplied by a global cutoff supported in
  B(F, 1/10).

All constants (8, 10, 15, 1/10, the I_1 threshold r_i < 1) scale with the
space's scale_unit and are not tunable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from sobext.errors import ResolutionError
from sobext.gradients import (GradientCertificate, check_hajlasz,
                              minimal_hajlasz_gradient,
                              sharp_functional_multi)
from sobext.space import (Field, Space, SubsetMask, VecField, maximal,
                          measure_density_constant)
from sobext.whitney import PartitionOfUnity, WhitneyCover, partition_of_unity, \
    whitney_cover

#: verdict thresholds for extension_criterion: a per-halving growth of at
#: least GROWTH_FACTOR for every scale marks obstruction; a total drift of
#: at most STABLE_FACTOR for some scale marks stability
GROWTH_FACTOR = 1.5
STABLE_FACTOR = 1.25


@dataclass
class ExtensionResult:
    """Extended field with the operator's bookkeeping."""
    h: Union[Field, VecField]
    operator_kind: str                     # "p_gt_1" or "p_eq_1"
    extended: Union[Field, VecField]       # E~(u) on U (before cutoffs)
    cover: WhitneyCover
    diagnostics: dict = dc_field(default_factory=dict)

    def restriction_residual(self, u) -> float:
        F = self.cover.F
        if isinstance(u, VecField):
            return float(np.abs(self.h.values[F.member]
                                - u.values[F.member]).max(initial=0.0))
        return float(np.abs(self.h.values[F.member]
                            - u.values[F.member]).max(initial=0.0))


class _Machinery:
    """Cover, partition and anchor-ball averages shared by the operators."""

    def __init__(self, space: Space, F: SubsetMask, check_density=True):
        if F.size == 0:
            raise ValueError("F must be nonempty")
        if F.size == space.n:
            raise ValueError("F = Z leaves nothing to extend")
        self.space = space
        self.F = F
        self.density = None
        if check_density:
            self.density, _ = measure_density_constant(space, F)
            if self.density < 1e-3:
                warnings.warn(f"measure-density constant {self.density:.2e} "
                              "is degenerate; the extension bounds may not "
                              "be scale-robust")
        self.cover = whitney_cover(space, F)
        if self.cover.k == 0:
            raise ResolutionError("Whitney cover is empty")
        self.pou = partition_of_unity(space, self.cover)
        su = space.scale_unit
        self.in_I1 = self.cover.radii < su
        self.U = F.dist < 8.0 * su
        self._ftree = cKDTree(space.points[F.indices])
        self._anchor_sets = self._collect_anchor_balls()

    def _collect_anchor_balls(self):
        """Indices of B*_i & F per ball, with the dilation guard.

        The anchor z*_i lies in F, so the open ball B(z*_i, r_i) always
        contains it; the guard only fires on degenerate geometry and doubles
        the radius at most three times (logged) before giving up.
        """
        space, F = self.space, self.F
        fidx = F.indices
        pts = space.points
        sets = []
        dilations = 0
        for i in range(self.cover.k):
            if not self.in_I1[i]:
                sets.append(None)
                continue
            r = self.cover.radii[i]
            centre = pts[self.cover.anchors[i]]
            for attempt in range(4):
                cand = np.asarray(
                    self._ftree.query_ball_point(centre, r), dtype=np.int64)
                if cand.size:
                    d = np.linalg.norm(pts[fidx[cand]] - centre, axis=1)
                    cand = cand[d < r]
                if cand.size:
                    break
                dilations += 1
                r *= 2.0
            else:
                raise ResolutionError(
                    f"anchor ball {i} met no point of F after 3 dilations")
            sets.append(fidx[np.sort(cand)])
        self.dilation_events = dilations
        return sets

    def anchor_averages(self, values: np.ndarray) -> np.ndarray:
        """Weighted averages of `values` over B*_i & F; NaN outside I_1."""
        w = self.space.weights
        ncols = values.shape[1]
        out = np.full((self.cover.k, ncols), np.nan)
        for i, s in enumerate(self._anchor_sets):
            if s is None:
                continue
            ws = w[s]
            out[i] = (ws[:, None] * values[s]).sum(axis=0) / ws.sum()
        return out

    def tilde_extension(self, values: np.ndarray) -> np.ndarray:
        """E~(u): u on F, the partition combination on U \\ F, 0 outside U."""
        mats = self.anchor_averages(values)
        comb = self.pou.weighted_combination(mats)
        if comb.ndim == 1:
            comb = comb[:, None]
        out = np.zeros_like(comb)
        onU = self.U & ~self.F.member
        out[onU] = comb[onU]
        out[self.F.member] = values[self.F.member]
        return out


def _field_values(u) -> np.ndarray:
    if isinstance(u, VecField):
        return u.values
    if isinstance(u, Field):
        return u.values[:, None]
    raise TypeError("expected a Field or VecField")


def _wrap_like(u, space, vals, mask):
    if isinstance(u, VecField):
        return VecField(space, vals, mask, norm_tag=u.norm_tag)
    return Field(space, vals[:, 0], mask)


def _require_defined_on(u, F: SubsetMask):
    if not np.all(u.defined_on.member[F.member]):
        raise ValueError("u must be defined on all of F")


def extend(space: Space, F: SubsetMask, u, p: float,
           machinery: Optional[_Machinery] = None,
           with_maximal_bound: bool = False) -> ExtensionResult:
    """Cutoff extension operator for p > 1.

    Returns h = phi * E~(u) with phi(z) = max(0, 1 - d(F, z)/scale_unit);
    h agrees with u on F bitwise and vanishes outside U = B(F, 8).
    """
    if not p > 1:
        raise ValueError("extend implements the p > 1 construction; "
                         "use extend_p1 for p = 1")
    _require_defined_on(u, F)
    mac = machinery or _Machinery(space, F)
    vals = _field_values(u)
    tilde = mac.tilde_extension(vals)
    su = space.scale_unit
    cutoff = np.maximum(0.0, 1.0 - F.dist / su)
    hvals = cutoff[:, None] * tilde
    hvals[F.member] = vals[F.member]
    allmask = SubsetMask(space, np.ones(space.n, dtype=bool))
    h = _wrap_like(u, space, hvals, allmask)
    tilde_f = _wrap_like(u, space, tilde, SubsetMask(space, mac.U))
    diag = {
        "I1_size": int(mac.in_I1.sum()),
        "cover_size": mac.cover.k,
        "dilation_events": mac.dilation_events,
        "density_constant": mac.density,
        "restriction_residual": 0.0,
        "norm_p_h": h.lp_norm(p) if not np.isinf(p) else None,
    }
    if with_maximal_bound:
        diag.update(_maximal_bound_diag(space, F, u, mac, tilde))
    return ExtensionResult(h=h, operator_kind="p_gt_1", extended=tilde_f,
                           cover=mac.cover, diagnostics=diag)


def _maximal_bound_diag(space, F, u, mac, tilde):
    """Fit of |E~_R(|u|)| <= C M(u-hat) over U (Lemma-style bound)."""
    normu = u.pointwise_norm() if isinstance(u, VecField) else \
        Field(space, np.abs(u.values), u.defined_on)
    tilde_abs = mac.tilde_extension(normu.values[:, None])[:, 0]
    uhat = np.where(F.member, normu.values, 0.0)
    mf = maximal(Field(space, uhat))
    onU = mac.U
    denom = mf.values[onU]
    num = tilde_abs[onU]
    pos = denom > 0
    ratios = num[pos] / denom[pos]
    return {
        "maximal_bound_C": float(ratios.max(initial=0.0)),
        "maximal_margin_min": float((denom[pos] - num[pos]).min(initial=0.0)),
        "tilde_abs": tilde_abs,
        "maximal_field": mf.values,
    }


def extend_vector(space: Space, F: SubsetMask, u: VecField, p: float
                  ) -> ExtensionResult:
    """Componentwise cutoff extension; commutes with linear maps on targets
    because integral averages do."""
    if not isinstance(u, VecField):
        raise TypeError("extend_vector expects a VecField")
    return extend(space, F, u, p)


def extend_p1(space: Space, F: SubsetMask, u,
              machinery: Optional[_Machinery] = None) -> ExtensionResult:
    """Double-partition extension operator for p = 1 (section 5.5 style).

    A maximal non-overlapping family of balls of radius scale_unit/10
    centered in F, bump profiles equal to 1 on the 3-dilates and supported
    in the 5-dilates, all multiplied by the global cutoff supported in
    W = B(F, scale_unit/10); the result is supported in the union of the
    5-dilates.
    """
    _require_defined_on(u, F)
    mac = machinery or _Machinery(space, F)
    vals = _field_values(u)
    tilde = mac.tilde_extension(vals)
    su = space.scale_unit
    r0 = su / 10.0
    pts = space.points
    tree = space.tree()
    # greedy maximal non-overlapping family, ascending index for determinism
    taken = np.zeros(space.n, dtype=bool)
    centers = []
    for z in F.indices:
        idx = np.asarray(tree.query_ball_point(pts[z], r0), dtype=np.int64)
        d = np.linalg.norm(pts[idx] - pts[z], axis=1)
        idx = idx[d < r0]
        if taken[idx].any():
            continue
        taken[idx] = True
        centers.append(z)
    centers = np.asarray(centers, dtype=np.int64)
    # eta_i = psi * psi~_i / sum_j psi~_j, supported in 5 B_i
    num = np.zeros((space.n, vals.shape[1]))
    den = np.zeros(space.n)
    support = np.zeros(space.n, dtype=bool)
    lists = tree.query_ball_point(pts[centers], 5.0 * r0)
    overlap = np.zeros(space.n, dtype=np.int64)
    for lst, z in zip(lists, centers):
        idx = np.asarray(lst, dtype=np.int64)
        d = np.linalg.norm(pts[idx] - pts[z], axis=1)
        keep = d < 5.0 * r0
        idx, d = idx[keep], d[keep]
        psi_t = np.clip((5.0 * r0 - d) / (2.0 * r0), 0.0, 1.0)
        den[idx] += psi_t
        overlap[idx] += 1
        support[idx[psi_t > 0]] = True
    # sum_i eta_i = cutoff wherever some psi~ is positive, so the operator
    # collapses to cutoff * E~ on the support of the second covering
    cutoff = np.clip(1.0 - F.dist / r0, 0.0, 1.0)
    hvals = np.zeros_like(tilde)
    pos = den > 0
    hvals[pos] = cutoff[pos, None] * tilde[pos]
    hvals[F.member] = vals[F.member]
    allmask = SubsetMask(space, np.ones(space.n, dtype=bool))
    h = _wrap_like(u, space, hvals, allmask)
    tilde_f = _wrap_like(u, space, tilde, SubsetMask(space, mac.U))
    diag = {
        "family_size": int(len(centers)),
        "overlap_Mtilde": int(overlap.max(initial=0)),
        "support_size": int(support.sum()),
        "support_in_5B": True,
        "restriction_residual": 0.0,
        "density_constant": mac.density,
    }
    return ExtensionResult(h=h, operator_kind="p_eq_1", extended=tilde_f,
                           cover=mac.cover, diagnostics=diag)


def local_extension_estimate(space: Space, F: SubsetMask, u,
                             cert: GradientCertificate, x: int, r: float
                             ) -> dict:
    """Fit of the local Hajlasz bound for the extension:
    |E~u(y) - E~u(z)| <= d(y,z) C (M_4r(g-hat)(y) + M_4r(g-hat)(z))
    over pairs y, z in U & B(x, r), reporting the smallest feasible C."""
    _require_defined_on(u, F)
    ball4 = F.member & (np.linalg.norm(space.points - space.points[x], axis=1)
                        < 4 * r)
    sub = check_hajlasz(
        _restrict(u, space, ball4), Field(space, cert.g.values,
                                          SubsetMask(space, ball4)), "global")
    if not sub.feasible:
        raise ValueError("g is not a Hajlasz gradient of u on B(x, 4r) & F")
    mac = _Machinery(space, F, check_density=False)
    tilde = mac.tilde_extension(_field_values(u))[:, 0]
    ghat = np.where(ball4, cert.g.values, 0.0)
    mg = maximal(Field(space, ghat), R=4 * r).values
    region = mac.U & (np.linalg.norm(space.points - space.points[x], axis=1)
                      < r)
    idx = np.flatnonzero(region)
    pts = space.points[idx]
    iu, ju = np.triu_indices(len(idx), k=1)
    d = np.linalg.norm(pts[iu] - pts[ju], axis=1)
    dv = np.abs(tilde[idx[iu]] - tilde[idx[ju]])
    den = d * (mg[idx[iu]] + mg[idx[ju]])
    active = dv > 0
    degenerate = int((active & (den == 0)).sum())
    ok = active & (den > 0)
    C = float((dv[ok] / den[ok]).max(initial=0.0))
    return {"C": C, "pairs": int(len(d)), "degenerate_pairs": degenerate,
            "region_size": int(len(idx))}


def _restrict(u, space, member):
    mask = SubsetMask(space, member)
    if isinstance(u, VecField):
        return VecField(space, u.values, mask, norm_tag=u.norm_tag)
    return Field(space, u.values, mask)


def extension_criterion(domain_kind: str, field_name: str, p: float,
                        s_list: Sequence[float], h_list: Sequence[float],
                        params: Optional[dict] = None) -> dict:
    """Sharp-functional extendability verdict across grid refinements.

    For each s the norms ||u#_s||_{L^p(Omega)} are computed on every grid in
    h_list; the verdict is "extendable-stable" when the norms stay within a
    factor STABLE_FACTOR of each other for some s, "obstructed" when they
    grow monotonically by at least GROWTH_FACTOR per halving for every s,
    and "inconclusive" otherwise (including fewer than 2 refinements).
    """
    from sobext.domains import DomainSpec, gen_domain, gen_test_field
    s_list = list(s_list)
    h_list = sorted(h_list, reverse=True)
    norms = np.zeros((len(s_list), len(h_list)))
    for hi, h in enumerate(h_list):
        spec = DomainSpec(domain_kind, h, dict(params or {}))
        space, omega = gen_domain(spec)
        u = gen_test_field(field_name, space, omega)
        sharps = sharp_functional_multi(u, omega, s_list)
        for si, sf in enumerate(sharps):
            norms[si, hi] = sf.lp_norm(p)
    report = {
        "domain": domain_kind, "field": field_name, "p": p,
        "s_list": s_list, "h_list": h_list,
        "norms": norms.tolist(),
        "growth_factor": GROWTH_FACTOR, "stable_factor": STABLE_FACTOR,
    }
    if len(h_list) < 2:
        report["verdict"] = "inconclusive"
        report["reason"] = "fewer than 2 refinements"
        return report
    stable = False
    obstructed = True
    for si in range(len(s_list)):
        row = norms[si]
        ratios = row[1:] / np.maximum(row[:-1], 1e-300)
        if row.max() <= STABLE_FACTOR * max(row.min(), 1e-300) \
                or row.max() == 0.0:
            stable = True
        if not np.all(ratios >= GROWTH_FACTOR):
            obstructed = False
    report["verdict"] = ("extendable-stable" if stable else
                         "obstructed" if obstructed else "inconclusive")
    return report


def discrete_m_norm(u, p: float, pair_limit: int = 20_000) -> dict:
    """Diagnostic M^{1,p} norm: ||u||_p plus the minimal gradient optimum.

    Above `pair_limit` domain points the gradient term uses the local-scope
    relaxation at scale_unit/2 with a logged flag.
    """
    m = u.defined_on.size
    scope = "global"
    relaxed = False
    if m > pair_limit:
        scope = ("local", u.space.scale_unit / 2)
        relaxed = True
    cert = minimal_hajlasz_gradient(u, p, scope)
    return {"norm": u.lp_norm(p) + cert.objective,
            "lp": u.lp_norm(p), "gradient": cert.objective,
            "relaxed_scope": relaxed}

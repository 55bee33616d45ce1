"""Weak (1,p)-Poincare inequality checks and constant estimation.

On a ball B the inequality compares the mean oscillation of u over
Omega & B with diam(Omega & B) times the L^p average of a gradient
surrogate over the lambda-dilate.  The estimated constant C is the largest
ratio over a battery of test fields, all centers and a logarithmic radius
ladder; the battery is the desk-scale surrogate for the quantifier over all
Sobolev functions and is recorded in every report.

Ratio conventions per ball: LHS = 0 gives ratio 0; RHS = 0 with LHS > 0
gives ratio inf.  Infinite ratios are reported and counted separately and
the fitted C is the maximum over the finite ones, so that locally-constant
jump fields (whose neighbor gradient vanishes near the jump) remain
informative: their finite worst ratios grow without bound under refinement,
which is the numerical signature of a failing inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from sobext import _kernels
from sobext.gradients import GradientCertificate, check_hajlasz, \
    discrete_upper_gradient
from sobext.space import Field, Space, SubsetMask, maximal

#: radius ladder: r0 * 2^-j for j = 0..RADIUS_LEVELS, independent of h so
#: that refinement sweeps compare like with like
RADIUS_LEVELS = 3


def _subspace(space: Space, omega: SubsetMask):
    """Omega as a metric measure space in its own right (restricted d, mu)."""
    idx = omega.indices
    sub = Space(space.points[idx], space.weights[idx], metric=space.metric,
                edges=None if space.metric != "graph" else
                _restrict_edges(space, idx),
                scale_unit=space.scale_unit)
    return sub, idx


def _restrict_edges(space, idx):
    pos = -np.ones(space.n, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    e = space.edges
    keep = (pos[e[:, 0]] >= 0) & (pos[e[:, 1]] >= 0)
    return np.stack([pos[e[keep, 0]], pos[e[keep, 1]]], axis=1)


def pi_check_ball(space: Space, omega: SubsetMask, center: int, r: float,
                  u: Field, rho: Field, p: float, lam: float = 2.0,
                  diam_exact_limit: int = 2000) -> dict:
    """One-ball Poincare check; returns LHS, RHS, ratio and the witnesses.

    LHS = avg_{Omega & B} |u - u_{Omega & B}|,
    RHS = diam(Omega & B) (avg_{Omega & lam B} rho^p)^{1/p}.
    """
    if np.any(rho.values[omega.member] < 0):
        raise ValueError("rho must be nonnegative")
    pts = space.points
    d = np.linalg.norm(pts - pts[center], axis=1) if space.metric != "graph" \
        else space.dist_row(center)
    inb = omega.member & (d < r)
    if not inb.any():
        raise ValueError("empty Omega & B")
    inl = omega.member & (d < lam * r)
    w = space.weights
    wb = w[inb]
    ub = u.values[inb]
    mean = float((wb * ub).sum() / wb.sum())
    lhs = float((wb * np.abs(ub - mean)).sum() / wb.sum())
    sub = pts[inb]
    m = len(sub)
    if m <= diam_exact_limit:
        iu, ju = np.triu_indices(m, k=1)
        diam = float(np.linalg.norm(sub[iu] - sub[ju], axis=1).max(initial=0.0))
        method = "exact"
    else:
        a = sub[np.argmax(np.linalg.norm(sub - pts[center], axis=1))]
        diam = 0.0
        for _ in range(2):
            dd = np.linalg.norm(sub - a, axis=1)
            k = int(np.argmax(dd))
            diam = max(diam, float(dd[k]))
            a = sub[k]
        method = "double-sweep"
    wl = w[inl]
    rhs = diam * float((wl * rho.values[inl] ** p).sum() / wl.sum()) \
        ** (1.0 / p)
    if lhs == 0.0:
        ratio = 0.0
    elif rhs == 0.0:
        ratio = np.inf
    else:
        ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "diam": diam,
            "diam_method": method, "ball_size": m}


@dataclass
class PIReport:
    """Fitted Poincare constants over a battery and radius ladder."""
    C: float                       # max finite ratio
    lam: float
    r0: float
    p: float
    radii: list
    battery: list                  # field names
    worst: dict                    # center, radius, field of the max ratio
    infinite_count: int
    per_field: dict                # name -> max finite ratio
    diam_heuristic_balls: int
    records: Optional[dict] = dc_field(default=None, repr=False)


def standard_battery(space: Space, omega: SubsetMask,
                     extra: Sequence[str] = ()) -> list:
    """(name, field, upper gradient) triples for constant estimation:
    constants, coordinate fields, radial distance, five seeded smooth noise
    fields, plus any domain-specific obstruction fields in `extra`."""
    from sobext.domains import gen_test_field
    names = ["constant:1", "linear:x", "radial"]
    if space.dim >= 2:
        names.insert(2, "linear:y")
    names += [f"random-smooth:{k}" for k in range(5)]
    names += list(extra)
    out = []
    for name in names:
        u = gen_test_field(name, space, omega)
        rho = discrete_upper_gradient(u, omega)
        out.append((name, u, rho))
    return out


def estimate_pi_constants(space: Space, omega: SubsetMask, p: float,
                          lam: float = 2.0, r0: Optional[float] = None,
                          battery: Optional[list] = None,
                          keep_records: bool = False,
                          diam_exact_limit: int = 64) -> PIReport:
    """Sweep all centers in Omega and the radius ladder r0 * 2^-j.

    C is the maximum finite ratio; balls whose RHS vanishes while LHS does
    not are counted in `infinite_count`.  Ball diameters use the exact
    pairwise maximum up to `diam_exact_limit` points and the double-sweep
    heuristic above it (count reported); the reported worst ball is
    re-evaluated exactly via pi_check_ball.
    """
    if r0 is None:
        r0 = space.scale_unit / 4.0
    if battery is None:
        battery = standard_battery(space, omega)
    radii = [r0 * 0.5 ** j for j in range(RADIUS_LEVELS + 1)]
    idx = omega.indices
    pts = np.ascontiguousarray(space.points[idx])
    w = np.ascontiguousarray(space.weights[idx])
    nf = len(battery)
    U = np.ascontiguousarray(
        np.stack([u.values[idx] for _, u, _ in battery]))
    RHOP = np.ascontiguousarray(
        np.stack([rho.values[idx] ** p for _, _, rho in battery]))
    best = 0.0
    worst = {}
    inf_count = 0
    heur = 0
    per_field = {name: 0.0 for name, _, _ in battery}
    records = {} if keep_records else None
    for r in radii:
        if space.metric == "graph":
            lhs, rhs, flag = _pi_radius_dense(space, idx, w, U, RHOP, r, lam,
                                              p, diam_exact_limit)
        else:
            cell = max(lam * r / 2.0, space.grid.h if space.grid else r)
            h = _kernels.build_hash(pts, cell)
            lhs, rhs, flag = _kernels.pi_radius_sweep(
                pts, w, U, RHOP, float(r), float(lam), float(p),
                diam_exact_limit, *h)
        heur += int(flag.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(lhs == 0.0, 0.0, lhs / rhs)
        isinf = ~np.isfinite(ratio)
        inf_count += int(isinf.sum())
        finite = np.where(isinf, 0.0, ratio)
        for fi, (name, _, _) in enumerate(battery):
            k = int(np.argmax(finite[fi]))
            val = float(finite[fi, k])
            per_field[name] = max(per_field[name], val)
            if val > best:
                best = val
                worst = {"field": name, "center": int(idx[k]),
                         "radius": float(r), "lhs": float(lhs[fi, k]),
                         "rhs": float(rhs[fi, k])}
        if keep_records:
            records[float(r)] = {"lhs": lhs, "rhs": rhs}
    return PIReport(C=best, lam=lam, r0=float(r0), p=p, radii=radii,
                    battery=[name for name, _, _ in battery], worst=worst,
                    infinite_count=inf_count, per_field=per_field,
                    diam_heuristic_balls=heur, records=records)


def _pi_radius_dense(space, idx, w, U, RHOP, r, lam, p, diam_cap):
    D = space.dense_distances()[np.ix_(idx, idx)]
    n = len(idx)
    nf = U.shape[0]
    lhs = np.zeros((nf, n))
    rhs = np.zeros((nf, n))
    flag = np.zeros(n, dtype=np.uint8)
    pts = space.points[idx]
    for i in range(n):
        inb = D[i] < r
        inl = D[i] < lam * r
        wb, wl = w[inb], w[inl]
        sub = pts[inb]
        m = len(sub)
        iu, ju = np.triu_indices(m, k=1)
        diam = float(np.linalg.norm(sub[iu] - sub[ju], axis=1).max(initial=0.0))
        for f in range(nf):
            ub = U[f, inb]
            mean = (wb * ub).sum() / wb.sum()
            lhs[f, i] = (wb * np.abs(ub - mean)).sum() / wb.sum()
            rhs[f, i] = diam * ((wl * RHOP[f, inl]).sum() / wl.sum()) \
                ** (1.0 / p)
    return lhs, rhs, flag


def qp_pi_check(space: Space, h: Field, rho: Field, q: float, p: float,
                r: float) -> GradientCertificate:
    """Fit of the (q,p)-PI property at scale r.

    Builds g_r = c (M_{2r}(rho^q))^{1/q} and fits the smallest c making g_r
    a local Hajlasz gradient of h at scale r; the certificate at that c is
    returned with the fitted constant in its info.  Constant fields report
    c = 0 by convention.
    """
    if not 1 <= q < p:
        raise ValueError("need 1 <= q < p")
    omega = h.defined_on
    if omega.size == space.n:
        sub, idx = space, omega.indices
        hvals = h.values
        rvals = rho.values
    else:
        sub, idx = _subspace(space, omega)
        hvals = h.values[idx]
        rvals = rho.values[idx]
    mq = maximal(Field(sub, rvals ** q), R=2 * r)
    base = mq.values ** (1.0 / q)
    u2 = np.ascontiguousarray(hvals[:, None])
    pts = np.ascontiguousarray(sub.points)
    if sub.metric == "graph":
        c_fit, bad = _fit_dense_qp(sub, u2, base, r)
    else:
        cell = max(r, sub.grid.h if sub.grid else r)
        hh = _kernels.build_hash(pts, cell)
        fit, badc = _kernels.pair_fit_constant(pts, u2, base, float(r), -1.0,
                                               *hh)
        c_fit, bad = float(fit.max(initial=0.0)), int(badc.sum())
    gfull = np.zeros(space.n)
    gfull[idx] = c_fit * base
    gf = Field(space, gfull, omega)
    cert = check_hajlasz(h, gf, ("local", r))
    cert.info = dict(cert.info or {})
    cert.info.update({"c_PI": c_fit, "q": q, "p": p, "r": r,
                      "degenerate_pairs": bad})
    return cert


def _fit_dense_qp(sub, u2, base, r):
    D = sub.dense_distances()
    n = len(u2)
    best, bad = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            d = D[i, j]
            if d == 0.0 or d >= r:
                continue
            dv = abs(float(u2[i, 0] - u2[j, 0]))
            if dv == 0.0:
                continue
            den = d * (base[i] + base[j])
            if den == 0.0:
                bad += 1
            elif dv / den > best:
                best = dv / den
    return best, bad


#: classification thresholds for the cross experiment: total drift within
#: PI_STABLE_FACTOR is stable, per-halving growth beyond PI_GROWTH_FACTOR
#: throughout is unstable
PI_STABLE_FACTOR = 1.3
PI_GROWTH_FACTOR = 1.5


def extension_implies_pi_experiment(domains: Sequence[dict], p: float,
                                    h_list: Sequence[float],
                                    s_list: Sequence[float] = (0.05, 0.1, 0.2),
                                    r0: float = 0.125, lam: float = 2.0
                                    ) -> dict:
    """Cross-table: extendability verdict vs Poincare-constant stability.

    Each entry of `domains` carries {kind, field, extra_battery}; for every
    domain the extension criterion runs on its field and
    estimate_pi_constants runs at each h with the standard battery plus the
    domain's obstruction fields.
    """
    from sobext.domains import DomainSpec, gen_domain
    from sobext.extension import extension_criterion
    rows = []
    for entry in domains:
        kind = entry["kind"]
        fieldname = entry["field"]
        extra = entry.get("extra_battery", ())
        crit = extension_criterion(kind, fieldname, p, s_list, h_list)
        cs = []
        for h in sorted(h_list, reverse=True):
            space, omega = gen_domain(DomainSpec(kind, h))
            battery = standard_battery(space, omega, extra=extra)
            rep = estimate_pi_constants(space, omega, p, lam=lam, r0=r0,
                                        battery=battery)
            cs.append(rep.C)
        cs = np.asarray(cs)
        ratios = cs[1:] / np.maximum(cs[:-1], 1e-300)
        if cs.max() <= PI_STABLE_FACTOR * max(cs.min(), 1e-300):
            pi_verdict = "PI-stable"
        elif np.all(ratios >= PI_GROWTH_FACTOR):
            pi_verdict = "PI-unstable"
        else:
            pi_verdict = "PI-inconclusive"
        rows.append({"kind": kind, "field": fieldname,
                     "extension": crit["verdict"], "pi": pi_verdict,
                     "C_by_h": cs.tolist(), "norms": crit["norms"]})
    return {"p": p, "h_list": sorted(h_list, reverse=True), "rows": rows}

"""Measurement side of the laboratory: decay exponents, oscillation norms,
and the discrete inequality checks.

The central quantity is the local gradient energy E(x, r) on a geometric
ladder of radii r_k = R a^k.  Its log-log slope is the decay exponent: N for
an interior point or a perfectly flat boundary, N - eta at rough boundary
points, smaller at genuine corners.  Rungs whose energy sits below the solver
noise floor are discarded before fitting.

Smoothness of a field is estimated two ways that must agree: the upper
envelope of |v(x) - v(y)| against |x - y| on log-spaced distance bins (slope =
Hölder exponent), and the mean-oscillation seminorm
sup r^(-lambda) * integral |v - mean|^2 over balls, finite for lambda up to
N + 2*alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretize import (GradientField, GridFunction, ball_node_mask, energy_local,
                         forward_difference, grad_m, iterated_difference)
from .geometry import GridDomain
from .multiindex import MultiIndex
from .operators import EllipticOperator, ellipticity_constant


# ---------------------------------------------------------------------------
# decay profiles
# ---------------------------------------------------------------------------


@dataclass
class DecayReport:
    center: tuple
    radii: list[float]
    energies: list[float]
    fitted_exponent: float | None
    fit_residual: float | None
    a: float
    R: float
    valid_rungs: int
    noise_floor: float

    @property
    def flagged(self) -> bool:
        return self.fitted_exponent is None


def fit_loglog(radii, energies) -> tuple[float, float]:
    """Least-squares slope of log E vs log r and the RMS log-space residual."""
    lr = np.log(np.asarray(radii, dtype=float))
    le = np.log(np.asarray(energies, dtype=float))
    slope, intercept = np.polyfit(lr, le, 1)
    resid = le - (slope * lr + intercept)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


def decay_profile(op: EllipticOperator, u, center, R: float, a: float = 0.5,
                  k_max: int = 5, metric: str = "euclidean",
                  noise_floor: float = 0.0, restrict_to_mask: bool = False) -> DecayReport:
    """Local energies on the ladder r_k = R a^k, k = 0..k_max, plus slope fit.

    u may be a GridFunction or a precomputed GradientField.  Requires the
    smallest rung to stay above the 4h resolution floor.  The fit uses only
    rungs with energy above noise_floor and is flagged (exponent None) when
    fewer than 3 survive.  restrict_to_mask drops the one-sided-quotient halo
    just outside the domain, which otherwise depresses boundary-centered
    slopes by O(h/r).
    """
    if not 0 < a < 1:
        raise ValueError("ladder ratio a must lie in (0, 1)")
    field_ = u if isinstance(u, GradientField) else grad_m(u, op.m)
    h = field_.dom.h
    if R * a**k_max < 4 * h - 1e-12:
        raise ValueError(f"ladder bottom {R * a**k_max:.4g} below 4h = {4 * h:.4g}")
    radii = [R * a**k for k in range(k_max + 1)]
    energies = [energy_local(op, field_, center, r, metric=metric,
                             restrict_to_mask=restrict_to_mask) for r in radii]
    ok = [(r, e) for r, e in zip(radii, energies) if e > noise_floor]
    if len(ok) >= 3:
        slope, resid = fit_loglog([r for r, _ in ok], [e for _, e in ok])
    else:
        slope, resid = None, None
    return DecayReport(center=tuple(np.atleast_1d(center).tolist()), radii=radii,
                       energies=energies, fitted_exponent=slope, fit_residual=resid,
                       a=a, R=R, valid_rungs=len(ok), noise_floor=noise_floor)


def write_decay_csv(reports: list[DecayReport], path) -> None:
    path = Path(path)
    dim = len(reports[0].center) if reports else 2
    cols = ["cx", "cy", "cz"][:dim] + ["k", "r", "energy", "fitted_exponent", "residual"]
    lines = [",".join(cols)]
    for rep in reports:
        for k, (r, e) in enumerate(zip(rep.radii, rep.energies)):
            vals = list(rep.center) + [k, r, e,
                                       math.nan if rep.fitted_exponent is None else rep.fitted_exponent,
                                       math.nan if rep.fit_residual is None else rep.fit_residual]
            lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in vals))
    path.write_text("\n".join(lines) + "\n")


def ladder_ratio_bound(op: EllipticOperator, eta: float, b: float) -> float:
    """Diagnostic ladder ratio (1 / (4 C max|a|))^(1/(eta-b)) tying the
    geometric step to the ellipticity constants; reported, not enforced."""
    if not 0 < b < eta:
        raise ValueError("need 0 < b < eta")
    c = ellipticity_constant(op)
    return float((1.0 / (4.0 * (1.0 / c) * op.max_coeff)) ** (1.0 / (eta - b)))


# ---------------------------------------------------------------------------
# Campanato seminorm and Hölder envelope
# ---------------------------------------------------------------------------


def campanato_seminorm(v: GridFunction, lam: float, radii, centers) -> float:
    """max over (x, r) of r^(-lam) * h^N * sum_{mask & ball} |v - mean|^2.

    Means are taken over the inside nodes of each ball; samples whose ball
    misses the domain are skipped.
    """
    dom = v.dom
    hN = dom.h**dom.N
    worst = 0.0
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        for r in radii:
            if r < 2 * dom.h:
                raise ValueError(f"radius {r} below resolution floor 2h")
            sel = ball_node_mask(dom, c, r) & dom.mask
            if not sel.any():
                continue
            vals = v.values[sel]
            dev = vals - vals.mean()
            worst = max(worst, float(r**(-lam) * hN * np.sum(dev**2)))
    return worst


@dataclass
class HolderReport:
    derivative_order: int
    exponent_estimate: float | None
    seminorm_estimate: float | None
    campanato_lambda: float | None = None
    campanato_seminorm: float | None = None
    bin_distances: list[float] = field(default_factory=list)
    bin_envelopes: list[float] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return self.exponent_estimate is None


def holder_exponent(v: GridFunction, pair_budget: int = 200_000,
                    min_sep: float | None = None, max_sep: float | None = None,
                    seed: int = 0,
                    region_center=None, region_radius: float | None = None,
                    n_bins: int = 12, quantile: float = 1.0,
                    derivative_order: int = 0) -> HolderReport:
    """Upper-envelope modulus-of-continuity fit over sampled node pairs.

    Pairs are stratified over log-spaced distance bins in [min_sep, max_sep]
    (max_sep defaults to the sampled region diameter; cap it well below the
    field's feature scale, else the envelope saturates at the oscillation
    range and flattens the fit).  Per bin the envelope is the `quantile`
    level of |v(x) - v(y)| (default the maximum, which tracks sup-type
    moduli).  The exponent is the slope of log envelope vs log distance, the
    seminorm the largest sampled ratio |v(x) - v(y)| / |x - y|^alpha.
    Degenerate fields are flagged.
    """
    dom = v.dom
    if min_sep is None:
        min_sep = 4 * dom.h
    pts_idx = np.argwhere(dom.mask)
    pts = (pts_idx + np.asarray(dom.origin)) * dom.h
    if region_center is not None:
        keep = np.linalg.norm(pts - np.asarray(region_center, dtype=float), axis=1) < region_radius
        pts_idx, pts = pts_idx[keep], pts[keep]
    if len(pts) < 2:
        raise ValueError("not enough nodes to sample pairs")
    d_max = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if max_sep is not None:
        d_max = min(d_max, float(max_sep))
    if d_max <= min_sep:
        raise ValueError("min_sep exceeds the sampled pair-distance range")

    vals_at = v.values[tuple(pts_idx.T)]
    rng = np.random.default_rng(seed)
    edges = np.exp(np.linspace(math.log(min_sep), math.log(d_max), n_bins + 1))
    per_bin = max(pair_budget // n_bins, 200)

    bin_d, bin_env = [], []
    sample_d, sample_dv = [], []
    for b in range(n_bins):
        lo, hi = edges[b], edges[b + 1]
        i = rng.integers(0, len(pts), size=per_bin)
        d = np.exp(rng.uniform(math.log(lo), math.log(hi), size=per_bin))
        if dom.N == 2:
            ang = rng.uniform(0, 2 * math.pi, size=per_bin)
            step = np.column_stack([d * np.cos(ang), d * np.sin(ang)])
        else:
            step = rng.normal(size=(per_bin, dom.N))
            step *= (d / np.linalg.norm(step, axis=1))[:, None]
        target = pts[i] + step
        j_idx = np.rint(target / dom.h).astype(int) - np.asarray(dom.origin)
        ok = np.all((j_idx >= 0) & (j_idx < np.asarray(dom.shape)), axis=1)
        j_idx = j_idx[ok]
        i = i[ok]
        inside = dom.mask[tuple(j_idx.T)]
        if region_center is not None:
            tgt = (j_idx + np.asarray(dom.origin)) * dom.h
            inside = inside & (np.linalg.norm(tgt - np.asarray(region_center, dtype=float),
                                              axis=1) < region_radius)
        i, j_idx = i[inside], j_idx[inside]
        if len(i) == 0:
            continue
        pj = (j_idx + np.asarray(dom.origin)) * dom.h
        dist = np.linalg.norm(pj - pts[i], axis=1)
        keep = dist >= min_sep
        dist = dist[keep]
        if len(dist) == 0:
            continue
        dv = np.abs(v.values[tuple(j_idx[keep].T)] - vals_at[i[keep]])
        env = float(np.max(dv)) if quantile >= 1.0 else float(np.quantile(dv, quantile))
        if env > 0.0:
            bin_d.append(float(np.exp(np.mean(np.log(dist)))))
            bin_env.append(env)
            sample_d.append(dist)
            sample_dv.append(dv)

    if len(bin_d) < 3:
        return HolderReport(derivative_order=derivative_order, exponent_estimate=None,
                            seminorm_estimate=None)
    slope, _ = fit_loglog(bin_d, bin_env)
    alpha = slope
    all_d = np.concatenate(sample_d)
    all_dv = np.concatenate(sample_dv)
    pos = all_dv > 0
    seminorm = float(np.max(all_dv[pos] / all_d[pos]**alpha)) if pos.any() else 0.0
    return HolderReport(derivative_order=derivative_order, exponent_estimate=float(alpha),
                        seminorm_estimate=seminorm, bin_distances=bin_d, bin_envelopes=bin_env)


def write_holder_csv(reports: list[HolderReport], path) -> None:
    path = Path(path)
    lines = ["order,alpha,seminorm,lambda,campanato"]
    for r in reports:
        vals = [float(r.derivative_order),
                math.nan if r.exponent_estimate is None else r.exponent_estimate,
                math.nan if r.seminorm_estimate is None else r.seminorm_estimate,
                math.nan if r.campanato_lambda is None else r.campanato_lambda,
                math.nan if r.campanato_seminorm is None else r.campanato_seminorm]
        lines.append(",".join(f"{v:.17g}" for v in vals))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# inequality checks
# ---------------------------------------------------------------------------


def _cube_mask(dom: GridDomain, center, r: float) -> np.ndarray:
    grids = dom.coord_grids()
    c = np.asarray(center, dtype=float)
    inside = np.ones(dom.shape, dtype=bool)
    for g, ci in zip(grids, c):
        inside = inside & (np.abs(g - ci) <= r + 1e-12)
    return inside


def check_vertical_poincare(v: GridFunction, center=None, r: float = 1.0,
                            lam: float = 0.5) -> float:
    """Margin of ||v||_{Q_r} <= 4 ||v||_{Q_r^lam} + 3 r ||d_N v||_{Q_r}.

    Q_r is the cube {|x_i - c_i| <= r}, Q_r^lam its slice above x_N = c_N +
    lam*r.  Norms are h^N-weighted sums with a one-cell forward quotient for
    the vertical derivative; the margin (RHS - LHS) should only dip O(h)
    below zero.
    """
    if not 0 < lam < 0.75:
        raise ValueError("level lam must lie in (0, 3/4)")
    dom, values, h = v.dom, v.values, v.dom.h
    center = np.zeros(dom.N) if center is None else np.asarray(center, dtype=float)
    for ax, c in zip(dom.axes(), center):
        if c - r < ax[0] or c + r > ax[-1] - h:
            raise ValueError("cube exceeds the lattice")
    cube = _cube_mask(dom, center, r)
    ax_last = dom.axes()[-1]
    upper_rows = ax_last > center[-1] + lam * r + 1e-12
    upper = cube & upper_rows[(None,) * (dom.N - 1) + (slice(None),)]
    dn = forward_difference(values, dom.N - 1, h=h)
    hN = h**dom.N
    lhs = math.sqrt(hN * float(np.sum(values[cube]**2)))
    rhs = 4.0 * math.sqrt(hN * float(np.sum(values[upper]**2))) \
        + 3.0 * r * math.sqrt(hN * float(np.sum(dn[cube]**2)))
    return rhs - lhs


def check_poincare_halfball(v: GridFunction, m: int) -> float | None:
    """Ratio ||v||_{H^m(B)} / ||grad^m v||_{L^2(B)} for v vanishing on the
    lower half-ball; None for the degenerate all-zero input."""
    dom = v.dom
    grids = dom.coord_grids()
    ball = sum(g**2 for g in grids) < 1.0
    hN = dom.h**dom.N
    total = float(np.sum(v.values[ball]**2))
    for order in range(1, m + 1):
        from .multiindex import enumerate_indices

        for alpha in enumerate_indices(dom.N, order):
            total += float(np.sum(iterated_difference(v, alpha)[ball]**2))
    gm = grad_m(v, m)
    denom = float(np.sum(gm.euclidean_density()[ball]))
    if denom == 0.0:
        if total > 0.0:
            raise ValueError("grad^m v vanishes but v does not: hypothesis violated")
        return None
    return math.sqrt(hN * total) / math.sqrt(hN * denom)


def check_difference_bound(u: GridFunction, alpha, shrink_cells: int,
                           exact_norm: float) -> float:
    """Margin ||d^alpha u||_{L^2(Omega)} - ||D_h^alpha u||_{L^2(omega)}.

    omega is the inside-node set eroded by shrink_cells (>= |alpha| so the
    quotient stencils never cross the boundary); exact_norm is the closed-form
    continuum norm of the sampled test function.  Expected >= -O(h).
    """
    alpha = MultiIndex(alpha)
    if shrink_cells < alpha.order:
        raise ValueError("shrink_cells must be at least |alpha|")
    dom = u.dom
    inner = dom.mask.copy()
    from scipy import ndimage

    inner = ndimage.binary_erosion(inner, iterations=shrink_cells,
                                   structure=ndimage.generate_binary_structure(dom.N, dom.N))
    d = iterated_difference(u, alpha)
    discrete = math.sqrt(dom.h**dom.N * float(np.sum(d[inner]**2)))
    return exact_norm - discrete

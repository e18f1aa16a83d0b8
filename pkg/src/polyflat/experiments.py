"""Config-driven experiment pipelines behind the CLI verbs.

Each runner takes an ExperimentConfig plus (out_dir, seed, threads), builds
the operator / domain / field it needs, and writes CSV artifacts.  Output is
deterministic for a fixed config and seed: worker results are collected in
task order and random sampling is seeded per task, so the thread count never
changes bytes.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analyze, fexpr, geometry, operators, solve
from .config import ConfigError, ExperimentConfig
from .discretize import GridFunction, assemble, grad_m, load_grid_function, save_grid_function
from .geometry import boundary_normals, load_domain, measure_flatness


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def build_operator(cfg: ExperimentConfig) -> operators.EllipticOperator:
    spec = cfg.operator
    if spec.kind == "polyharmonic":
        N = 2 if cfg.domain.generator in ("cone", "koch") else int(cfg.domain.params.get("N", 2))
        if cfg.domain.generator == "box":
            N = len(cfg.domain.params.get("lo", [0.0, 0.0]))
        return operators.polyharmonic(N, spec.m)
    op = operators.from_json(Path(spec.path).read_text())
    return op


def build_domain(cfg: ExperimentConfig) -> geometry.GridDomain:
    gen, p, h = cfg.domain.generator, cfg.domain.params, cfg.h
    if gen == "half_space_ball":
        return geometry.half_space_ball(p.get("R", 1.0), h, N=int(p.get("N", 2)))
    if gen == "ball":
        return geometry.ball_domain(p.get("R", 1.0), h, N=int(p.get("N", 2)))
    if gen == "cone":
        return geometry.cone_domain(p.get("omega", 1.5 * math.pi), p.get("R", 1.0), h)
    if gen == "koch":
        return geometry.koch_domain(p.get("delta", 0.1), int(p.get("depth", 3)),
                                    p.get("R", 1.0), h, n_base=int(p.get("n_base", 6)))
    if gen == "box":
        return geometry.box_domain(p.get("lo", [0.0]), p.get("hi", [1.0]), h)
    if gen == "file":
        return load_domain(p["path"])
    raise ConfigError("domain.generator", f"unhandled generator {gen!r}")


def build_source(cfg: ExperimentConfig, dom: geometry.GridDomain) -> np.ndarray:
    src = cfg.source
    if src.kind == "constant":
        return np.full(dom.shape, src.constant)
    if src.kind == "expression":
        return fexpr.evaluate_on(dom, src.expression)
    return load_grid_function(src.path).values


def obtain_field(cfg: ExperimentConfig, op, dom, out_dir: Path | None,
                 log_path: Path | None = None) -> tuple[GridFunction, solve.SolveReport | None]:
    """Field to analyze: inline solve, analytic expression, or saved raster."""
    fs = cfg.field
    if fs.kind == "expression":
        vals = fexpr.evaluate_on(dom, fs.expression)
        return GridFunction(dom, vals), None
    if fs.kind == "file":
        return load_grid_function(fs.path), None
    f = build_source(cfg, dom)
    system = assemble(op, dom, f)
    u, report = solve.solve_dirichlet(system, tol=cfg.solver.tol,
                                      max_iter=cfg.solver.max_iter, label=cfg.label)
    if log_path is not None:
        solve.append_report(report, log_path)
    return u, report


def noise_floor_estimate(report: solve.SolveReport | None) -> float:
    """Safe lower bound below which ladder energies are solver noise."""
    if report is None:
        return 0.0
    return 10.0 * report.relative_residual * max(abs(report.energy), 1e-300)


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def run_solve(cfg: ExperimentConfig, out_dir, seed: int, threads: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    op = build_operator(cfg)
    dom = build_domain(cfg)
    f = build_source(cfg, dom)
    system = assemble(op, dom, f)
    u, report = solve.solve_dirichlet(system, tol=cfg.solver.tol,
                                      max_iter=cfg.solver.max_iter, label=cfg.label)
    raster = out_dir / "solution.gfn"
    save_grid_function(u, raster)
    solve.append_report(report, out_dir / "solve_log.csv")
    return raster


def decay_centers(cfg: ExperimentConfig, dom, seed: int) -> np.ndarray:
    """Ladder centers: explicit points from the config, or sampled boundary
    nodes nudged along the outward normal by center_offset_cells."""
    spec = cfg.analysis
    if spec.centers is not None:
        return np.atleast_2d(np.asarray(spec.centers, dtype=float))
    pts, normals = boundary_normals(dom)
    rng = np.random.default_rng(seed)
    take = min(spec.n_centers, len(pts))
    sel = np.sort(rng.choice(len(pts), size=take, replace=False))
    return pts[sel] + spec.center_offset_cells * dom.h * normals[sel]


def run_decay(cfg: ExperimentConfig, out_dir, seed: int, threads: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    op = build_operator(cfg)
    dom = build_domain(cfg)
    u, report = obtain_field(cfg, op, dom, out_dir, out_dir / "solve_log.csv")
    if cfg.analysis.ladder is None:
        raise ConfigError("analysis.ladder", "decay runs need a ladder spec")
    lad = cfg.analysis.ladder
    field = grad_m(u, op.m)
    centers = decay_centers(cfg, dom, seed)
    floor = noise_floor_estimate(report)

    def one(center):
        return analyze.decay_profile(op, field, center, R=lad.R, a=lad.a,
                                     k_max=lad.k_max, metric=cfg.analysis.metric,
                                     noise_floor=floor,
                                     restrict_to_mask=cfg.analysis.restrict_to_mask)

    reports = _parallel_map(one, list(centers), threads)
    path = out_dir / "decay.csv"
    analyze.write_decay_csv(reports, path)
    exps = [r.fitted_exponent for r in reports if r.fitted_exponent is not None]
    summary = out_dir / "decay_summary.csv"
    with open(summary, "w") as fh:
        fh.write("n_centers,min_exponent,median_exponent\n")
        if exps:
            fh.write(f"{len(exps)},{min(exps):.17g},{float(np.median(exps)):.17g}\n")
        else:
            fh.write("0,nan,nan\n")
    return path


def run_holder(cfg: ExperimentConfig, out_dir, seed: int, threads: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    op = build_operator(cfg)
    dom = build_domain(cfg)
    u, _ = obtain_field(cfg, op, dom, out_dir, out_dir / "solve_log.csv")
    spec = cfg.analysis

    from .discretize import forward_difference
    axes = spec.derivative_axes if spec.derivative_axes is not None else []
    fields = [(0, u)]
    if axes:
        fields = [(op.m - 1, GridFunction(dom, np.where(dom.mask, forward_difference(u, ax), 0.0)))
                  for ax in axes]

    def one(item):
        i, (order, v) = item
        rep = analyze.holder_exponent(
            v, pair_budget=spec.pair_budget, min_sep=spec.min_sep,
            max_sep=spec.max_sep, seed=seed + 17 * i,
            region_center=spec.region_center,
            region_radius=spec.region_radius, derivative_order=order)
        if rep.exponent_estimate is not None:
            lam = spec.campanato_lambda
            if lam is None:
                lam = dom.N + 2.0 * min(max(rep.exponent_estimate, 0.05), 1.0)
            radii = np.geomspace(8 * dom.h, dom.diameter / 4, 6)
            rng = np.random.default_rng(seed + 1000 + i)
            nodes = dom.node_coords()
            centers = nodes[rng.choice(len(nodes), size=min(40, len(nodes)), replace=False)]
            rep.campanato_lambda = lam
            rep.campanato_seminorm = analyze.campanato_seminorm(v, lam, radii, centers)
        return rep

    reports = _parallel_map(one, list(enumerate(fields)), threads)
    path = out_dir / "holder.csv"
    analyze.write_holder_csv(reports, path)
    return path


def run_flatness(cfg: ExperimentConfig, out_dir, seed: int, threads: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dom = build_domain(cfg)
    radii = cfg.analysis.radii
    if radii is None:
        radii = list(np.geomspace(8 * dom.h, dom.diameter / 4, 4))
    report = measure_flatness(dom, radii, n_centers=cfg.analysis.n_centers, seed=seed)
    path = out_dir / "flatness.csv"
    report.to_csv(path)
    return path


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    margin: float
    tolerance: float
    passed: bool


def verification_suite(op=None, seed: int = 0, threads: int = 1) -> list[CheckResult]:
    """Identity and inequality checks with hard tolerances.

    Covers: summation-by-parts duality, assembled-matrix and coefficient
    symmetry, the energy split of the local replacement, the order-reduction
    split (reconstruction + ellipticity inheritance) on random operators,
    the vertical Poincaré inequality, the quotient-vs-derivative norm bound,
    and refinement stability of the half-ball Poincaré constant.
    """
    from .discretize import forward_difference
    from .solve import polyharmonic_replacement, quadratic_energy, solve_dirichlet

    results: list[CheckResult] = []

    def record(name, margin, tol, ok=None):
        results.append(CheckResult(name, float(margin), float(tol),
                                   bool(margin <= tol) if ok is None else bool(ok)))

    # duality of the difference quotients (residual <= 1e-13 relative)
    rng = np.random.default_rng(seed)
    dom = geometry.box_domain([-1, -1], [1, 1], h=1 / 16, margin=4)
    worst = 0.0
    for _ in range(20):
        u = GridFunction(dom, rng.normal(size=dom.shape))
        v = GridFunction(dom, rng.normal(size=dom.shape))
        for ax in range(2):
            for cells in (1, -1, 2):
                lhs = float(np.sum(u.values * forward_difference(v, ax, cells=cells)))
                rhs = -float(np.sum(v.values * forward_difference(u, ax, cells=-cells)))
                worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    record("difference_duality_relative_residual", worst, 1e-13)

    probe = op if op is not None else operators.polyharmonic(2, 2)
    record("coefficient_symmetry_defect", probe.symmetry_defect, 0.0)

    pd = geometry.ball_domain(0.5, 1 / 32, N=probe.N) if probe.N == 2 \
        else geometry.ball_domain(0.5, 1 / 16, N=probe.N)
    system = assemble(probe, pd, 1.0)
    asym = abs(system.matrix - system.matrix.T)
    record("assembled_matrix_symmetry_defect",
           0.0 if asym.nnz == 0 else asym.max(), 0.0)

    # Pythagoras split of the local replacement at random (center, radius)
    u, _ = solve_dirichlet(system, tol=1e-11)
    bpts = geometry.boundary_points(pd)
    rng2 = np.random.default_rng(seed + 1)
    worst = 0.0
    pairs = [(bpts[rng2.integers(len(bpts))], rng2.uniform(0.08, 0.2)) for _ in range(10)]

    def pyth(pair):
        c, r = pair
        res = polyharmonic_replacement(probe, u, c, r, tol=1e-12, sys=system)
        if not res.replaced:
            return 0.0
        eu = quadratic_energy(system, u)
        ev = quadratic_energy(system, res.field)
        ew = quadratic_energy(system, GridFunction(pd, u.values - res.field.values))
        return abs(ew - (eu - ev)) / eu

    for val in _parallel_map(pyth, pairs, threads):
        worst = max(worst, val)
    record("replacement_pythagoras_relative_residual", worst, 1e-8)

    # order-reduction split of random elliptic operators, m <= 3, N <= 3
    rng3 = np.random.default_rng(seed + 2)
    worst_recon, worst_gap = 0.0, 0.0
    for _ in range(50):
        N = int(rng3.integers(1, 4))
        m = int(rng3.integers(1, 4))
        K = len(operators.polyharmonic(N, m).indices) if m >= 1 else 1
        B = rng3.normal(size=(K, K))
        B = 0.5 * (B + B.T)
        lam = float(np.linalg.eigvalsh(B)[0])
        A = B + (abs(lam) + 0.1 + rng3.uniform(0, 1)) * np.eye(K)
        rop = operators.EllipticOperator(N, m, A)
        dec = operators.decompose(rop)
        worst_recon = max(worst_recon, operators.reconstruction_residual(dec))
        gap = operators.ellipticity_constant(rop) - operators.ellipticity_constant(dec.d_part)
        worst_gap = max(worst_gap, gap)
    record("decomposition_reconstruction_residual", worst_recon, 0.0)
    record("decomposition_ellipticity_gap", worst_gap, 1e-12)

    # vertical Poincaré margin over randomized trigonometric fields
    rng4 = np.random.default_rng(seed + 3)
    dom2 = geometry.box_domain([-1.5, -1.5], [1.5, 1.5], h=1 / 24, margin=4)
    gx, gy = dom2.coord_grids()
    worst = 0.0
    for _ in range(100):
        coef = rng4.normal(size=6)
        vals = (coef[0] + coef[1] * gx + coef[2] * gy
                + coef[3] * np.sin(2 * gx + coef[4]) * np.cos(2 * gy + coef[5]))
        v = GridFunction(dom2, np.broadcast_to(vals, dom2.shape).copy())
        lam = float(rng4.uniform(0.05, 0.7))
        margin = analyze.check_vertical_poincare(v, center=[0.0, 0.0], r=1.0, lam=lam)
        norm = math.sqrt(dom2.h**2 * float(np.sum(v.values**2)))
        worst = min(worst, margin / max(norm, 1e-30))
    record("vertical_poincare_worst_margin_over_norm", -worst, 5 * dom2.h)

    # quotient norms never exceed the exact derivative norms (+O(h) slack)
    dom3 = geometry.box_domain([0.0, 0.0], [1.0, 1.0], h=1 / 64, margin=4)
    gx, gy = dom3.coord_grids()
    cases = [
        ("sin_x1_d10", np.sin(gx) + 0 * gy, (1, 0),
         math.sqrt(0.5 + math.sin(2.0) / 4.0), math.sqrt(0.5 - math.sin(2.0) / 4.0)),
        ("affine_d10", 2.0 * gx + 3.0 * gy, (1, 0), 2.0, 0.0),
        ("x1sq_d20", gx**2 + 0 * gy, (2, 0), 2.0, 0.0),
    ]
    for name, vals, alpha, exact, next_norm in cases:
        v = GridFunction(dom3, np.broadcast_to(vals, dom3.shape).copy())
        margin = analyze.check_difference_bound(v, alpha, shrink_cells=sum(alpha) + 1,
                                                exact_norm=exact)
        record(f"difference_bound_{name}", -margin, 10.0 * dom3.h * next_norm)

    # half-ball Poincaré constant stable under one refinement
    consts = []
    for h in (1 / 24, 1 / 48):
        domh = geometry.half_space_ball(1.0, h, N=2, margin=4)
        gx, gy = domh.coord_grids()
        rng5 = np.random.default_rng(seed + 4)
        best = 0.0
        for _ in range(12):
            c = rng5.normal(size=5)
            vals = (c[0] * gy + c[1] * gy * gx + c[2] * gy**2
                    + c[3] * np.sin(gx) * gy + c[4] * gy * (1 - gx**2))
            v = GridFunction(domh, np.broadcast_to(vals, domh.shape).copy())
            ratio = analyze.check_poincare_halfball(v, m=1)
            if ratio is not None:
                best = max(best, ratio)
        consts.append(best)
    rel_change = abs(consts[1] - consts[0]) / consts[0]
    record("poincare_halfball_constant_refinement_drift", rel_change, 0.10)

    return results


def write_verify_csv(results: list[CheckResult], path) -> None:
    lines = ["check,margin,tolerance,verdict"]
    for r in results:
        lines.append(f"{r.name},{r.margin:.17g},{r.tolerance:.17g},"
                     f"{'pass' if r.passed else 'FAIL'}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_verify(cfg: ExperimentConfig | None, out_dir, seed: int, threads: int
               ) -> tuple[Path, bool]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    op = build_operator(cfg) if cfg is not None else None
    results = verification_suite(op=op, seed=seed, threads=threads)
    path = out_dir / "verify.csv"
    write_verify_csv(results, path)
    return path, all(r.passed for r in results)

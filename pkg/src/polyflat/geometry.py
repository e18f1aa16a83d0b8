"""Lattice domains and boundary-flatness measurement.

A domain is a uniform lattice of spacing h with a boolean inside/outside mask;
functions vanishing outside the mask realize the zero-extension convention for
homogeneous Dirichlet data.  Generators build half-balls, planar cones, full
balls, boxes, and Koch-type bump curves with tunable roughness amplitude.

Flatness of a boundary is probed the way the definition of a flat set reads:
at a boundary point x and scale r, scan unit normals and measure the thinnest
slab (normalized by r) containing all discrete boundary nodes in B(x, r).  A
perfect hyperplane scores ~0, a corner of turn angle t scores sin(t/2)/2.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

_MAGIC = b"PFD1"


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GridDomain:
    """Uniform lattice with an inside/outside mask.

    Array element `idx` sits at physical point `(origin + idx) * h`, so all
    nodes live on the lattice h*Z^N.  The mask is False on a layer of nodes
    along every face of the bounding array (the zero-extension margin).
    """

    N: int
    h: float
    origin: tuple[int, ...]
    mask: np.ndarray
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != self.N or len(self.origin) != self.N:
            raise DomainError("mask/origin dimension mismatch")
        object.__setattr__(self, "mask", mask)
        mask.setflags(write=False)
        if not mask.any():
            raise DomainError("empty domain")
        if self.margin < 1:
            raise DomainError("mask touches the bounding box; enlarge the margin")
        labels, n = ndimage.label(mask)
        if n != 1:
            raise DomainError(f"inside set has {n} connected components")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mask.shape

    @property
    def margin(self) -> int:
        """Smallest distance (in cells) from an inside node to the array edge."""
        m = min(self.shape)
        for ax in range(self.N):
            rows = np.flatnonzero(self.mask.any(axis=tuple(i for i in range(self.N) if i != ax)))
            m = min(m, rows[0], self.shape[ax] - 1 - rows[-1])
        return int(m)

    def axes(self) -> list[np.ndarray]:
        """Physical coordinates along each array axis."""
        return [(self.origin[i] + np.arange(self.shape[i])) * self.h for i in range(self.N)]

    def node_coords(self) -> np.ndarray:
        """(n_inside, N) physical coordinates of the inside nodes, scan order."""
        idx = np.argwhere(self.mask)
        return (idx + np.asarray(self.origin)) * self.h

    def coord_grids(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays (sparse meshgrid) over the lattice."""
        return list(np.meshgrid(*self.axes(), indexing="ij", sparse=True))

    @property
    def diameter(self) -> float:
        idx = np.argwhere(self.mask)
        span = (idx.max(axis=0) - idx.min(axis=0) + 1) * self.h
        return float(np.linalg.norm(span))

    def boundary_mask(self) -> np.ndarray:
        """Inside nodes with at least one orthogonal neighbor outside."""
        outside_near = np.zeros_like(self.mask)
        for ax in range(self.N):
            for step in (1, -1):
                nb = np.full_like(self.mask, False)
                src = [slice(None)] * self.N
                dst = [slice(None)] * self.N
                if step == 1:
                    src[ax], dst[ax] = slice(1, None), slice(None, -1)
                else:
                    src[ax], dst[ax] = slice(None, -1), slice(1, None)
                nb[tuple(dst)] = self.mask[tuple(src)]
                outside_near |= ~nb
        return self.mask & outside_near


def boundary_points(dom: GridDomain) -> np.ndarray:
    """(n_bdry, N) coordinates of the discrete boundary, row-major scan order."""
    idx = np.argwhere(dom.boundary_mask())
    return (idx + np.asarray(dom.origin)) * dom.h


def boundary_normals(dom: GridDomain) -> tuple[np.ndarray, np.ndarray]:
    """Boundary node coordinates plus outward unit normals.

    The normal at a boundary node is the mean direction toward its outside
    neighbors in the full 3^N - 1 neighborhood; nodes whose neighborhood is
    directionally balanced (thin spikes) fall back to the vector from the
    inside-mass centroid.
    """
    bmask = dom.boundary_mask()
    idx = np.argwhere(bmask)
    acc = np.zeros((len(idx), dom.N))
    offsets = [np.array(off) for off in np.ndindex(*(3,) * dom.N)
               if any(o != 1 for o in off)]
    shape = np.asarray(dom.shape)
    for off in offsets:
        step = off - 1
        nb = idx + step
        valid = np.all((nb >= 0) & (nb < shape), axis=1)
        outside = np.ones(len(idx), dtype=bool)
        outside[valid] = ~dom.mask[tuple(nb[valid].T)]
        acc[outside] += step / np.linalg.norm(step)
    norms = np.linalg.norm(acc, axis=1)
    pts = (idx + np.asarray(dom.origin)) * dom.h
    centroid = dom.node_coords().mean(axis=0)
    flat = norms < 1e-9
    acc[flat] = pts[flat] - centroid
    norms = np.linalg.norm(acc, axis=1)
    norms[norms == 0.0] = 1.0
    return pts, acc / norms[:, None]


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _lattice(lo, hi, h: float, margin: int):
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    ilo = np.floor(lo / h).astype(int) - margin
    ihi = np.ceil(hi / h).astype(int) + margin
    origin = tuple(int(i) for i in ilo)
    shape = tuple(int(b - a + 1) for a, b in zip(ilo, ihi))
    return origin, shape


def _from_predicate(N, h, lo, hi, margin, predicate, label, params) -> GridDomain:
    origin, shape = _lattice(lo, hi, h, margin)
    axes = [(origin[i] + np.arange(shape[i])) * h for i in range(N)]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    mask = predicate(*grids)
    return GridDomain(N=N, h=h, origin=origin, mask=mask, label=label, params=params)


def box_domain(lo, hi, h: float, margin: int = 4, label: str = "box") -> GridDomain:
    """Open axis-aligned box: nodes with lo_i < x_i < hi_i."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise DomainError("box bounds must satisfy lo < hi componentwise")
    N = len(lo)

    def pred(*grids):
        inside = np.ones(tuple(g.shape[i] for i, g in enumerate(grids)), dtype=bool)
        for i, g in enumerate(grids):
            inside = inside & (g > lo[i]) & (g < hi[i])
        return inside

    return _from_predicate(N, h, lo, hi, margin, pred,
                           label, {"lo": lo.tolist(), "hi": hi.tolist(), "h": h})


def ball_domain(R: float, h: float, N: int = 2, margin: int = 4) -> GridDomain:
    """Open ball of radius R centered at the origin."""
    if R <= 0:
        raise DomainError("radius must be positive")

    def pred(*grids):
        rr = sum(g**2 for g in grids)
        return rr < R**2

    return _from_predicate(N, h, [-R] * N, [R] * N, margin, pred,
                           "ball", {"R": R, "h": h, "N": N})


def half_space_ball(R: float, h: float, N: int = 2, margin: int = 4) -> GridDomain:
    """Upper half-ball: |x| < R and x_N > 0, boundary flat through the origin."""
    if R <= 0:
        raise DomainError("radius must be positive")
    if h > R / 16:
        raise DomainError(f"spacing h={h} too coarse for radius {R} (need h <= R/16)")

    def pred(*grids):
        rr = sum(g**2 for g in grids)
        return (rr < R**2) & (grids[-1] > 0)

    return _from_predicate(N, h, [-R] * N, [R] * N, margin, pred,
                           "half_space_ball", {"R": R, "h": h, "N": N})


def cone_domain(omega: float, R: float, h: float, margin: int = 4) -> GridDomain:
    """Planar sector of aperture omega: polar angle in (0, omega), 0 < |x| < R.

    Apertures above pi give the reentrant corner used by the sharpness
    experiments.
    """
    if not 0 < omega < 2 * math.pi:
        raise DomainError("aperture must lie in (0, 2*pi)")
    if R <= 0:
        raise DomainError("radius must be positive")

    def pred(x, y):
        rr = x**2 + y**2
        theta = np.mod(np.arctan2(y, x), 2 * math.pi)
        return (rr > 0) & (rr < R**2) & (theta > 0) & (theta < omega)

    return _from_predicate(2, h, [-R, -R], [R, R], margin, pred,
                           "cone", {"omega": omega, "R": R, "h": h})


def koch_curve(delta: float, depth: int, R: float, n_base: int = 6) -> np.ndarray:
    """Closed Koch-type polygon: vertices (M, 2), counterclockwise, not repeated.

    Starts from a regular n_base-gon of circumradius R; each generation
    replaces every segment by a 4-segment outward bump of height
    delta * (segment length) erected over the middle third.
    """
    if not 0 <= delta < 0.4:
        raise DomainError("bump amplitude must lie in [0, 0.4)")
    if depth < 0:
        raise DomainError("depth must be >= 0")
    ang = 2 * math.pi * np.arange(n_base) / n_base
    pts = np.column_stack([R * np.cos(ang), R * np.sin(ang)])
    for _ in range(depth):
        p0 = pts
        p1 = np.roll(pts, -1, axis=0)
        v = p1 - p0
        # outward normal for a counterclockwise polygon
        nrm = np.column_stack([v[:, 1], -v[:, 0]])
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        a = p0 + v / 3.0
        b = p0 + 2.0 * v / 3.0
        tip = p0 + v / 2.0 + delta * np.linalg.norm(v, axis=1)[:, None] * nrm
        pts = np.concatenate([arr[:, None, :] for arr in (p0, a, tip, b)], axis=1)
        pts = pts.reshape(-1, 2)
    return pts


def _points_in_polygon(x: np.ndarray, y: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd rule with the half-open convention (edges never double count)."""
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for i in range(len(verts)):
        crosses = (y0[i] <= y) != (y1[i] <= y)
        if y1[i] == y0[i]:
            continue
        xi = x0[i] + (y - y0[i]) * (x1[i] - x0[i]) / (y1[i] - y0[i])
        inside ^= crosses & (x < xi)
    return inside


def koch_domain(delta: float, depth: int, R: float, h: float,
                margin: int = 4, n_base: int = 6) -> GridDomain:
    """Disk-like region bounded by a closed Koch-type curve.

    The finest-generation segments must span at least 4 lattice cells, else
    the construction is rejected as under-resolved.
    """
    verts = koch_curve(delta, depth, R, n_base)
    side = 2 * R * math.sin(math.pi / n_base)
    finest = side / 3**depth
    if finest < 4 * h:
        raise DomainError(
            f"depth {depth} segments span {finest / h:.2f} cells (< 4); refine h or lower depth")
    bound = R * (1 + 2 * delta)
    origin, shape = _lattice([-bound, -bound], [bound, bound], h, margin)
    ax = [(origin[i] + np.arange(shape[i])) * h for i in range(2)]
    gx, gy = np.meshgrid(*ax, indexing="ij")
    mask = _points_in_polygon(gx, gy, verts)
    return GridDomain(N=2, h=h, origin=origin, mask=mask, label="koch",
                      params={"delta": delta, "depth": depth, "R": R, "h": h,
                              "n_base": n_base})


# ---------------------------------------------------------------------------
# flatness measurement
# ---------------------------------------------------------------------------


@dataclass
class FlatnessSample:
    point: tuple
    r: float
    normal: tuple
    eps: float


@dataclass
class FlatnessReport:
    samples: list[FlatnessSample]
    eps_max: float
    r0: float

    def to_csv(self, path) -> None:
        write_flatness_csv(self, path)


def _scan_normals(N: int, n_dir: int | None = None) -> np.ndarray:
    if N == 2:
        n_dir = 720 if n_dir is None else n_dir
        ang = np.pi * np.arange(n_dir) / n_dir
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if N == 3:
        n_dir = 1000 if n_dir is None else n_dir
        i = np.arange(n_dir)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i  # Fibonacci sphere
        z = 1.0 - 2.0 * (i + 0.5) / n_dir
        rho = np.sqrt(np.maximum(1.0 - z**2, 0.0))
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    raise DomainError(f"no direction grid for dimension {N}")


def measure_flatness(dom: GridDomain, radii, n_centers: int = 16,
                     centers=None, seed: int = 0, n_dir: int | None = None) -> FlatnessReport:
    """Slab-fit flatness of the discrete boundary at sampled centers and scales.

    For each (center x, radius r), collect the boundary nodes inside B(x, r),
    project them on a scanned grid of unit normals, and report
    eps(x, r) = (thinnest slab width) / (2 r) together with the best normal.
    """
    radii = sorted(float(r) for r in radii)
    if not radii:
        raise ValueError("need at least one radius")
    if radii[0] < 4 * dom.h - 1e-12:
        raise ValueError(f"radius {radii[0]} below resolution floor 4h = {4 * dom.h}")
    if radii[-1] > dom.diameter:
        raise ValueError("radius exceeds the domain diameter")

    bpts = boundary_points(dom)
    if centers is None:
        rng = np.random.default_rng(seed)
        take = min(n_centers, len(bpts))
        centers = bpts[np.sort(rng.choice(len(bpts), size=take, replace=False))]
    else:
        centers = np.atleast_2d(np.asarray(centers, dtype=float))

    normals = _scan_normals(dom.N, n_dir)
    tree = cKDTree(bpts)
    samples = []
    for c in centers:
        for r in radii:
            idx = tree.query_ball_point(c, r)
            if not idx:
                raise DomainError(f"no boundary nodes in B({tuple(c)}, {r})")
            rel = bpts[idx] - c
            proj = rel @ normals.T
            span = proj.max(axis=0) - proj.min(axis=0)
            best = int(np.argmin(span))
            eps = float(span[best] / (2.0 * r))
            samples.append(FlatnessSample(point=tuple(c), r=float(r),
                                          normal=tuple(normals[best]), eps=eps))
    return FlatnessReport(samples=samples,
                          eps_max=max(s.eps for s in samples),
                          r0=radii[-1])


def write_flatness_csv(report: FlatnessReport, path) -> None:
    path = Path(path)
    N = len(report.samples[0].point) if report.samples else 2
    cols = ["x", "y", "z"][:N] + ["r", "eps"] + ["nx", "ny", "nz"][:N]
    lines = [",".join(cols)]
    for s in report.samples:
        vals = list(s.point) + [s.r, s.eps] + list(s.normal)
        lines.append(",".join(f"{v:.17g}" for v in vals))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# raster persistence
# ---------------------------------------------------------------------------


def save_domain(dom: GridDomain, path) -> None:
    """Binary raster: 16-byte header, per-axis extents, packed row-major mask.

    A JSON sidecar (same name + ".json") records the generator label and
    parameters.
    """
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", dom.N))
        f.write(struct.pack("<d", dom.h))
        for o, s in zip(dom.origin, dom.shape):
            f.write(struct.pack("<ii", o, s))
        f.write(np.packbits(dom.mask.ravel()).tobytes())
    sidecar = {"label": dom.label, "params": dom.params}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def _read_header(f):
    if f.read(4) != _MAGIC:
        raise DomainError("not a domain raster file")
    (N,) = struct.unpack("<I", f.read(4))
    (h,) = struct.unpack("<d", f.read(8))
    origin, shape = [], []
    for _ in range(N):
        o, s = struct.unpack("<ii", f.read(8))
        origin.append(o)
        shape.append(s)
    return N, h, tuple(origin), tuple(shape)


def load_domain(path) -> GridDomain:
    path = Path(path)
    with open(path, "rb") as f:
        N, h, origin, shape = _read_header(f)
        n = int(np.prod(shape))
        raw = np.frombuffer(f.read((n + 7) // 8), dtype=np.uint8)
    mask = np.unpackbits(raw, count=n).astype(bool).reshape(shape)
    label, params = "", {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        doc = json.loads(sidecar.read_text())
        label, params = doc.get("label", ""), doc.get("params", {})
    return GridDomain(N=N, h=h, origin=origin, mask=mask, label=label, params=params)

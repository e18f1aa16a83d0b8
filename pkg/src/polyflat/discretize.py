"""Discrete difference calculus and bilinear-form assembly on masked lattices.

Derivatives are one-sided difference quotients D_eps u = (u(x + eps e_i) -
u(x)) / eps with signed eps, composed per axis for higher orders.  Functions
are extended by zero outside the mask (and outside the array, which the
margin keeps irrelevant), so homogeneous Dirichlet data needs no ghost layers:
the unknowns are exactly the inside nodes and every stencil simply reads
zeros across the boundary.

The stiffness matrix of the form sum_{alpha,beta} a_{alpha,beta}
(D^alpha u)(D^beta v) summed over the whole lattice with weight h^N is a pure
convolution restricted to the inside nodes, so it is assembled from a single
cross-correlation stencil of the difference operators.  Entries carry the
h^(N-2m) scaling; the load vector is h^N f.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import GridDomain
from .multiindex import MultiIndex, enumerate_indices
from .operators import EllipticOperator, ellipticity_constant


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridFunction:
    """Real values on the lattice of a domain, hard zeros outside the mask."""

    dom: GridDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.dom.shape:
            raise ValueError(f"values shape {vals.shape} does not match lattice {self.dom.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function contains non-finite values")
        vals = np.where(self.dom.mask, vals, 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, dom: GridDomain) -> "GridFunction":
        return cls(dom, np.zeros(dom.shape))

    @classmethod
    def from_callable(cls, dom: GridDomain, fn) -> "GridFunction":
        """Sample fn(*coordinate grids) on the lattice and mask it."""
        vals = np.broadcast_to(fn(*dom.coord_grids()), dom.shape).astype(float)
        return cls(dom, vals.copy())


def shift(values: np.ndarray, axis: int, cells: int) -> np.ndarray:
    """values(x + cells*h*e_axis) with zero fill beyond the array."""
    if cells == 0:
        return values.copy()
    out = np.zeros_like(values)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if cells > 0:
        src[axis], dst[axis] = slice(cells, None), slice(None, -cells)
    else:
        src[axis], dst[axis] = slice(None, cells), slice(-cells, None)
    out[tuple(dst)] = values[tuple(src)]
    return out


def forward_difference(u, axis: int, cells: int = 1, h: float | None = None) -> np.ndarray:
    """Difference quotient (u(x + eps e_axis) - u(x)) / eps, eps = cells * h.

    Signed eps: cells = -1 gives the backward quotient, and the pair satisfies
    the exact summation-by-parts identity
    sum u * (D_eps v) = -sum v * (D_{-eps} u).
    Accepts a GridFunction or a raw lattice array (then h is required).
    The result is a full-lattice array, not masked.
    """
    if isinstance(u, GridFunction):
        values, h = u.values, u.dom.h
    else:
        values = np.asarray(u, dtype=float)
        if h is None:
            raise ValueError("spacing h is required for raw arrays")
    if cells == 0:
        raise ValueError("cells must be a non-zero integer")
    eps = cells * h
    return (shift(values, axis, cells) - values) / eps


def iterated_difference(u, alpha, cells: int = 1, h: float | None = None) -> np.ndarray:
    """Composition of forward_difference along each axis, alpha_i times.

    The per-axis factors commute exactly (they are shift polynomials), so the
    application order is irrelevant.
    """
    alpha = MultiIndex(alpha)
    if alpha.order < 1:
        raise ValueError("need |alpha| >= 1")
    if isinstance(u, GridFunction):
        out, h = u.values, u.dom.h
    else:
        out = np.asarray(u, dtype=float)
        if h is None:
            raise ValueError("spacing h is required for raw arrays")
    for axis, reps in enumerate(alpha):
        for _ in range(reps):
            out = forward_difference(out, axis, cells=cells, h=h)
    return out


@dataclass(frozen=True)
class GradientField:
    """All order-m difference quotients of a grid function, full lattice."""

    dom: GridDomain
    m: int
    indices: tuple[MultiIndex, ...]
    components: np.ndarray  # (K, *lattice shape)

    def euclidean_density(self) -> np.ndarray:
        return np.sum(self.components**2, axis=0)

    def weighted_density(self, op: EllipticOperator) -> np.ndarray:
        if op.m != self.m or op.N != self.dom.N:
            raise ValueError("operator and field orders do not match")
        K = len(self.indices)
        flat = self.components.reshape(K, -1)
        return np.einsum("ab,ax,bx->x", op.coeffs, flat, flat).reshape(self.dom.shape)


def grad_m(u: GridFunction, m: int) -> GradientField:
    """Vector of all order-m difference quotients, one per multi-index."""
    idx = enumerate_indices(u.dom.N, m)
    comps = np.stack([iterated_difference(u, a) for a in idx])
    return GradientField(dom=u.dom, m=m, indices=idx, components=comps)


# ---------------------------------------------------------------------------
# stencils and assembly
# ---------------------------------------------------------------------------


def difference_stencil(alpha: MultiIndex, N: int, h: float) -> dict[tuple, float]:
    """Stencil of D_h^alpha applied to the unit impulse at 0: offset -> weight.

    Support lies in the offsets -alpha <= s <= 0 (the quotient at x reads
    values at x..x+alpha, so the impulse is seen from below).
    """
    stencil = {(0,) * N: 1.0}
    for axis, reps in enumerate(alpha):
        for _ in range(reps):
            new: dict[tuple, float] = {}
            for off, w in stencil.items():
                down = tuple(o - (1 if i == axis else 0) for i, o in enumerate(off))
                new[down] = new.get(down, 0.0) + w / h
                new[off] = new.get(off, 0.0) - w / h
            stencil = new
    return stencil


def operator_stencil(op: EllipticOperator, h: float) -> dict[tuple, float]:
    """Convolution stencil w(s) of the assembled bilinear form.

    w(s) = h^N * sum_{alpha,beta} a_{alpha,beta} * sum_o c^alpha(o) c^beta(o+s)
    where c^gamma is the impulse stencil of D_h^gamma.  The cross-correlation
    of a symmetric coefficient matrix is even; residual floating-point
    asymmetry is removed by pairwise averaging so the assembled matrix is
    symmetric to the last bit.
    """
    idx = enumerate_indices(op.N, op.m)
    stencils = [difference_stencil(a, op.N, h) for a in idx]
    w: dict[tuple, float] = {}
    for i, ca in enumerate(stencils):
        for j, cb in enumerate(stencils):
            a = op.coeffs[i, j]
            if a == 0.0:
                continue
            for oa, wa in ca.items():
                for ob, wb in cb.items():
                    s = tuple(b - a_ for a_, b in zip(oa, ob))
                    w[s] = w.get(s, 0.0) + a * wa * wb
    hN = h**op.N
    out = {}
    for s, v in w.items():
        neg = tuple(-c for c in s)
        out[s] = 0.5 * (v + w.get(neg, 0.0)) * hN
    return {s: v for s, v in out.items() if v != 0.0}


@dataclass
class DiscreteSystem:
    """Assembled SPD system over the inside nodes.

    Matrix entries carry the h^(N-2m) scale; the right-hand side is h^N f, so
    `matrix @ u = rhs` is the discrete weak formulation as stated.
    """

    dom: GridDomain
    op: EllipticOperator
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    node_map: np.ndarray = field(repr=False)  # unknown index -> flat lattice index

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_grid_function(self, vec: np.ndarray) -> GridFunction:
        values = np.zeros(self.dom.shape)
        values.ravel()[self.node_map] = vec
        return GridFunction(self.dom, values)

    def restrict(self, u: GridFunction) -> np.ndarray:
        return u.values.ravel()[self.node_map]


def assemble(op: EllipticOperator, dom: GridDomain, f) -> DiscreteSystem:
    """Assemble stiffness matrix and load vector on the inside nodes.

    f may be a GridFunction, a scalar, or a lattice array.  Requires the
    domain margin to be at least m cells so every difference stencil of an
    inside node stays within the array.
    """
    if op.N != dom.N:
        raise AssemblyError(f"operator dimension {op.N} != domain dimension {dom.N}")
    if dom.margin < op.m:
        raise AssemblyError(f"domain margin {dom.margin} < m = {op.m} cells")
    if op.symmetry_defect != 0.0:
        raise AssemblyError("coefficient matrix must be symmetric")
    ellipticity_constant(op)

    mask = dom.mask
    n = int(mask.sum())
    unknown = np.full(dom.shape, -1, dtype=np.int64)
    node_map = np.flatnonzero(mask.ravel())
    unknown.ravel()[node_map] = np.arange(n)

    w = operator_stencil(op, dom.h)
    rows, cols, vals = [], [], []
    for s, v in sorted(w.items()):
        shifted = unknown
        for ax, c in enumerate(s):
            shifted = shift_int(shifted, ax, c)
        here = unknown[mask]
        there = shifted[mask]
        ok = there >= 0
        rows.append(here[ok])
        cols.append(there[ok])
        vals.append(np.full(int(ok.sum()), v))
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()

    if isinstance(f, GridFunction):
        fv = f.values
    else:
        fv = np.broadcast_to(np.asarray(f, dtype=float), dom.shape)
    if not np.all(np.isfinite(fv)):
        raise AssemblyError("source term contains non-finite values")
    rhs = dom.h**dom.N * fv.ravel()[node_map]
    return DiscreteSystem(dom=dom, op=op, matrix=matrix, rhs=rhs, node_map=node_map)


def shift_int(values: np.ndarray, axis: int, cells: int) -> np.ndarray:
    """Integer-array shift with fill -1 (no unknown there)."""
    if cells == 0:
        return values
    out = np.full_like(values, -1)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if cells > 0:
        src[axis], dst[axis] = slice(cells, None), slice(None, -cells)
    else:
        src[axis], dst[axis] = slice(None, cells), slice(-cells, None)
    out[tuple(dst)] = values[tuple(src)]
    return out


# ---------------------------------------------------------------------------
# local energies
# ---------------------------------------------------------------------------


def ball_node_mask(dom: GridDomain, center, r: float) -> np.ndarray:
    """Boolean lattice mask of the open ball B(center, r), mask-agnostic."""
    grids = dom.coord_grids()
    rr = sum((g - c)**2 for g, c in zip(grids, np.asarray(center, dtype=float)))
    return rr < r**2


def energy_local(op: EllipticOperator, u, center, r: float,
                 metric: str = "euclidean", m: int | None = None,
                 restrict_to_mask: bool = False) -> float:
    """h^N-weighted sum of |grad^m u|^2 over all lattice nodes in B(center, r).

    By default the sum runs over the full lattice, zero-extension fringe
    included; restrict_to_mask=True keeps only inside nodes, which matches
    the continuum picture where the extended function has vanishing
    derivatives outside the domain (the one-sided quotients leave an O(h)
    halo of spurious density just outside the mask).  The "weighted" metric
    uses the coefficient quadratic form instead of the Euclidean one.  Pass a
    precomputed GradientField to amortize the differencing across many
    (center, r) pairs.
    """
    if isinstance(u, GridFunction):
        field_ = grad_m(u, op.m if m is None else m)
    elif isinstance(u, GradientField):
        field_ = u
    else:
        raise TypeError("u must be a GridFunction or GradientField")
    if r < 2 * field_.dom.h:
        raise ValueError(f"radius {r} below resolution floor 2h = {2 * field_.dom.h}")
    if metric == "euclidean":
        density = field_.euclidean_density()
    elif metric == "weighted":
        density = field_.weighted_density(op)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ball = ball_node_mask(field_.dom, center, r)
    if restrict_to_mask:
        ball = ball & field_.dom.mask
    return float(field_.dom.h**field_.dom.N * density[ball].sum())


# ---------------------------------------------------------------------------
# grid function persistence (raster + float64 block)
# ---------------------------------------------------------------------------


def save_grid_function(u: GridFunction, path) -> None:
    """Domain raster followed by the row-major float64 value block."""
    from .geometry import save_domain

    save_domain(u.dom, path)
    with open(path, "ab") as f:
        f.write(u.values.astype("<f8").tobytes())


def load_grid_function(path) -> GridFunction:
    from .geometry import _read_header, load_domain

    dom = load_domain(path)
    n = int(np.prod(dom.shape))
    with open(path, "rb") as f:
        f.seek(16 + 8 * dom.N + (n + 7) // 8)
        values = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(dom.shape)
    return GridFunction(dom, values.copy())

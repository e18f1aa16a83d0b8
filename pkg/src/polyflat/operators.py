"""Constant-coefficient symmetric elliptic operators of order 2m.

An operator is stored as its real coefficient matrix A = (a_{alpha,beta})
over the multi-indices of order m in canonical (graded-lex) order.  The
quadratic form xi -> xi^T A xi on that index set decides ellipticity: the
smallest eigenvalue is the sharpest admissible ellipticity constant.

The vertical-direction split peels the operator into a part with no repeated
derivative in the last coordinate and a lower-order elliptic remainder; it is
the workhorse behind the order-reduction experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .multiindex import MultiIndex, enumerate_indices, factorial_weight, unit_index

#: lam_min <= ELLIPTICITY_RTOL * max|a| is reported as non-elliptic.
ELLIPTICITY_RTOL = 1e-10


class NonEllipticError(ValueError):
    """Raised when a coefficient matrix fails the positivity test."""

    def __init__(self, lam_min: float, tol: float):
        super().__init__(f"smallest eigenvalue {lam_min:.6g} <= tolerance {tol:.6g}")
        self.lam_min = lam_min
        self.tol = tol


@dataclass(frozen=True)
class EllipticOperator:
    """Order-2m operator with symmetric coefficients a_{alpha,beta}.

    Attributes:
        N: ambient space dimension.
        m: half-order (the operator differentiates 2m times).
        coeffs: (K, K) float array over enumerate_indices(N, m).
    """

    N: int
    m: int
    coeffs: np.ndarray

    def __post_init__(self):
        K = len(enumerate_indices(self.N, self.m))
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (K, K):
            raise ValueError(f"coefficient matrix must be {K}x{K} for N={self.N}, m={self.m}")
        object.__setattr__(self, "coeffs", coeffs)
        coeffs.setflags(write=False)

    @property
    def indices(self) -> tuple[MultiIndex, ...]:
        return enumerate_indices(self.N, self.m)

    @property
    def symmetry_defect(self) -> float:
        """max |a_{alpha,beta} - a_{beta,alpha}|; 0 for admissible operators."""
        return float(np.max(np.abs(self.coeffs - self.coeffs.T))) if self.coeffs.size else 0.0

    @property
    def max_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def __repr__(self) -> str:
        return f"EllipticOperator(N={self.N}, m={self.m}, K={self.coeffs.shape[0]})"


@dataclass(frozen=True)
class Decomposition:
    """Split A = B + D∘(-d²/dx_N²) of an order-2m operator.

    b_coeffs keeps exactly the entries with alpha_N = 0 or beta_N = 0 (same
    index set as the parent, not elliptic on its own); d_part collects the
    doubly-vertical entries shifted down by e_N and is elliptic of half-order
    m - 1.
    """

    parent: EllipticOperator
    b_coeffs: np.ndarray = field(repr=False)
    d_part: EllipticOperator = field(repr=False)


def polyharmonic(N: int, m: int) -> EllipticOperator:
    """The m-fold negative Laplacian: diagonal coefficients m!/alpha!."""
    if N < 1 or m < 1:
        raise ValueError("polyharmonic operator needs N >= 1 and m >= 1")
    idx = enumerate_indices(N, m)
    diag = [factorial_weight(a, m) for a in idx]
    return EllipticOperator(N, m, np.diag(np.asarray(diag, dtype=float)))


def ellipticity_constant(op: EllipticOperator) -> float:
    """Smallest eigenvalue of the coefficient matrix (the sharp form constant).

    Raises NonEllipticError when it is below ELLIPTICITY_RTOL * max|a|, which
    covers both indefinite matrices and numerically degenerate ones.
    """
    if op.symmetry_defect != 0.0:
        raise ValueError("coefficient matrix is not symmetric")
    lam_min = float(np.linalg.eigvalsh(op.coeffs)[0])
    tol = ELLIPTICITY_RTOL * op.max_coeff
    if lam_min <= tol:
        raise NonEllipticError(lam_min, tol)
    return lam_min


def is_elliptic(op: EllipticOperator) -> bool:
    try:
        ellipticity_constant(op)
    except (NonEllipticError, ValueError):
        return False
    return True


def decompose(op: EllipticOperator) -> Decomposition:
    """Peel off two vertical derivatives: A = B + D∘(-d²/dx_N²).

    Entries with alpha_N > 0 and beta_N > 0 drop to the order-2(m-1) matrix
    d_{alpha-e_N, beta-e_N}; everything else stays in the B part.  The split
    is an exact partition of the coefficients, and the lower-order part
    inherits the ellipticity constant.
    """
    if op.m < 1:
        raise ValueError("cannot decompose an order-0 operator")
    ellipticity_constant(op)  # rejects non-elliptic input

    idx = op.indices
    vertical = np.array([a[-1] > 0 for a in idx])
    both = np.outer(vertical, vertical)
    b_coeffs = np.where(both, 0.0, op.coeffs)

    sub = enumerate_indices(op.N, op.m - 1)
    e_n = unit_index(op.N, op.N - 1)
    pos = {a: i for i, a in enumerate(idx)}
    lift = [pos[a + e_n] for a in sub]
    d_coeffs = op.coeffs[np.ix_(lift, lift)].copy()
    d_part = EllipticOperator(op.N, op.m - 1, d_coeffs)
    return Decomposition(parent=op, b_coeffs=b_coeffs, d_part=d_part)


def reconstruction_residual(dec: Decomposition) -> float:
    """max |A - (B + lifted D)|; exactly 0 because the split partitions entries."""
    op = dec.parent
    total = dec.b_coeffs.copy()
    sub = enumerate_indices(op.N, op.m - 1)
    e_n = unit_index(op.N, op.N - 1)
    pos = {a: i for i, a in enumerate(op.indices)}
    lift = [pos[a + e_n] for a in sub]
    total[np.ix_(lift, lift)] += dec.d_part.coeffs
    return float(np.max(np.abs(op.coeffs - total)))


def apply_symbol(op: EllipticOperator, k) -> float:
    """Evaluate the homogeneous symbol sum a_{alpha,beta} k^alpha k^beta.

    For the m-fold Laplacian this equals |k|^(2m); used as the cross-check
    oracle for stencil assembly.
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (op.N,):
        raise ValueError(f"frequency vector must have length {op.N}")
    powers = np.array([np.prod(k**np.asarray(a)) for a in op.indices])
    return float(powers @ op.coeffs @ powers)


def to_json(op: EllipticOperator) -> str:
    """Serialize as {"N", "m", "entries": [...]} keeping only the upper triangle."""
    entries = []
    idx = op.indices
    for i, a in enumerate(idx):
        for j in range(i, len(idx)):
            v = op.coeffs[i, j]
            if v != 0.0:
                entries.append({"alpha": str(a), "beta": str(idx[j]), "value": v})
    return json.dumps({"N": op.N, "m": op.m, "entries": entries}, indent=2)


def from_json(text: str) -> EllipticOperator:
    """Load an operator, mirroring entries so symmetry is rebuilt from one triangle.

    Conflicting duplicate entries (same unordered index pair, different value)
    are kept as given, so a corrupted asymmetric file is loadable and will be
    caught by the symmetry checks downstream.
    """
    doc = json.loads(text)
    N, m = int(doc["N"]), int(doc["m"])
    idx = enumerate_indices(N, m)
    pos = {a: i for i, a in enumerate(idx)}
    K = len(idx)
    coeffs = np.zeros((K, K))
    seen = np.zeros((K, K), dtype=bool)
    for ent in doc["entries"]:
        a = MultiIndex.parse(ent["alpha"])
        b = MultiIndex.parse(ent["beta"])
        if a not in pos or b not in pos:
            raise ValueError(f"entry ({a},{b}) has wrong order for m={m}")
        i, j = pos[a], pos[b]
        v = float(ent["value"])
        coeffs[i, j] = v
        seen[i, j] = True
        if not seen[j, i]:
            coeffs[j, i] = v
    return EllipticOperator(N, m, coeffs)

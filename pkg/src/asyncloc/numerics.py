"""Dense linear-algebra kernel used by the estimator and bound computations.

All symmetric positive definite (SPD) systems in the toolkit are solved
through an explicit Cholesky factor; inverses of correlation matrices are
never formed. Matrices whose diagonals mix very different units (meters
and seconds) are solved through :func:`solve_spd` / :func:`invert_spd`,
which equilibrate before factorizing so that the rank-deficiency test is
scale free.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite
from .validation import as_float_array, check_square, check_symmetric

# Relative pivot threshold distinguishing rounding noise from genuine
# rank deficiency.
PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with A = L @ L.T."""

    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def cholesky_spd(a) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix as L @ L.T.

    Raises:
        NotPositiveDefinite: if factorization fails or any pivot falls at or
            below ``PIVOT_RTOL`` times the largest diagonal entry.
        ValueError: if the input is not symmetric to within tolerance.
    """
    a = as_float_array(a, "a", ndim=2)
    check_square(a, "a")
    check_symmetric(a, "a")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    pivots = np.diag(lower) ** 2
    tol = PIVOT_RTOL * np.diag(a).max()
    if pivots.min() <= tol:
        raise NotPositiveDefinite(
            f"pivot {pivots.min():.3e} at or below tolerance {tol:.3e}"
        )
    return CholeskyFactor(lower)


def spd_solve(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve A x = b given the Cholesky factor of A (vector or matrix b)."""
    b = as_float_array(b, "b")
    if b.shape[0] != factor.n:
        raise DimensionMismatch(
            f"b: leading dimension {b.shape[0]} != factor size {factor.n}"
        )
    z = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower.T, z, lower=False)


def whiten(factor: CholeskyFactor, x) -> np.ndarray:
    """Apply L^-1 to a vector or matrix (A = L L.T), decorrelating rows."""
    x = as_float_array(x, "x")
    if x.shape[0] != factor.n:
        raise DimensionMismatch(
            f"x: leading dimension {x.shape[0]} != factor size {factor.n}"
        )
    return solve_triangular(factor.lower, x, lower=True)


def weighted_sq_norm(r, factor: CholeskyFactor) -> float:
    """r.T @ A^-1 @ r through one triangular solve (A = L L.T)."""
    r = as_float_array(r, "r", ndim=1)
    if r.shape[0] != factor.n:
        raise DimensionMismatch(f"r: length {r.shape[0]} != factor size {factor.n}")
    z = solve_triangular(factor.lower, r, lower=True)
    return float(z @ z)


def sample_correlated_gaussian(factor: CholeskyFactor, scale: float, rng) -> np.ndarray:
    """Draw one zero-mean Gaussian vector with covariance scale**2 * (L @ L.T)."""
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    return scale * (factor.lower @ rng.standard_normal(factor.n))


def finite_diff_jacobian(f, x, step=None) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``.

    The default per-coordinate step is ``1e-6 * (1 + |x_j|)``, which stays
    meaningful for coordinates spanning many orders of magnitude.
    """
    x = as_float_array(x, "x", ndim=1)
    if step is None:
        h = 1e-6 * (1.0 + np.abs(x))
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), x.shape).copy()
    cols = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        cols.append((np.asarray(f(xp), dtype=float) - np.asarray(f(xm), dtype=float)) / (2.0 * h[j]))
    return np.stack(cols, axis=-1)


def stacked_lstsq(rows, rcond: float = 1e-12) -> np.ndarray:
    """Least-squares solution of a vertically stacked system.

    ``rows`` is a list of (matrix, vector) blocks sharing a column count;
    the blocks are stacked and solved in one least-squares problem. Columns
    are normalized to unit length first so the rank decision is unaffected
    by the (possibly wildly different) units of the unknowns, then the
    solution is rescaled. Solving the stacked system instead of forming
    normal equations keeps strongly reweighted blocks from erasing weaker
    ones in floating point.

    Raises:
        NotPositiveDefinite: if the stacked matrix is column-rank deficient
            (some direction is constrained by no block).
    """
    mats = []
    vecs = []
    for mat, vec in rows:
        mat = as_float_array(mat)
        vec = as_float_array(vec, ndim=1)
        if mat.ndim != 2 or mat.shape[0] != vec.shape[0]:
            raise DimensionMismatch(
                f"stacked block shapes {mat.shape} and {vec.shape} are inconsistent"
            )
        mats.append(mat)
        vecs.append(vec)
    a = np.vstack(mats)
    b = np.concatenate(vecs)
    col_scale = np.sqrt(np.sum(a * a, axis=0))
    if not np.all(col_scale > 0):
        dead = int(np.argmin(col_scale))
        raise NotPositiveDefinite(f"column {dead} is zero in every stacked block")
    solution, _, rank, _ = np.linalg.lstsq(a / col_scale, b, rcond=rcond)
    if rank < a.shape[1]:
        raise NotPositiveDefinite(
            f"stacked system rank {rank} < {a.shape[1]} unknowns"
        )
    return solution / col_scale


def lexicographic_lstsq(a, b, secondary, d, rcond: float = 1e-12) -> np.ndarray:
    """Two-level least squares: minimize ``||secondary@z - d||`` over the
    minimizers of ``||a@z - b||``.

    This is the exact limit of the stacked problem
    ``min w*||a@z - b||^2 + ||secondary@z - d||^2`` as the weight w grows
    without bound; it replaces the stacked solve when w is so large that the
    secondary block would be rounded away entirely. Columns of ``a`` are
    normalized before the rank decision so mixed units do not skew it.

    Raises:
        NotPositiveDefinite: if the two blocks together leave some direction
            unconstrained.
    """
    a = as_float_array(a, "a", ndim=2)
    b = as_float_array(b, "b", ndim=1)
    secondary = as_float_array(secondary, "secondary", ndim=2)
    d = as_float_array(d, "d", ndim=1)
    if a.shape[0] != b.shape[0] or secondary.shape[0] != d.shape[0]:
        raise DimensionMismatch("block row counts do not match their targets")
    if a.shape[1] != secondary.shape[1]:
        raise DimensionMismatch(
            f"blocks disagree on column count: {a.shape[1]} vs {secondary.shape[1]}"
        )
    col_scale = np.sqrt(np.sum(a * a, axis=0))
    col_scale[col_scale == 0] = 1.0
    u, s, vt = np.linalg.svd(a / col_scale, full_matrices=True)
    tol = s[0] * rcond if s.size else 0.0
    rank = int(np.sum(s > tol))
    particular = vt[:rank].T @ ((u[:, :rank].T @ b) / s[:rank]) / col_scale
    null_basis = vt[rank:].T / col_scale[:, None]
    if null_basis.shape[1] == 0:
        return particular
    coeffs = stacked_lstsq(
        [(secondary @ null_basis, d - secondary @ particular)], rcond=rcond
    )
    return particular + null_basis @ coeffs


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Small negative eigenvalues from rounding are clipped to zero.
    """
    a = as_float_array(a, "a", ndim=2)
    check_square(a, "a")
    check_symmetric(a, "a")
    eigvals, eigvecs = np.linalg.eigh(a)
    floor = -1e-10 * max(1.0, float(np.abs(eigvals).max()))
    if eigvals.min() < floor:
        raise NotPositiveDefinite(
            f"matrix has a negative eigenvalue {eigvals.min():.3e}"
        )
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def _equilibrated_factor(a):
    """Scale-free Cholesky: factor D^-1 A D^-1 with D = sqrt(diag(A))."""
    d = np.sqrt(np.diag(a))
    if d.size == 0 or np.min(np.diag(a)) <= 0:
        raise NotPositiveDefinite("nonpositive diagonal entry")
    scaled = a / np.outer(d, d)
    return cholesky_spd(scaled), d


def solve_spd(a, b) -> np.ndarray:
    """Solve A x = b for SPD A whose diagonal may mix units.

    Equilibrates symmetrically before factorization so that the pivot test
    in :func:`cholesky_spd` measures rank deficiency, not unit disparity.
    """
    a = as_float_array(a, "a", ndim=2)
    b = as_float_array(b, "b")
    check_square(a, "a")
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"b: leading dimension {b.shape[0]} != {a.shape[0]}")
    factor, d = _equilibrated_factor(a)
    if b.ndim == 1:
        return spd_solve(factor, b / d) / d
    return spd_solve(factor, b / d[:, None]) / d[:, None]


def invert_spd(a) -> np.ndarray:
    """Explicit symmetric inverse of an SPD matrix via the equilibrated factor."""
    a = as_float_array(a, "a", ndim=2)
    check_square(a, "a")
    factor, d = _equilibrated_factor(a)
    inv_scaled = spd_solve(factor, np.eye(a.shape[0]))
    inv = inv_scaled / np.outer(d, d)
    return (inv + inv.T) / 2.0

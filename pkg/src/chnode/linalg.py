"""Dense symmetric-spectrum primitives used by the certificate computations.

Eigenvalues of symmetric matrices are obtained by cyclic Jacobi rotation
sweeps. The matrices handled here are small (state dimensions up to a few
hundred), where Jacobi converges unconditionally and needs no external
solver.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotFiniteError, ShapeError, SymmetryError

DEFAULT_TOL = 1e-9

_MAX_SWEEPS = 64


@dataclass(frozen=True)
class SymEigBounds:
    """Extreme eigenvalues of a symmetric matrix."""

    lambda_min: float
    lambda_max: float


def check_finite(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Return ``a`` as float64, raising if any entry is NaN or Inf."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NotFiniteError(f"{what} contains non-finite entries")
    return a


def _check_symmetric(m: np.ndarray, tol: float) -> np.ndarray:
    m = check_finite(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    skew = np.max(np.abs(m - m.T)) if m.size else 0.0
    if skew > tol:
        raise SymmetryError(
            f"matrix is asymmetric beyond tolerance: max |M - M^T| = {skew:g} > {tol:g}"
        )
    # Work on the symmetrized matrix so rounding asymmetry within tol
    # cannot leak into the rotations.
    return 0.5 * (m + m.T)


def jacobi_eigenvalues(m: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """All eigenvalues of symmetric ``m``, ascending, via cyclic Jacobi sweeps.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * max(1, ||m||_F)``, which bounds the eigenvalue error by the
    same quantity.
    """
    a = _check_symmetric(m, tol)
    n = a.shape[0]
    if n == 1:
        return a[0, :1].copy()
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    def off_norm(x):
        off = x.copy()
        np.fill_diagonal(off, 0.0)
        return float(np.linalg.norm(off))

    for _ in range(_MAX_SWEEPS):
        if off_norm(a) <= threshold:
            break
        _jacobi_sweep(a, n)
    if off_norm(a) > threshold:
        raise RuntimeError("Jacobi sweeps did not converge; input may be ill-conditioned")
    return np.sort(np.diag(a))


_ROUNDS_CACHE: dict = {}


def _round_robin_rounds(n: int) -> list:
    """Tournament pairing: each sweep visits every index pair exactly once,
    as n-1 rounds of mutually disjoint pairs (vectorizable rotations)."""
    if n in _ROUNDS_CACHE:
        return _ROUNDS_CACHE[n]
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            x, y = players[i], players[m - 1 - i]
            if x < n and y < n:
                ps.append(min(x, y))
                qs.append(max(x, y))
        rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    _ROUNDS_CACHE[n] = rounds
    return rounds


def _jacobi_sweep(a: np.ndarray, n: int) -> None:
    for ps, qs in _round_robin_rounds(n):
        app = a[ps, ps]
        aqq = a[qs, qs]
        apq = a[ps, qs]
        live = np.abs(apq) > 1e-20 * (np.abs(app) + np.abs(aqq) + 1e-300)
        if not live.any():
            continue
        ps, qs, apq = ps[live], qs[live], apq[live]
        # Rutishauser rotations choosing the smaller-angle root; a zero
        # theta means equal diagonal entries and a 45-degree rotation.
        theta = (aqq[live] - app[live]) / (2.0 * apq)
        t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
        t = np.where(theta == 0.0, 1.0, t)
        c = 1.0 / np.sqrt(t * t + 1.0)
        s = t * c
        g = np.eye(n)
        g[ps, ps] = c
        g[qs, qs] = c
        g[ps, qs] = s
        g[qs, ps] = -s
        a[:] = g.T @ a @ g
        a[ps, qs] = 0.0
        a[qs, ps] = 0.0


def sym_eig_bounds(m: np.ndarray, tol: float = DEFAULT_TOL) -> SymEigBounds:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    eigs = jacobi_eigenvalues(m, tol)
    return SymEigBounds(lambda_min=float(eigs[0]), lambda_max=float(eigs[-1]))


def spectral_norm(a: np.ndarray, tol: float = DEFAULT_TOL) -> float:
    """Largest singular value of ``a``: sqrt of the top eigenvalue of A A^T."""
    a = check_finite(a)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got {a.ndim} dimensions")
    # Gram matrix on the smaller side; same nonzero spectrum either way.
    g = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    top = sym_eig_bounds(g, tol).lambda_max
    return float(np.sqrt(max(top, 0.0)))


def is_negative_semidefinite(m: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True iff the largest eigenvalue of symmetric ``m`` is at most ``tol``."""
    return sym_eig_bounds(m, tol).lambda_max <= tol


def canonical_skew(n: int) -> np.ndarray:
    """The block form [[0, I], [-I, 0]] of even size ``n``.

    Exactly skew-symmetric and orthogonal: J J^T = I with 0/1 entries.
    """
    if n < 2 or n % 2 != 0:
        raise ShapeError(f"canonical skew matrix needs an even size >= 2, got {n}")
    half = n // 2
    j = np.zeros((n, n))
    j[:half, half:] = np.eye(half)
    j[half:, :half] = -np.eye(half)
    return j

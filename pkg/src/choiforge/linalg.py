"""Dense real linear-algebra kernels used by every other module.

All functions operate on plain ``numpy`` arrays with value semantics: inputs
are never modified, so everything here is safe to call concurrently.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import FactorizationError, InvalidInputError, NotPsdError, SingularGramError

DEFAULT_RANK_TOL = 1e-12


class EigDecomposition(NamedTuple):
    """Full spectrum of a symmetric matrix, eigenvalues ascending."""

    values: np.ndarray
    vectors: np.ndarray  # orthonormal columns, vectors[:, i] pairs with values[i]


def _check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (a + a.T) / 2."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def sym_eig(a: np.ndarray) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix, values sorted ascending."""
    a = _check_finite(a)
    values, vectors = np.linalg.eigh(symmetrize(a))
    return EigDecomposition(values, vectors)


def inv_sqrt_psd(g: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Inverse square root of an SPD matrix via eigendecomposition.

    Raises :class:`SingularGramError` if any eigenvalue is at or below
    ``rank_tol`` times the largest eigenvalue; near-singular inputs mean a
    downstream constraint adjustment would fail and must not be masked.
    """
    g = _check_finite(g, "gram matrix")
    values, vectors = np.linalg.eigh(symmetrize(g))
    top = float(values[-1]) if values.size else 0.0
    if top <= 0.0 or np.any(values <= rank_tol * top):
        raise SingularGramError(
            f"matrix is singular to rank_tol={rank_tol}: eigenvalues {values}"
        )
    return (vectors / np.sqrt(values)) @ vectors.T


def qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorization with the sign convention diag(R) >= 0."""
    a = _check_finite(a)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise InvalidInputError("qr expects a tall or square matrix (rows >= cols)")
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, signs[:, None] * r


def cholesky_psd(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a for a PSD (possibly singular) input.

    Strictly positive definite inputs go through the plain Cholesky routine;
    semidefinite ones fall back to an eigenvalue factorization re-triangularized
    by QR. Indefinite inputs raise :class:`NotPsdError`.
    """
    a = _check_finite(a)
    a = symmetrize(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    values, vectors = np.linalg.eigh(a)
    scale = max(float(values[-1]), 1.0) if values.size else 1.0
    if np.any(values < -tol * scale):
        raise NotPsdError(f"matrix is not PSD: min eigenvalue {values[0]}")
    root = vectors * np.sqrt(np.clip(values, 0.0, None))
    _, r = qr(root.T) if root.shape[0] >= root.shape[1] else np.linalg.qr(root.T)
    return r.T


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for SPD a via Cholesky."""
    a = _check_finite(a)
    b = _check_finite(np.asarray(b, dtype=float), "rhs")
    try:
        c, low = scipy.linalg.cho_factor(symmetrize(a))
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not SPD: {exc}") from exc
    return scipy.linalg.cho_solve((c, low), b)

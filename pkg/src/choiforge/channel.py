"""Channel representations (Kraus, Choi) and the operations connecting them.

Conventions used throughout the package:

* channels map an input space of dimension ``n`` to an output space of
  dimension ``D``; Kraus operators are real ``D x n`` matrices,
* the Choi matrix is the real symmetric ``Dn x Dn`` matrix
  ``J[jk; j'k'] = sum_s B[j,k;s] B[j',k';s]`` with the multi-index flattened
  as ``i = j*n + k`` (row-major ``reshape`` of a ``D x n`` operator).

Everything is real-valued; complex channels are out of scope.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NotPsdError
from .linalg import inv_sqrt_psd, symmetrize

#: Solver outputs are PSD only to tolerance; eigenvalues above this floor are
#: clipped to zero, anything more negative is treated as an error.
NEGATIVE_EIG_FLOOR = -1e-8

#: Defaults of the numerical-rank rule: absolute eigenvalue cut and the
#: maximal allowed ratio between successive (descending) eigenvalues.
RANK_ABS_CUT = 1e-5
RANK_RATIO_CUT = 1e4


class ConstraintKind(enum.Enum):
    """Which partial trace of the Choi matrix is pinned to the identity."""

    TRACE_PRESERVING = "tp"  # sum_j J[jk; jk'] = delta[k,k']
    UNIT_PRESERVING = "unit"  # sum_k J[jk; j'k] = delta[j,j']


@dataclass(frozen=True)
class KrausSet:
    """An ordered set of real D x n Kraus operators, stored as (n_s, D, n)."""

    operators: np.ndarray

    def __post_init__(self):
        ops = np.asarray(self.operators, dtype=float)
        if ops.ndim != 3 or ops.shape[0] < 1:
            raise InvalidInputError("operators must have shape (n_s, D, n), n_s >= 1")
        if not np.all(np.isfinite(ops)):
            raise InvalidInputError("Kraus operators contain non-finite entries")
        object.__setattr__(self, "operators", ops)

    @property
    def n_s(self) -> int:
        return self.operators.shape[0]

    @property
    def d_out(self) -> int:
        return self.operators.shape[1]

    @property
    def d_in(self) -> int:
        return self.operators.shape[2]


@dataclass(frozen=True)
class ChoiMatrix:
    """Real symmetric Dn x Dn Choi matrix in the swapped-index convention."""

    d_out: int
    d_in: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        dim = self.d_out * self.d_in
        if m.shape != (dim, dim):
            raise InvalidInputError(f"Choi matrix must be {dim} x {dim}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("Choi matrix contains non-finite entries")
        object.__setattr__(self, "matrix", symmetrize(m))

    @property
    def dim(self) -> int:
        return self.d_out * self.d_in

    def as_tensor(self) -> np.ndarray:
        """View as a (D, n, D, n) tensor J[j, k, j', k']."""
        d, n = self.d_out, self.d_in
        return self.matrix.reshape(d, n, d, n)


def check_pure_state(vec: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or not np.all(np.isfinite(vec)):
        raise InvalidInputError("pure state must be a finite 1-D vector")
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > tol * 10 + tol:
        raise InvalidInputError(f"pure state norm {norm} deviates from 1")
    return vec


def check_density(rho: np.ndarray, tol: float = 1e-10, check_trace: bool = True) -> np.ndarray:
    """Validate a density matrix. ``check_trace=False`` admits the
    trace-decreasing outputs produced by unit-preserving channels."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or not np.all(np.isfinite(rho)):
        raise InvalidInputError("density matrix must be a finite square matrix")
    eigs = np.linalg.eigvalsh(symmetrize(rho))
    if eigs.size and eigs[0] < -tol:
        raise NotPsdError(f"density matrix has negative eigenvalue {eigs[0]}")
    if check_trace and abs(np.trace(rho) - 1.0) > tol:
        raise InvalidInputError(f"density matrix trace {np.trace(rho)} deviates from 1")
    return rho


def pure_to_density(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    return np.outer(vec, vec)


def apply_kraus(ch: KrausSet, rho: np.ndarray) -> np.ndarray:
    """Pass a density matrix through the channel: sum_s B_s rho B_s^T."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (ch.d_in, ch.d_in):
        raise InvalidInputError(
            f"state dimension {rho.shape} does not match channel input {ch.d_in}"
        )
    out = np.einsum("sjk,kl,sml->jm", ch.operators, rho, ch.operators, optimize=True)
    return symmetrize(out)


def apply_choi(j: ChoiMatrix, rho: np.ndarray) -> np.ndarray:
    """Channel application in Choi form: varrho[j,j'] = sum J[jk;j'k'] rho[k,k']."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (j.d_in, j.d_in):
        raise InvalidInputError(
            f"state dimension {rho.shape} does not match channel input {j.d_in}"
        )
    out = np.einsum("jkml,kl->jm", j.as_tensor(), rho, optimize=True)
    return symmetrize(out)


def kraus_to_choi(ch: KrausSet) -> ChoiMatrix:
    """J = sum_s vec(B_s) vec(B_s)^T; symmetric PSD by construction."""
    vecs = ch.operators.reshape(ch.n_s, -1)
    return ChoiMatrix(ch.d_out, ch.d_in, vecs.T @ vecs)


def numerical_rank(
    values: np.ndarray,
    abs_cut: float = RANK_ABS_CUT,
    ratio_cut: float = RANK_RATIO_CUT,
) -> int:
    """Numerical rank of a PSD spectrum under the dual cutoff rule.

    Eigenvalues are scanned in descending order; counting stops at the first
    value below ``abs_cut`` or when the ratio previous/current exceeds
    ``ratio_cut``. Negative values are clipped to zero first.
    """
    vals = np.sort(np.clip(np.asarray(values, dtype=float), 0.0, None))[::-1]
    rank = 0
    prev = None
    for v in vals:
        if v < abs_cut:
            break
        if prev is not None and v > 0 and prev / v > ratio_cut:
            break
        rank += 1
        prev = v
    return rank


def choi_to_kraus(j: ChoiMatrix, rank_tol: float = 1e-10) -> KrausSet:
    """Extract Kraus operators B_s = sqrt(lambda_s) unvec(v_s) from J.

    The number of operators is the numerical rank of the spectrum with the
    absolute cut taken relative to the top eigenvalue (``rank_tol`` times it).
    Operators come out ordered by descending eigenvalue, each with its
    largest-magnitude entry made positive so the output is deterministic.
    """
    values, vectors = np.linalg.eigh(j.matrix)
    if values.size and values[0] < NEGATIVE_EIG_FLOOR * max(1.0, abs(values[-1])):
        raise NotPsdError(f"Choi matrix significantly indefinite: min eig {values[0]}")
    values = np.clip(values, 0.0, None)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    top = float(values[0]) if values.size else 0.0
    n_s = numerical_rank(values, abs_cut=rank_tol * max(top, 1.0))
    if n_s == 0:
        raise NotPsdError("Choi matrix is numerically zero; no Kraus operators")
    ops = np.empty((n_s, j.d_out, j.d_in))
    for s in range(n_s):
        v = vectors[:, s]
        v = v * np.sign(v[np.argmax(np.abs(v))] or 1.0)
        ops[s] = np.sqrt(values[s]) * v.reshape(j.d_out, j.d_in)
    return KrausSet(ops)


def partial_trace(j: ChoiMatrix, kind: ConstraintKind) -> np.ndarray:
    """Partial trace of J entering the TP / unit-preserving constraints."""
    t = j.as_tensor()
    if kind is ConstraintKind.TRACE_PRESERVING:
        return np.einsum("jkjl->kl", t)  # n x n
    return np.einsum("jkmk->jm", t)  # D x D


def constraint_residual(j: ChoiMatrix, kind: ConstraintKind) -> float:
    """Max-abs deviation of the partial trace from the identity."""
    pt = partial_trace(j, kind)
    return float(np.max(np.abs(pt - np.eye(pt.shape[0]))))


def _kraus_gram(ch: KrausSet, kind: ConstraintKind) -> np.ndarray:
    if kind is ConstraintKind.TRACE_PRESERVING:
        return np.einsum("sjk,sjl->kl", ch.operators, ch.operators)
    return np.einsum("sjk,smk->jm", ch.operators, ch.operators)


def adjust_tp(ch: KrausSet, rank_tol: float = 1e-12) -> KrausSet:
    """Restore trace preservation: B_s -> B_s G^{-1/2} with the n x n Gram
    G[k,k'] = sum_{s,j} B[j,k;s] B[j,k';s]. Raises SingularGramError when the
    Gram is singular (e.g. n_s = 1 with D < n)."""
    g_half = inv_sqrt_psd(_kraus_gram(ch, ConstraintKind.TRACE_PRESERVING), rank_tol)
    return KrausSet(np.einsum("sjk,kl->sjl", ch.operators, g_half))


def adjust_unit(ch: KrausSet, rank_tol: float = 1e-12) -> KrausSet:
    """Restore unit preservation: B_s -> G^{-1/2} B_s with the D x D Gram
    G[j,j'] = sum_{s,k} B[j,k;s] B[j',k;s]."""
    g_half = inv_sqrt_psd(_kraus_gram(ch, ConstraintKind.UNIT_PRESERVING), rank_tol)
    return KrausSet(np.einsum("jm,smk->sjk", g_half, ch.operators))


def adjust_choi(j: ChoiMatrix, kind: ConstraintKind, rank_tol: float = 1e-12) -> ChoiMatrix:
    """Minimal-disturbance constraint restoration of a Choi matrix: sandwich
    with G^{-1/2} on the input (TP) or output (unit) index pair."""
    g_half = inv_sqrt_psd(partial_trace(j, kind), rank_tol)
    t = j.as_tensor()
    if kind is ConstraintKind.TRACE_PRESERVING:
        out = np.einsum("ka,lb,jamb->jkml", g_half, g_half, t, optimize=True)
    else:
        out = np.einsum("ja,mb,akbl->jkml", g_half, g_half, t, optimize=True)
    return ChoiMatrix(j.d_out, j.d_in, out.reshape(j.dim, j.dim))


def swap_io(j: ChoiMatrix) -> ChoiMatrix:
    """Swap the roles of input and output indices: J'[kj;k'j'] = J[jk;j'k'].

    The result represents the channel with rho and varrho exchanged; its
    unit-preserving residual equals the TP residual of the original.
    """
    t = j.as_tensor().transpose(1, 0, 3, 2)
    return ChoiMatrix(j.d_in, j.d_out, t.reshape(j.dim, j.dim))


# -- serialization -----------------------------------------------------------
#
# Kraus document: {"d_in": n, "d_out": D, "n_s": N, "operators": [[...], ...]}
# with each operator given as its row-major entry list.
# Choi document:  {"d_in": n, "d_out": D, "matrix": [...]} row-major.
# Floats survive the round trip losslessly (shortest-repr JSON encoding).


def kraus_to_json(ch: KrausSet) -> str:
    return json.dumps(
        {
            "d_in": ch.d_in,
            "d_out": ch.d_out,
            "n_s": ch.n_s,
            "operators": [op.reshape(-1).tolist() for op in ch.operators],
        }
    )


def kraus_from_json(text: str) -> KrausSet:
    doc = json.loads(text)
    d_in, d_out, n_s = doc["d_in"], doc["d_out"], doc["n_s"]
    ops = np.array(doc["operators"], dtype=float).reshape(n_s, d_out, d_in)
    return KrausSet(ops)


def choi_to_json(j: ChoiMatrix) -> str:
    return json.dumps(
        {"d_in": j.d_in, "d_out": j.d_out, "matrix": j.matrix.reshape(-1).tolist()}
    )


def choi_from_json(text: str) -> ChoiMatrix:
    doc = json.loads(text)
    dim = doc["d_in"] * doc["d_out"]
    return ChoiMatrix(doc["d_out"], doc["d_in"], np.array(doc["matrix"]).reshape(dim, dim))

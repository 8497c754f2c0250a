"""Fixed-Kraus-rank channel learning by eigenvalue iteration.

The Choi matrix is parametrized as J = B B^T with B a lower-diagonal
Dn x N_s matrix (entry (i, s) may be nonzero only for s <= i, s < N_s),
which fixes the Kraus gauge and makes the PSD constraint automatic. Each
iteration solves a symmetric eigenproblem for the packed nonzero entries of
B on the subspace orthogonal to convergence-helper constraints rebuilt from
the current iterate, restores the quadratic constraints with a G^{-1/2}
adjustment, and re-gauges back to lower-diagonal form with a QR step that
leaves the Choi matrix unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .channel import ConstraintKind, KrausSet
from .errors import DegenerateDenominatorError, InvalidInputError, SingularGramError
from .fidelity import DenominatorTensor, FidelityTensor
from .linalg import inv_sqrt_psd, qr, symmetrize


def dims(n: int, d: int, n_s: int, kind: ConstraintKind) -> tuple[int, int]:
    """(full, reduced) packed dimensions of the lower-diagonal parametrization.

    ``full`` counts the nonzero stencil entries; ``reduced`` subtracts the
    convergence-helper constraints, leaving the eigenproblem dimension.
    """
    dn = n * d
    if not 1 <= n_s <= dn:
        raise InvalidInputError(f"n_s must be in [1, {dn}], got {n_s}")
    full = (2 * dn - n_s + 1) * n_s // 2
    if kind is ConstraintKind.TRACE_PRESERVING:
        reduced = full - n * (n + 1) // 2 + 1
    else:
        reduced = full - d * (d + 1) // 2 + 1
    return full, reduced


def stencil_indices(n: int, d: int, n_s: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays of the nonzero pattern, row-major scan order."""
    dn = n * d
    rows, cols = [], []
    for i in range(dn):
        for s in range(min(i + 1, n_s)):
            rows.append(i)
            cols.append(s)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


@dataclass(frozen=True)
class LowerDiagB:
    """Packed lower-diagonal B with its dimensions."""

    n: int
    d: int
    n_s: int
    entries: np.ndarray

    def __post_init__(self):
        full, _ = dims(self.n, self.d, self.n_s, ConstraintKind.TRACE_PRESERVING)
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (full,) or not np.all(np.isfinite(e)):
            raise InvalidInputError(f"packed vector must have length {full} and be finite")
        object.__setattr__(self, "entries", e)


def unpack(b: LowerDiagB) -> np.ndarray:
    """Packed vector -> Dn x N_s lower-diagonal matrix."""
    rows, cols = stencil_indices(b.n, b.d, b.n_s)
    mat = np.zeros((b.n * b.d, b.n_s))
    mat[rows, cols] = b.entries
    return mat


def pack(n: int, d: int, n_s: int, mat: np.ndarray, tol: float = 1e-9) -> LowerDiagB:
    """Dn x N_s matrix -> packed vector; rejects pattern violations."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (n * d, n_s):
        raise InvalidInputError(f"matrix must be {n * d} x {n_s}")
    rows, cols = stencil_indices(n, d, n_s)
    mask = np.ones_like(mat, dtype=bool)
    mask[rows, cols] = False
    off = float(np.max(np.abs(mat[mask]))) if mask.any() else 0.0
    if off > tol * max(1.0, float(np.max(np.abs(mat)))):
        raise InvalidInputError(f"matrix violates the lower-diagonal pattern by {off}")
    return LowerDiagB(n, d, n_s, mat[rows, cols])


def as_kraus(b: LowerDiagB) -> KrausSet:
    """Columns of B as D x n Kraus operators."""
    mat = unpack(b)
    return KrausSet(np.stack([mat[:, s].reshape(b.d, b.n) for s in range(b.n_s)]))


@dataclass(frozen=True)
class IterState:
    b: LowerDiagB
    lam: np.ndarray = field(repr=False)  # D x D (unit kind) or n x n (TP kind)
    fidelity: float = 0.0
    iteration: int = 0


@dataclass(frozen=True)
class LowRankConfig:
    max_iter: int = 500
    fidelity_tol: float = 1e-10
    eig_offset: int = 0  # 0 = max eigenvalue, k = k-th from the top
    seed: int = 0
    restarts: int = 3
    stagnation_window: int = 25
    trace_path: Optional[str] = None


def _gram(b_mat: np.ndarray, n: int, d: int, kind: ConstraintKind) -> np.ndarray:
    b3 = b_mat.reshape(d, n, -1)
    if kind is ConstraintKind.TRACE_PRESERVING:
        return np.einsum("jks,jls->kl", b3, b3)
    return np.einsum("jks,mks->jm", b3, b3)


def helper_constraints(state: IterState, kind: ConstraintKind) -> np.ndarray:
    """Packed constraint vectors rebuilt from the current iterate.

    For the unit-preserving kind there are D(D-1)/2 vectors whose packed
    inner product with any direction equals the symmetrized off-diagonal
    Gram entry G[j,j'] + G[j',j], plus D-1 vectors giving the successive
    diagonal difference G[j,j] - G[j-1,j-1]; the TP kind mirrors this with
    the n-indexed Gram. Returns an array of shape (count, full_dim).
    """
    b = state.b
    n, d, n_s = b.n, b.d, b.n_s
    rows, cols = stencil_indices(n, d, n_s)
    b_mat = unpack(b)
    b3 = b_mat.reshape(d, n, n_s)
    vectors = []

    def packed(c_mat: np.ndarray) -> np.ndarray:
        return c_mat[rows, cols]

    if kind is ConstraintKind.UNIT_PRESERVING:
        for j in range(d):
            for j2 in range(j + 1, d):
                c = np.zeros((d, n, n_s))
                c[j2] += b3[j]
                c[j] += b3[j2]
                vectors.append(packed(c.reshape(d * n, n_s)))
        for j in range(1, d):
            c = np.zeros((d, n, n_s))
            c[j] = b3[j]
            c[j - 1] = -b3[j - 1]
            vectors.append(packed(c.reshape(d * n, n_s)))
    else:
        for k in range(n):
            for k2 in range(k + 1, n):
                c = np.zeros((d, n, n_s))
                c[:, k2] += b3[:, k]
                c[:, k] += b3[:, k2]
                vectors.append(packed(c.reshape(d * n, n_s)))
        for k in range(1, n):
            c = np.zeros((d, n, n_s))
            c[:, k] = b3[:, k]
            c[:, k - 1] = -b3[:, k - 1]
            vectors.append(packed(c.reshape(d * n, n_s)))
    if not vectors:
        return np.zeros((0, b.entries.shape[0]))
    return np.stack(vectors)


def _effective_matrix(
    s: FidelityTensor, lam: np.ndarray, kind: ConstraintKind, n: int, d: int, n_s: int
) -> np.ndarray:
    if kind is ConstraintKind.UNIT_PRESERVING:
        eff = s.s - np.kron(lam, np.eye(n))
    else:
        eff = s.s - np.kron(np.eye(d), lam)
    rows, cols = stencil_indices(n, d, n_s)
    same_col = cols[:, None] == cols[None, :]
    return eff[np.ix_(rows, rows)] * same_col


def _packed_tensor(q: np.ndarray, n: int, d: int, n_s: int) -> np.ndarray:
    rows, cols = stencil_indices(n, d, n_s)
    same_col = cols[:, None] == cols[None, :]
    return q[np.ix_(rows, rows)] * same_col


def _complement_basis(constraints: np.ndarray, full: int) -> np.ndarray:
    """Orthonormal basis of the subspace annihilating all constraint vectors."""
    if constraints.shape[0] == 0:
        return np.eye(full)
    _, sv, vt = np.linalg.svd(constraints, full_matrices=True)
    rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0)))
    return vt[rank:].T


def eig_step(
    s: FidelityTensor,
    state: IterState,
    kind: ConstraintKind,
    cfg: LowRankConfig,
    q: Optional[DenominatorTensor] = None,
    norm_const: Optional[float] = None,
    candidates: int = 1,
) -> list[LowerDiagB]:
    """One eigen step: deflate the helper constraints, solve the (possibly
    generalized) symmetric eigenproblem of the effective matrix, and return
    the normalized top candidates (for tie-breaking on degenerate spectra)."""
    b = state.b
    n, d, n_s = b.n, b.d, b.n_s
    full = b.entries.shape[0]
    eff = _effective_matrix(s, state.lam, kind, n, d, n_s)
    basis = _complement_basis(helper_constraints(state, kind), full)
    reduced = symmetrize(basis.T @ eff @ basis)
    if q is not None:
        q_red = symmetrize(basis.T @ _packed_tensor(q.q, n, d, n_s) @ basis)
        eigs = np.linalg.eigvalsh(q_red)
        if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
            raise DegenerateDenominatorError(
                "denominator tensor is singular on the active subspace"
            )
        values, vectors = scipy.linalg.eigh(reduced, q_red)
    else:
        values, vectors = np.linalg.eigh(reduced)
    target = d if kind is ConstraintKind.UNIT_PRESERVING else n
    out = []
    top = reduced.shape[0] - 1 - cfg.eig_offset
    for idx in range(top, max(top - candidates, -1), -1):
        vec = basis @ vectors[:, idx]
        if q is not None:
            qn = float(vec @ _packed_tensor(q.q, n, d, n_s) @ vec)
            if qn <= 0:
                continue
            vec = vec * np.sqrt((norm_const if norm_const is not None else 1.0) / qn)
        else:
            vec = vec * np.sqrt(target) / np.linalg.norm(vec)
        out.append(LowerDiagB(n, d, n_s, vec))
    return out


def restore_and_regauge(
    b: LowerDiagB, kind: ConstraintKind, rank_tol: float = 1e-12
) -> LowerDiagB:
    """Apply the G^{-1/2} constraint restoration, then rotate the columns by
    the orthogonal QR factor of the leading N_s x N_s block (transposed) so
    the result is lower-diagonal again. The rotation leaves J = B B^T
    unchanged."""
    n, d, n_s = b.n, b.d, b.n_s
    b_mat = unpack(b)
    g = _gram(b_mat, n, d, kind)
    g_half = inv_sqrt_psd(g, rank_tol)
    b3 = b_mat.reshape(d, n, n_s)
    if kind is ConstraintKind.TRACE_PRESERVING:
        adjusted = np.einsum("jks,kl->jls", b3, g_half).reshape(d * n, n_s)
    else:
        adjusted = np.einsum("jm,mks->jks", g_half, b3).reshape(d * n, n_s)
    if n_s > 1:
        block = adjusted[:n_s, :]
        q_rot, _ = qr(block.T)
        adjusted = adjusted @ q_rot
    rows, cols = stencil_indices(n, d, n_s)
    mat = np.zeros_like(adjusted)
    mat[rows, cols] = adjusted[rows, cols]
    return LowerDiagB(n, d, n_s, mat[rows, cols])


def lagrange_update(
    s: FidelityTensor,
    b: LowerDiagB,
    kind: ConstraintKind,
    q: Optional[DenominatorTensor] = None,
) -> np.ndarray:
    """Lagrange multiplier matrix from the current iterate (symmetrized
    contraction of B with S B), generalizing lambda = <psi|H|psi>.

    In the ratio-fidelity setting S B is replaced with S B - mu Q B, with mu
    the current ratio value, matching the gradient of the quotient objective.
    """
    n, d, n_s = b.n, b.d, b.n_s
    b_mat = unpack(b)
    if q is None:
        grad = s.s @ b_mat
    else:
        den = float(np.einsum("is,ij,js->", b_mat, q.q, b_mat, optimize=True))
        mu = float(np.einsum("is,ij,js->", b_mat, s.s, b_mat, optimize=True)) / den
        grad = s.s @ b_mat - mu * (q.q @ b_mat)
    sb = grad.reshape(d, n, n_s)
    b3 = b_mat.reshape(d, n, n_s)
    if kind is ConstraintKind.UNIT_PRESERVING:
        t = np.einsum("jks,iks->ji", sb, b3)
    else:
        t = np.einsum("jks,jqs->kq", sb, b3)
    return symmetrize(t)


def _fidelity(s: FidelityTensor, b_mat: np.ndarray) -> float:
    return float(np.einsum("is,ij,js->", b_mat, s.s, b_mat, optimize=True))


def _ratio(s: FidelityTensor, q: DenominatorTensor, b_mat: np.ndarray) -> float:
    num = _fidelity(s, b_mat)
    den = float(np.einsum("is,ij,js->", b_mat, q.q, b_mat, optimize=True))
    if den <= 0:
        raise DegenerateDenominatorError("denominator vanished during iteration")
    return num / den


def _random_b(n: int, d: int, n_s: int, rng: np.random.Generator) -> LowerDiagB:
    full, _ = dims(n, d, n_s, ConstraintKind.TRACE_PRESERVING)
    return LowerDiagB(n, d, n_s, rng.uniform(-1.0, 1.0, size=full))


@dataclass(frozen=True)
class RunResult:
    kraus: KrausSet
    fidelity: float
    converged: bool
    iterations: int
    trace: tuple


def _iterate(
    s: FidelityTensor,
    n_s: int,
    kind: ConstraintKind,
    cfg: LowRankConfig,
    rng: np.random.Generator,
    q: Optional[DenominatorTensor] = None,
    norm_const: Optional[float] = None,
    start: Optional[LowerDiagB] = None,
) -> tuple[Optional[LowerDiagB], float, bool, int, list]:
    n, d = s.n, s.d

    def objective(b_mat: np.ndarray) -> float:
        return _ratio(s, q, b_mat) if q is not None else _fidelity(s, b_mat)

    b = None
    if start is not None:
        try:
            b = restore_and_regauge(start, kind)
        except SingularGramError:
            b = None
    for _ in range(20):
        if b is not None:
            break
        try:
            b = restore_and_regauge(_random_b(n, d, n_s, rng), kind)
            break
        except SingularGramError:
            continue
    if b is None:
        raise SingularGramError(
            f"constraints unsatisfiable for n_s={n_s}, D={d}, n={n}: Gram stays singular"
        )

    lam = lagrange_update(s, b, kind, q=q)
    best_b, best_f = b, objective(unpack(b))
    fid = best_f
    trace = []
    stagnant = 0
    consecutive_small = 0
    offset_budget = cfg.restarts
    state = IterState(b=b, lam=lam, fidelity=fid, iteration=0)
    for it in range(1, cfg.max_iter + 1):
        use_offset = stagnant >= cfg.stagnation_window and offset_budget > 0
        step_cfg = replace(cfg, eig_offset=1) if use_offset else cfg
        if use_offset:
            offset_budget -= 1
            stagnant = 0
        try:
            cands = eig_step(
                s, state, kind, step_cfg, q=q, norm_const=norm_const, candidates=3
            )
        except DegenerateDenominatorError:
            raise
        picked, picked_f = None, -np.inf
        for cand in cands:
            try:
                restored = restore_and_regauge(cand, kind)
            except SingularGramError:
                continue
            f = objective(unpack(restored))
            if f > picked_f:
                picked, picked_f = restored, f
        if picked is None:
            # restart from a fresh random point (singular Gram on every candidate)
            for _ in range(20):
                try:
                    picked = restore_and_regauge(_random_b(n, d, n_s, rng), kind)
                    picked_f = objective(unpack(picked))
                    break
                except SingularGramError:
                    continue
            if picked is None:
                break
        rel_change = abs(picked_f - fid) / (1.0 + abs(picked_f))
        fid = picked_f
        if fid > best_f + 1e-14:
            best_b, best_f = picked, fid
            stagnant = 0
        else:
            stagnant += 1
        lam = lagrange_update(s, picked, kind, q=q)
        state = IterState(b=picked, lam=lam, fidelity=fid, iteration=it)
        g = _gram(unpack(picked), n, d, kind)
        trace.append(
            (
                it,
                fid,
                float(np.max(np.abs(g - np.eye(g.shape[0])))) if q is None else 0.0,
                float(np.linalg.eigvalsh(g)[0]),
            )
        )
        if rel_change < cfg.fidelity_tol:
            consecutive_small += 1
            if consecutive_small >= 5:
                return best_b, best_f, True, it, trace
        else:
            consecutive_small = 0
    return best_b, best_f, False, cfg.max_iter, trace


def kraus_to_lowerdiag(ch: KrausSet) -> LowerDiagB:
    """Equivalent lower-diagonal form of an arbitrary Kraus set.

    A QR re-gauge of the leading N_s x N_s block rotates the operators into
    the lower-diagonal pattern without changing the Choi matrix.
    """
    n, d, n_s = ch.d_in, ch.d_out, ch.n_s
    mat = ch.operators.reshape(n_s, d * n).T
    if n_s > 1:
        q_rot, _ = qr(mat[:n_s, :].T)
        mat = mat @ q_rot
    rows, cols = stencil_indices(n, d, n_s)
    return LowerDiagB(n, d, n_s, mat[rows, cols])


def run(
    s: FidelityTensor,
    n_s: int,
    kind: ConstraintKind,
    cfg: LowRankConfig = LowRankConfig(),
    start: Optional[KrausSet] = None,
) -> RunResult:
    """Full fixed-rank optimization with random restarts; returns the best
    iterate as a lower-diagonal Kraus set. A warm ``start`` (e.g. the rank-one
    extraction of an interior-point solution) seeds the first attempt and,
    when it converges, skips the random restarts."""
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    start_b = kraus_to_lowerdiag(start) if start is not None else None
    best = None
    for attempt in range(cfg.restarts + 1):
        b, fid, conv, its, trace = _iterate(
            s, n_s, kind, cfg, rng, start=start_b if attempt == 0 else None
        )
        if best is None or fid > best[1]:
            best = (b, fid, conv, its, trace)
        if conv and (attempt >= 1 or start is not None):
            break
    b, fid, conv, its, trace = best
    if cfg.trace_path:
        _write_trace(cfg.trace_path, trace)
    return RunResult(as_kraus(b), fid, conv, its, tuple(trace))


def run_ratio(
    s: FidelityTensor,
    q: DenominatorTensor,
    n_s: int,
    cfg: LowRankConfig = LowRankConfig(),
    norm_const: Optional[float] = None,
    start: Optional[KrausSet] = None,
) -> RunResult:
    """Ratio-fidelity variant: generalized eigenproblem with Q on the right,
    iterated under the unit-preserving helper constraints."""
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    kind = ConstraintKind.UNIT_PRESERVING
    start_b = kraus_to_lowerdiag(start) if start is not None else None
    best = None
    for attempt in range(cfg.restarts + 1):
        b, fid, conv, its, trace = _iterate(
            s, n_s, kind, cfg, rng, q=q, norm_const=norm_const,
            start=start_b if attempt == 0 else None,
        )
        if best is None or fid > best[1]:
            best = (b, fid, conv, its, trace)
        if conv and (attempt >= 1 or start is not None):
            break
    b, fid, conv, its, trace = best
    if cfg.trace_path:
        _write_trace(cfg.trace_path, trace)
    return RunResult(as_kraus(b), fid, conv, its, tuple(trace))


def _write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,fidelity,constraint_residual,gram_min_eig\n")
        for row in trace:
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")

"""Constraint construction and a primal-dual interior-point SDP solver.

The problem solved is

    maximize    <S, J>
    subject to  <A_c, J> = beta_c,   c = 1..N_c
                J >= 0  (PSD)

over real symmetric matrices. The solver is a path-following method with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step, with an
infeasible start (dual feasibility is reached along the way, so no Phase-I
is needed).
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChoiMatrix, ConstraintKind
from .errors import InvalidInputError
from .fidelity import DenominatorTensor, FidelityTensor
from .linalg import symmetrize


@dataclass(frozen=True)
class LinearConstraint:
    """One equality constraint Tr(J A) = beta with symmetric A."""

    a: np.ndarray
    beta: float

    def __post_init__(self):
        m = np.asarray(self.a, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
            raise InvalidInputError("constraint matrix must be finite and square")
        object.__setattr__(self, "a", symmetrize(m))


@dataclass(frozen=True)
class SdpProblem:
    """Objective tensor, constraint list and an optional strictly feasible start."""

    s: FidelityTensor
    constraints: tuple
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        constraints = tuple(self.constraints)
        dim = self.s.dim
        for c in constraints:
            if c.a.shape != (dim, dim):
                raise InvalidInputError("constraint dimension does not match objective")
        if constraints:
            flat = np.stack([c.a.reshape(-1) for c in constraints])
            gram = flat @ flat.T
            eigs = np.linalg.eigvalsh(gram)
            if eigs[0] <= 1e-10 * max(eigs[-1], 1.0):
                raise InvalidInputError(
                    "constraints are linearly dependent (Gram min eigenvalue "
                    f"{eigs[0]}); remove duplicates"
                )
        object.__setattr__(self, "constraints", constraints)

    @property
    def dim(self) -> int:
        return self.s.dim


@dataclass(frozen=True)
class SolverConfig:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-9
    max_iter: int = 200
    step_fraction: float = 0.98
    trace_path: Optional[str] = None  # CSV iteration trace when set

    def __post_init__(self):
        if min(self.tol_gap, self.tol_feas, self.max_iter, self.step_fraction) <= 0:
            raise InvalidInputError("solver parameters must be positive")
        if self.step_fraction >= 1:
            raise InvalidInputError("step_fraction must be < 1")


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class SdpSolution:
    j: ChoiMatrix
    dual_y: np.ndarray
    dual_slack: np.ndarray = field(repr=False)
    objective: float
    gap: float
    status: SolveStatus
    iterations: int


@dataclass(frozen=True)
class VerifyReport:
    max_primal_residual: float
    min_eig_j: float
    min_eig_slack: float
    rel_gap: float
    objective: float
    ok: bool


def build_constraints(n: int, d: int, kind: ConstraintKind) -> list[LinearConstraint]:
    """Partial-trace identity constraints as symmetric (A_c, beta_c) pairs.

    TP yields n(n+1)/2 constraints pinning sum_j J[jk; jk'] = delta[k,k'];
    unit-preserving yields D(D+1)/2 constraints on sum_k J[jk; j'k].
    Off-diagonal pairs carry weight 1/2 on each triangle so that Tr(J A_c)
    reproduces the symmetric partial-trace sum exactly.
    """
    if n < 1 or d < 1:
        raise InvalidInputError("dimensions must be >= 1")
    dim = n * d
    constraints = []
    if kind is ConstraintKind.TRACE_PRESERVING:
        for k in range(n):
            for k2 in range(k, n):
                a = np.zeros((dim, dim))
                for j in range(d):
                    if k == k2:
                        a[j * n + k, j * n + k] = 1.0
                    else:
                        a[j * n + k, j * n + k2] = 0.5
                        a[j * n + k2, j * n + k] = 0.5
                constraints.append(LinearConstraint(a, 1.0 if k == k2 else 0.0))
    else:
        for j in range(d):
            for j2 in range(j, d):
                a = np.zeros((dim, dim))
                for k in range(n):
                    if j == j2:
                        a[j * n + k, j * n + k] = 1.0
                    else:
                        a[j * n + k, j2 * n + k] = 0.5
                        a[j2 * n + k, j * n + k] = 0.5
                constraints.append(LinearConstraint(a, 1.0 if j == j2 else 0.0))
    return constraints


def build_projective_constraints(
    n: int, d: int, q: DenominatorTensor, norm_const: float
) -> list[LinearConstraint]:
    """Constraint set for projective-operator learning with ratio fidelity.

    The D inhomogeneous diagonal-block constraints of the unit-preserving set
    are replaced by D-1 homogeneous successive-difference constraints; the
    off-diagonal blocks stay pinned to zero; scale is fixed by the single
    inhomogeneous normalization Tr(J Q) = norm_const.
    """
    if (q.n, q.d) != (n, d):
        raise InvalidInputError("Q tensor dims do not match")
    dim = n * d
    constraints = []
    for j in range(d):
        for j2 in range(j + 1, d):
            a = np.zeros((dim, dim))
            for k in range(n):
                a[j * n + k, j2 * n + k] = 0.5
                a[j2 * n + k, j * n + k] = 0.5
            constraints.append(LinearConstraint(a, 0.0))
    for j in range(1, d):
        a = np.zeros((dim, dim))
        for k in range(n):
            a[j * n + k, j * n + k] = 1.0
            a[(j - 1) * n + k, (j - 1) * n + k] = -1.0
        constraints.append(LinearConstraint(a, 0.0))
    if norm_const <= 0:
        raise InvalidInputError("norm_const must be positive")
    # Tr(J Q) = norm_const, stated with the matrix scaled to O(1) so the
    # Schur system stays well conditioned next to the unit-weight constraints
    constraints.append(LinearConstraint(q.q / norm_const, 1.0))
    return constraints


def feasible_start(n: int, d: int, kind: ConstraintKind) -> np.ndarray:
    """Closed-form strictly feasible interior point for the standard kinds."""
    dim = n * d
    if kind is ConstraintKind.TRACE_PRESERVING:
        return np.eye(dim) / d
    return np.eye(dim) / n


def projective_start(q: DenominatorTensor, norm_const: float) -> np.ndarray:
    """Scaled identity satisfying the projective normalization; the
    homogeneous block constraints hold for any multiple of the identity."""
    tr = float(np.trace(q.q))
    if tr <= 0:
        raise InvalidInputError("Q must have positive trace")
    return np.eye(q.dim) * (norm_const / tr)


# -- interior point core -----------------------------------------------------


def _min_eig(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def _psd_inv_sqrt_and_sqrt(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(symmetrize(a))
    values = np.clip(values, 1e-300, None)
    sq = (vectors * np.sqrt(values)) @ vectors.T
    isq = (vectors / np.sqrt(values)) @ vectors.T
    return sq, isq


def _nt_scaling(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """NT scaling point W with W Z W = X."""
    xs, _ = _psd_inv_sqrt_and_sqrt(x)
    inner = xs @ z @ xs
    _, inner_isq = _psd_inv_sqrt_and_sqrt(inner)
    return symmetrize(xs @ inner_isq @ xs)


def _lyap_solve(v: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (U V + V U) / 2 = rhs for symmetric U, with V symmetric PD."""
    values, vectors = np.linalg.eigh(v)
    r = vectors.T @ rhs @ vectors
    denom = (values[:, None] + values[None, :]) / 2.0
    return symmetrize(vectors @ (r / denom) @ vectors.T)


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with X + alpha dX still PSD (exact via eigenvalues of
    the Cholesky-whitened direction)."""
    try:
        l = np.linalg.cholesky(symmetrize(x))
    except np.linalg.LinAlgError:
        return 0.0
    m = np.linalg.solve(l, np.linalg.solve(l, dx).T)
    lam = float(np.linalg.eigvalsh(symmetrize(m))[0])
    if lam >= 0:
        return np.inf
    return -1.0 / lam


def _iteration_step(x, y, z, gap, mu, dres, rp, cons, a_flat, m, dim, cfg):
    """One Mehrotra predictor-corrector step in the NT scaling."""
    w = _nt_scaling(x, z)
    w_sq, w_isq = _psd_inv_sqrt_and_sqrt(w)
    v = symmetrize(w_isq @ x @ w_isq)
    # Schur complement M[c,c'] = <A_c, W A_c' W>
    a_stack = np.stack([c.a for c in cons]) if m else np.zeros((0, dim, dim))
    wa = np.stack([w @ c.a @ w for c in cons]) if m else np.zeros((0, dim, dim))
    schur = np.einsum("cij,dij->cd", a_stack, wa) if m else np.zeros((0, 0))
    schur_chol = (
        np.linalg.cholesky(
            symmetrize(schur) + np.eye(m) * 1e-13 * (np.trace(schur) / max(m, 1) + 1)
        )
        if m
        else None
    )

    def adjoint_a(vec):
        return (a_flat.T @ vec).reshape(dim, dim) if m else np.zeros((dim, dim))

    def direction(sigma_mu: float, corr: np.ndarray):
        rhs_c = sigma_mu * np.eye(dim) - v @ v - corr
        h = _lyap_solve(v, rhs_c)
        g0 = w_sq @ h @ w_sq
        if m:
            rhs_y = np.einsum("cij,ij->c", a_stack, g0 - w @ dres @ w) - rp
            dy = np.linalg.solve(schur_chol.T, np.linalg.solve(schur_chol, rhs_y))
        else:
            dy = np.zeros(0)
        dz = symmetrize(adjoint_a(dy) + dres)
        dx = symmetrize(g0 - w @ dz @ w)
        return dx, dy, dz

    # predictor
    dx_a, dy_a, dz_a = direction(0.0, np.zeros((dim, dim)))
    ap = min(1.0, cfg.step_fraction * _max_step(x, dx_a))
    ad = min(1.0, cfg.step_fraction * _max_step(z, dz_a))
    mu_aff = float(np.sum((x + ap * dx_a) * (z + ad * dz_a))) / dim
    sigma = min(1.0, max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-10))
    # corrector in the scaled space
    dxh = w_isq @ dx_a @ w_isq
    dzh = w_sq @ dz_a @ w_sq
    corr = symmetrize(dxh @ dzh)
    dx, dy, dz = direction(sigma * mu, corr)
    ap = min(1.0, cfg.step_fraction * _max_step(x, dx))
    ad = min(1.0, cfg.step_fraction * _max_step(z, dz))
    alpha = min(ap, ad)
    # keep the complementarity gap monotone across accepted iterations
    for _ in range(30):
        new_gap = float(np.sum((x + alpha * dx) * (z + alpha * dz)))
        if new_gap <= gap * (1.0 + 1e-12) or alpha < 1e-8:
            break
        alpha *= 0.7
    x = symmetrize(x + alpha * dx)
    y = y + alpha * dy
    z = symmetrize(z + alpha * dz)
    return x, y, z, float(np.sum(x * z))


def solve(p: SdpProblem, cfg: SolverConfig = SolverConfig()) -> SdpSolution:
    """Run the NT predictor-corrector path-following method.

    The objective is normalized to unit Frobenius scale internally so the
    tolerances are genuinely relative; dual variables are mapped back to the
    original scale before returning.
    """
    dim = p.dim
    s_norm = max(1.0, float(np.linalg.norm(p.s.s)))
    s = p.s.s / s_norm
    cons = p.constraints
    m = len(cons)
    a_flat = (
        np.stack([c.a.reshape(-1) for c in cons]) if m else np.zeros((0, dim * dim))
    )
    beta = np.array([c.beta for c in cons])
    s_scale = 1.0 + float(np.linalg.norm(s))

    x = symmetrize(np.array(p.start, dtype=float)) if p.start is not None else np.eye(dim)
    if _min_eig(x) <= 0:
        x = x + np.eye(dim) * (1e-8 - _min_eig(x))
    y = np.zeros(m)
    sigma0 = 1.0 + float(np.linalg.norm(s, 2))
    z = np.eye(dim) * sigma0

    def operator_a(mat: np.ndarray) -> np.ndarray:
        return a_flat @ mat.reshape(-1) if m else np.zeros(0)

    def adjoint_a(vec: np.ndarray) -> np.ndarray:
        if m == 0:
            return np.zeros((dim, dim))
        return (a_flat.T @ vec).reshape(dim, dim)

    trace_rows = []
    status = SolveStatus.MAX_ITERATIONS
    it = 0
    gap = float(np.sum(x * z))
    best_primal_hist: list[float] = []
    best_score = np.inf
    best_xyz = (x, y, z)
    for it in range(1, cfg.max_iter + 1):
        rp = beta - operator_a(x)
        dres = adjoint_a(y) - s - z  # want 0
        obj = float(np.sum(s * x))
        mu = gap / dim
        pres = float(np.max(np.abs(rp))) if m else 0.0
        dres_norm = float(np.linalg.norm(dres))
        rel_gap = gap / (1.0 + abs(obj))
        trace_rows.append((it, rel_gap, pres, dres_norm))
        best_primal_hist.append(pres)
        score = max(pres, dres_norm / (10.0 * s_scale), abs(rel_gap))
        if np.isfinite(score) and score < best_score:
            best_score = score
            best_xyz = (x, y, z)

        if (
            pres <= cfg.tol_feas * (1.0 + float(np.max(np.abs(beta))) if m else 1.0)
            and dres_norm <= cfg.tol_feas * s_scale * 10
            and rel_gap <= cfg.tol_gap
        ):
            status = SolveStatus.OPTIMAL
            best_xyz = (x, y, z)
            break

        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                x, y, z, gap = _iteration_step(
                    x, y, z, gap, mu, dres, rp, cons, a_flat, m, dim, cfg
                )
        except (np.linalg.LinAlgError, FloatingPointError):
            status = SolveStatus.NUMERICAL_FAILURE
            break
    else:
        it = cfg.max_iter

    # whatever ended the loop, report the best certified iterate seen
    x, y, z = best_xyz

    if status is SolveStatus.MAX_ITERATIONS and m:
        # stalled primal residual with a closed gap indicates infeasibility
        recent = best_primal_hist[-20:]
        if len(recent) == 20 and min(recent) > 1e3 * cfg.tol_feas and (
            recent[-1] > 0.9 * recent[0]
        ):
            status = SolveStatus.INFEASIBLE

    if cfg.trace_path:
        with open(cfg.trace_path, "w") as fh:
            fh.write("iteration,rel_gap,primal_residual,dual_residual\n")
            for row in trace_rows:
                fh.write(f"{row[0]},{row[1]:.6e},{row[2]:.6e},{row[3]:.6e}\n")

    y = y * s_norm
    obj = float(np.sum(p.s.s * x))
    slack = symmetrize(adjoint_a(y) - p.s.s)
    return SdpSolution(
        j=ChoiMatrix(p.s.d, p.s.n, x),
        dual_y=y,
        dual_slack=slack,
        objective=obj,
        gap=float(np.sum(x * slack)) / (1.0 + abs(obj)),
        status=status,
        iterations=it,
    )


def verify(p: SdpProblem, sol: SdpSolution, tol_primal: float = 1e-8,
           tol_eig: float = -1e-8, tol_gap: float = 1e-7) -> VerifyReport:
    """Recompute all optimality residuals directly from the problem data,
    independent of solver internals."""
    x = sol.j.matrix
    residuals = [abs(float(np.sum(c.a * x)) - c.beta) for c in p.constraints]
    max_res = max(residuals) if residuals else 0.0
    slack = symmetrize(
        sum((yc * c.a for yc, c in zip(sol.dual_y, p.constraints)), np.zeros_like(x))
        - p.s.s
    )
    min_j = _min_eig(x)
    min_slack = _min_eig(slack)
    obj = float(np.sum(p.s.s * x))
    rel_gap = float(np.sum(x * slack)) / (1.0 + abs(obj))
    scale = 1.0 + float(np.linalg.norm(p.s.s))
    ok = (
        max_res <= tol_primal * scale
        and min_j >= tol_eig * scale
        and min_slack >= tol_eig * scale
        and abs(rel_gap) <= tol_gap * scale
    )
    return VerifyReport(max_res, min_j, min_slack, rel_gap, obj, ok)


def lp_relaxation_diagnostic(p: SdpProblem) -> np.ndarray:
    """Drop the PSD cone: return a stationary direction of the equality-only
    relaxation, the least-squares feasible point plus the objective component
    in the constraint null space. On generic instances its eigenvalues carry
    both signs, showing the cone constraint is what shapes the solution."""
    dim = p.dim
    if not p.constraints:
        return p.s.s.copy()
    a_flat = np.stack([c.a.reshape(-1) for c in p.constraints])
    beta = np.array([c.beta for c in p.constraints])
    j_feas, *_ = np.linalg.lstsq(a_flat, beta, rcond=None)
    s_flat = p.s.s.reshape(-1)
    coef, *_ = np.linalg.lstsq(a_flat.T, s_flat, rcond=None)
    s_null = s_flat - a_flat.T @ coef
    return symmetrize((j_feas + s_null).reshape(dim, dim))


def export_interchange(p: SdpProblem, path) -> None:
    """Write the problem in the sparse SDPA ``.dat-s`` interchange layout.

    The file encodes the standard-form program
        min  beta^T y   s.t.   sum_c y_c A_c - S >= 0,
    whose dual is exactly this problem (max <S, J> s.t. <A_c, J> = beta_c,
    J >= 0); an external solver's dual matrix Y reproduces our J and the
    optimal values coincide. Matrix 0 is S, matrix c is A_c; entries are
    upper-triangle, 1-based.
    """
    dim = p.dim
    m = len(p.constraints)
    with open(path, "w") as fh:
        fh.write(f"{m}\n1\n{dim}\n")
        fh.write(" ".join(repr(float(c.beta)) for c in p.constraints) + "\n")
        mats = [p.s.s] + [c.a for c in p.constraints]
        for matno, mat in enumerate(mats):
            for i in range(dim):
                for jcol in range(i, dim):
                    val = float(mat[i, jcol])
                    if val != 0.0:
                        fh.write(f"{matno} 1 {i + 1} {jcol + 1} {val!r}\n")

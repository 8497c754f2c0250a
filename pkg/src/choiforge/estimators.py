"""Scikit-learn style estimators wrapping the channel reconstruction stack.

``ChannelReconstructor.fit`` takes row-stacked input/output state vectors and
learns a Choi matrix / Kraus set; ``predict`` pushes new states through the
learned channel. Hyperparameters follow the usual get_params/set_params
protocol so the estimators compose with pipelines and grid search.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import lowrank as lr
from . import sdp
from .channel import (
    ChoiMatrix,
    ConstraintKind,
    KrausSet,
    apply_kraus,
    choi_to_kraus,
    kraus_to_choi,
    numerical_rank,
    pure_to_density,
)
from .errors import InvalidInputError
from .fidelity import (
    MappingRecord,
    MappingSample,
    build_q,
    build_s,
    expected_pair_fidelity,
    fidelity_choi,
    fidelity_ratio,
)


def _normalize_rows(x: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-12):
        raise InvalidInputError(f"{name} contains a zero row; states must be nonzero")
    return x / norms[:, None]


class ChannelReconstructor(BaseEstimator, TransformerMixin):
    """Learn a channel from paired pure-state rows.

    Parameters
    ----------
    kind : {"tp", "unit"}
        Which partial-trace constraint the channel obeys.
    solver : {"sdp", "lowrank"}
        Convex interior-point solve over the full Choi cone, or the
        fixed-Kraus-rank eigenvalue iteration.
    n_s : int or None
        Kraus rank for the lowrank solver (required there, ignored by sdp).
    seed : int
        Seed for the lowrank solver's restarts.
    max_iter, tol : solver iteration budget and convergence tolerance.
    normalize : bool
        Rescale rows of X / Y to unit norm before fitting.
    """

    def __init__(
        self,
        kind: str = "tp",
        solver: str = "sdp",
        n_s=None,
        seed: int = 0,
        max_iter: int = 200,
        tol: float = 1e-8,
        normalize: bool = True,
    ):
        self.kind = kind
        self.solver = solver
        self.n_s = n_s
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.normalize = normalize

    def _sample(self, x, y, sample_weight) -> MappingSample:
        x = check_array(x, dtype=float)
        y = check_array(y, dtype=float)
        if x.shape[0] != y.shape[0]:
            raise InvalidInputError("X and Y must have the same number of rows")
        if self.normalize:
            x = _normalize_rows(x, "X")
            y = _normalize_rows(y, "Y")
        if sample_weight is None:
            sample_weight = np.ones(x.shape[0])
        sample_weight = np.asarray(sample_weight, dtype=float)
        records = [
            MappingRecord(input=x[l], output=y[l], omega=float(sample_weight[l]))
            for l in range(x.shape[0])
        ]
        return MappingSample(tuple(records), n=x.shape[1], d=y.shape[1])

    def fit(self, X, Y, sample_weight=None):
        sample = self._sample(X, Y, sample_weight)
        kind = ConstraintKind(self.kind)
        s = build_s(sample)
        if self.solver == "sdp":
            problem = sdp.SdpProblem(
                s,
                tuple(sdp.build_constraints(sample.n, sample.d, kind)),
                start=sdp.feasible_start(sample.n, sample.d, kind),
            )
            sol = sdp.solve(
                problem, sdp.SolverConfig(tol_gap=self.tol, max_iter=self.max_iter)
            )
            self.solution_ = sol
            self.choi_ = sol.j
            self.kraus_ = choi_to_kraus(sol.j)
        elif self.solver == "lowrank":
            if self.n_s is None:
                raise InvalidInputError("the lowrank solver requires n_s")
            res = lr.run(
                s,
                int(self.n_s),
                kind,
                lr.LowRankConfig(
                    max_iter=self.max_iter, fidelity_tol=self.tol, seed=self.seed
                ),
            )
            self.solution_ = res
            self.kraus_ = res.kraus
            self.choi_ = kraus_to_choi(res.kraus)
        else:
            raise InvalidInputError(f"unknown solver {self.solver!r}")
        eigs = np.linalg.eigvalsh(self.choi_.matrix)
        self.rank_ = numerical_rank(eigs)
        self.fidelity_ = fidelity_choi(self.choi_, s)
        self.fidelity_per_weight_ = self.fidelity_ / sample.sum_omega
        self.n_features_in_ = sample.n
        self.n_outputs_ = sample.d
        return self

    def predict(self, X):
        """Output density matrices, shape (M, D, D)."""
        check_is_fitted(self, "kraus_")
        x = check_array(X, dtype=float)
        if self.normalize:
            x = _normalize_rows(x, "X")
        return np.stack([apply_kraus(self.kraus_, pure_to_density(row)) for row in x])

    def transform(self, X):
        """Flattened output densities, shape (M, D*D), for pipeline use."""
        out = self.predict(X)
        return out.reshape(out.shape[0], -1)

    def score(self, X, Y, sample_weight=None):
        """Weighted mean expected fidelity between predictions and targets."""
        check_is_fitted(self, "kraus_")
        y = check_array(Y, dtype=float)
        if self.normalize:
            y = _normalize_rows(y, "Y")
        out = self.predict(X)
        fids = np.array(
            [expected_pair_fidelity(out[l], y[l]) for l in range(y.shape[0])]
        )
        return float(np.average(fids, weights=sample_weight))


class ProjectiveOperatorReconstructor(BaseEstimator):
    """Recover a projective (isometry-like) operator from X -> Y pairs by
    maximizing the ratio fidelity under unit-preserving-style constraints."""

    def __init__(
        self,
        solver: str = "sdp",
        n_s: int = 1,
        seed: int = 0,
        max_iter: int = 200,
        tol: float = 1e-8,
        normalize: bool = True,
    ):
        self.solver = solver
        self.n_s = n_s
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.normalize = normalize

    def fit(self, X, Y, sample_weight=None):
        helper = ChannelReconstructor(normalize=self.normalize)
        sample = helper._sample(X, Y, sample_weight)
        s = build_s(sample)
        q = build_q(sample)
        norm_const = sample.sum_nu
        if self.solver == "sdp":
            problem = sdp.SdpProblem(
                s,
                tuple(
                    sdp.build_projective_constraints(sample.n, sample.d, q, norm_const)
                ),
                start=sdp.projective_start(q, norm_const),
            )
            sol = sdp.solve(
                problem, sdp.SolverConfig(tol_gap=self.tol, max_iter=self.max_iter)
            )
            self.solution_ = sol
            self.choi_ = sol.j
            self.kraus_ = choi_to_kraus(sol.j)
        elif self.solver == "lowrank":
            res = lr.run_ratio(
                s,
                q,
                int(self.n_s),
                lr.LowRankConfig(
                    max_iter=self.max_iter, fidelity_tol=self.tol, seed=self.seed
                ),
                norm_const=norm_const,
            )
            self.solution_ = res
            self.kraus_ = res.kraus
            self.choi_ = kraus_to_choi(res.kraus)
        else:
            raise InvalidInputError(f"unknown solver {self.solver!r}")
        eigs = np.linalg.eigvalsh(self.choi_.matrix)
        self.rank_ = numerical_rank(eigs)
        self.ratio_fidelity_ = fidelity_ratio(self.kraus_, s, q)
        # rank-one representative: the dominant Kraus operator, unit-scaled
        op = self.kraus_.operators[0]
        self.operator_ = op / np.linalg.norm(op) * np.sqrt(sample.d)
        self.n_features_in_ = sample.n
        self.n_outputs_ = sample.d
        return self

    def predict(self, X):
        """Projected and renormalized output vectors, shape (M, D)."""
        check_is_fitted(self, "operator_")
        x = check_array(X, dtype=float)
        if self.normalize:
            x = _normalize_rows(x, "X")
        out = x @ self.operator_.T
        norms = np.linalg.norm(out, axis=1)
        if np.any(norms < 1e-12):
            raise InvalidInputError("an input lies in the operator's null space")
        return out / norms[:, None]

"""Acceptance suite: ten end-to-end criteria, one pass/fail line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines; each test prints ``criterion <k> <name>: PASS`` (or FAIL) before
reporting to pytest.
"""
import contextlib
import time

import numpy as np
import pytest

from choiforge import lowrank as lr
from choiforge import sdp
from choiforge.channel import (
    ConstraintKind,
    KrausSet,
    apply_choi,
    apply_kraus,
    choi_to_kraus,
    kraus_to_choi,
    numerical_rank,
    pure_to_density,
)
from choiforge.datagen import (
    channel_maxeig_sample,
    make_rng,
    projective_sample,
    random_orthogonal,
    random_pair_sample,
    random_s_matrix,
    random_tp_channel,
    toy_channel,
    unitary_dynamics_sample,
)
from choiforge.fidelity import (
    MappingRecord,
    MappingSample,
    build_q,
    build_s,
    fidelity_choi,
    fidelity_kraus,
    fidelity_ratio,
)

TP = ConstraintKind.TRACE_PRESERVING


@contextlib.contextmanager
def criterion(number, name):
    try:
        yield
    except BaseException:
        print(f"criterion {number} {name}: FAIL")
        raise
    print(f"criterion {number} {name}: PASS")


def solve_tp(s, cfg=sdp.SolverConfig()):
    problem = sdp.SdpProblem(
        s,
        tuple(sdp.build_constraints(s.n, s.d, TP)),
        start=sdp.feasible_start(s.n, s.d, TP),
    )
    return problem, sdp.solve(problem, cfg)


def rank_of(j):
    return numerical_rank(np.linalg.eigvalsh(j.matrix))


def sign_aligned_error(a, b):
    return min(float(np.max(np.abs(a - b))), float(np.max(np.abs(a + b))))


def test_criterion_1_unitary_exact_reconstruction():
    with criterion(1, "unitary exact reconstruction"):
        t0 = time.perf_counter()
        for n in range(2, 7):
            for seed in range(1, 6):
                rng = make_rng(1000 * n + seed)
                u = random_orthogonal(n, rng)
                sample = unitary_dynamics_sample(u, 40 * n, rng)
                s = build_s(sample)
                _, sol = solve_tp(s)
                assert sol.status is sdp.SolveStatus.OPTIMAL, (n, seed, sol.status)
                assert rank_of(sol.j) == 1, (n, seed)
                ratio = sol.objective / sample.sum_omega
                assert abs(ratio - 1.0) <= 1e-6, (n, seed, ratio)
                # polish the rank-one extraction with the fixed-rank iteration
                kr = choi_to_kraus(sol.j)
                polished = lr.run(
                    s, 1, TP, lr.LowRankConfig(seed=seed, max_iter=100),
                    start=KrausSet(kr.operators[:1]),
                )
                err = sign_aligned_error(polished.kraus.operators[0], u)
                assert err <= 1e-6, (n, seed, err)
        assert time.perf_counter() - t0 <= 60.0


def test_criterion_2_toy_channel_exact():
    with criterion(2, "toy D>n channel exact reconstruction"):
        cfg = sdp.SolverConfig(tol_gap=1e-11, tol_feas=1e-10)
        for n, d in [(2, 3), (2, 4), (3, 5)]:
            rng = make_rng(n * 10 + d)
            ch = toy_channel(n, d, rng)
            sample, _ = channel_maxeig_sample(ch, 300 * n * d, rng)
            s = build_s(sample)
            j_true = kraus_to_choi(ch).matrix
            _, sol = solve_tp(s, cfg)
            assert sol.status is sdp.SolveStatus.OPTIMAL, (n, d, sol.status)
            err_sdp = float(np.linalg.norm(sol.j.matrix - j_true))
            assert err_sdp <= 1e-6, (n, d, err_sdp)
            res = lr.run(s, 1, TP, lr.LowRankConfig(seed=n * 10 + d))
            err_lr = float(np.linalg.norm(kraus_to_choi(res.kraus).matrix - j_true))
            assert err_lr <= 1e-6, (n, d, err_lr)


def test_criterion_3_projective_recovery():
    with criterion(3, "projective operator recovery"):
        cfg = sdp.SolverConfig(tol_gap=1e-10, tol_feas=1e-9)
        for n, d in [(3, 2), (4, 2), (5, 3)]:
            for seed in range(1, 6):
                rng = make_rng(100 * n + 10 * d + seed)
                sample, p = projective_sample(n, d, 60 * n * d, rng)
                s, q = build_s(sample), build_q(sample)
                norm_const = sample.sum_nu
                problem = sdp.SdpProblem(
                    s,
                    tuple(sdp.build_projective_constraints(n, d, q, norm_const)),
                    start=sdp.projective_start(q, norm_const),
                )
                sol = sdp.solve(problem, cfg)
                assert sol.status is sdp.SolveStatus.OPTIMAL, (n, d, seed, sol.status)
                assert rank_of(sol.j) == 1, (n, d, seed)
                kr = choi_to_kraus(sol.j)
                polished = lr.run_ratio(
                    s, q, 1, lr.LowRankConfig(seed=seed, max_iter=100),
                    norm_const=norm_const, start=KrausSet(kr.operators[:1]),
                )
                op = polished.kraus.operators[0]
                op = op / np.linalg.norm(op) * np.sqrt(d)
                err = sign_aligned_error(op, p)
                assert err <= 1e-6, (n, d, seed, err)
                ratio = fidelity_ratio(polished.kraus, s, q)
                assert abs(ratio - 1.0) <= 1e-8, (n, d, seed, ratio)


def test_criterion_4_trace_channel_limit():
    with criterion(4, "D=1 trace-channel limit"):
        for i, n in enumerate((3, 5, 8)):
            rng = make_rng(21 + i)
            sample = random_pair_sample(n, 1, 200 * n, rng)
            s = build_s(sample)
            _, sol = solve_tp(s)
            assert sol.status is sdp.SolveStatus.OPTIMAL, (n, sol.status)
            assert rank_of(sol.j) == n, (n, rank_of(sol.j))
            ratio = sol.objective / sample.sum_omega
            assert abs(ratio - 1.0) <= 1e-8, (n, ratio)


def test_criterion_5_low_rank_property():
    with criterion(5, "solution rank bounded by max(D, n)"):
        count = 0
        for i in range(16):
            rng = make_rng(300 + i)
            n, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            sample = random_pair_sample(n, d, 50 * max(n, d), rng)
            _, sol = solve_tp(build_s(sample))
            assert sol.status is sdp.SolveStatus.OPTIMAL, (i, n, d, sol.status)
            assert rank_of(sol.j) <= max(n, d), (i, n, d, rank_of(sol.j))
            count += 1
        for i in range(16):
            rng = make_rng(400 + i)
            n, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            s = random_s_matrix(n, d, rng)
            _, sol = solve_tp(s)
            assert sol.status is sdp.SolveStatus.OPTIMAL, (i, n, d, sol.status)
            assert rank_of(sol.j) <= max(n, d), (i, n, d, rank_of(sol.j))
            count += 1
        assert count >= 30


def test_criterion_6_channel_sample_dominance():
    with criterion(6, "reconstruction dominates the generating channel"):
        for i in range(12):
            rng = make_rng(500 + i)
            n, d = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            ch = random_tp_channel(n, d, n * d, rng)
            sample, f_init = channel_maxeig_sample(ch, 40 * max(n, d), rng)
            _, sol = solve_tp(build_s(sample))
            assert sol.status is sdp.SolveStatus.OPTIMAL, (i, n, d, sol.status)
            assert sol.objective >= f_init - 1e-8, (i, n, d, sol.objective, f_init)


def test_criterion_7_cross_solver_agreement():
    with criterion(7, "SDP and full-rank eigeniteration agree"):
        for i in range(20):
            rng = make_rng(100 + i)
            n, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            s = random_s_matrix(n, d, rng)
            _, sol = solve_tp(s)
            assert sol.status is sdp.SolveStatus.OPTIMAL, (i, n, d, sol.status)
            res = lr.run(s, n * d, TP, lr.LowRankConfig(seed=5))
            rel = abs(sol.objective - res.fidelity) / (1 + abs(sol.objective))
            assert rel <= 1e-5, (i, n, d, rel)


def test_criterion_8_representation_identities():
    with criterion(8, "Kraus/Choi representation identities"):
        rng = make_rng(800)
        for _ in range(100):
            n, d = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            n_s = int(rng.integers(1, n * d + 1))
            ch = KrausSet(rng.uniform(-1, 1, (n_s, d, n)))
            j = kraus_to_choi(ch)
            # one-record sample and a random state
            psi = rng.uniform(-1, 1, n)
            psi /= np.linalg.norm(psi)
            phi = rng.uniform(-1, 1, d)
            phi /= np.linalg.norm(phi)
            sample = MappingSample(
                (MappingRecord(input=psi, output=phi, omega=1.0),), n=n, d=d
            )
            s = build_s(sample)
            fk = fidelity_kraus(ch, s)
            fc = fidelity_choi(j, s)
            assert abs(fk - fc) <= 1e-12 * max(1.0, abs(fk))
            rho = pure_to_density(psi)
            out_k = apply_kraus(ch, rho)
            out_c = apply_choi(j, rho)
            assert np.max(np.abs(out_k - out_c)) <= 1e-12 * max(
                1.0, float(np.max(np.abs(out_k)))
            )
            flipped = MappingSample(
                (MappingRecord(input=-psi, output=phi, omega=1.0),), n=n, d=d
            )
            assert np.array_equal(s.s, build_s(flipped).s)


def test_criterion_9_solver_certification():
    with criterion(9, "independent certification of optimal solutions"):
        for i in range(10):
            rng = make_rng(900 + i)
            n, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            s = random_s_matrix(n, d, rng)
            cons = tuple(sdp.build_constraints(n, d, TP))
            start_a = sdp.feasible_start(n, d, TP)
            problem = sdp.SdpProblem(s, cons, start=start_a)
            sol_a = sdp.solve(problem)
            assert sol_a.status is sdp.SolveStatus.OPTIMAL, (i, n, d, sol_a.status)
            report = sdp.verify(problem, sol_a)
            assert report.ok, (i, n, d, report)
            assert report.max_primal_residual <= 1e-8 * (1 + np.linalg.norm(s.s))
            assert report.min_eig_j >= -1e-8 * (1 + np.linalg.norm(s.s))
            assert abs(report.rel_gap) <= 1e-7 * (1 + np.linalg.norm(s.s))
            # convexity restart: a different strictly feasible start reaches
            # the same objective
            ch = kraus_to_choi(random_tp_channel(n, d, n * d, rng))
            start_b = 0.5 * ch.matrix + 0.5 * start_a
            sol_b = sdp.solve(sdp.SdpProblem(s, cons, start=start_b))
            tol = 10 * sdp.SolverConfig().tol_gap * (1 + abs(sol_a.objective))
            assert abs(sol_a.objective - sol_b.objective) <= tol, (i, n, d)


def test_criterion_10_lowrank_formulas():
    with criterion(10, "lower-diagonal parametrization formulas"):
        rng = make_rng(1010)
        for n in range(1, 6):
            for d in range(1, 6):
                for n_s in range(1, n * d + 1):
                    rows, _ = lr.stencil_indices(n, d, n_s)
                    full_tp, red_tp = lr.dims(n, d, n_s, TP)
                    full_u, red_u = lr.dims(
                        n, d, n_s, ConstraintKind.UNIT_PRESERVING
                    )
                    assert full_tp == full_u == len(rows)
                    assert full_tp - red_tp == n * (n + 1) // 2 - 1
                    assert full_u - red_u == d * (d + 1) // 2 - 1
                    b = lr.LowerDiagB(n, d, n_s, rng.uniform(-1, 1, full_tp))
                    state = lr.IterState(b=b, lam=np.zeros((d, d)))
                    cons = lr.helper_constraints(
                        state, ConstraintKind.UNIT_PRESERVING
                    )
                    assert cons.shape[0] == d * (d + 1) // 2 - 1
                    state_tp = lr.IterState(b=b, lam=np.zeros((n, n)))
                    assert (
                        lr.helper_constraints(state_tp, TP).shape[0]
                        == n * (n + 1) // 2 - 1
                    )
        # re-gauge invariance of the Choi matrix
        for n, d, n_s in [(2, 2, 3), (3, 2, 4), (2, 3, 5)]:
            full, _ = lr.dims(n, d, n_s, TP)
            for kind in (TP, ConstraintKind.UNIT_PRESERVING):
                b = lr.LowerDiagB(n, d, n_s, rng.uniform(-1, 1, full))
                restored = lr.restore_and_regauge(b, kind)
                again = lr.restore_and_regauge(restored, kind)
                j1 = kraus_to_choi(lr.as_kraus(restored)).matrix
                j2 = kraus_to_choi(lr.as_kraus(again)).matrix
                assert np.max(np.abs(j1 - j2)) <= 1e-10

"""Experiment runner: sweep subcommands emitting CSV, one-off solves, and
independent verification of persisted artifacts.

Exit codes: 0 success, 2 a row failed a --strict assertion (or a guardrail
refused the run), 3 solver hard failure.

CSV rows are written in sweep order and are byte-identical for identical
configurations (floats use shortest-repr encoding; the wall_ms column stays
empty unless --timing is passed, since timings are inherently nondeterministic).
"""
from __future__ import annotations

import concurrent.futures
import json
import os
import sys
import time

import click
import numpy as np

from . import lowrank as lr
from . import sdp
from .channel import (
    ChoiMatrix,
    ConstraintKind,
    KrausSet,
    choi_from_json,
    choi_to_json,
    choi_to_kraus,
    constraint_residual,
    kraus_to_choi,
    kraus_to_json,
    numerical_rank,
)
from .datagen import (
    channel_maxeig_sample,
    desk_scale_m,
    make_rng,
    projective_sample,
    random_orthogonal,
    random_pair_sample,
    random_s_matrix,
    random_tp_channel,
    unitary_dynamics_sample,
)
from .errors import ChoiforgeError
from .fidelity import (
    FidelityTensor,
    build_q,
    build_s,
    fidelity_choi,
    fidelity_ratio,
    load_sample_jsonl,
)

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version,n,d,n_s_effective,rank_j,fidelity,fidelity_over_sum_omega,"
    "f_init,solver,wall_ms,seed,status"
)
MAX_SDP_DIM = 400

EXIT_STRICT = 2
EXIT_SOLVER = 3


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _row(n, d, n_s_eff, rank_j, fid, fid_ratio, f_init, solver, wall_ms, seed, status):
    vals = [SCHEMA_VERSION, n, d, n_s_eff, rank_j, fid, fid_ratio, f_init, solver,
            wall_ms, seed, status]
    return ",".join(_fmt(v) for v in vals)


def _write_csv(rows, out):
    text = CSV_COLUMNS + "\n" + "".join(r + "\n" for r in rows)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _guard_dim(n, d, allow_large):
    if n * d > MAX_SDP_DIM and not allow_large:
        click.echo(
            f"refusing SDP of dimension {n * d} > {MAX_SDP_DIM}; pass --allow-large",
            err=True,
        )
        sys.exit(EXIT_STRICT)


def _solve_sdp(s, kind, trace=None, max_iter=200):
    problem = sdp.SdpProblem(
        s,
        tuple(sdp.build_constraints(s.n, s.d, kind)),
        start=sdp.feasible_start(s.n, s.d, kind),
    )
    sol = sdp.solve(problem, sdp.SolverConfig(max_iter=max_iter, trace_path=trace))
    return problem, sol


def _rank_of(choi: ChoiMatrix) -> int:
    return numerical_rank(np.linalg.eigvalsh(choi.matrix))


def _save_artifact(path, choi: ChoiMatrix):
    if path:
        with open(path, "w") as fh:
            fh.write(choi_to_json(choi) + "\n")


# worker functions are module-level so a process pool can pickle them


def _point_unitary(args):
    n, seed, m, timing = args
    rng = make_rng(seed)
    u = random_orthogonal(n, rng)
    sample = unitary_dynamics_sample(u, m, rng, seed=seed)
    s = build_s(sample)
    t0 = time.perf_counter()
    _, sol = _solve_sdp(s, ConstraintKind.TRACE_PRESERVING)
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    fid = sol.objective
    ratio = fid / sample.sum_omega
    return _row(n, n, 1, _rank_of(sol.j), fid, ratio, None, "sdp", wall, seed,
                sol.status.value), sol.status, ratio, _rank_of(sol.j)


def _point_random_sample(args):
    n, d, seed, m, timing = args
    rng = make_rng(seed)
    sample = random_pair_sample(n, d, m, rng, seed=seed)
    s = build_s(sample)
    t0 = time.perf_counter()
    _, sol = _solve_sdp(s, ConstraintKind.TRACE_PRESERVING)
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    rank = _rank_of(sol.j)
    ratio = sol.objective / sample.sum_omega
    return _row(n, d, None, rank, sol.objective, ratio, None, "sdp", wall, seed,
                sol.status.value), sol.status, ratio, rank


def _point_random_matrix(args):
    n, d, seed, timing = args
    rng = make_rng(seed)
    s = random_s_matrix(n, d, rng)
    t0 = time.perf_counter()
    _, sol = _solve_sdp(s, ConstraintKind.TRACE_PRESERVING)
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    rank = _rank_of(sol.j)
    return _row(n, d, None, rank, sol.objective, None, None, "sdp", wall, seed,
                sol.status.value), sol.status, None, rank


def _point_channel(args):
    n, d, n_s, seed, m, timing = args
    rng = make_rng(seed)
    ch = random_tp_channel(n, d, n_s, rng)
    sample, f_init = channel_maxeig_sample(ch, m, rng, seed=seed)
    s = build_s(sample)
    t0 = time.perf_counter()
    _, sol = _solve_sdp(s, ConstraintKind.TRACE_PRESERVING)
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    rank = _rank_of(sol.j)
    ratio = sol.objective / sample.sum_omega
    return _row(n, d, n_s, rank, sol.objective, ratio, f_init / sample.sum_omega,
                "sdp", wall, seed, sol.status.value), sol.status, None, rank


_POINT_FUNCS = {
    "unitary": _point_unitary,
    "random_sample": _point_random_sample,
    "random_matrix": _point_random_matrix,
    "channel": _point_channel,
}


def _dispatch(kind, tasks, jobs):
    fn = _POINT_FUNCS[kind]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _finish_sweep(results, out, strict, checks=()):
    rows = [r[0] for r in results]
    _write_csv(rows, out)
    if any(r[1] is sdp.SolveStatus.NUMERICAL_FAILURE for r in results):
        sys.exit(EXIT_SOLVER)
    if strict:
        for check in checks:
            for r in results:
                if not check(r):
                    click.echo("strict assertion failed on a sweep row", err=True)
                    sys.exit(EXIT_STRICT)


def _parse_ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


seed_option = click.option(
    "--seed", type=int, default=None, envvar="CHOIFORGE_SEED",
    help="RNG seed (default: CHOIFORGE_SEED env var, else 0).",
)


def _seed(value):
    return 0 if value is None else value


@click.group()
def main():
    """Channel reconstruction experiments and solves."""


@main.command("unitary-sweep")
@click.option("--n", "n_list", default="2,3,4,5,6", help="Comma list of n = D values.")
@seed_option
@click.option("--m", type=int, default=None, help="Sample size (default desk scale).")
@click.option("--out", type=click.Path(), default=None)
@click.option("--strict", is_flag=True)
@click.option("--timing", is_flag=True, help="Fill the wall_ms column.")
@click.option("--jobs", type=int, default=1)
def unitary_sweep(n_list, seed, m, out, strict, timing, jobs):
    """Reconstruct random orthogonal dynamics from trajectory samples."""
    seed = _seed(seed)
    tasks = [
        (n, seed + i, m if m else desk_scale_m(n, n), timing)
        for i, n in enumerate(_parse_ints(n_list))
    ]
    results = _dispatch("unitary", tasks, jobs)
    _finish_sweep(
        results, out, strict,
        checks=(lambda r: abs(r[2] - 1.0) <= 1e-6 and r[3] == 1,),
    )


@main.command("random-sample-sweep")
@click.option("--n", "n_list", default="2,3,4,5")
@click.option("--d", "d_list", default=None, help="Comma list; default D = n.")
@seed_option
@click.option("--m", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--strict", is_flag=True)
@click.option("--allow-large", is_flag=True)
@click.option("--timing", is_flag=True)
@click.option("--jobs", type=int, default=1)
def random_sample_sweep(n_list, d_list, seed, m, out, strict, allow_large, timing, jobs):
    """Independent random pairs -> SDP; reports Choi rank and fidelity ratio."""
    seed = _seed(seed)
    ns = _parse_ints(n_list)
    ds = _parse_ints(d_list) if d_list else list(ns)
    if len(ds) == 1:
        ds = ds * len(ns)
    if len(ds) != len(ns):
        raise click.UsageError("--n and --d lists must have equal length")
    tasks = []
    for i, (n, d) in enumerate(zip(ns, ds)):
        _guard_dim(n, d, allow_large)
        tasks.append((n, d, seed + i, m if m else desk_scale_m(n, d), timing))
    results = _dispatch("random_sample", tasks, jobs)

    def low_rank(r):
        parts = r[0].split(",")
        return r[3] <= max(int(parts[1]), int(parts[2]))

    _finish_sweep(results, out, strict, checks=(low_rank,))


@main.command("random-matrix-sweep")
@click.option("--n", "n_list", default="2,3,4,5")
@click.option("--d", "d_list", default=None)
@seed_option
@click.option("--out", type=click.Path(), default=None)
@click.option("--strict", is_flag=True)
@click.option("--allow-large", is_flag=True)
@click.option("--timing", is_flag=True)
@click.option("--jobs", type=int, default=1)
def random_matrix_sweep(n_list, d_list, seed, out, strict, allow_large, timing, jobs):
    """Dense random symmetric objectives -> SDP; rank statistics only."""
    seed = _seed(seed)
    ns = _parse_ints(n_list)
    ds = _parse_ints(d_list) if d_list else list(ns)
    if len(ds) == 1:
        ds = ds * len(ns)
    if len(ds) != len(ns):
        raise click.UsageError("--n and --d lists must have equal length")
    tasks = []
    for i, (n, d) in enumerate(zip(ns, ds)):
        _guard_dim(n, d, allow_large)
        tasks.append((n, d, seed + i, timing))
    results = _dispatch("random_matrix", tasks, jobs)
    _finish_sweep(results, out, strict)


@main.command("channel-sweep")
@click.option("--n", "n_list", default="2,3,4")
@click.option("--d", "d_list", default=None)
@click.option("--ns", "n_s", type=int, default=None, help="Kraus rank of the generator (default Dn).")
@seed_option
@click.option("--m", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--strict", is_flag=True)
@click.option("--allow-large", is_flag=True)
@click.option("--timing", is_flag=True)
@click.option("--jobs", type=int, default=1)
def channel_sweep(n_list, d_list, n_s, seed, m, out, strict, allow_large, timing, jobs):
    """Full-rank channel -> top-eigenvector samples -> SDP; rows carry f_init."""
    seed = _seed(seed)
    ns_dims = _parse_ints(n_list)
    ds = _parse_ints(d_list) if d_list else list(ns_dims)
    if len(ds) == 1:
        ds = ds * len(ns_dims)
    if len(ds) != len(ns_dims):
        raise click.UsageError("--n and --d lists must have equal length")
    tasks = []
    for i, (n, d) in enumerate(zip(ns_dims, ds)):
        _guard_dim(n, d, allow_large)
        tasks.append(
            (n, d, n_s if n_s else n * d, seed + i, m if m else desk_scale_m(n, d), timing)
        )
    results = _dispatch("channel", tasks, jobs)

    def dominates(r):
        parts = r[0].split(",")
        fid_ratio, f_init = float(parts[6]), float(parts[7])
        return fid_ratio >= f_init - 1e-8

    _finish_sweep(results, out, strict, checks=(dominates,))


@main.command("projective")
@click.option("--n", type=int, required=True)
@click.option("--d", type=int, required=True)
@seed_option
@click.option("--m", type=int, default=None)
@click.option("--solver", type=click.Choice(["sdp", "lowrank", "both"]), default="sdp")
@click.option("--out", type=click.Path(), default=None, help="JSON report path.")
@click.option("--strict", is_flag=True)
def projective(n, d, seed, m, solver, out, strict):
    """Recover a projective operator from phi = P psi / |P psi| samples."""
    seed = _seed(seed)
    rng = make_rng(seed)
    sample, p = projective_sample(n, d, m if m else desk_scale_m(n, d), rng, seed=seed)
    s = build_s(sample)
    q = build_q(sample)
    norm_const = sample.sum_nu
    report = {"n": n, "d": d, "seed": seed, "operator_true": p.tolist()}
    failures = 0

    def operator_error(op):
        op = op / np.linalg.norm(op) * np.sqrt(d)
        return float(min(np.max(np.abs(op - p)), np.max(np.abs(op + p))))

    if solver in ("sdp", "both"):
        problem = sdp.SdpProblem(
            s,
            tuple(sdp.build_projective_constraints(n, d, q, norm_const)),
            start=sdp.projective_start(q, norm_const),
        )
        sol = sdp.solve(problem)
        if sol.status is sdp.SolveStatus.NUMERICAL_FAILURE:
            sys.exit(EXIT_SOLVER)
        kr = choi_to_kraus(sol.j)
        raw_err = operator_error(kr.operators[0])
        # polish the rank-one extraction with the fixed-rank iteration,
        # warm-started from the interior-point eigenvector
        polished = lr.run_ratio(
            s, q, 1, lr.LowRankConfig(seed=seed, max_iter=100),
            norm_const=norm_const, start=KrausSet(kr.operators[:1]),
        )
        err = operator_error(polished.kraus.operators[0])
        ratio = fidelity_ratio(polished.kraus, s, q)
        report["sdp"] = {
            "rank": _rank_of(sol.j),
            "operator_error": err,
            "operator_error_raw": raw_err,
            "ratio_fidelity": ratio,
            "status": sol.status.value,
        }
        failures += int(err > 1e-6 or abs(ratio - 1) > 1e-8 or _rank_of(sol.j) != 1)
    if solver in ("lowrank", "both"):
        res = lr.run_ratio(s, q, 1, lr.LowRankConfig(seed=seed), norm_const=norm_const)
        err = operator_error(res.kraus.operators[0])
        ratio = fidelity_ratio(res.kraus, s, q)
        report["lowrank"] = {
            "operator_error": err,
            "ratio_fidelity": ratio,
            "converged": res.converged,
        }
        failures += int(err > 1e-6)
    text = json.dumps(report, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)
    if strict and failures:
        sys.exit(EXIT_STRICT)


def _load_s_json(path) -> FidelityTensor:
    with open(path) as fh:
        doc = json.load(fh)
    n, d = doc["n"], doc["d"]
    return FidelityTensor(n, d, np.array(doc["s"], dtype=float).reshape(n * d, n * d))


@main.command("solve")
@click.option("--sample", "sample_path", type=click.Path(exists=True), default=None,
              help="Mapping sample (JSON lines).")
@click.option("--s-file", type=click.Path(exists=True), default=None,
              help='Objective tensor JSON {"n","d","s"}.')
@click.option("--kind", type=click.Choice(["tp", "unit"]), default="tp")
@click.option("--ns", "n_s", type=int, default=None, help="Kraus rank for lowrank.")
@click.option("--solver", type=click.Choice(["sdp", "lowrank", "both"]), default="sdp")
@seed_option
@click.option("--out", type=click.Path(), default=None, help="Choi JSON output path.")
@click.option("--kraus-out", type=click.Path(), default=None)
@click.option("--report-out", type=click.Path(), default=None)
@click.option("--export-interchange", type=click.Path(), default=None,
              help="Also write the problem in sparse interchange format.")
@click.option("--trace", type=click.Path(), default=None, help="Iteration trace CSV.")
@click.option("--allow-large", is_flag=True)
def solve_cmd(sample_path, s_file, kind, n_s, solver, seed, out, kraus_out,
              report_out, export_interchange, trace, allow_large):
    """Solve one reconstruction problem and persist Choi/Kraus + verify report."""
    seed = _seed(seed)
    if (sample_path is None) == (s_file is None):
        raise click.UsageError("provide exactly one of --sample / --s-file")
    try:
        if sample_path:
            sample = load_sample_jsonl(sample_path)
            s = build_s(sample)
        else:
            sample = None
            s = _load_s_json(s_file)
    except ChoiforgeError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_STRICT)
    ckind = ConstraintKind(kind)
    _guard_dim(s.n, s.d, allow_large)
    report = {"n": s.n, "d": s.d, "kind": kind}
    problem = sdp.SdpProblem(
        s,
        tuple(sdp.build_constraints(s.n, s.d, ckind)),
        start=sdp.feasible_start(s.n, s.d, ckind),
    )
    if export_interchange:
        sdp.export_interchange(problem, export_interchange)
    choi = None
    if solver in ("sdp", "both"):
        sol = sdp.solve(problem, sdp.SolverConfig(trace_path=trace))
        if sol.status is sdp.SolveStatus.NUMERICAL_FAILURE:
            sys.exit(EXIT_SOLVER)
        ver = sdp.verify(problem, sol)
        report["sdp"] = {
            "objective": sol.objective,
            "status": sol.status.value,
            "iterations": sol.iterations,
            "rank": _rank_of(sol.j),
            "verify": {
                "max_primal_residual": ver.max_primal_residual,
                "min_eig_j": ver.min_eig_j,
                "min_eig_slack": ver.min_eig_slack,
                "rel_gap": ver.rel_gap,
                "ok": ver.ok,
            },
        }
        choi = sol.j
    if solver in ("lowrank", "both"):
        rank = n_s if n_s else 1
        res = lr.run(
            s, rank, ckind,
            lr.LowRankConfig(seed=seed, trace_path=None if solver == "both" else trace),
        )
        report["lowrank"] = {
            "fidelity": res.fidelity,
            "converged": res.converged,
            "iterations": res.iterations,
        }
        if choi is None:
            choi = kraus_to_choi(res.kraus)
        if kraus_out:
            with open(kraus_out, "w") as fh:
                fh.write(kraus_to_json(res.kraus) + "\n")
    _save_artifact(out, choi)
    text = json.dumps(report, indent=2)
    if report_out:
        with open(report_out, "w") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@main.command("verify")
@click.option("--choi", "choi_path", type=click.Path(exists=True), required=True)
@click.option("--sample", "sample_path", type=click.Path(exists=True), default=None)
@click.option("--s-file", type=click.Path(exists=True), default=None)
@click.option("--kind", type=click.Choice(["tp", "unit"]), default="tp")
def verify_cmd(choi_path, sample_path, s_file, kind):
    """Recompute rank, fidelity and constraint residual of a persisted Choi."""
    with open(choi_path) as fh:
        choi = choi_from_json(fh.read())
    report = {
        "rank": _rank_of(choi),
        "min_eig": float(np.linalg.eigvalsh(choi.matrix)[0]),
        "constraint_residual": constraint_residual(choi, ConstraintKind(kind)),
    }
    if sample_path or s_file:
        if sample_path:
            sample = load_sample_jsonl(sample_path)
            s = build_s(sample)
            report["fidelity_over_sum_omega"] = fidelity_choi(choi, s) / sample.sum_omega
        else:
            s = _load_s_json(s_file)
        report["fidelity"] = fidelity_choi(choi, s)
    click.echo(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()

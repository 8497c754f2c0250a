"""Fidelity tensors built from mapping samples and total-fidelity evaluation.

The central object is the symmetric ``Dn x Dn`` tensor ``S`` whose quadratic
form in the Kraus operators equals the sample-summed expected fidelity; the
companion tensor ``Q`` plays the denominator role in the ratio fidelity used
for projective-operator learning.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .channel import ChoiMatrix, KrausSet, pure_to_density
from .errors import DegenerateDenominatorError, InvalidInputError
from .linalg import symmetrize


@dataclass(frozen=True)
class MappingRecord:
    """One observation: an input state mapped to an output state.

    ``input`` is a length-n vector (pure state) or an n x n density matrix;
    ``output`` is a length-D vector or a D x D density matrix. ``nu`` defaults
    to ``omega`` when omitted.
    """

    input: np.ndarray
    output: np.ndarray
    omega: float = 1.0
    nu: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "input", np.asarray(self.input, dtype=float))
        object.__setattr__(self, "output", np.asarray(self.output, dtype=float))
        if not (np.isfinite(self.omega) and self.omega >= 0):
            raise InvalidInputError("omega must be finite and >= 0")
        if self.nu is not None and not (np.isfinite(self.nu) and self.nu >= 0):
            raise InvalidInputError("nu must be finite and >= 0")

    @property
    def nu_effective(self) -> float:
        return self.omega if self.nu is None else self.nu

    @property
    def input_is_pure(self) -> bool:
        return self.input.ndim == 1

    @property
    def output_is_pure(self) -> bool:
        return self.output.ndim == 1


@dataclass(frozen=True)
class MappingSample:
    """A nonempty list of mapping records with uniform dimensions."""

    records: tuple
    n: int
    d: int
    seed: Optional[int] = None

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise InvalidInputError("a mapping sample must contain at least one record")
        for rec in records:
            nin = rec.input.shape[0]
            nout = rec.output.shape[0]
            if nin != self.n or nout != self.d:
                raise InvalidInputError(
                    f"record dims ({nin}, {nout}) do not match sample dims ({self.n}, {self.d})"
                )
        object.__setattr__(self, "records", records)

    @property
    def sum_omega(self) -> float:
        return float(sum(r.omega for r in self.records))

    @property
    def sum_nu(self) -> float:
        return float(sum(r.nu_effective for r in self.records))


@dataclass(frozen=True)
class FidelityTensor:
    """Symmetric Dn x Dn numerator tensor S."""

    n: int
    d: int
    s: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.s, dtype=float)
        dim = self.n * self.d
        if m.shape != (dim, dim) or not np.all(np.isfinite(m)):
            raise InvalidInputError(f"S must be a finite {dim} x {dim} matrix")
        object.__setattr__(self, "s", symmetrize(m))

    @property
    def dim(self) -> int:
        return self.n * self.d


@dataclass(frozen=True)
class DenominatorTensor:
    """Block-diagonal PSD denominator tensor Q[jk;j'k'] = delta[j,j'] W[k,k']."""

    n: int
    d: int
    q: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.q, dtype=float)
        dim = self.n * self.d
        if m.shape != (dim, dim) or not np.all(np.isfinite(m)):
            raise InvalidInputError(f"Q must be a finite {dim} x {dim} matrix")
        object.__setattr__(self, "q", symmetrize(m))

    @property
    def dim(self) -> int:
        return self.n * self.d


def _input_density(rec: MappingRecord) -> np.ndarray:
    return pure_to_density(rec.input) if rec.input_is_pure else rec.input


def build_s(sample: MappingSample) -> FidelityTensor:
    """S[jk;j'k'] = sum_l omega_l phi_j phi_j' rho_kk' for pure outputs.

    Pure inputs use rho = psi psi^T; the tensor is invariant under per-record
    sign flips of psi and phi, which is what makes it usable on data carrying
    unobservable random signs.
    """
    dim = sample.n * sample.d
    s = np.zeros((dim, dim))
    pure_in = [r for r in sample.records if r.input_is_pure]
    if any(not r.output_is_pure for r in sample.records):
        raise InvalidInputError("build_s requires pure outputs; see build_s_mixed_out")
    if len(pure_in) == len(sample.records):
        # vectorized: S = V diag(omega) V^T with columns v_l = phi_l (x) psi_l
        v = np.stack([np.kron(r.output, r.input) for r in sample.records], axis=1)
        w = np.array([r.omega for r in sample.records])
        s = (v * w) @ v.T
    else:
        for rec in sample.records:
            s += rec.omega * np.kron(pure_to_density(rec.output), _input_density(rec))
    return FidelityTensor(sample.n, sample.d, s)


def build_s_mixed_out(sample: MappingSample) -> FidelityTensor:
    """S[jk;j'k'] = sum_l omega_l varrho_jj' rho_kk' for density-matrix outputs.

    This quadratic form equals the true fidelity only when one side of each
    pair is pure; for genuinely mixed/mixed pairs it is a proxy.
    """
    dim = sample.n * sample.d
    s = np.zeros((dim, dim))
    for rec in sample.records:
        out = pure_to_density(rec.output) if rec.output_is_pure else rec.output
        s += rec.omega * np.kron(out, _input_density(rec))
    return FidelityTensor(sample.n, sample.d, s)


def build_q(sample: MappingSample) -> DenominatorTensor:
    """Q[jk;j'k'] = delta[j,j'] sum_l nu_l psi_k psi_k' (pure inputs)."""
    if any(not r.input_is_pure for r in sample.records):
        raise InvalidInputError("build_q requires pure inputs")
    w = np.zeros((sample.n, sample.n))
    for rec in sample.records:
        w += rec.nu_effective * pure_to_density(rec.input)
    return DenominatorTensor(sample.n, sample.d, np.kron(np.eye(sample.d), w))


def fidelity_kraus(ch: KrausSet, s: FidelityTensor) -> float:
    """Total fidelity sum_s vec(B_s)^T S vec(B_s)."""
    if (ch.d_out, ch.d_in) != (s.d, s.n):
        raise InvalidInputError("channel dims do not match fidelity tensor dims")
    vecs = ch.operators.reshape(ch.n_s, -1)
    return float(np.einsum("si,ij,sj->", vecs, s.s, vecs, optimize=True))


def fidelity_choi(j: ChoiMatrix, s: FidelityTensor) -> float:
    """Total fidelity Tr(J S) as a Frobenius inner product."""
    if (j.d_out, j.d_in) != (s.d, s.n):
        raise InvalidInputError("Choi dims do not match fidelity tensor dims")
    return float(np.sum(j.matrix * s.s))


def fidelity_ratio(ch: KrausSet, s: FidelityTensor, q: DenominatorTensor) -> float:
    """Ratio of the S and Q quadratic forms; invariant under channel rescaling."""
    if (s.n, s.d) != (q.n, q.d):
        raise InvalidInputError("S and Q tensor dims disagree")
    vecs = ch.operators.reshape(ch.n_s, -1)
    num = float(np.einsum("si,ij,sj->", vecs, s.s, vecs, optimize=True))
    den = float(np.einsum("si,ij,sj->", vecs, q.q, vecs, optimize=True))
    if den <= 0 or abs(den) < 1e-300:
        raise DegenerateDenominatorError("denominator quadratic form vanishes")
    return num / den


def expected_pair_fidelity(out: np.ndarray, target: np.ndarray) -> float:
    """Expected fidelity <phi| varrho |phi> between one channel output and a
    pure target state."""
    out = np.asarray(out, dtype=float)
    target = np.asarray(target, dtype=float)
    if out.shape != (target.shape[0], target.shape[0]):
        raise InvalidInputError("output density and target pure state dims disagree")
    return float(target @ out @ target)


# -- sample file format ------------------------------------------------------
#
# JSON lines: one record per line,
#   {"in_kind": "pure"|"mixed", "in": [...] | [[...], ...],
#    "out_kind": "pure"|"mixed", "out": ..., "omega": w, "nu": v | null}
# The first line is a header object {"n": ..., "d": ..., "seed": ...}.


def _state_doc(arr: np.ndarray) -> tuple[str, list]:
    if arr.ndim == 1:
        return "pure", arr.tolist()
    return "mixed", arr.tolist()


def save_sample_jsonl(sample: MappingSample, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"n": sample.n, "d": sample.d, "seed": sample.seed}) + "\n")
        for rec in sample.records:
            in_kind, in_doc = _state_doc(rec.input)
            out_kind, out_doc = _state_doc(rec.output)
            fh.write(
                json.dumps(
                    {
                        "in_kind": in_kind,
                        "in": in_doc,
                        "out_kind": out_kind,
                        "out": out_doc,
                        "omega": rec.omega,
                        "nu": rec.nu,
                    }
                )
                + "\n"
            )


def load_sample_jsonl(path) -> MappingSample:
    records = []
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
            n, d, seed = header["n"], header["d"], header.get("seed")
        except (json.JSONDecodeError, KeyError) as exc:
            raise InvalidInputError(f"{path}:1: malformed sample header: {exc}") from exc
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records.append(
                    MappingRecord(
                        input=np.array(doc["in"], dtype=float),
                        output=np.array(doc["out"], dtype=float),
                        omega=doc.get("omega", 1.0),
                        nu=doc.get("nu"),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return MappingSample(tuple(records), n=n, d=d, seed=seed)

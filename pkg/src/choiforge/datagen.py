"""Deterministic, seeded generators for every experiment sample.

Randomness comes from numpy's Philox counter-based bit generator, so a given
seed reproduces the same stream on every platform. Random unit vectors are
drawn with uniform [-1, 1] coordinates and then normalized (matching the
generator the experiments are defined with; this is not rotation invariant).
"""
from __future__ import annotations

import numpy as np

from .channel import KrausSet, apply_kraus, pure_to_density
from .errors import DegenerateDataError, InvalidInputError, SingularGramError
from .fidelity import MappingRecord, MappingSample
from .linalg import inv_sqrt_psd, qr


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator shared by all sample builders."""
    return np.random.Generator(np.random.Philox(seed))


def desk_scale_m(n: int, d: int, cap: int = 20000) -> int:
    """Default sample size: 2 n^2 D^2 + 1000, capped for desk-scale runs."""
    return min(2 * n * n * d * d + 1000, cap)


def random_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.uniform(-1.0, 1.0, size=dim)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random rotation matrix: QR of a uniform [-1,1] matrix, with the
    positive-diagonal-R sign convention and the determinant fixed to +1.

    Proper rotations are required for dynamics generators: a 2-D reflection
    gives a period-two trajectory whose reconstruction is not unique.
    """
    q, _ = qr(rng.uniform(-1.0, 1.0, size=(n, n)))
    if np.linalg.det(q) < 0:
        q = q.copy()
        q[:, -1] = -q[:, -1]
    return q


def unitary_dynamics_sample(
    u: np.ndarray,
    m: int,
    rng: np.random.Generator,
    x0: np.ndarray | None = None,
    seed: int | None = None,
) -> MappingSample:
    """Observation pairs from repeated application of an orthogonal operator.

    The trajectory starts at ``x0`` (random unit vector when absent) and each
    pair (psi, phi) = (X_l, X_{l+1}) is multiplied by independent random signs,
    which cancels in the fidelity tensor but defeats regression-style fits.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    if u.shape != (n, n) or np.max(np.abs(u.T @ u - np.eye(n))) > 1e-10:
        raise InvalidInputError("u must be orthogonal")
    x = random_unit_vector(n, rng) if x0 is None else np.asarray(x0, dtype=float)
    records = []
    for _ in range(m):
        x_next = u @ x
        s_in = 1.0 if rng.uniform() < 0.5 else -1.0
        s_out = 1.0 if rng.uniform() < 0.5 else -1.0
        records.append(MappingRecord(input=s_in * x, output=s_out * x_next, omega=1.0))
        x = x_next
    return MappingSample(tuple(records), n=n, d=n, seed=seed)


def random_pair_sample(
    n: int, d: int, m: int, rng: np.random.Generator, seed: int | None = None
) -> MappingSample:
    """Independent random unit-vector pairs psi (dim n) -> phi (dim D)."""
    records = [
        MappingRecord(
            input=random_unit_vector(n, rng), output=random_unit_vector(d, rng), omega=1.0
        )
        for _ in range(m)
    ]
    return MappingSample(tuple(records), n=n, d=d, seed=seed)


def toy_channel(n: int, d: int, rng: np.random.Generator, max_tries: int = 10) -> KrausSet:
    """Rank-one trace-preserving channel with D > n: a random D x n operator
    pushed onto the TP constraint surface."""
    from .channel import adjust_tp

    if d <= n:
        raise InvalidInputError("toy channel requires D > n")
    for _ in range(max_tries):
        b = rng.uniform(-1.0, 1.0, size=(1, d, n))
        try:
            return adjust_tp(KrausSet(b))
        except SingularGramError:
            continue
    raise SingularGramError("could not draw a nonsingular toy channel operator")


def random_tp_channel(
    n: int, d: int, n_s: int, rng: np.random.Generator, max_tries: int = 10
) -> KrausSet:
    """Random trace-preserving channel: n_s random D x n operators adjusted
    onto the TP constraint surface."""
    from .channel import adjust_tp

    for _ in range(max_tries):
        b = rng.uniform(-1.0, 1.0, size=(n_s, d, n))
        try:
            return adjust_tp(KrausSet(b))
        except SingularGramError:
            continue
    raise SingularGramError("could not draw a nonsingular random channel")


def channel_maxeig_sample(
    ch: KrausSet, m: int, rng: np.random.Generator, seed: int | None = None
) -> tuple[MappingSample, float]:
    """Pure-to-pure sample carved out of a channel's mixed outputs.

    Each random input psi is passed through the channel; the top eigenvector
    of the output density matrix becomes the recorded output state. Returns
    the sample together with f_init, the fidelity the generating channel
    itself attains on it (the sum of top eigenvalues).
    """
    records = []
    f_init = 0.0
    for _ in range(m):
        psi = random_unit_vector(ch.d_in, rng)
        varrho = apply_kraus(ch, pure_to_density(psi))
        values, vectors = np.linalg.eigh(varrho)
        phi = vectors[:, -1]
        phi = phi * np.sign(phi[np.argmax(np.abs(phi))] or 1.0)
        f_init += float(values[-1])
        records.append(MappingRecord(input=psi, output=phi, omega=1.0))
    return MappingSample(tuple(records), n=ch.d_in, d=ch.d_out, seed=seed), f_init


def projective_sample(
    n: int, d: int, m: int, rng: np.random.Generator, seed: int | None = None
) -> tuple[MappingSample, np.ndarray]:
    """Sample phi = P psi / |P psi| for a random D x n projective operator P
    (first D rows of a random orthogonal matrix). Draws with |P psi| < 1e-8
    are rejected. Records carry omega = nu = 1."""
    if d > n:
        raise InvalidInputError("projective operator requires D <= n")
    p = random_orthogonal(n, rng)[:d, :]
    records = []
    while len(records) < m:
        psi = random_unit_vector(n, rng)
        proj = p @ psi
        norm = np.linalg.norm(proj)
        if norm < 1e-8:
            continue
        records.append(MappingRecord(input=psi, output=proj / norm, omega=1.0, nu=1.0))
    return MappingSample(tuple(records), n=n, d=d, seed=seed), p


def random_s_matrix(n: int, d: int, rng: np.random.Generator):
    """Dense random symmetric objective tensor with no sample provenance."""
    from .fidelity import FidelityTensor

    dim = n * d
    a = rng.uniform(-1.0, 1.0, size=(dim, dim))
    return FidelityTensor(n, d, (a + a.T) / 2.0)


def _whiten_coordinates(vectors: np.ndarray) -> np.ndarray:
    """Map raw data rows to unit state coordinates, canonically.

    The states are defined through the data Gram metric, which makes them
    invariant under any nondegenerate linear transform of the raw vectors.
    Whitening fixes coordinates only up to a rotation, so the rotation is
    pinned by QR-canonicalizing the whitened record matrix: the returned
    coordinates are the R factor's columns, identical (up to roundoff) for
    every gauge of the input data.
    """
    m, dim = vectors.shape
    gram = vectors.T @ vectors / m
    try:
        w = inv_sqrt_psd(gram, rank_tol=1e-12)
    except SingularGramError as exc:
        raise DegenerateDataError(f"data Gram matrix is singular: {exc}") from exc
    coords = w @ vectors.T  # dim x m
    norms = np.linalg.norm(coords, axis=0)
    if np.any(norms < 1e-12):
        raise DegenerateDataError("a data vector vanishes under the Gram metric")
    coords = coords / norms
    q, _ = np.linalg.qr(coords)  # dim x dim when m >= dim
    r = q.T @ coords
    # positive-diagonal convention on the leading square block
    signs = np.sign(np.diag(r[:, :dim]))
    signs[signs == 0] = 1.0
    return (signs[:, None] * r).T  # m x dim


def classical_transform(
    xs: np.ndarray, fs: np.ndarray, seed: int | None = None
) -> MappingSample:
    """Turn raw vector-to-vector data into a pure-state mapping sample.

    Inputs and outputs are independently normalized under their sample Gram
    metrics; the construction is invariant (up to per-record sign) under
    arbitrary nondegenerate linear transforms applied to all xs or all fs.
    """
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    if xs.ndim != 2 or fs.ndim != 2 or xs.shape[0] != fs.shape[0]:
        raise InvalidInputError("xs and fs must be 2-D with matching record counts")
    psi = _whiten_coordinates(xs)
    phi = _whiten_coordinates(fs)
    records = [
        MappingRecord(input=psi[l], output=phi[l], omega=1.0) for l in range(xs.shape[0])
    ]
    return MappingSample(tuple(records), n=xs.shape[1], d=fs.shape[1], seed=seed)

"""Reconstruction of quantum channels from classical input-output samples.

Two solvers are provided: a primal-dual interior-point method over the full
Choi cone (``choiforge.sdp``) and a fixed-Kraus-rank eigenvalue iteration
(``choiforge.lowrank``), with shared channel representations, fidelity
tensors, sample generators, scikit-learn style estimators and a CLI.
"""
from .channel import (
    ChoiMatrix,
    ConstraintKind,
    KrausSet,
    apply_choi,
    apply_kraus,
    choi_to_kraus,
    kraus_to_choi,
    numerical_rank,
)
from .errors import ChoiforgeError
from .estimators import ChannelReconstructor, ProjectiveOperatorReconstructor
from .fidelity import (
    DenominatorTensor,
    FidelityTensor,
    MappingRecord,
    MappingSample,
    build_q,
    build_s,
    fidelity_choi,
    fidelity_kraus,
    fidelity_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "ChoiMatrix",
    "ConstraintKind",
    "KrausSet",
    "apply_choi",
    "apply_kraus",
    "choi_to_kraus",
    "kraus_to_choi",
    "numerical_rank",
    "ChoiforgeError",
    "ChannelReconstructor",
    "ProjectiveOperatorReconstructor",
    "DenominatorTensor",
    "FidelityTensor",
    "MappingRecord",
    "MappingSample",
    "build_q",
    "build_s",
    "fidelity_choi",
    "fidelity_kraus",
    "fidelity_ratio",
    "__version__",
]

"""Objective functions over per-stream MSEs and the design branch they select.

Every objective is returned in minimization orientation and is non-decreasing
in each MSE.  Additive Schur class decides whether the linear design rotates
the streams; the multiplicative class decides whether a decision-feedback
receiver helps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DispatchError, InvalidInputError

SCHUR_CONCAVE = "schur_concave"
SCHUR_CONVEX = "schur_convex"
BOTH = "both"
UNCLASSIFIED = "unclassified"


class Branch(enum.Enum):
    """Design branch chosen for an objective."""

    CONCAVE = "linear_concave"  # S = I
    CONVEX = "linear_convex"  # S equalizes diag(E)
    DFE = "dfe"  # S from the geometric-mean decomposition


@dataclass(frozen=True)
class ObjectiveSpec:
    """Named objective with its Schur classification.

    Attributes
    ----------
    name : str
        One of :data:`OBJECTIVE_NAMES`.
    additive_class : str
        ``schur_concave``, ``schur_convex`` or ``both``.
    multiplicative_class : str
        ``schur_concave``, ``schur_convex`` or ``unclassified``.
    allocation : str
        Per-stream power-loading criterion used by the allocator
        (``sum_mse``, ``log_mse``, ``sum_sinr`` or ``log_sinr``).
    """

    name: str
    additive_class: str
    multiplicative_class: str
    allocation: str

    def evaluate(self, mses):
        return evaluate(self, mses)


# MutualInfo and ProdMSE depend on the MSEs only through their product, so
# they are multiplicatively Schur-concave as well as Schur-convex; the DFE
# offers nothing for them and they are routed to the linear concave branch.
# The SINR-based objectives have no multiplicative classification.
# ProdSINR is Schur-concave only while every SINR is at least 1 (MSE <= 1/2),
# the regime in which its designs operate.
_CATALOG = {
    "MutualInfo": ObjectiveSpec("MutualInfo", SCHUR_CONCAVE, SCHUR_CONCAVE, "log_mse"),
    "ProdMSE": ObjectiveSpec("ProdMSE", SCHUR_CONCAVE, SCHUR_CONCAVE, "log_mse"),
    "SumSINR": ObjectiveSpec("SumSINR", SCHUR_CONCAVE, UNCLASSIFIED, "sum_sinr"),
    "ProdSINR": ObjectiveSpec("ProdSINR", SCHUR_CONCAVE, UNCLASSIFIED, "log_sinr"),
    "SumMSE": ObjectiveSpec("SumMSE", BOTH, SCHUR_CONVEX, "sum_mse"),
    "MaxMSE": ObjectiveSpec("MaxMSE", SCHUR_CONVEX, SCHUR_CONVEX, "sum_mse"),
    "HarmonicSINR": ObjectiveSpec("HarmonicSINR", SCHUR_CONVEX, SCHUR_CONVEX, "sum_mse"),
    "MinSINR": ObjectiveSpec("MinSINR", SCHUR_CONVEX, SCHUR_CONVEX, "sum_mse"),
}

OBJECTIVE_NAMES = tuple(_CATALOG)


def get_objective(name) -> ObjectiveSpec:
    """Look up an objective by its exact name (an ``ObjectiveSpec`` passes through)."""
    if isinstance(name, ObjectiveSpec):
        return name
    try:
        return _CATALOG[name]
    except KeyError:
        raise InvalidInputError(f"unknown objective {name!r}; expected one of {', '.join(OBJECTIVE_NAMES)}") from None


def _check_mses(m):
    m = np.asarray(m, dtype=float)
    if m.shape[-1:] == (0,) or np.any(~(m > 0)) or np.any(m > 1 + 1e-12):
        raise InvalidInputError("MSEs must be a non-empty list of values in (0, 1]")
    return np.minimum(m, 1.0)


def evaluate(spec, mses, check=True):
    """Objective value of the MSE vector(s) along the last axis.

    HarmonicSINR returns ``+inf`` when any stream has MSE exactly 1 (zero SINR).
    """
    spec = get_objective(spec)
    m = _check_mses(mses) if check else np.asarray(mses, dtype=float)
    name = spec.name
    with np.errstate(divide="ignore"):
        if name == "MutualInfo":
            out = np.sum(np.log(m), axis=-1)
        elif name == "ProdMSE":
            out = np.prod(m, axis=-1)
        elif name == "SumSINR":
            out = -np.sum(1.0 / m - 1.0, axis=-1)
        elif name == "ProdSINR":
            out = -np.prod(1.0 / m - 1.0, axis=-1)
        elif name == "SumMSE":
            out = np.sum(m, axis=-1)
        elif name == "MaxMSE":
            out = np.max(m, axis=-1)
        elif name == "HarmonicSINR":
            gap = 1.0 - m
            out = np.sum(np.where(gap > 0, m / np.where(gap > 0, gap, 1.0), np.inf), axis=-1)
        else:  # MinSINR
            out = -np.min((1.0 - m) / m, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def dispatch_class(spec, nonlinear=False, sum_mse_convex=False) -> Branch:
    """Select the design branch for an objective.

    Parameters
    ----------
    spec : ObjectiveSpec or str
    nonlinear : bool
        True when a decision-feedback receiver is available.
    sum_mse_convex : bool
        Route SumMSE (which is in both additive classes) to the rotation branch.

    Raises
    ------
    DispatchError
        Nonlinear request for an objective without a multiplicative class.
    """
    spec = get_objective(spec)
    if nonlinear:
        if spec.multiplicative_class == SCHUR_CONVEX:
            return Branch.DFE
        if spec.multiplicative_class == SCHUR_CONCAVE:
            return Branch.CONCAVE
        raise DispatchError(f"{spec.name} has no multiplicative Schur classification; no nonlinear design is defined")
    if spec.additive_class == SCHUR_CONVEX or (spec.additive_class == BOTH and sum_mse_convex):
        return Branch.CONVEX
    return Branch.CONCAVE

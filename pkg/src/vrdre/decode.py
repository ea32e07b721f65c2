"""Turn relation probabilities into relation matrices."""

from __future__ import annotations

import numpy as np

from .core import RelationMatrix
from .head import ProbMatrix

DEFAULT_THRESHOLD = 0.5
DEFAULT_TAU = 0.1


class DecodeConfigError(ValueError):
    pass


def threshold_decode(P: ProbMatrix, threshold: float = DEFAULT_THRESHOLD) -> RelationMatrix:
    """R[i, j] = 1 iff P[i, j] > threshold on a valid cell."""
    return RelationMatrix((P.probs > threshold) & P.mask)


def rsf_decode(P: ProbMatrix, tau: float = DEFAULT_TAU, threshold: float = DEFAULT_THRESHOLD) -> RelationMatrix:
    """Restriction on the selection of fathers.

    Parent ``j`` is kept for child ``i`` iff ``P[i, j] > threshold`` and
    ``max_k P[i, k] < P[i, j] + tau``, the max running over valid cells of row ``i``.
    """
    if not tau > 0:
        raise DecodeConfigError(f"tau must be > 0, got {tau}")
    probs = np.where(P.mask, P.probs, -np.inf)
    row_max = probs.max(axis=1, keepdims=True) if P.n else probs
    keep = (probs > threshold) & (row_max < probs + tau) & P.mask
    return RelationMatrix(keep)


def symmetrize(P: ProbMatrix) -> ProbMatrix:
    """P'[i, j] = P'[j, i] = max(P[i, j], P[j, i]) over cells valid in either direction."""
    a = np.where(P.mask, P.probs, -np.inf)
    sym = np.maximum(a, a.T)
    mask = P.mask | P.mask.T
    return ProbMatrix(np.where(mask, sym, P.probs), mask)

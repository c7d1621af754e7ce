"""Classical IBVS law with a Levenberg-Marquardt damped pseudo-inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowservo.control.base import ConditioningError
from flowservo.flow import FlowSampleSet
from flowservo.geometry import DomainError, InteractionMatrix, VelocityScrew

COND_LIMIT = 1e12


@dataclass(frozen=True)
class IbvsConfig:
    lam: float = 1.0
    mu: float = 0.01

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if not self.mu >= 0:
            raise DomainError("mu must be non-negative")


def damped_pinv(L: np.ndarray, mu: float) -> np.ndarray:
    """(L'L + mu diag(L'L))^-1 L'."""
    A = L.T @ L
    M = A + mu * np.diag(np.diag(A))
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > COND_LIMIT:
        raise ConditioningError("damped normal matrix is singular or ill-conditioned")
    return np.linalg.solve(M, L.T)


def ibvs_step(L: InteractionMatrix, target: FlowSampleSet, cfg: IbvsConfig) -> VelocityScrew:
    """v = -lam * L+ e with feature error e = s - s* = -(target flow).

    The target flow points from the current to the desired feature positions,
    so executing v for one period moves features along the target by a
    fraction lam * dt of it (to first order).
    """
    if L.rows.shape[0] < 6:
        raise ConditioningError("need at least 6 rows (3 samples) to solve for a twist")
    e = -target.flat()
    v = -cfg.lam * damped_pinv(L.rows, cfg.mu) @ e
    return VelocityScrew.from_vector(v)

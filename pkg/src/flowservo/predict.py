"""Linearized horizon flow model and the mean-squared flow loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowservo.flow import FlowSampleSet
from flowservo.geometry import DomainError, InteractionMatrix, VelocityScrew


@dataclass(frozen=True)
class VelocityPlan:
    twists: tuple

    def __post_init__(self):
        if len(self.twists) < 1:
            raise DomainError("a plan needs at least one twist")
        object.__setattr__(self, "twists", tuple(self.twists))

    @property
    def horizon(self) -> int:
        return len(self.twists)

    @classmethod
    def from_array(cls, arr) -> "VelocityPlan":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 6)
        return cls(tuple(VelocityScrew.from_vector(r) for r in arr))

    @classmethod
    def zeros(cls, horizon: int) -> "VelocityPlan":
        return cls.from_array(np.zeros((horizon, 6)))

    def as_array(self) -> np.ndarray:
        return np.stack([t.as_vector() for t in self.twists])

    def first(self) -> VelocityScrew:
        return self.twists[0]


@dataclass(frozen=True)
class HorizonModel:
    """Interaction matrix frozen over the horizon, plus the control period."""

    L: InteractionMatrix
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")


class FlowObjective:
    """``flow_loss`` as a quadratic in the plan's twist sum, precomputed for repeated evaluation.

    With s the twist sum and f the flattened target,
    loss(s) = |dt L s - f|^2 / 2N = (dt^2 s'As - 2 dt b's + c) / 2N.

    ``plan_loss`` adds an optional rate penalty
    ``smoothness * dt^2 * sum_k |v_k - v_(k-1)|^2`` over consecutive plan
    entries. It vanishes on constant plans, which include a minimizer of the
    flow loss, so it leaves the optimal flow loss unchanged and only selects
    how the twist sum is spread over the horizon.
    """

    def __init__(self, model: HorizonModel, target: FlowSampleSet, smoothness: float = 0.0):
        _check_aligned(model, target)
        L = model.L.rows
        f = target.flat()
        self.dt = model.dt
        self.n = f.size
        self.A = L.T @ L
        self.b = L.T @ f
        self.c = float(f @ f)
        self.smoothness = float(smoothness)

    def plan_loss(self, plans: np.ndarray) -> np.ndarray:
        """Training objective for one (T, 6) or many (P, T, 6) plans."""
        plans = np.asarray(plans, dtype=np.float64)
        val = self.loss_of_sum(plans.sum(axis=-2))
        if self.smoothness and plans.shape[-2] > 1:
            d = np.diff(plans, axis=-2)
            val = val + self.smoothness * self.dt ** 2 * np.sum(d * d, axis=(-2, -1))
        return val

    def plan_grad(self, plan: np.ndarray) -> np.ndarray:
        plan = np.asarray(plan, dtype=np.float64)
        g = np.tile(self.grad_of_sum(plan.sum(axis=0)), (plan.shape[0], 1))
        if self.smoothness and plan.shape[0] > 1:
            d = np.diff(plan, axis=0)
            w = 2.0 * self.smoothness * self.dt ** 2
            g[1:] += w * d
            g[:-1] -= w * d
        return g

    def loss_of_sum(self, s: np.ndarray) -> np.ndarray:
        """Loss for one (6,) or many (..., 6) twist sums."""
        s = np.asarray(s, dtype=np.float64)
        dt = self.dt
        quad = np.einsum("...i,ij,...j->...", s, self.A, s)
        val = (dt * dt * quad - 2.0 * dt * (s @ self.b) + self.c) / self.n
        return np.maximum(val, 0.0)

    def grad_of_sum(self, s: np.ndarray) -> np.ndarray:
        return 2.0 * self.dt * (self.dt * (self.A @ s) - self.b) / self.n

    def loss(self, plan_array: np.ndarray) -> float:
        return float(self.loss_of_sum(np.asarray(plan_array).reshape(-1, 6).sum(axis=0)))

    def grad(self, plan_array: np.ndarray) -> np.ndarray:
        arr = np.asarray(plan_array).reshape(-1, 6)
        g = self.grad_of_sum(arr.sum(axis=0))
        return np.tile(g, (arr.shape[0], 1))

    def least_squares_sum(self, rcond: float = 1e-12) -> np.ndarray:
        """Twist sum minimizing the loss (normal equations via lstsq)."""
        s, *_ = np.linalg.lstsq(self.A * self.dt, self.b, rcond=rcond)
        return s

    def minimum(self) -> float:
        return float(self.loss_of_sum(self.least_squares_sum()))


def _check_aligned(model: HorizonModel, target: FlowSampleSet) -> None:
    coords = model.L.sample_coords
    if coords.shape != target.coords.shape or not np.array_equal(coords, target.coords):
        raise DomainError("target samples are not aligned with the interaction matrix samples")


def generate_flow(model: HorizonModel, plan: VelocityPlan, target_like: FlowSampleSet | None = None) -> FlowSampleSet:
    """Predicted displacement dt * sum_k L v_k at every sample.

    ``target_like`` supplies pixel and grid bookkeeping for the returned set.
    """
    L = model.L.rows
    disp = model.dt * (L @ plan.as_array().sum(axis=0))
    if target_like is not None:
        return target_like.with_displacements(disp)
    coords = model.L.sample_coords
    return FlowSampleSet(np.full(coords.shape, np.nan), coords, disp.reshape(-1, 2))


def generate_flow_stepwise(model: HorizonModel, plan: VelocityPlan) -> np.ndarray:
    """Same prediction accumulated one horizon step at a time (flattened)."""
    L = model.L.rows
    out = np.zeros(L.shape[0])
    for twist in plan.twists:
        out += model.dt * (L @ twist.as_vector())
    return out


def flow_loss(model: HorizonModel, plan: VelocityPlan, target: FlowSampleSet) -> float:
    """Mean over samples and both components of the squared flow residual."""
    _check_aligned(model, target)
    r = generate_flow(model, plan).flat() - target.flat()
    return float(np.mean(r * r))


def flow_l2(model: HorizonModel, plan: VelocityPlan, target: FlowSampleSet) -> float:
    _check_aligned(model, target)
    return float(np.linalg.norm(generate_flow(model, plan).flat() - target.flat()))


def flow_loss_grad(model: HorizonModel, plan: VelocityPlan, target: FlowSampleSet) -> np.ndarray:
    """(T, 6) gradient of flow_loss; every row is identical because only the sum matters."""
    _check_aligned(model, target)
    L = model.L.rows
    r = generate_flow(model, plan).flat() - target.flat()
    g = 2.0 * model.dt * (L.T @ r) / r.size
    return np.tile(g, (plan.horizon, 1))

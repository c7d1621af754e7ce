"""Velocity controllers: classical IBVS and three MPC inner optimizers over the horizon flow loss."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from flowservo.control.base import (V_MAX, Adam, ConditioningError, TrainingDivergenceError,
                                    saturate)
from flowservo.control.cem import CemConfig, cem_minimize, cem_plan
from flowservo.control.feedforward import FeedforwardNet, ff_forward, ff_train_step
from flowservo.control.ibvs import IbvsConfig, damped_pinv, ibvs_step
from flowservo.control.recurrent import ControlNet, net_forward, net_train_step
from flowservo.geometry import DomainError, VelocityScrew
from flowservo.predict import FlowObjective, VelocityPlan

__all__ = [
    "V_MAX", "Adam", "ConditioningError", "TrainingDivergenceError", "saturate",
    "CemConfig", "cem_minimize", "cem_plan",
    "FeedforwardNet", "ff_forward", "ff_train_step",
    "IbvsConfig", "damped_pinv", "ibvs_step",
    "ControlNet", "net_forward", "net_train_step",
    "StepResult", "CONTROLLER_IDS", "build_controller", "train_inner",
]


@dataclass
class StepResult:
    plan: VelocityPlan
    loss_trace: list = field(default_factory=list)
    divergences: int = 0


def train_inner(net, v_prev: VelocityScrew, objective: FlowObjective, iters: int, lr: float,
                early_stop: bool = False, plateau_tol: float = 1e-4, plateau_window: int = 10):
    """Run up to ``iters`` online training steps; returns (loss trace, divergence resets)."""
    trace = []
    resets = 0
    for _ in range(iters):
        try:
            loss = net_train_step(net, v_prev, None, None, lr, objective=objective)
        except TrainingDivergenceError:
            net.reset()
            resets += 1
            continue
        trace.append(loss)
        if early_stop and len(trace) > plateau_window:
            ref = trace[-1 - plateau_window]
            if ref - trace[-1] < plateau_tol * ref:
                break
    return trace, resets


class IbvsController:
    name = "ibvs"

    def __init__(self, lam: float = 1.0, mu: float = 0.01, **_):
        self.cfg = IbvsConfig(lam=lam, mu=mu)

    def reset(self) -> None:
        pass

    def act(self, model, target, v_prev, seed) -> StepResult:
        v = ibvs_step(model.L, target, self.cfg)
        plan = VelocityPlan((v,))
        loss = FlowObjective(model, target).loss(plan.as_array())
        return StepResult(plan, [loss])


class _NetMpcController:
    net_cls = None
    name = ""

    def __init__(self, horizon: int = 5, hidden: int = 32, lr: float = 1e-2, train_iters: int = 100,
                 early_stop: bool = False, reset_each_step: bool = False, smoothness: float = 1.0,
                 seed: int = 0, **net_kw):
        self.horizon, self.lr, self.train_iters = horizon, lr, train_iters
        self.smoothness = smoothness
        self.early_stop, self.reset_each_step = early_stop, reset_each_step
        self.net = self.net_cls(hidden=hidden, horizon=horizon, seed=seed, **net_kw)

    def reset(self) -> None:
        self.net.reset()

    def act(self, model, target, v_prev, seed) -> StepResult:
        if self.reset_each_step:
            self.net.reset()
        objective = FlowObjective(model, target, self.smoothness)
        trace, resets = train_inner(self.net, v_prev, objective, self.train_iters, self.lr,
                                    early_stop=self.early_stop)
        plan = VelocityPlan.from_array(self.net.forward(v_prev.as_vector()))
        return StepResult(plan, trace, resets)


class RecurrentMpcController(_NetMpcController):
    net_cls = ControlNet
    name = "lstm_mpc"


class FeedforwardMpcController(_NetMpcController):
    net_cls = FeedforwardNet
    name = "nn_mpc"


class CemMpcController:
    """Receding-horizon CEM.

    Defaults differ from ``CemConfig``'s: a larger budget, slow refits,
    horizon-correlated noise and a full 6x6 covariance. With the plain
    settings the distribution collapses before the mean has moved along
    the weakly observable directions (x-translation against y-rotation, and
    y-translation against x-rotation), and episodes stall. ``std_gain`` > 0
    scales the initial std to the target flow's magnitude.
    """

    name = "cem_mpc"

    def __init__(self, horizon: int = 5, population: int = 128, elite_fraction: float = 0.1,
                 iterations: int = 100, init_std: float = 0.1, std_floor: float = 1e-4,
                 smoothness: float = 1.0, noise_correlation: float = 0.98, cem_smoothing: float = 0.7,
                 warm_start: bool = False, full_covariance: bool = True, std_gain: float = 1.0, **_):
        self.horizon, self.smoothness, self.warm_start = horizon, smoothness, warm_start
        self.std_gain = std_gain
        self.cfg = CemConfig(population, elite_fraction, iterations, init_std, std_floor,
                             noise_correlation, cem_smoothing, full_covariance)
        self._last = None

    def reset(self) -> None:
        self._last = None

    def act(self, model, target, v_prev, seed) -> StepResult:
        trace = []
        objective = FlowObjective(model, target, self.smoothness)
        init = None
        if self.warm_start and self._last is not None:
            init = np.vstack([self._last[1:], self._last[-1:]])
        cfg = self.cfg
        if self.std_gain > 0:
            scale = np.sqrt(np.mean(target.flat() ** 2)) / (model.dt * self.horizon)
            cfg = replace(cfg, init_std=max(cfg.std_floor, self.std_gain * scale))
        plan = cem_plan(model, target, cfg, seed, horizon=self.horizon, objective=objective,
                        trace=trace, init_mean=init)
        self._last = plan.as_array()
        return StepResult(plan, trace)


_REGISTRY = {
    "ibvs": IbvsController,
    "lstm_mpc": RecurrentMpcController,
    "nn_mpc": FeedforwardMpcController,
    "cem_mpc": CemMpcController,
}
CONTROLLER_IDS = tuple(_REGISTRY)


def build_controller(controller_id: str, params: dict | None = None, seed: int = 0):
    if controller_id not in _REGISTRY:
        raise DomainError(f"unknown controller {controller_id!r}; valid ids: {', '.join(CONTROLLER_IDS)}")
    params = dict(params or {})
    cls = _REGISTRY[controller_id]
    if cls in (RecurrentMpcController, FeedforwardMpcController):
        params.setdefault("seed", seed)
    return cls(**params)

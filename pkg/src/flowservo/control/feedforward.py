"""Fully connected baseline: v_prev -> two tanh hidden layers -> flat T x 6 plan."""

from __future__ import annotations

import numpy as np

from flowservo.control.base import V_MAX, Adam, FlatParams
from flowservo.control.recurrent import net_train_step
from flowservo.geometry import VelocityScrew
from flowservo.predict import FlowObjective, VelocityPlan


class FeedforwardNet:
    def __init__(self, hidden: int = 64, horizon: int = 5, seed: int = 0):
        self.hidden, self.horizon, self.seed = hidden, horizon, seed
        H = hidden
        self.layout = FlatParams({
            "W1": (H, 6), "b1": (H,),
            "W2": (H, H), "b2": (H,),
            "W3": (6 * horizon, H), "b3": (6 * horizon,),
        })
        self.theta = np.zeros(self.layout.size)
        self.p = self.layout.views(self.theta)
        self.adam = Adam(self.layout.size)
        self.divergences = 0
        self.reset()

    @property
    def n_params(self) -> int:
        return self.layout.size

    def reset(self) -> None:
        rng = np.random.default_rng(self.seed)
        for name, arr in self.p.items():
            fan_in = self.p["W" + name[1:]].shape[1]
            arr[:] = rng.uniform(-1, 1, arr.shape) / np.sqrt(fan_in)
        self.adam.reset()

    def _tile_vmax(self):
        return np.tile(V_MAX, self.horizon)

    def forward(self, v_prev) -> np.ndarray:
        p = self.p
        h1 = np.tanh(p["W1"] @ v_prev + p["b1"])
        h2 = np.tanh(p["W2"] @ h1 + p["b2"])
        y = self._tile_vmax() * np.tanh(p["W3"] @ h2 + p["b3"])
        return y.reshape(self.horizon, 6)

    def loss_and_grad(self, v_prev, objective: FlowObjective) -> tuple[float, np.ndarray]:
        p = self.p
        x = np.asarray(v_prev, dtype=np.float64)
        h1 = np.tanh(p["W1"] @ x + p["b1"])
        h2 = np.tanh(p["W2"] @ h1 + p["b2"])
        vm = self._tile_vmax()
        y = vm * np.tanh(p["W3"] @ h2 + p["b3"])
        plan = y.reshape(self.horizon, 6)
        loss = float(objective.plan_loss(plan))
        dy = objective.plan_grad(plan).reshape(-1)

        grad = np.zeros(self.layout.size)
        g = self.layout.views(grad)
        d3 = dy * (vm - y * y / vm)
        g["W3"][:] = np.outer(d3, h2)
        g["b3"][:] = d3
        d2 = (p["W3"].T @ d3) * (1 - h2 * h2)
        g["W2"][:] = np.outer(d2, h1)
        g["b2"][:] = d2
        d1 = (p["W2"].T @ d2) * (1 - h1 * h1)
        g["W1"][:] = np.outer(d1, x)
        g["b1"][:] = d1
        return loss, grad


def ff_forward(net: FeedforwardNet, v_prev: VelocityScrew) -> VelocityPlan:
    return VelocityPlan.from_array(net.forward(v_prev.as_vector()))


ff_train_step = net_train_step

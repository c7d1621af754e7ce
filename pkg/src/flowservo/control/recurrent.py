"""Stacked-LSTM velocity sequence generator trained online by backprop through time."""

from __future__ import annotations

import numpy as np

from flowservo.control.base import (V_MAX, Adam, FlatParams, TrainingDivergenceError,
                                    clip_global_norm)
from flowservo.flow import FlowSampleSet
from flowservo.geometry import VelocityScrew
from flowservo.predict import FlowObjective, HorizonModel, VelocityPlan


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class ControlNet:
    """Input projection 6 -> H, ``n_layers`` stacked LSTM cells of width H, output H -> 6.

    Each unroll starts from zero hidden/cell state. Step 1 reads ``v_prev``;
    step k > 1 reads step k-1's output. Outputs pass through
    ``V_MAX * tanh`` so every plan lies inside the saturation box.
    Gate layout per layer is (input, forget, output, candidate).
    """

    def __init__(self, hidden: int = 32, n_layers: int = 5, horizon: int = 5, seed: int = 0):
        self.hidden, self.n_layers, self.horizon, self.seed = hidden, n_layers, horizon, seed
        H = hidden
        shapes = {"W_in": (H, 6), "b_in": (H,)}
        for l in range(n_layers):
            shapes[f"W{l}"] = (4 * H, 2 * H)
            shapes[f"b{l}"] = (4 * H,)
        shapes["W_out"] = (6, H)
        shapes["b_out"] = (6,)
        self.layout = FlatParams(shapes)
        self.theta = np.zeros(self.layout.size)
        self.p = self.layout.views(self.theta)
        self.adam = Adam(self.layout.size)
        self.divergences = 0
        self.state = None
        self.reset()

    @property
    def n_params(self) -> int:
        return self.layout.size

    def reset(self) -> None:
        """Reinitialize parameters from the construction seed and clear optimizer moments."""
        rng = np.random.default_rng(self.seed)
        H = self.hidden
        p = self.p
        p["W_in"][:] = rng.uniform(-1, 1, p["W_in"].shape) / np.sqrt(6)
        p["b_in"][:] = rng.uniform(-1, 1, H) / np.sqrt(6)
        for l in range(self.n_layers):
            bound = 1.0 / np.sqrt(H)
            p[f"W{l}"][:] = rng.uniform(-bound, bound, (4 * H, 2 * H))
            p[f"b{l}"][:] = rng.uniform(-bound, bound, 4 * H)
            p[f"b{l}"][H:2 * H] += 1.0
        p["W_out"][:] = rng.uniform(-1, 1, p["W_out"].shape) / np.sqrt(H)
        p["b_out"][:] = rng.uniform(-1, 1, 6) / np.sqrt(H)
        self.adam.reset()

    def _forward(self, v_prev: np.ndarray, keep: bool):
        p = self.p
        H, NL, T = self.hidden, self.n_layers, self.horizon
        Ws = [p[f"W{l}"] for l in range(NL)]
        bs = [p[f"b{l}"] for l in range(NL)]
        W_in, b_in, W_out, b_out = p["W_in"], p["b_in"], p["W_out"], p["b_out"]
        h = [np.zeros(H) for _ in range(NL)]
        c = [np.zeros(H) for _ in range(NL)]
        inp = np.asarray(v_prev, dtype=np.float64)
        outs = np.empty((T, 6))
        cache = [] if keep else None
        for k in range(T):
            x = W_in @ inp + b_in
            step = []
            for l in range(NL):
                xh = np.concatenate([x, h[l]])
                z = Ws[l] @ xh + bs[l]
                s = _sigmoid(z[:3 * H])
                g = np.tanh(z[3 * H:])
                i, f, o = s[:H], s[H:2 * H], s[2 * H:]
                c_new = f * c[l] + i * g
                tc = np.tanh(c_new)
                h_new = o * tc
                if keep:
                    step.append((xh, i, f, o, g, c[l], tc))
                h[l], c[l] = h_new, c_new
                x = h_new
            y = V_MAX * np.tanh(W_out @ x + b_out)
            outs[k] = y
            if keep:
                cache.append((inp, x, y, step))
            inp = y
        self.state = (np.array(h), np.array(c))
        return outs, cache

    def forward(self, v_prev) -> np.ndarray:
        """(T, 6) velocity plan as an array."""
        return self._forward(v_prev, keep=False)[0]

    def loss_and_grad(self, v_prev, objective: FlowObjective) -> tuple[float, np.ndarray]:
        p = self.p
        H, NL, T = self.hidden, self.n_layers, self.horizon
        outs, cache = self._forward(v_prev, keep=True)
        loss = float(objective.plan_loss(outs))
        g_outs = objective.plan_grad(outs)

        grad = np.zeros(self.layout.size)
        gv = self.layout.views(grad)
        W_in, W_out = p["W_in"], p["W_out"]
        Ws = [p[f"W{l}"] for l in range(NL)]
        dh_next = [np.zeros(H) for _ in range(NL)]
        dc_next = [np.zeros(H) for _ in range(NL)]
        d_inp_next = np.zeros(6)
        for k in range(T - 1, -1, -1):
            inp, top, y, step = cache[k]
            dy = g_outs[k] + d_inp_next
            dpre = dy * (V_MAX - y * y / V_MAX)  # d/dz of V_MAX tanh(z)
            gv["W_out"] += np.outer(dpre, top)
            gv["b_out"] += dpre
            dx = W_out.T @ dpre
            for l in range(NL - 1, -1, -1):
                xh, i, f, o, g, c_prev, tc = step[l]
                dh = dx + dh_next[l]
                do = dh * tc
                dc = dh * o * (1.0 - tc * tc) + dc_next[l]
                di = dc * g
                df = dc * c_prev
                dg = dc * i
                dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                     do * o * (1 - o), dg * (1 - g * g)])
                gv[f"W{l}"] += np.outer(dz, xh)
                gv[f"b{l}"] += dz
                dxh = Ws[l].T @ dz
                dx = dxh[:H]
                dh_next[l] = dxh[H:]
                dc_next[l] = dc * f
            gv["W_in"] += np.outer(dx, inp)
            gv["b_in"] += dx
            d_inp_next = W_in.T @ dx
        return loss, grad


def net_forward(net: ControlNet, v_prev: VelocityScrew) -> VelocityPlan:
    return VelocityPlan.from_array(net.forward(v_prev.as_vector()))


def net_train_step(net, v_prev: VelocityScrew, model: HorizonModel, target: FlowSampleSet,
                   eta: float, objective: FlowObjective | None = None) -> float:
    """One BPTT pass plus an Adam update; returns the loss before the update.

    Works for any network exposing ``loss_and_grad``, ``theta`` and ``adam``.
    """
    objective = objective or FlowObjective(model, target)
    loss, grad = net.loss_and_grad(v_prev.as_vector(), objective)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise TrainingDivergenceError("non-finite loss or gradient")
    net.adam.step(net.theta, clip_global_norm(grad), eta)
    return loss

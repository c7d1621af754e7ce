"""Shared controller plumbing: saturation box, divergence signalling, Adam."""

from __future__ import annotations

import numpy as np

from flowservo.geometry import DomainError, VelocityScrew

V_MAX_LINEAR = 0.5   # m/s
V_MAX_ANGULAR = 0.5  # rad/s
V_MAX = np.array([V_MAX_LINEAR] * 3 + [V_MAX_ANGULAR] * 3)
GRAD_CLIP_NORM = 10.0


class ConditioningError(DomainError):
    pass


class TrainingDivergenceError(RuntimeError):
    pass


def saturate(twist: VelocityScrew) -> VelocityScrew:
    return VelocityScrew.from_vector(np.clip(twist.as_vector(), -V_MAX, V_MAX))


def clip_global_norm(grad: np.ndarray, max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


class Adam:
    """Adaptive-moment update on a flat parameter vector (updated in place)."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        theta -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0


class FlatParams:
    """Named array views into one flat float64 vector, so optimizers see a single array."""

    def __init__(self, shapes: dict):
        self.shapes = dict(shapes)
        self.slices = {}
        n = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            self.slices[name] = (slice(n, n + size), shape)
            n += size
        self.size = n

    def views(self, flat: np.ndarray) -> dict:
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices.items()}

"""Cross-entropy method planner over T x 6 velocity plans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowservo.control.base import V_MAX
from flowservo.flow import FlowSampleSet
from flowservo.geometry import DomainError
from flowservo.predict import FlowObjective, HorizonModel, VelocityPlan


@dataclass(frozen=True)
class CemConfig:
    population: int = 64
    elite_fraction: float = 0.1
    iterations: int = 20
    init_std: float = 0.1
    std_floor: float = 1e-4
    noise_correlation: float = 0.0
    smoothing: float = 0.0
    full_covariance: bool = False

    def __post_init__(self):
        if self.population * self.elite_fraction < 2:
            raise DomainError("population * elite_fraction must be >= 2")
        if not self.std_floor > 0:
            raise DomainError("std_floor must be positive")
        if self.iterations < 1:
            raise DomainError("need at least one iteration")
        if not (0.0 <= self.noise_correlation < 1.0 and 0.0 <= self.smoothing < 1.0):
            raise DomainError("noise_correlation and smoothing must lie in [0, 1)")

    @property
    def n_elite(self) -> int:
        return max(2, int(round(self.population * self.elite_fraction)))


def _noise(rng, shape, rho):
    """Standard normal draws, AR(1)-correlated along axis 1 when ``rho`` > 0."""
    eps = rng.standard_normal(shape)
    if rho > 0 and len(shape) > 2:
        scale = np.sqrt(1.0 - rho * rho)
        for k in range(1, shape[1]):
            eps[:, k] = rho * eps[:, k - 1] + scale * eps[:, k]
    return eps


def cem_minimize(loss_fn, mean0, std0, cfg: CemConfig, rng: np.random.Generator,
                 lower=None, upper=None, trace: list | None = None) -> np.ndarray:
    """Minimize ``loss_fn`` (batched: (P, ...) -> (P,)) by refitting a Gaussian to the elites.

    By default the Gaussian is diagonal. With ``cfg.full_covariance`` one full
    covariance over the last axis is shared by (and pooled across) the other
    axes, so for plans it couples the six twist components of every step.
    ``cfg.noise_correlation`` > 0 makes sample noise AR(1)-correlated along the
    first non-batch axis (the plan horizon).
    """
    mean = np.array(mean0, dtype=np.float64)
    d = mean.shape[-1]
    std0 = np.broadcast_to(np.asarray(std0, dtype=np.float64), mean.shape)
    full = cfg.full_covariance
    if full:
        cov = np.diag(np.mean(std0.reshape(-1, d) ** 2, axis=0))
    else:
        std = std0.copy()
    n_elite = cfg.n_elite
    a = cfg.smoothing
    floor2 = cfg.std_floor ** 2
    for _ in range(cfg.iterations):
        eps = _noise(rng, (cfg.population,) + mean.shape, cfg.noise_correlation)
        if full:
            samples = mean + eps @ np.linalg.cholesky(cov).T
        else:
            samples = mean + std * eps
        if lower is not None or upper is not None:
            samples = np.clip(samples, lower, upper)
        losses = loss_fn(samples)
        elite = samples[np.argsort(losses, kind="stable")[:n_elite]]
        mean = a * mean + (1 - a) * elite.mean(axis=0)
        if full:
            dev = (elite - elite.mean(axis=0)).reshape(-1, d)
            fitted = dev.T @ dev / (n_elite - 1) / (dev.shape[0] / n_elite)
            cov = a * cov + (1 - a) * fitted + floor2 * np.eye(d)
        else:
            std = np.maximum(a * std + (1 - a) * elite.std(axis=0), cfg.std_floor)
        if trace is not None:
            trace.append(float(np.min(losses)))
    return mean


def cem_plan(model: HorizonModel, target: FlowSampleSet, cfg: CemConfig, seed,
             horizon: int = 5, objective: FlowObjective | None = None,
             trace: list | None = None, init_mean=None) -> VelocityPlan:
    """CEM over (horizon, 6) plans; samples are clipped to the saturation box."""
    objective = objective or FlowObjective(model, target)
    rng = np.random.default_rng(seed)
    lim = np.broadcast_to(V_MAX, (horizon, 6))

    mean0 = np.zeros((horizon, 6)) if init_mean is None else np.asarray(init_mean, dtype=np.float64)
    mean = cem_minimize(objective.plan_loss, mean0, cfg.init_std, cfg, rng,
                        lower=-lim, upper=lim, trace=trace)
    return VelocityPlan.from_array(mean)

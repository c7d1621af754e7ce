"""Benchmark suites: many (scenario, controller, seed) episodes summarized per controller."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from flowservo.control import CONTROLLER_IDS
from flowservo.geometry import DomainError, Pose
from flowservo.servo import CONVERGED, EpisodeRecord, Scenario, run_episode

SUMMARY_COLUMNS = ["controller", "episodes", "converged", "diverged", "t_error_m", "r_error_deg",
                   "trajectory_length_m", "iterations", "wall_ms_per_iteration"]


def desk_offsets(n: int = 10, seed: int = 2021, max_translation: float = 0.4,
                 max_rotation_deg: float = 15.0) -> list[Pose]:
    """Seeded start poses around the identity goal.

    Translation magnitudes are drawn from [0.4, 1] x max and rotation angles
    from [1/3, 1] x max, with uniformly random directions and axes.
    """
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        t = d * max_translation * rng.uniform(0.4, 1.0)
        angle = np.radians(max_rotation_deg) * rng.uniform(1 / 3, 1.0)
        poses.append(Pose.from_rotvec(axis * angle, t))
    return poses


@dataclass
class BenchSuite:
    scenarios: list
    controllers: tuple = CONTROLLER_IDS
    seeds: tuple = (0,)
    out_dir: str | None = None
    controller_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise DomainError("a suite needs at least one scenario")
        ids = [s.scenario_id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise DomainError("scenario ids must be unique")
        if not self.controllers:
            raise DomainError("a suite needs at least one controller")
        for c in self.controllers:
            if c not in CONTROLLER_IDS:
                raise DomainError(f"unknown controller {c!r}; valid ids: {', '.join(CONTROLLER_IDS)}")

    def jobs(self) -> list:
        """Every (scenario, seed) to run, sorted by scenario id, controller and seed."""
        out = []
        for sc in sorted(self.scenarios, key=lambda s: s.scenario_id):
            for ctrl in self.controllers:
                params = self.controller_params.get(ctrl, {})
                merged = {**params, **sc.controller_params} if sc.controller == ctrl else dict(params)
                scenario = replace(sc, controller=ctrl, controller_params=merged)
                for seed in self.seeds:
                    out.append((scenario, seed))
        return out


def default_desk_suite(n: int = 10, seed: int = 2021, controllers=CONTROLLER_IDS, **scenario_kw) -> BenchSuite:
    scenarios = []
    for k, start in enumerate(desk_offsets(n, seed)):
        kw = dict(start=start, goal=Pose.identity(), scenario_id=f"desk{k:02d}", scene_seed=k)
        kw.update(scenario_kw)
        scenarios.append(Scenario(**kw))
    return BenchSuite(scenarios, tuple(controllers))


@dataclass
class EpisodeResult:
    scenario_id: str
    controller: str
    seed: int
    record: EpisodeRecord


def _run_job(job):
    scenario, seed = job
    return EpisodeResult(scenario.scenario_id, scenario.controller, seed, run_episode(scenario, seed))


def run_suite(suite: BenchSuite, jobs: int = 1, progress=None) -> list[EpisodeResult]:
    work = suite.jobs()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = []
        for job in work:
            results.append(_run_job(job))
            if progress:
                progress(results[-1])
    return sorted(results, key=lambda r: (r.scenario_id, r.controller, r.seed))


@dataclass
class SummaryRow:
    controller: str
    episodes: int
    converged: int
    diverged: int
    t_error: float
    r_error: float
    length: float
    iterations: float
    wall_ms: float


class SummaryTable:
    """Per-controller means over converged episodes; unconverged ones only show up in the counts."""

    def __init__(self, results: list[EpisodeResult]):
        self.results = results
        order = []
        for r in results:
            if r.controller not in order:
                order.append(r.controller)
        order.sort(key=lambda c: CONTROLLER_IDS.index(c) if c in CONTROLLER_IDS else len(CONTROLLER_IDS))
        self.rows = [self._row(c, [r.record for r in results if r.controller == c]) for c in order]

    @staticmethod
    def _row(controller, records) -> SummaryRow:
        ok = [r for r in records if r.status == CONVERGED]

        def mean(vals):
            return float(np.mean(vals)) if vals else float("nan")

        walls = [w for r in records for w in r.wall_ms]
        return SummaryRow(controller, len(records), len(ok), len(records) - len(ok),
                          mean([r.final_t_err for r in ok]), mean([r.final_r_err for r in ok]),
                          mean([r.trajectory_length for r in ok]), mean([r.iterations for r in ok]),
                          mean(walls))

    def row(self, controller: str) -> SummaryRow:
        for r in self.rows:
            if r.controller == controller:
                return r
        raise KeyError(controller)

    def to_csv(self, include_timing: bool = False) -> str:
        """Summary CSV; wall time is left out by default so reruns compare byte for byte."""
        cols = SUMMARY_COLUMNS if include_timing else SUMMARY_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            vals = [r.controller, r.episodes, r.converged, r.diverged, repr(r.t_error), repr(r.r_error),
                    repr(r.length), repr(r.iterations)]
            if include_timing:
                vals.append(f"{r.wall_ms:.3f}")
            w.writerow(vals)
        return buf.getvalue()

    def episodes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "controller", "seed", "status", "iterations", "t_error_m",
                    "r_error_deg", "trajectory_length_m", "divergences"])
        for r in self.results:
            rec = r.record
            w.writerow([r.scenario_id, r.controller, r.seed, rec.status, rec.iterations,
                        repr(rec.final_t_err), repr(rec.final_r_err), repr(rec.trajectory_length),
                        rec.divergences])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'controller':<10} {'conv':>7} {'T.err(m)':>9} {'R.err(deg)':>10} {'Tj.len(m)':>9} {'iters':>7}"]
        for r in self.rows:
            lines.append(f"{r.controller:<10} {r.converged:>3}/{r.episodes:<3} {r.t_error:>9.4f} "
                         f"{r.r_error:>10.3f} {r.length:>9.3f} {r.iterations:>7.1f}")
        return "\n".join(lines)

"""The outer visual-servo loop: sense, target flow, depth refresh, inner optimization, actuate."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from flowservo.control import CONTROLLER_IDS, build_controller, saturate
from flowservo.control.base import V_MAX
from flowservo.flow import (DEFAULT_MIN_TRANSLATIONAL_FLOW, CoverageError, FlowField, UnobservableDepthError, depth_from_flow,
                            read_flo, sample_grid, subsample, valid_fraction, write_flo)
from flowservo.geometry import (DomainError, Intrinsics, Pose, VelocityScrew, integrate_twist,
                                pose_error, stack_interaction)
from flowservo.predict import HorizonModel
from flowservo.scene import SceneConfig, analytic_flow, generate_scene, photometric_error, render

CONVERGED = "converged"
MAX_STEPS = "max-steps"
LOST_TARGET = "lost-target"
ERROR = "error"

DEPTH_SNR = 5.0


@dataclass(frozen=True)
class Scenario:
    start: Pose
    goal: Pose
    scenario_id: str = "scenario"
    scene_seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    intrinsics: Intrinsics = field(default_factory=Intrinsics.default)
    dt: float = 0.1
    eps: float = 8e-4
    max_steps: int = 300
    controller: str = "lstm_mpc"
    controller_params: dict = field(default_factory=dict)
    horizon: int = 5
    train_iters: int = 100
    noise_std: float = 0.0
    flow_source: str = "oracle"
    stride: int = 8
    depth_prior: float = 2.0
    min_coverage: float = 0.25
    v0_std: float = 0.01

    def __post_init__(self):
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if np.any(np.asarray(self.noise_std) < 0):
            raise DomainError("noise_std must be non-negative")
        if self.controller not in CONTROLLER_IDS:
            raise DomainError(f"unknown controller {self.controller!r}; valid ids: {', '.join(CONTROLLER_IDS)}")

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def controller_kwargs(self) -> dict:
        params = dict(self.controller_params)
        if self.controller != "ibvs":
            params.setdefault("horizon", self.horizon)
        if self.controller in ("lstm_mpc", "nn_mpc"):
            params.setdefault("train_iters", self.train_iters)
        return params


@dataclass
class EpisodeRecord:
    status: str
    iterations: int
    poses: list
    photometric: list
    t_errors: list
    r_errors: list
    wall_ms: list
    loss_traces: list
    flow_residual: list
    depth_rel_error: list
    translation_dominant: list
    commands: list
    divergences: int = 0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def trajectory_length(self) -> float:
        t = np.array([p.translation for p in self.poses])
        if len(t) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))

    @property
    def final_t_err(self) -> float:
        return self.t_errors[-1]

    @property
    def final_r_err(self) -> float:
        return self.r_errors[-1]

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "trajectory_length": self.trajectory_length,
            "final_t_err": self.final_t_err,
            "final_r_err": self.final_r_err,
            "divergences": self.divergences,
            "message": self.message,
            "trajectory": [p.to_dict() for p in self.poses],
            "photometric": self.photometric,
            "t_errors": self.t_errors,
            "r_errors": self.r_errors,
            "loss_traces": self.loss_traces,
            "flow_residual": self.flow_residual,
            "depth_rel_error": self.depth_rel_error,
            "translation_dominant": self.translation_dominant,
            "commands": self.commands,
        }
        if include_timing:
            d["wall_ms"] = self.wall_ms
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, allow_nan=True)

    def step_rows(self) -> list:
        rows = []
        for k in range(len(self.photometric)):
            loss = self.loss_traces[k][-1] if k < len(self.loss_traces) and self.loss_traces[k] else ""
            wall = self.wall_ms[k] if k < len(self.wall_ms) else ""
            rows.append([k, self.t_errors[k], self.r_errors[k], self.photometric[k], wall, loss])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "t_err", "r_err", "photometric", "wall_ms", "loss"])
        w.writerows(self.step_rows())
        return buf.getvalue()

    def training_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "iteration", "loss"])
        for k, trace in enumerate(self.loss_traces):
            for m, loss in enumerate(trace):
                w.writerow([k, m, repr(float(loss))])
        return buf.getvalue()

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "x", "y", "z"])
        for k, p in enumerate(self.poses):
            w.writerow([k, *p.translation.tolist()])
        return buf.getvalue()


def inject_noise(twist: VelocityScrew, std, rng: np.random.Generator) -> VelocityScrew:
    """Additive zero-mean Gaussian actuation noise per component, then the saturation clamp."""
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (6,))
    if np.any(std < 0):
        raise DomainError("noise std must be non-negative")
    xi = twist.as_vector()
    if np.any(std > 0):
        xi = xi + std * rng.standard_normal(6)
    return VelocityScrew.from_vector(np.clip(xi, -V_MAX, V_MAX))


class OracleFlowSource:
    """Flows from the analytic scene oracle; optionally mirrors them to a ``.flo`` directory."""

    def __init__(self, scene, intrinsics: Intrinsics, dump_dir=None):
        self.scene, self.intrinsics = scene, intrinsics
        self.dump_dir = Path(dump_dir) if dump_dir else None
        if self.dump_dir:
            self.dump_dir.mkdir(parents=True, exist_ok=True)

    def _out(self, name, flow: FlowField) -> FlowField:
        if self.dump_dir:
            path = self.dump_dir / name
            write_flo(flow, path)
            return read_flo(path)
        return flow

    def target(self, step, pose, goal, depth) -> FlowField:
        return self._out(f"target_{step:05d}.flo", analytic_flow(self.scene, pose, goal, self.intrinsics, depth))

    def proxy(self, step, pose, prev_pose, depth) -> FlowField:
        return self._out(f"proxy_{step:05d}.flo", analytic_flow(self.scene, pose, prev_pose, self.intrinsics, depth))


class FloDirectorySource:
    """Replays externally computed flows: ``target_NNNNN.flo`` = F(I_t, I*), ``proxy_NNNNN.flo`` = F(I_t, I_t-1)."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"flow directory {self.directory} does not exist")

    def _read(self, name) -> FlowField:
        path = self.directory / name
        if not path.exists():
            raise FileNotFoundError(f"missing flow file {path}")
        return read_flo(path)

    def target(self, step, pose, goal, depth) -> FlowField:
        return self._read(f"target_{step:05d}.flo")

    def proxy(self, step, pose, prev_pose, depth) -> FlowField:
        return self._read(f"proxy_{step:05d}.flo")


def _seed_streams(seed: int):
    ss = np.random.SeedSequence(int(seed))
    v0_ss, noise_ss, ctrl_ss = ss.spawn(3)
    return (np.random.default_rng(v0_ss), np.random.default_rng(noise_ss),
            int(ctrl_ss.generate_state(1)[0]))


def run_episode(scenario: Scenario, seed: int = 0, dump_flow_dir=None) -> EpisodeRecord:
    """Algorithm loop; returns a record whatever the outcome."""
    sc = scenario
    K = sc.intrinsics
    scene = generate_scene(sc.scene_seed, sc.scene)
    if sc.flow_source == "oracle":
        source = OracleFlowSource(scene, K, dump_flow_dir)
    else:
        source = FloDirectorySource(sc.flow_source)
    v0_rng, noise_rng, ctrl_seed = _seed_streams(seed)
    controller = build_controller(sc.controller, sc.controller_kwargs(), seed=ctrl_seed)

    goal_img, _ = render(scene, sc.goal, K)
    gu, _ = sample_grid(K, sc.stride)
    depth_grid = np.full(gu.size, float(sc.depth_prior))

    rec = EpisodeRecord(status=MAX_STEPS, iterations=0, poses=[], photometric=[], t_errors=[],
                        r_errors=[], wall_ms=[], loss_traces=[], flow_residual=[],
                        depth_rel_error=[], translation_dominant=[], commands=[])
    pose = sc.start
    v_prev = VelocityScrew.from_vector(v0_rng.normal(0.0, sc.v0_std, 6))
    prev_pose = None
    prev_cmd = None
    # actuation noise shows up in the proxy flow; only trust depths whose
    # translational signal clearly exceeds it
    noise_flow = sc.dt * float(np.linalg.norm(np.broadcast_to(sc.noise_std, (6,))))
    min_trans = max(DEFAULT_MIN_TRANSLATIONAL_FLOW, DEPTH_SNR * noise_flow)
    for step in range(sc.max_steps + 1):
        t0 = time.perf_counter()
        img, depth = render(scene, pose, K)
        pe = photometric_error(img, goal_img, per_pixel=True)
        t_err, r_err = pose_error(pose, sc.goal)
        rec.poses.append(pose)
        rec.photometric.append(pe)
        rec.t_errors.append(t_err)
        rec.r_errors.append(r_err)
        if pe <= sc.eps:
            rec.status = CONVERGED
            break
        if step == sc.max_steps:
            rec.status = MAX_STEPS
            break
        try:
            target_field = source.target(step, pose, sc.goal, depth)
            if valid_fraction(target_field, K, sc.stride) < sc.min_coverage:
                raise CoverageError("valid target-flow coverage below threshold")
            target = subsample(target_field, K, sc.stride)

            if prev_cmd is not None:
                proxy = subsample(source.proxy(step, pose, prev_pose, depth), K, sc.stride, n_min=0)
                if proxy.n_samples:
                    try:
                        est, good = depth_from_flow(proxy, -prev_cmd, sc.dt, previous=depth_grid[proxy.index],
                                                    min_translational_flow=min_trans)
                    except UnobservableDepthError:
                        good = np.zeros(proxy.n_samples, dtype=bool)
                    else:
                        depth_grid[proxy.index] = est
                    truth = depth.depths[proxy.pixels[:, 1].astype(int), proxy.pixels[:, 0].astype(int)]
                    rel = np.abs(est - truth) / truth if good.any() else np.array([])
                    rec.depth_rel_error.append(float(np.median(rel[good])) if good.any() else float("nan"))
                else:
                    rec.depth_rel_error.append(float("nan"))
                lin = np.linalg.norm(prev_cmd.linear) / sc.depth_prior
                rec.translation_dominant.append(bool(lin > np.linalg.norm(prev_cmd.angular)))

            samples = np.column_stack([target.coords, depth_grid[target.index]])
            model = HorizonModel(stack_interaction(samples), sc.dt)
            result = controller.act(model, target, v_prev, ctrl_seed + step)
        except CoverageError as exc:
            rec.status = LOST_TARGET
            rec.message = str(exc)
            break
        except (DomainError, FileNotFoundError, ValueError, np.linalg.LinAlgError) as exc:
            rec.status = ERROR
            rec.message = f"{type(exc).__name__}: {exc}"
            break
        rec.loss_traces.append([float(x) for x in result.loss_trace])
        rec.divergences += result.divergences
        cmd = saturate(result.plan.first())
        resid = model.dt * (model.L.rows @ cmd.as_vector()) - target.flat()
        rec.flow_residual.append(float(np.mean(resid * resid)))
        executed = inject_noise(cmd, sc.noise_std, noise_rng)
        rec.commands.append(cmd.as_vector().tolist())
        prev_pose = pose
        pose = integrate_twist(pose, executed, sc.dt)
        prev_cmd = cmd
        v_prev = cmd
        rec.iterations += 1
        rec.wall_ms.append((time.perf_counter() - t0) * 1e3)
    return rec

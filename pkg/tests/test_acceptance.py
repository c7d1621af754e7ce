"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line verdict (see conftest.py) before asserting, so
the terminal summary lists all ten criteria even when some fail.
"""

import time

import numpy as np
import pytest

from criteria import record
from flowservo.bench import SummaryTable, default_desk_suite, run_suite
from flowservo.control import CemMpcController, ControlNet, FeedforwardNet, train_inner
from flowservo.flow import FlowField, read_flo, write_flo
from flowservo.geometry import Intrinsics, Pose, VelocityScrew, integrate_twist, interaction_rows
from flowservo.predict import FlowObjective, VelocityPlan, flow_loss
from flowservo.scene import flow_from_depth, generate_scene, render
from instances import fd_relative_error, random_instance
from test_flow import GOLDEN_2X1


@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    results = run_suite(default_desk_suite())
    return results, time.perf_counter() - t0


# 1. interaction matrix entries against an independent derivation

def _projected_velocity(x, y, Z, xi):
    # differentiate the projection of the camera-frame point P = Z (x, y, 1)
    # moving as dP/dt = -v - w x P
    v, w = xi[:3], xi[3:]
    P = Z * np.array([x, y, 1.0])
    dP = -v - np.cross(w, P)
    return np.array([(dP[0] * P[2] - P[0] * dP[2]) / P[2] ** 2, (dP[1] * P[2] - P[1] * dP[2]) / P[2] ** 2])


def test_criterion_01_interaction_matrix():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        x, y = rng.uniform(-1, 1, 2)
        Z = rng.uniform(0.1, 10.0)
        L = interaction_rows(x, y, Z)
        ref = np.column_stack([_projected_velocity(x, y, Z, e) for e in np.eye(6)])
        worst = max(worst, float(np.max(np.abs(L - ref))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 1.0
    record(1, ok, f"max entry error {worst:.2e} (<= 1e-12), {dt:.2f} s (< 1 s)")
    assert ok


# 2. analytic flow vs L xi dt is second order in dt

def test_criterion_02_flow_is_second_order():
    t0 = time.perf_counter()
    K = Intrinsics.default()
    scene = generate_scene(0)
    p0 = Pose.identity()
    _, depth = render(scene, p0, K)
    gv, gu = (a.ravel() for a in np.mgrid[4:128:8, 4:128:8])
    x, y, Z = (gu - K.cx) / K.fx, (gv - K.cy) / K.fy, depth.depths[gv, gu]
    L = np.vstack([interaction_rows(a, b, c) for a, b, c in zip(x, y, Z)])
    rng = np.random.default_rng(2)
    ratios = []
    for _ in range(100):
        xi = rng.normal(size=6)
        xi *= 0.2 / np.linalg.norm(xi)
        flows = [flow_from_depth(depth, p0, integrate_twist(p0, VelocityScrew.from_vector(xi), dt), K)
                 for dt in (0.1, 0.05)]
        mask = np.repeat(flows[0].valid[gv, gu] & flows[1].valid[gv, gu], 2)
        res = []
        for f, dt in zip(flows, (0.1, 0.05)):
            meas = np.column_stack([f.u[gv, gu] / K.fx, f.v[gv, gu] / K.fy]).ravel()
            res.append(np.max(np.abs(meas - L @ xi * dt)[mask]))
        ratios.append(res[0] / res[1])
    dt = time.perf_counter() - t0
    lo, hi = min(ratios), max(ratios)
    ok = 3.5 <= lo and hi <= 4.5 and dt < 10.0
    record(2, ok, f"residual ratio on halving dt in [{lo:.3f}, {hi:.3f}] (within [3.5, 4.5]), {dt:.1f} s")
    assert ok


# 3. BPTT and feedforward gradients vs central differences

def test_criterion_03_gradients():
    t0 = time.perf_counter()
    worst = {"recurrent": 0.0, "feedforward": 0.0}
    for seed in range(20):
        model, target = random_instance(seed)
        objective = FlowObjective(model, target, smoothness=1.0)
        v_prev = np.random.default_rng(seed).normal(size=6) * 0.1
        worst["recurrent"] = max(worst["recurrent"], fd_relative_error(ControlNet(hidden=4, seed=seed), v_prev, objective))
        worst["feedforward"] = max(worst["feedforward"],
                                   fd_relative_error(FeedforwardNet(hidden=4, seed=seed), v_prev, objective))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 30.0
    record(3, ok, f"max relative error recurrent {worst['recurrent']:.1e}, feedforward "
                  f"{worst['feedforward']:.1e} (< 1e-4), {dt:.1f} s")
    assert ok


# 4. all inner optimizers reach the least-squares residual

def test_criterion_04_optimizer_equivalence():
    t0 = time.perf_counter()
    v0 = VelocityScrew.from_vector([0.01, -0.01, 0.005, 0.0, 0.01, -0.005])
    gaps = {"recurrent": [], "feedforward": [], "cem": []}
    for seed in range(20):
        model, target = random_instance(seed)
        plain = FlowObjective(model, target)
        best = plain.minimum()
        # the smoothness term only picks among plans with the same twist sum
        smooth = FlowObjective(model, target, smoothness=1.0)
        for name, net in (("recurrent", ControlNet(seed=seed)), ("feedforward", FeedforwardNet(seed=seed))):
            train_inner(net, v0, smooth, 500, 1e-2)
            loss = flow_loss(model, VelocityPlan.from_array(net.forward(v0.as_vector())), target)
            gaps[name].append((loss - best) / best)
        plan = CemMpcController().act(model, target, v0, seed).plan
        gaps["cem"].append((flow_loss(model, plan, target) - best) / best)
    dt = time.perf_counter() - t0
    worst = {k: max(v) for k, v in gaps.items()}
    ok = max(worst.values()) < 0.05 and dt < 120.0
    record(4, ok, "worst excess over least squares " + ", ".join(f"{k} {v:.2%}" for k, v in worst.items())
           + f" (< 5%), {dt:.0f} s")
    assert ok


# 5. end-to-end convergence on the desk suite

def test_criterion_05_convergence(desk):
    results, elapsed = desk
    table = SummaryTable(results)
    rates = {r.controller: r.converged for r in table.rows}
    lstm = [r.record for r in results if r.controller == "lstm_mpc" and r.record.converged]
    t_max = max(r.final_t_err for r in lstm)
    r_max = max(r.final_r_err for r in lstm)
    ok = min(rates.values()) >= 8 and t_max < 0.02 and r_max < 1.0 and elapsed < 300
    record(5, ok, "converged " + ", ".join(f"{k} {v}/10" for k, v in rates.items())
           + f"; recurrent worst t_err {t_max:.4f} m, r_err {r_max:.3f} deg; {elapsed:.0f} s")
    assert ok


# 6. qualitative orderings of the paper's comparison table

def test_criterion_06_orderings(desk):
    table = SummaryTable(desk[0])
    lstm, cem, ibvs = table.row("lstm_mpc"), table.row("cem_mpc"), table.row("ibvs")
    a = lstm.iterations < cem.iterations
    b = cem.length <= ibvs.length
    c = lstm.length < ibvs.length
    ok = a and b and c
    record(6, ok, f"(a) iterations recurrent {lstm.iterations:.1f} < cem {cem.iterations:.1f}: {a}; "
                  f"(b) length cem {cem.length:.4f} <= ibvs {ibvs.length:.4f}: {b}; "
                  f"(c) length recurrent {lstm.length:.4f} < ibvs {ibvs.length:.4f}: {c}")
    assert ok


# 7. actuation noise

def test_criterion_07_noise_robustness(desk):
    t0 = time.perf_counter()
    clean = SummaryTable(desk[0]).row("lstm_mpc")
    noisy = SummaryTable(run_suite(default_desk_suite(controllers=("lstm_mpc",), noise_std=0.01))).row("lstm_mpc")
    dt = time.perf_counter() - t0
    rate_ratio = noisy.converged / clean.converged
    inflation = noisy.iterations / clean.iterations
    ok = rate_ratio >= 0.8 and inflation < 2.0 and dt < 300
    record(7, ok, f"converged {noisy.converged}/10 vs {clean.converged}/10 (ratio {rate_ratio:.2f} >= 0.8), "
                  f"iterations {noisy.iterations:.1f} vs {clean.iterations:.1f} (x{inflation:.2f} < 2); {dt:.0f} s")
    assert ok


# 8. depth from flow on translation-dominant steps

def test_criterion_08_depth_from_flow(desk):
    errs = []
    for res in desk[0]:
        rec = res.record
        errs += [e for e, dom in zip(rec.depth_rel_error, rec.translation_dominant) if dom and np.isfinite(e)]
    med = float(np.median(errs))
    ok = med < 0.05
    record(8, ok, f"median relative depth error {med:.2%} over {len(errs)} translation-dominant steps (< 5%)")
    assert ok


# 9. .flo bit-exactness

def test_criterion_09_flo_bit_exact(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    same = 0
    for k in range(100):
        h, w = rng.integers(1, 40, 2)
        f = FlowField((rng.normal(size=(h, w)) * 10).astype(np.float32),
                      (rng.normal(size=(h, w)) * 10).astype(np.float32), rng.random((h, w)) > 0.1)
        path = tmp_path / f"{k}.flo"
        write_flo(f, path)
        g = read_flo(path)
        write_flo(g, tmp_path / "again.flo")
        same += g == f and (tmp_path / "again.flo").read_bytes() == path.read_bytes()
    write_flo(FlowField([[1.0, 2.0]], [[3.0, 4.0]]), tmp_path / "golden.flo")
    golden = (tmp_path / "golden.flo").read_bytes() == GOLDEN_2X1
    dt = time.perf_counter() - t0
    ok = same == 100 and golden and dt < 1.0
    record(9, ok, f"{same}/100 round trips identical, golden 2x1 file match {golden}, {dt:.2f} s")
    assert ok


# 10. determinism of the suite summary

def test_criterion_10_determinism(desk):
    first = SummaryTable(desk[0]).to_csv()
    second = SummaryTable(run_suite(default_desk_suite())).to_csv()
    ok = first == second
    record(10, ok, f"summary CSV byte-identical on rerun: {ok} ({len(first)} bytes)")
    assert ok

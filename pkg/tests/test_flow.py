import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowservo.flow import (N_MIN, CoverageError, FloFormatError, FlowField, FlowSampleSet,
                            UnobservableDepthError, compose_flows, depth_from_flow, read_flo,
                            sample_grid, subsample, write_flo)
from flowservo.geometry import DomainError, Intrinsics, Pose, VelocityScrew, integrate_twist
from flowservo.scene import analytic_flow, generate_scene, render

K = Intrinsics.default()

# 2x1 field u=(1, 2), v=(3, 4), encoded by hand: "PIEH", w=2, h=1, then (u, v) pairs
GOLDEN_2X1 = (b"PIEH" + b"\x02\x00\x00\x00" + b"\x01\x00\x00\x00"
              + b"\x00\x00\x80\x3f" + b"\x00\x00\x40\x40" + b"\x00\x00\x00\x40" + b"\x00\x00\x80\x40")


@pytest.fixture(scope="module")
def scene():
    return generate_scene(7)


def _random_field(rng, h=5, w=7, holes=True):
    valid = rng.random((h, w)) > 0.2 if holes else None
    return FlowField(rng.normal(size=(h, w)) * 3, rng.normal(size=(h, w)) * 3, valid)


def _one_sample(x, y, dx, dy):
    return FlowSampleSet(np.array([[0.0, 0.0]]), np.array([[x, y]]), np.array([[dx, dy]]))


def test_golden_file_bytes(tmp_path):
    write_flo(FlowField([[1.0, 2.0]], [[3.0, 4.0]]), tmp_path / "g.flo")
    raw = (tmp_path / "g.flo").read_bytes()
    assert len(raw) == 28
    assert raw == GOLDEN_2X1


def test_golden_file_reads(tmp_path):
    (tmp_path / "g.flo").write_bytes(GOLDEN_2X1)
    f = read_flo(tmp_path / "g.flo")
    assert (f.width, f.height) == (2, 1)
    assert f.u.tolist() == [[1.0, 2.0]] and f.v.tolist() == [[3.0, 4.0]]
    assert f.valid.all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.integers(1, 9))
def test_flo_round_trip(tmp_path_factory, seed, h, w):
    rng = np.random.default_rng(seed)
    # float32-representable values so the round trip is exact
    f = FlowField(rng.normal(size=(h, w)).astype(np.float32), rng.normal(size=(h, w)).astype(np.float32),
                  rng.random((h, w)) > 0.2)
    path = tmp_path_factory.mktemp("flo") / "f.flo"
    write_flo(f, path)
    assert read_flo(path) == f


def test_bad_magic(tmp_path):
    (tmp_path / "b.flo").write_bytes(b"PIEX" + GOLDEN_2X1[4:])
    with pytest.raises(FloFormatError) as exc:
        read_flo(tmp_path / "b.flo")
    assert exc.value.offset == 0


@pytest.mark.parametrize("cut", [2, 8, 20])
def test_truncated_file(tmp_path, cut):
    (tmp_path / "t.flo").write_bytes(GOLDEN_2X1[:cut])
    with pytest.raises(FloFormatError) as exc:
        read_flo(tmp_path / "t.flo")
    assert exc.value.offset == cut


def test_trailing_bytes(tmp_path):
    (tmp_path / "t.flo").write_bytes(GOLDEN_2X1 + b"\x00")
    with pytest.raises(FloFormatError):
        read_flo(tmp_path / "t.flo")


def test_compose_identities():
    rng = np.random.default_rng(1)
    f = _random_field(rng)
    z = FlowField.zeros(f.width, f.height)
    assert compose_flows(f, z) == f
    g = compose_flows(f, -f)
    assert np.all(g.u == 0) and np.all(g.v == 0)
    np.testing.assert_array_equal(g.valid, f.valid)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_compose_commutative_and_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_field(rng) for _ in range(3))
    assert compose_flows(a, b) == compose_flows(b, a)
    l, r = compose_flows(compose_flows(a, b), c), compose_flows(a, compose_flows(b, c))
    np.testing.assert_array_equal(l.valid, r.valid)
    np.testing.assert_allclose(l.u, r.u, atol=1e-12)
    np.testing.assert_allclose(l.v, r.v, atol=1e-12)


def test_compose_size_mismatch():
    with pytest.raises(DomainError):
        compose_flows(FlowField.zeros(3, 2), FlowField.zeros(2, 3))


def test_additive_composition_error_shrinks(scene):
    pa = Pose.identity()
    step = np.array([0.02, -0.01, 0.03, 0.01, 0.02, -0.015])
    worst = []
    for s in (1.0, 0.5):
        pb = integrate_twist(pa, VelocityScrew.from_vector(s * step), 1.0)
        pc = integrate_twist(pb, VelocityScrew.from_vector(s * step), 1.0)
        ab, bc, ac = (analytic_flow(scene, p, q, K) for p, q in ((pa, pb), (pb, pc), (pa, pc)))
        comp = compose_flows(ab, bc)
        m = comp.valid & ac.valid
        worst.append(np.median(np.hypot(comp.u - ac.u, comp.v - ac.v)[m]))
    assert worst[1] < 0.5 * worst[0]


def test_grid_counts():
    gu, gv = sample_grid(K, 8)
    assert gu.size == 256
    assert (gu[0], gv[0]) == (4, 4) and (gu[1], gv[1]) == (12, 4)
    gu, gv = sample_grid(K, 128)
    assert gu.size == 1


def test_subsample_zero_flow():
    s = subsample(FlowField.zeros(128, 128), K, 8)
    assert s.n_samples == 256
    assert np.all(s.displacements == 0)
    np.testing.assert_allclose(s.coords[0], [(4 - 63.5) / 128, (4 - 63.5) / 128])


def test_subsample_normalizes_units():
    f = FlowField(np.full((128, 128), 12.8), np.full((128, 128), -6.4))
    s = subsample(f, K, 16)
    np.testing.assert_allclose(s.displacements, np.tile([0.1, -0.05], (64, 1)))


def test_subsample_coverage_error():
    valid = np.zeros((128, 128), bool)
    valid[:8, :] = True
    with pytest.raises(CoverageError) as exc:
        subsample(FlowField(np.zeros((128, 128)), np.zeros((128, 128)), valid), K, 8)
    assert exc.value.n_valid == 16 and exc.value.n_total == 256
    assert N_MIN == 64


def test_depth_from_flow_example():
    z, ok = depth_from_flow(_one_sample(0.0, 0.0, -0.05, 0.0), VelocityScrew.from_vector([0.1, 0, 0, 0, 0, 0]), 1.0)
    assert ok[0] and z[0] == pytest.approx(2.0)


def test_depth_from_flow_pure_rotation():
    with pytest.raises(UnobservableDepthError):
        depth_from_flow(_one_sample(0.1, 0.1, 0.0, 0.0), VelocityScrew.from_vector([0, 0, 0, 0, 0, 0.3]), 0.1)


def test_depth_from_flow_keeps_previous_when_flagged():
    twist = VelocityScrew.from_vector([0.1, 0, 0, 0, 0, 0])
    z, ok = depth_from_flow(_one_sample(0.0, 0.0, 0.0, 0.0), twist, 1.0, previous=np.array([1.7]))
    assert not ok[0] and z[0] == 1.7
    z, ok = depth_from_flow(_one_sample(0.0, 0.0, 0.0, 0.0), twist, 1.0)
    assert np.isnan(z[0])


@pytest.mark.parametrize("seed", range(5))
def test_depth_from_translation_matches_render(scene, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=3)
    v *= 0.05 / np.linalg.norm(v)
    twist = VelocityScrew.from_vector(np.r_[v, 0, 0, 0])
    p0 = Pose.identity()
    _, depth = render(scene, p0, K)
    flow = analytic_flow(scene, p0, integrate_twist(p0, twist, 0.1), K, depth)
    s = subsample(flow, K, 8)
    z, ok = depth_from_flow(s, twist, 0.1)
    truth = depth.depths[s.pixels[:, 1].astype(int), s.pixels[:, 0].astype(int)]
    rel = np.abs(z[ok] - truth[ok]) / truth[ok]
    assert ok.mean() > 0.5
    assert np.median(rel) < 0.05
    big = ok & (np.linalg.norm(s.displacements, axis=1) > 1e-4)
    assert np.all(np.abs(z[big] - truth[big]) / truth[big] < 0.01)


def test_bad_flow_field():
    with pytest.raises(DomainError):
        FlowField(np.zeros((2, 3)), np.zeros((3, 2)))


def test_nonfinite_entries_become_invalid():
    f = FlowField([[np.nan, 1.0]], [[0.0, 2.0]])
    assert f.valid.tolist() == [[False, True]]
    assert f.u[0, 0] == 0.0

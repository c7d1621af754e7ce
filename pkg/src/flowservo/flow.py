"""Dense flow fields, grid sampling, additive composition, depth from flow and ``.flo`` I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from flowservo.geometry import Z_MIN, DomainError, Intrinsics, VelocityScrew

N_MIN = 64
FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e10  # Middlebury marks unknown flow with magnitudes above 1e9
DEFAULT_MIN_TRANSLATIONAL_FLOW = 1e-4


class CoverageError(DomainError):
    def __init__(self, message, n_valid=0, n_total=0):
        super().__init__(message)
        self.n_valid = n_valid
        self.n_total = n_total


class UnobservableDepthError(DomainError):
    """Depth cannot be recovered from a twist without translation."""


class FloFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FlowField:
    """Per-pixel displacement (pixels) with a validity mask; invalid entries are stored as 0."""

    __slots__ = ("u", "v", "valid")

    def __init__(self, u, v, valid=None):
        u = np.array(u, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DomainError("u and v must be equal-sized 2-D grids")
        valid = np.ones(u.shape, dtype=bool) if valid is None else np.array(valid, dtype=bool)
        if valid.shape != u.shape:
            raise DomainError("validity mask shape mismatch")
        valid &= np.isfinite(u) & np.isfinite(v)
        u[~valid] = 0.0
        v[~valid] = 0.0
        for a in (u, v, valid):
            a.setflags(write=False)
        self.u, self.v, self.valid = u, v, valid

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    def __neg__(self) -> "FlowField":
        return FlowField(-self.u, -self.v, self.valid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowField):
            return NotImplemented
        return (self.u.shape == other.u.shape and np.array_equal(self.valid, other.valid)
                and np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v))

    def __repr__(self) -> str:
        return f"FlowField({self.width}x{self.height}, valid={int(self.valid.sum())})"


@dataclass(frozen=True)
class FlowSampleSet:
    """Flow at N grid pixels, in normalized image units.

    ``index`` locates each sample in the full sampling grid of ``grid_size``
    entries, so per-sample state (depth) can persist across frames.
    """

    pixels: np.ndarray         # (N, 2) pixel (u, v)
    coords: np.ndarray         # (N, 2) normalized (x, y)
    displacements: np.ndarray  # (N, 2) normalized (dx, dy)
    index: np.ndarray | None = None
    grid_size: int | None = None

    def __post_init__(self):
        n = self.coords.shape[0]
        if self.coords.shape != (n, 2) or self.displacements.shape != (n, 2):
            raise DomainError("sample set arrays must be (N, 2)")

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def flat(self) -> np.ndarray:
        """Displacements interleaved (dx0, dy0, dx1, ...) to match stacked Jacobian rows."""
        return self.displacements.reshape(-1)

    def with_displacements(self, disp: np.ndarray) -> "FlowSampleSet":
        return FlowSampleSet(self.pixels, self.coords, np.asarray(disp, dtype=np.float64).reshape(-1, 2),
                             self.index, self.grid_size)


def compose_flows(f_ab: FlowField, f_bc: FlowField) -> FlowField:
    """Additive composition F(a,c) ~ F(a,b) + F(b,c), taken pointwise without warping."""
    if f_ab.u.shape != f_bc.u.shape:
        raise DomainError(f"flow sizes differ: {f_ab.u.shape} vs {f_bc.u.shape}")
    return FlowField(f_ab.u + f_bc.u, f_ab.v + f_bc.v, f_ab.valid & f_bc.valid)


def sample_grid(intrinsics: Intrinsics, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major grid pixel positions (u, v) for a stride, offset by half a stride."""
    if stride < 1:
        raise DomainError("stride must be >= 1")
    us = np.arange(stride // 2, intrinsics.width, stride)
    vs = np.arange(stride // 2, intrinsics.height, stride)
    gv, gu = np.meshgrid(vs, us, indexing="ij")
    return gu.ravel(), gv.ravel()


def subsample(flow: FlowField, intrinsics: Intrinsics, stride: int = 8,
              n_min: int = N_MIN) -> FlowSampleSet:
    if (flow.width, flow.height) != (intrinsics.width, intrinsics.height):
        raise DomainError("flow size does not match intrinsics")
    gu, gv = sample_grid(intrinsics, stride)
    ok = flow.valid[gv, gu]
    n_valid = int(ok.sum())
    if n_valid < n_min:
        raise CoverageError(f"only {n_valid} valid samples (need {n_min})", n_valid, gu.size)
    idx = np.flatnonzero(ok)
    u, v = gu[idx].astype(np.float64), gv[idx].astype(np.float64)
    coords = np.column_stack([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy])
    disp = np.column_stack([flow.u[gv[idx], gu[idx]] / intrinsics.fx,
                            flow.v[gv[idx], gu[idx]] / intrinsics.fy])
    return FlowSampleSet(np.column_stack([u, v]), coords, disp, idx, gu.size)


def valid_fraction(flow: FlowField, intrinsics: Intrinsics, stride: int = 8) -> float:
    gu, gv = sample_grid(intrinsics, stride)
    return float(flow.valid[gv, gu].mean())


def depth_from_flow(flow: FlowSampleSet, twist: VelocityScrew, dt: float,
                    previous: np.ndarray | None = None,
                    min_translational_flow: float = DEFAULT_MIN_TRANSLATIONAL_FLOW,
                    max_depth: float = 1e3):
    """Invert flow = L(Z) twist dt for Z at every sample.

    Each sample gives two equations linear in 1/Z; they are solved in least
    squares. A sample is flagged when the translational flow its solution
    explains, |1/Z| |A| dt, is below ``min_translational_flow`` (normalized
    units), or when the solution is not a depth in (Z_min, max_depth].
    Flagged samples take the value in ``previous`` (NaN when no previous
    depths are given).

    Returns ``(depths, well_conditioned)``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    vlin, w = twist.linear, twist.angular
    if not np.any(vlin != 0.0):
        raise UnobservableDepthError("twist has no linear part; depth is unobservable")
    x, y = flow.coords[:, 0], flow.coords[:, 1]
    # translational columns scaled by 1/Z, rotational part independent of Z
    ax = -vlin[0] + x * vlin[2]
    ay = -vlin[1] + y * vlin[2]
    bx = x * y * w[0] - (1 + x * x) * w[1] + y * w[2]
    by = (1 + y * y) * w[0] - x * y * w[1] - x * w[2]
    rx = flow.displacements[:, 0] / dt - bx
    ry = flow.displacements[:, 1] / dt - by
    a2 = ax * ax + ay * ay
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = (ax * rx + ay * ry) / a2
        z = 1.0 / inv_z
    trans_flow = np.abs(inv_z) * np.sqrt(a2) * dt
    good = (a2 > 0) & (trans_flow > min_translational_flow) & np.isfinite(z) & (z > Z_MIN) & (z <= max_depth)
    if previous is None:
        fill = np.full(z.shape, np.nan)
    else:
        fill = np.asarray(previous, dtype=np.float64)
        if fill.shape != z.shape:
            raise DomainError("previous depths do not match the sample count")
    return np.where(good, z, fill), good


def write_flo(flow: FlowField, path) -> None:
    """Middlebury ``.flo``: float32 magic, int32 width, int32 height, interleaved float32 (u, v).

    Invalid pixels are written as the Middlebury unknown-flow value.
    """
    u = np.where(flow.valid, flow.u, FLO_UNKNOWN).astype("<f4")
    v = np.where(flow.valid, flow.v, FLO_UNKNOWN).astype("<f4")
    payload = np.empty((flow.height, flow.width, 2), dtype="<f4")
    payload[..., 0] = u
    payload[..., 1] = v
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    Path(path).write_bytes(header + payload.tobytes())


def read_flo(path) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FloFormatError("file too short for magic number", len(raw))
    (magic,) = struct.unpack_from("<f", raw, 0)
    if magic != FLO_MAGIC:
        raise FloFormatError(f"bad magic {magic!r}, expected {FLO_MAGIC}", 0)
    if len(raw) < 12:
        raise FloFormatError("file too short for dimensions", len(raw))
    w, h = struct.unpack_from("<ii", raw, 4)
    if w <= 0 or h <= 0:
        raise FloFormatError(f"invalid dimensions {w}x{h}", 4)
    expected = 12 + 8 * w * h
    if len(raw) < expected:
        raise FloFormatError(f"truncated payload: {len(raw)} of {expected} bytes", len(raw))
    if len(raw) > expected:
        raise FloFormatError(f"{len(raw) - expected} trailing bytes", expected)
    data = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    u = data[..., 0].astype(np.float64)
    v = data[..., 1].astype(np.float64)
    valid = (np.abs(u) <= 1e9) & (np.abs(v) <= 1e9)
    return FlowField(u, v, valid)

"""Synthetic textured point scene, z-buffered splat renderer and analytic flow oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from flowservo.flow import FlowField
from flowservo.geometry import Z_MIN, DomainError, Intrinsics, Pose


FRONT_TOL = 0.02


@dataclass(frozen=True)
class SceneConfig:
    """Box-shaped working volume: x in [-width/2, width/2], y likewise, z in [depth_near, depth_far].

    A textured wall fills the far face of the box. In front of it float
    ``card_count`` textured fronto-parallel squares (side ``card_size``) at
    depths in [depth_near, depth_far), placed around the optical axis of a
    camera at the origin so they stay in view; they provide parallax.
    Cards are sampled more densely with proximity so every surface projects
    at about the same number of points per pixel.
    """

    width: float = 5.6
    height: float = 5.6
    depth_near: float = 1.0
    depth_far: float = 3.0
    spacing: float = 0.012
    card_count: int = 24
    card_size: float = 0.3
    texture_cell: float = 0.4

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.depth_far <= self.depth_near:
            raise DomainError("scene extent must be a non-empty box")
        if self.spacing <= 0 or self.texture_cell <= 0 or self.card_size <= 0 or self.card_count < 0:
            raise DomainError("spacing, texture_cell, card_size must be positive and card_count >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticScene:
    points: np.ndarray
    intensities: np.ndarray
    seed: int
    extent: tuple

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Image:
    intensities: np.ndarray

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclass(frozen=True)
class DepthMap:
    depths: np.ndarray  # NaN marks pixels with no scene content

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depths)


def _value_noise(xy: np.ndarray, cell: float, rng: np.random.Generator, octaves: int = 2) -> np.ndarray:
    """Smooth lattice noise in [0, 1] evaluated at (N, 2) planar coordinates."""
    out = np.zeros(xy.shape[0])
    total = 0.0
    lo = xy.min(axis=0)
    for octave in range(octaves):
        c = cell / (2 ** octave)
        amp = 0.5 ** octave
        g = (xy - lo) / c
        i0 = np.floor(g).astype(np.int64)
        f = g - i0
        f = f * f * (3.0 - 2.0 * f)
        nx, ny = i0[:, 0].max() + 2, i0[:, 1].max() + 2
        lattice = rng.random((nx, ny))
        ix, iy = i0[:, 0], i0[:, 1]
        a = lattice[ix, iy] * (1 - f[:, 0]) + lattice[ix + 1, iy] * f[:, 0]
        b = lattice[ix, iy + 1] * (1 - f[:, 0]) + lattice[ix + 1, iy + 1] * f[:, 0]
        out += amp * (a * (1 - f[:, 1]) + b * f[:, 1])
        total += amp
    out /= total
    lo_v, hi_v = out.min(), out.max()
    return (out - lo_v) / max(hi_v - lo_v, 1e-12)


def generate_scene(seed: int, config: SceneConfig | None = None) -> SyntheticScene:
    config = config or SceneConfig()
    rng = np.random.default_rng(seed)
    hw, hh = config.width / 2, config.height / 2
    xs = np.arange(-hw, hw, config.spacing) + config.spacing / 2
    ys = np.arange(-hh, hh, config.spacing) + config.spacing / 2
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    wall = np.stack([gx.ravel(), gy.ravel()], axis=1)
    wall += rng.uniform(-0.5, 0.5, wall.shape) * config.spacing
    wall[:, 0] = np.clip(wall[:, 0], -hw, hw)
    wall[:, 1] = np.clip(wall[:, 1], -hh, hh)
    wall_int = _value_noise(wall, config.texture_cell, rng)
    wall_pts = np.column_stack([wall, np.full(wall.shape[0], config.depth_far)])

    parts, values = [wall_pts], [wall_int]
    for _ in range(config.card_count):
        z = rng.uniform(config.depth_near, 0.9 * config.depth_far)
        reach = 0.5 * z + 0.2
        cx, cy = rng.uniform(-reach, reach, 2)
        step = config.spacing * z / config.depth_far
        half = config.card_size / 2
        g = np.arange(-half, half, step) + step / 2
        px, py = np.meshgrid(g, g, indexing="ij")
        card = np.stack([px.ravel(), py.ravel()], axis=1)
        card += rng.uniform(-0.5, 0.5, card.shape) * step
        shade = rng.uniform(0.2, 0.8)
        tex = 0.5 * shade + 0.5 * _value_noise(card, config.texture_cell / 4, rng)
        parts.append(np.column_stack([card[:, 0] + cx, card[:, 1] + cy, np.full(card.shape[0], z)]))
        values.append(tex)

    points = np.vstack(parts)
    intensities = np.concatenate(values)
    if points.shape[0] < 1000:
        raise DomainError("scene config yields fewer than 1000 points")
    points.setflags(write=False)
    intensities.setflags(write=False)
    extent = ((-hw, hw), (-hh, hh), (config.depth_near, config.depth_far))
    return SyntheticScene(points, intensities, int(seed), extent)


def project_points(points_cam: np.ndarray, intrinsics: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    z = points_cam[:, 2]
    u = intrinsics.fx * points_cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * points_cam[:, 1] / z + intrinsics.cy
    return u, v


def render(scene: SyntheticScene, pose: Pose, intrinsics: Intrinsics) -> tuple[Image, DepthMap]:
    """Splat every point onto its nearest pixel.

    The depth map keeps the closest point per pixel. The intensity is the mean
    over that pixel's front surface (points within ``FRONT_TOL`` relative
    depth of the closest), a crude area sampler that keeps the image
    smooth under sub-pixel motion.
    """
    W, H = intrinsics.width, intrinsics.height
    pc = pose.world_to_camera(scene.points)
    z = pc[:, 2]
    front = z > Z_MIN
    pc, z, val = pc[front], z[front], scene.intensities[front]
    u, v = project_points(pc, intrinsics)
    iu = np.rint(u)
    iv = np.rint(v)
    inside = (iu >= 0) & (iu < W) & (iv >= 0) & (iv < H)
    pix = (iv[inside] * W + iu[inside]).astype(np.int64)
    z, val = z[inside], val[inside]

    zmin = np.full(W * H, np.inf)
    np.minimum.at(zmin, pix, z)
    surf = z <= zmin[pix] * (1.0 + FRONT_TOL)
    total = np.bincount(pix[surf], weights=val[surf], minlength=W * H)
    count = np.bincount(pix[surf], minlength=W * H)

    hit = count > 0
    img = np.zeros(W * H)
    img[hit] = total[hit] / count[hit]
    dep = np.where(hit, zmin, np.nan)
    img = img.reshape(H, W)
    dep = dep.reshape(H, W)
    img.setflags(write=False)
    dep.setflags(write=False)
    return Image(img), DepthMap(dep)


def pixel_grid(intrinsics: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates (u, v), each (H, W)."""
    return np.meshgrid(np.arange(intrinsics.width, dtype=np.float64),
                       np.arange(intrinsics.height, dtype=np.float64))


def flow_from_depth(depth: DepthMap, pose_a: Pose, pose_b: Pose, intrinsics: Intrinsics) -> FlowField:
    """Displacement of every valid pixel of view a, back-projected at its depth, into view b."""
    u, v = pixel_grid(intrinsics)
    Z = depth.depths
    valid_a = depth.valid
    Zs = np.where(valid_a, Z, 1.0)
    pa = np.stack([(u - intrinsics.cx) / intrinsics.fx * Zs,
                   (v - intrinsics.cy) / intrinsics.fy * Zs, Zs], axis=-1).reshape(-1, 3)
    rel = pose_b.inverse().compose(pose_a)
    pb = pa @ rel.rotation.T + rel.translation
    zb = pb[:, 2]
    ok_z = zb > Z_MIN
    zb_safe = np.where(ok_z, zb, 1.0)
    ub = intrinsics.fx * pb[:, 0] / zb_safe + intrinsics.cx
    vb = intrinsics.fy * pb[:, 1] / zb_safe + intrinsics.cy
    ub = ub.reshape(u.shape)
    vb = vb.reshape(u.shape)
    ok_z = ok_z.reshape(u.shape)
    in_frame = ((ub >= -0.5) & (ub < intrinsics.width - 0.5)
                & (vb >= -0.5) & (vb < intrinsics.height - 0.5))
    valid = valid_a & ok_z & in_frame
    fu = np.where(valid, ub - u, 0.0)
    fv = np.where(valid, vb - v, 0.0)
    return FlowField(fu, fv, valid)


def analytic_flow(scene: SyntheticScene, pose_a: Pose, pose_b: Pose, intrinsics: Intrinsics,
                  depth_a: DepthMap | None = None) -> FlowField:
    """Ground-truth optical flow from view a to view b.

    Pass ``depth_a`` when view a has already been rendered to skip a render.
    A field whose mask is all False means the views share no content.
    """
    if depth_a is None:
        _, depth_a = render(scene, pose_a, intrinsics)
    return flow_from_depth(depth_a, pose_a, pose_b, intrinsics)


def photometric_error(a: Image, b: Image, per_pixel: bool = False) -> float:
    """Sum of squared intensity differences; ``per_pixel`` divides by the pixel count.

    Servo thresholds are expressed in the per-pixel (mean) scale so they do not
    depend on the image resolution.
    """
    if a.intensities.shape != b.intensities.shape:
        raise DomainError(f"image sizes differ: {a.intensities.shape} vs {b.intensities.shape}")
    d = a.intensities - b.intensities
    raw = float(np.sum(d * d))
    return raw / d.size if per_pixel else raw


def write_pgm(image: Image, path) -> None:
    """Binary (P5) 8-bit portable graymap."""
    data = np.clip(np.rint(np.asarray(image.intensities) * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> Image:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise DomainError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    data = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    return Image(data.astype(np.float64) / maxval)


def write_depth_npy(depth: DepthMap, path) -> None:
    np.save(path, np.asarray(depth.depths))

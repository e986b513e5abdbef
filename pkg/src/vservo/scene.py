"""Deterministic analytic renderer for a planar desk scene.

The world is the z = 0 plane carrying a procedural tile texture, a target
rectangle at the origin, and a few flat convex distractor polygons.  The
camera is a pinhole looking down at the plane; rendering casts one ray per
pixel and intersects it with the plane, so images are pure functions of
(scene, camera pose, intrinsics).

Scene randomization is split into independent streams per aspect (texture /
layout / lighting), so toggling one domain-randomization flag never changes
the draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vservo.errors import DegenerateView, ShapeMismatch
from vservo.geometry import Pose
from vservo.streams import stream

__all__ = [
    "CameraIntrinsics",
    "DrConfig",
    "Polygon",
    "Scene",
    "make_scene",
    "base_camera_rotation",
    "render",
    "write_ppm",
]

MIN_CAMERA_HEIGHT = 0.05
# Optical axis must make at least this angle (radians) with the plane.
MIN_AXIS_ANGLE = 1e-6

LIGHT_GAIN_RANGE = (0.3, 1.7)
LIGHT_BIAS_RANGE = (-0.2, 0.2)

# Canonical values substituted when a randomization toggle is off.
_CANONICAL_PALETTE = np.array(
    [
        [0.82, 0.80, 0.74],
        [0.35, 0.38, 0.42],
        [0.55, 0.47, 0.36],
        [0.25, 0.52, 0.35],
    ]
)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    focal: float = 80.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    @staticmethod
    def default(size: int = 64) -> "CameraIntrinsics":
        return CameraIntrinsics(focal=1.25 * size, cx=size / 2, cy=size / 2, width=size, height=size)


@dataclass(frozen=True)
class DrConfig:
    """Domain-randomization toggles; all on by default."""

    randomize_texture: bool = True
    include_distractors: bool = True
    randomize_lighting: bool = True


@dataclass(frozen=True)
class Polygon:
    """Flat convex polygon on the plane (vertices counter-clockwise, meters)."""

    vertices: np.ndarray
    color: np.ndarray


@dataclass(frozen=True)
class Scene:
    tile: float
    texture_table: np.ndarray  # (T, T, 3) cell colors, tiled over the plane
    target_center: np.ndarray  # (2,)
    target_size: np.ndarray  # (2,) full width/height
    target_color: np.ndarray  # (3,)
    distractors: tuple[Polygon, ...]
    light_gain: np.ndarray  # (3,)
    light_bias: np.ndarray  # (3,)
    seed: int


def _regular_polygon(center, radius, sides, phase):
    angles = phase + np.arange(sides) * (2.0 * np.pi / sides)
    return np.stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)], axis=1)


def make_scene(seed: int, dr: DrConfig = DrConfig()) -> Scene:
    """Deterministic scene for (seed, dr)."""
    table_cells = 16

    if dr.randomize_texture:
        rng = stream(seed, "scene", "texture")
        palette = rng.uniform(0.05, 0.95, size=(5, 3))
        cells = rng.integers(0, len(palette), size=(table_cells, table_cells))
        tile = float(rng.uniform(0.05, 0.11))
    else:
        palette = _CANONICAL_PALETTE
        ij = np.indices((table_cells, table_cells)).sum(axis=0)
        cells = ij % len(palette)
        tile = 0.08
    texture_table = palette[cells]

    rng = stream(seed, "scene", "layout")
    target_size = np.array([rng.uniform(0.10, 0.18), rng.uniform(0.06, 0.12)])
    target_color = rng.uniform(0.05, 0.95, size=3)

    distractors = []
    if dr.include_distractors:
        for _ in range(int(rng.integers(3, 7))):
            direction = rng.uniform(0.0, 2.0 * np.pi)
            dist = rng.uniform(0.16, 0.38)
            center = np.array([dist * np.cos(direction), dist * np.sin(direction)])
            verts = _regular_polygon(
                center,
                radius=rng.uniform(0.02, 0.06),
                sides=int(rng.integers(5, 9)),
                phase=rng.uniform(0.0, 2.0 * np.pi),
            )
            distractors.append(Polygon(verts, rng.uniform(0.05, 0.95, size=3)))

    if dr.randomize_lighting:
        rng = stream(seed, "scene", "lighting")
        gain = rng.uniform(*LIGHT_GAIN_RANGE, size=3)
        bias = rng.uniform(*LIGHT_BIAS_RANGE, size=3)
    else:
        gain = np.ones(3)
        bias = np.zeros(3)

    return Scene(
        tile=tile,
        texture_table=texture_table,
        target_center=np.zeros(2),
        target_size=target_size,
        target_color=target_color,
        distractors=tuple(distractors),
        light_gain=gain,
        light_bias=bias,
        seed=int(seed),
    )


def base_camera_rotation() -> np.ndarray:
    """Camera-to-world rotation of a fronto-parallel downward view.

    Camera x maps to world x, camera y to world -y, the optical axis (camera
    z) to world -z.
    """
    return np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def render(scene: Scene, camera: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """Ray-cast image, float64 (height, width, 3) in [0, 1].

    Raises DegenerateView if the camera is below the minimum height or its
    optical axis is (near) parallel to the plane or pointing away from it.
    """
    R, t = camera.rotation, camera.translation
    if t[2] < MIN_CAMERA_HEIGHT:
        raise DegenerateView(f"camera height {t[2]:.3f} m below minimum")
    axis_z = R[2, 2]  # world-z component of the optical axis
    if axis_z > -np.sin(MIN_AXIS_ANGLE):
        raise DegenerateView("optical axis does not intersect the plane")

    xs = (np.arange(intr.width) + 0.5 - intr.cx) / intr.focal
    ys = (np.arange(intr.height) + 0.5 - intr.cy) / intr.focal
    dx, dy = np.meshgrid(xs, ys)
    # World direction of each pixel ray: R @ (dx, dy, 1).
    wx = R[0, 0] * dx + R[0, 1] * dy + R[0, 2]
    wy = R[1, 0] * dx + R[1, 1] * dy + R[1, 2]
    wz = R[2, 0] * dx + R[2, 1] * dy + R[2, 2]

    hit = wz < -1e-12
    s = np.where(hit, -t[2] / np.where(hit, wz, -1.0), 0.0)
    px = t[0] + s * wx
    py = t[1] + s * wy

    img = np.zeros((intr.height, intr.width, 3))

    # Plane texture (nearest cell, tiled).
    n_cells = scene.texture_table.shape[0]
    ci = np.floor(px / scene.tile).astype(np.int64) % n_cells
    cj = np.floor(py / scene.tile).astype(np.int64) % n_cells
    img[hit] = scene.texture_table[ci[hit], cj[hit]]

    # Target rectangle (axis-aligned, drawn over the texture).
    half = scene.target_size * 0.5
    in_target = (
        hit
        & (np.abs(px - scene.target_center[0]) <= half[0])
        & (np.abs(py - scene.target_center[1]) <= half[1])
    )
    img[in_target] = scene.target_color

    # Distractors, later ones on top.
    for poly in scene.distractors:
        inside = hit.copy()
        verts = poly.vertices
        for k in range(len(verts)):
            ax, ay = verts[k]
            bx, by = verts[(k + 1) % len(verts)]
            cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            inside &= cross >= 0.0
        img[inside] = poly.color

    img = img * scene.light_gain + scene.light_bias
    return np.clip(img, 0.0, 1.0)


def write_ppm(img: np.ndarray, path) -> None:
    """Export an image (float in [0,1] or uint8) as binary PPM."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch("expected an (h, w, 3) image")
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + arr.tobytes())

"""Pinhole camera model, rigid transforms, sparse depth rasterization, patches.

Pixel centers sit at integer coordinates: a projection (u, v) belongs to
pixel (round(v), round(u)) and lies inside the image when
-0.5 <= u < width - 0.5 and -0.5 <= v < height - 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def contains(self, u, v):
        """Boolean mask of projections that land on a pixel."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)

    def backproject(self, u, v, z):
        """Camera-frame 3-D points for pixel coordinates at depth z."""
        u, v, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, z)))
        x = (u - self.cx) * z / self.fx
        y = (v - self.cy) * z / self.fy
        return np.stack([x, y, z], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class RigidTransform:
    """Maps source-frame points into the camera frame: x_cam = R @ x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float, translation=(0.0, 0.0, 0.0)):
        """Rotation Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in radians."""
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return cls(Rz @ Ry @ Rx, np.asarray(translation, dtype=float))

    def to_dict(self) -> dict:
        return {"rotation": [float(x) for x in self.rotation.ravel()],
                "translation": [float(x) for x in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                   np.asarray(d["translation"], dtype=float))


@dataclass(frozen=True)
class RadarPoint:
    position: tuple[float, float, float]
    u: float
    v: float
    depth: float

    @property
    def pixel(self) -> tuple[int, int]:
        """(row, col) of the pixel the projection falls on."""
        return pixel_index(self.v), pixel_index(self.u)


@dataclass
class SparseDepthImage:
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and valid must be matching 2-D arrays")
        if np.any(self.depth[self.valid] <= 0):
            raise ValueError("valid pixels must hold positive depth")
        if np.any(self.depth[~self.valid] != 0):
            raise ValueError("invalid pixels must hold zero depth")

    @classmethod
    def from_depth(cls, depth) -> "SparseDepthImage":
        """Mask implied by positive pixels; everything else is zeroed."""
        depth = np.asarray(depth, dtype=float)
        valid = np.isfinite(depth) & (depth > 0)
        return cls(np.where(valid, depth, 0.0), valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    center: tuple[float, float]


def pixel_index(coord) -> int:
    return int(np.floor(coord + 0.5))


def project_points(points, extrinsic: RigidTransform, camera: CameraModel) -> list[RadarPoint]:
    """Project sensor-frame points through `extrinsic` into `camera`.

    Points behind the camera (Z <= 0) or landing outside the image are
    dropped; the survivors keep their input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    cam = extrinsic.apply(pts)
    out = []
    for src, (X, Y, Z) in zip(pts, cam):
        if Z <= 0:
            continue
        u = camera.fx * X / Z + camera.cx
        v = camera.fy * Y / Z + camera.cy
        if not camera.contains(u, v):
            continue
        out.append(RadarPoint((float(src[0]), float(src[1]), float(src[2])),
                              float(u), float(v), float(Z)))
    return out


def rasterize_sparse_depth(points: Iterable[RadarPoint], camera: CameraModel) -> SparseDepthImage:
    """Splat projected returns onto the pixel grid, keeping the nearest one per pixel."""
    depth = np.full(camera.shape, np.inf)
    for p in points:
        r, c = p.pixel
        if not (0 <= r < camera.height and 0 <= c < camera.width):
            raise ValueError(f"projection ({p.u}, {p.v}) outside image")
        if p.depth < depth[r, c]:
            depth[r, c] = p.depth
    valid = np.isfinite(depth)
    return SparseDepthImage(np.where(valid, depth, 0.0), valid)


def extract_patch(image, center: tuple[float, float], size: Sequence[int] = (35, 35)) -> Patch:
    """Crop a (C, h, w) window centered on pixel `center` = (u, v), zero-padded at borders."""
    h, w = int(size[0]), int(size[1])
    if h % 2 == 0 or w % 2 == 0 or h <= 0 or w <= 0:
        raise ValueError(f"patch size must be odd and positive, got {h}x{w}")
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[None]
    C, H, W = img.shape
    r0 = pixel_index(center[1]) - h // 2
    c0 = pixel_index(center[0]) - w // 2
    out = np.zeros((C, h, w))
    rs, re = max(r0, 0), min(r0 + h, H)
    cs, ce = max(c0, 0), min(c0 + w, W)
    if rs < re and cs < ce:
        out[:, rs - r0:re - r0, cs - c0:ce - c0] = img[:, rs:re, cs:ce]
    return Patch(out, (float(center[0]), float(center[1])))

"""Deterministic synthetic scenes with planted ground truth.

A pinhole camera looks over a ground plane dotted with axis-aligned boxes;
depth is analytic (ray/plane and ray/slab intersection). From it we derive a
monocular inverse depth corrupted by a known affine map, sparse LiDAR, radar
returns with planted outliers, and a grayscale render for patches.

Inlier radar returns are placed only where the surrounding LiDAR agrees with
the surface, so they always get confidence label 1. Outliers carry a depth
error of at least five times the depth tolerance against every surface pixel
of their confidence neighborhood and disagree with the whole search
neighborhood, so they always get label 0 and a degenerate (0, 0)
displacement.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import io
from .geometry import CameraModel, RadarPoint, RigidTransform, SparseDepthImage, project_points
from .labelgen import LabelParams, adaptive_threshold
from .refiner import Sample, depth_code

BUNDLE_FILES = ("gt.pfm", "mono_inv.pfm", "lidar.pfm", "radar.csv", "image.pgm", "meta.json")
_ATOL = 1e-3  # slack for float32 storage of depth images


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    width: int = 160
    height: int = 96
    focal: float | None = None
    camera_height: float = 1.5
    n_boxes: int = 6
    depth_range: tuple[float, float] = (2.0, 80.0)
    affine_a: float = 3.0
    affine_b: float = 0.2
    mono_noise: float = 0.0
    radar_count: int = 64
    radar_noise: float = 0.05
    outlier_fraction: float = 0.2
    outlier_offset: tuple[int, int] = (3, 12)
    outlier_depth_error: tuple[float, float] = (0.25, 0.6)
    lidar_fraction: float = 1.0
    radar_extrinsic: dict = field(default_factory=lambda: {
        "roll": 0.0, "pitch": 0.02, "yaw": -0.03, "translation": [0.1, 0.25, -0.05]})

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(float(x) for x in self.depth_range))
        object.__setattr__(self, "outlier_offset", tuple(int(x) for x in self.outlier_offset))
        object.__setattr__(self, "outlier_depth_error", tuple(float(x) for x in self.outlier_depth_error))
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError(f"invalid depth range {self.depth_range}")
        if self.width < 8 or self.height < 8:
            raise ValueError("image too small")
        if self.affine_a <= 0:
            raise ValueError("affine scale a must be positive")
        if self.mono_noise < 0 or self.radar_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if 3 * self.radar_noise >= 0.5 - _ATOL:
            raise ValueError("radar_noise too large: 3 sigma must stay below the 0.5 m tolerance")
        if self.affine_a / hi + self.affine_b - 3 * self.mono_noise <= 0:
            raise ValueError("affine corruption plus noise can make inverse depth non-positive")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if not 0 < self.lidar_fraction <= 1:
            raise ValueError("lidar_fraction must lie in (0, 1]")
        omin, omax = self.outlier_offset
        if not 0 <= omin <= omax:
            raise ValueError("invalid outlier_offset range")
        emin, emax = self.outlier_depth_error
        if not 0 < emin <= emax < 1:
            raise ValueError("outlier_depth_error must satisfy 0 < min <= max < 1")
        if self.radar_count < 0:
            raise ValueError("radar_count must be non-negative")

    @property
    def camera(self) -> CameraModel:
        f = self.focal if self.focal is not None else 0.9 * self.width
        return CameraModel(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)

    @property
    def extrinsic(self) -> RigidTransform:
        e = self.radar_extrinsic
        return RigidTransform.from_euler(e["roll"], e["pitch"], e["yaw"], e["translation"])

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticFrame:
    config: SceneConfig
    camera: CameraModel
    extrinsic: RigidTransform
    gt_depth: np.ndarray
    sky: np.ndarray
    mono_inv: np.ndarray
    image: np.ndarray
    lidar: SparseDepthImage
    radar_xyz: np.ndarray
    radar: list[RadarPoint]
    outlier: np.ndarray

    @property
    def meta(self) -> dict:
        return {
            "seed": self.config.seed,
            "a": self.config.affine_a,
            "b": self.config.affine_b,
            "rho": self.config.outlier_fraction,
            "camera": self.camera.to_dict(),
            "extrinsic": self.extrinsic.to_dict(),
            "outlier": [bool(x) for x in self.outlier],
            "config": self.config.to_dict(),
        }


# ---------------------------------------------------------------- scene

def _random_boxes(rng, n, cam_h):
    boxes = []
    for _ in range(n):
        w, h, d = rng.uniform(1.5, 5.0), rng.uniform(1.5, 5.0), rng.uniform(1.0, 4.0)
        x = rng.uniform(-10.0, 10.0)
        z = rng.uniform(8.0, 50.0)
        boxes.append((np.array([x - w / 2, cam_h - h, z]), np.array([x + w / 2, cam_h, z + d])))
    return boxes


def render_depth(camera: CameraModel, cam_h: float, boxes) -> np.ndarray:
    """Camera-frame Z of the first surface hit along each pixel ray, inf if none."""
    v, u = np.mgrid[0:camera.height, 0:camera.width].astype(float)
    ray = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
    depth = np.full(u.shape, np.inf)
    ry = ray[..., 1]
    ground = ry > 0
    depth[ground] = cam_h / ry[ground]
    for lo, hi in boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = lo / ray
            t2 = hi / ray
        tmin_ax = np.minimum(t1, t2)
        tmax_ax = np.maximum(t1, t2)
        parallel = ray == 0
        inside = (lo <= 0) & (hi >= 0)
        tmin_ax = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin_ax)
        tmax_ax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax_ax)
        tmin = tmin_ax.max(axis=-1)
        tmax = tmax_ax.min(axis=-1)
        hit = (tmax >= tmin) & (tmin > 0)
        depth = np.where(hit & (tmin < depth), tmin, depth)
    return depth


def render_image(depth: np.ndarray, sky: np.ndarray) -> np.ndarray:
    """Shading by depth code plus a screen-space checker and vertical gradient."""
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W]
    checker = ((u // 8 + v // 8) % 2).astype(float)
    img = 0.15 + 0.65 * np.where(sky, 0.0, depth_code(np.where(sky, 1.0, depth)))
    img = img + 0.1 * checker + 0.05 * v / H
    img[sky] = 0.95
    return np.clip(img, 0.0, 1.0)


def sample_lidar(gt_depth, fraction: float = 0.01, seed=0) -> SparseDepthImage:
    """Keep round(fraction * n_valid) valid pixels chosen uniformly without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    gt = np.asarray(gt_depth, dtype=float)
    valid_idx = np.flatnonzero(np.isfinite(gt) & (gt > 0))
    n = int(round(fraction * valid_idx.size))
    if n == valid_idx.size:
        keep = valid_idx
    else:
        keep = np.random.default_rng(seed).choice(valid_idx, size=n, replace=False)
    depth = np.zeros(gt.shape)
    depth.flat[keep] = gt.flat[keep]
    return SparseDepthImage(depth, depth > 0)


def _truncated_normal(rng, sigma, size=None):
    if sigma == 0:
        return np.zeros(size) if size is not None else 0.0
    x = rng.standard_normal(size)
    return sigma * np.clip(x, -3.0, 3.0)


def _inlier_candidates(gt, lidar: SparseDepthImage, cfg: SceneConfig, params: LabelParams):
    """Pixels whose confidence neighborhood guarantees label 1 for any noise draw."""
    h, w = params.conf_neighborhood
    H, W = gt.shape
    ph, pw = h // 2, w // 2
    depth_win = sliding_window_view(lidar.depth, (h, w))
    valid_win = sliding_window_view(lidar.valid, (h, w))
    center = gt[ph:H - ph, pw:W - pw]
    noise = 3 * cfg.radar_noise
    lower = np.maximum(center - noise, 1e-9)
    tau_lo = np.where(lower < 30, 0.5, np.where(lower <= 50, 0.75, 1.0))
    slack = tau_lo - noise - _ATOL
    dev = np.where(valid_win, np.abs(depth_win - center[..., None, None]), 0.0).max(axis=(-1, -2))
    count = valid_win.sum(axis=(-1, -2))
    # no sky in the window: with dense LiDAR the center window is then a
    # maximal one and the displacement label is (0, 0)
    surface = (sliding_window_view(gt, (h, w)) > 0).all(axis=(-1, -2))
    ok = (center > 0) & surface & (count >= params.min_count) & (dev < slack)
    rows, cols = np.nonzero(ok)
    return rows + ph, cols + pw


def _plant_outlier(rng, gt, surface_rows, surface_cols, cfg: SceneConfig, params: LabelParams):
    H, W = gt.shape
    lo, hi = cfg.depth_range
    omin, omax = cfg.outlier_offset
    emin, emax = cfg.outlier_depth_error
    sh, sw = params.search_neighborhood
    ch, cw = params.conf_neighborhood
    for _ in range(1000):
        i = rng.integers(len(surface_rows))
        r, c = surface_rows[i], surface_cols[i]
        mag = rng.integers(omin, omax + 1, size=2)
        sign = rng.choice([-1, 1], size=2)
        qr, qc = r + sign[0] * mag[0], c + sign[1] * mag[1]
        if not (0 <= qr < H and 0 <= qc < W) or gt[qr, qc] <= 0:
            continue
        frac = rng.uniform(emin, emax)
        d = gt[qr, qc] * (1 + frac if rng.random() < 0.5 else 1 - frac)
        if not lo <= d <= hi:
            continue
        tau = adaptive_threshold(d)
        near = gt[max(qr - ch // 2, 0):qr + ch // 2 + 1, max(qc - cw // 2, 0):qc + cw // 2 + 1]
        near = near[near > 0]
        if np.any(np.abs(near - d) < 5 * tau + _ATOL):
            continue
        far = gt[max(qr - sh // 2 - 2, 0):qr + sh // 2 + 3, max(qc - sw // 2 - 2, 0):qc + sw // 2 + 3]
        far = far[far > 0]
        if np.any(np.abs(far - d) < tau + _ATOL):
            continue
        return int(qr), int(qc), float(d)
    raise ValueError("could not place an outlier satisfying the depth-error guarantee")


def generate(config: SceneConfig = SceneConfig(), label_params: LabelParams = LabelParams()) -> SyntheticFrame:
    rng = np.random.default_rng([config.seed, 0])
    camera = config.camera
    extrinsic = config.extrinsic
    lo, hi = config.depth_range
    boxes = _random_boxes(rng, config.n_boxes, config.camera_height)
    raw = render_depth(camera, config.camera_height, boxes)
    sky = ~((raw >= lo) & (raw <= hi))
    if sky.all():
        raise ValueError("scene has no visible surface within the depth range")
    gt = np.where(sky, 0.0, raw)

    inv = np.zeros_like(gt)
    noise = _truncated_normal(rng, config.mono_noise, gt.shape)
    inv[~sky] = config.affine_a / gt[~sky] + config.affine_b + noise[~sky]

    image = render_image(gt, sky)
    lidar = sample_lidar(gt, config.lidar_fraction, seed=[config.seed, 1])

    k = config.radar_count
    is_out = rng.random(k) < config.outlier_fraction
    n_in = int(np.count_nonzero(~is_out))
    cand_r, cand_c = _inlier_candidates(gt, lidar, config, label_params)
    if n_in > len(cand_r):
        raise ValueError(f"only {len(cand_r)} inlier locations available, need {n_in}")
    pick = rng.choice(len(cand_r), size=n_in, replace=False)
    in_iter = iter(zip(cand_r[pick], cand_c[pick]))
    surf_r, surf_c = np.nonzero(~sky)
    pixels, depths = [], []
    for out in is_out:
        if out:
            r, c, d = _plant_outlier(rng, gt, surf_r, surf_c, config, label_params)
        else:
            r, c = next(in_iter)
            d = gt[r, c] + _truncated_normal(rng, config.radar_noise)
        pixels.append((c, r))
        depths.append(d)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    cam_pts = camera.backproject(pixels[:, 0], pixels[:, 1], np.asarray(depths, dtype=float))
    radar_xyz = extrinsic.inverse().apply(cam_pts)
    radar = project_points(radar_xyz, extrinsic, camera)
    if len(radar) != k:
        raise AssertionError("planted radar point failed to project into the image")
    return SyntheticFrame(config, camera, extrinsic, gt, sky, inv, image, lidar, radar_xyz, radar, is_out)


# ---------------------------------------------------------------- bundles

def write_bundle(frame: SyntheticFrame, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_pfm(out / "gt.pfm", frame.gt_depth)
    io.write_pfm(out / "mono_inv.pfm", frame.mono_inv)
    io.write_pfm(out / "lidar.pfm", frame.lidar.depth)
    io.write_points_csv(out / "radar.csv", frame.radar_xyz)
    io.write_pgm16(out / "image.pgm", frame.image)
    io.write_json(out / "meta.json", frame.meta)
    return [out / name for name in BUNDLE_FILES]


@dataclass
class Bundle:
    camera: CameraModel
    extrinsic: RigidTransform
    gt: SparseDepthImage
    mono_inv: np.ndarray
    lidar: SparseDepthImage
    radar: list[RadarPoint]
    image: np.ndarray
    meta: dict


def read_bundle(frame_dir) -> Bundle:
    d = Path(frame_dir)
    missing = [n for n in BUNDLE_FILES if not (d / n).exists()]
    if missing:
        raise FileNotFoundError(f"{d}: missing {', '.join(missing)}")
    meta = io.read_json(d / "meta.json")
    camera = CameraModel.from_dict(meta["camera"])
    extrinsic = RigidTransform.from_dict(meta["extrinsic"])
    radar = project_points(io.read_points_csv(d / "radar.csv"), extrinsic, camera)
    return Bundle(camera, extrinsic,
                  SparseDepthImage.from_depth(io.read_pfm(d / "gt.pfm")),
                  io.read_pfm(d / "mono_inv.pfm"),
                  SparseDepthImage.from_depth(io.read_pfm(d / "lidar.pfm")),
                  radar, io.read_pgm(d / "image.pgm"), meta)


# ---------------------------------------------------------------- training task

def confidence_task(n_samples: int, points_per_sample: int = 16, patch_size=(35, 35),
                    margin: float = 0.1, seed: int = 0) -> list[Sample]:
    """Linearly separable toy task for the refiner.

    Each patch is a flat gray level g with faint checker texture; a radar
    point's depth code s is drawn at least `margin` away from g and the
    point is reliable (label 1) iff s < g. Displacement targets are the
    rounded pixel offsets 4 * (x, y) of the point's normalized position.
    """
    rng = np.random.default_rng([seed, 7])
    h, w = patch_size
    vv, uu = np.mgrid[0:h, 0:w]
    samples = []
    for _ in range(n_samples):
        feats = np.zeros((points_per_sample, 3))
        patches = np.zeros((points_per_sample, 1, h, w))
        labels = np.zeros(points_per_sample)
        for i in range(points_per_sample):
            g = rng.uniform(0.2, 0.8)
            s = g
            while abs(s - g) < margin:
                s = rng.uniform(0.0, 1.0)
            phase = rng.integers(0, 8, size=2)
            checker = (((uu + phase[0]) // 4 + (vv + phase[1]) // 4) % 2).astype(float)
            patches[i, 0] = g + 0.05 * (checker - 0.5)
            feats[i] = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), s)
            labels[i] = float(s < g)
        disp = np.round(4.0 * feats[:, :2])
        samples.append(Sample(feats, patches, labels, disp, np.ones(points_per_sample, dtype=bool)))
    return samples

"""Confidence and displacement supervision for radar points from sparse LiDAR.

A LiDAR pixel *conforms* to a radar point p when it holds a return and its
depth is within the range-dependent tolerance of p's measured depth. The
confidence label asks whether enough conforming pixels surround the
projection; the displacement label points at the nearby window holding the
most of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RadarPoint, SparseDepthImage


@dataclass(frozen=True)
class LabelParams:
    conf_neighborhood: tuple[int, int] = (5, 5)
    min_count: int = 3
    search_neighborhood: tuple[int, int] = (35, 35)
    inner_window: tuple[int, int] = (5, 5)

    def __post_init__(self):
        for name in ("conf_neighborhood", "search_neighborhood", "inner_window"):
            h, w = getattr(self, name)
            if h <= 0 or w <= 0 or h % 2 == 0 or w % 2 == 0:
                raise ValueError(f"{name} must be odd and positive, got {h}x{w}")
            object.__setattr__(self, name, (int(h), int(w)))
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if (self.inner_window[0] > self.search_neighborhood[0]
                or self.inner_window[1] > self.search_neighborhood[1]):
            raise ValueError("inner_window must fit inside search_neighborhood")

    @classmethod
    def from_dict(cls, d: dict) -> "LabelParams":
        kw = {}
        for k in ("conf_neighborhood", "search_neighborhood", "inner_window"):
            if k in d:
                kw[k] = tuple(d[k])
        if "min_count" in d:
            kw["min_count"] = int(d["min_count"])
        return cls(**kw)


@dataclass(frozen=True)
class PointLabels:
    conf_label: int
    disp_label: tuple[int, int]
    is_valid: bool
    degenerate: bool = False


def adaptive_threshold(d: float) -> float:
    """Depth tolerance in meters for a return measured at range `d`."""
    if not d > 0:
        raise ValueError(f"range must be positive, got {d}")
    if d < 30.0:
        return 0.5
    if d <= 50.0:
        return 0.75
    return 1.0


def _window(gt: SparseDepthImage, row: int, col: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Depth and validity of an h x w window centered at (row, col); outside pixels invalid."""
    H, W = gt.shape
    r0, c0 = row - h // 2, col - w // 2
    depth = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    rs, re = max(r0, 0), min(r0 + h, H)
    cs, ce = max(c0, 0), min(c0 + w, W)
    if rs < re and cs < ce:
        depth[rs - r0:re - r0, cs - c0:ce - c0] = gt.depth[rs:re, cs:ce]
        valid[rs - r0:re - r0, cs - c0:ce - c0] = gt.valid[rs:re, cs:ce]
    return depth, valid


def _conforming(depth: np.ndarray, valid: np.ndarray, d: float, tau: float) -> np.ndarray:
    return valid & (depth > 0) & (np.abs(depth - d) < tau)


def confidence_label(p: RadarPoint, gt: SparseDepthImage, params: LabelParams = LabelParams()) -> tuple[int, bool]:
    """Return (label, is_valid) for one radar point."""
    row, col = p.pixel
    h, w = params.conf_neighborhood
    depth, valid = _window(gt, row, col, h, w)
    tau = adaptive_threshold(p.depth)
    count = int(np.count_nonzero(_conforming(depth, valid, p.depth, tau)))
    return int(count >= params.min_count), bool(valid.any())


def displacement_label(p: RadarPoint, gt: SparseDepthImage,
                       params: LabelParams = LabelParams()) -> tuple[tuple[int, int], bool]:
    """Return ((du, dv), degenerate) for one radar point.

    Every in-image pixel of the search neighborhood is a candidate window
    center. Ties on the conforming count go to the smallest squared
    displacement, then to the first center in row-major order.
    """
    row, col = p.pixel
    H, W = gt.shape
    sh, sw = params.search_neighborhood
    ih, iw = params.inner_window
    # conforming mask over the search area grown by the inner half-window
    eh, ew = sh + ih - 1, sw + iw - 1
    depth, valid = _window(gt, row, col, eh, ew)
    conf = _conforming(depth, valid, p.depth, adaptive_threshold(p.depth)).astype(np.int64)
    integral = np.zeros((eh + 1, ew + 1), dtype=np.int64)
    integral[1:, 1:] = conf.cumsum(0).cumsum(1)
    counts = (integral[ih:, iw:] - integral[:-ih, iw:]
              - integral[ih:, :-iw] + integral[:-ih, :-iw])
    # counts[i, j] is the window centered at (row - sh//2 + i, col - sw//2 + j)
    dv = np.arange(sh) - sh // 2
    du = np.arange(sw) - sw // 2
    in_image = (((row + dv) >= 0) & ((row + dv) < H))[:, None] & (((col + du) >= 0) & ((col + du) < W))[None, :]
    counts = np.where(in_image, counts, -1)
    best = counts.max()
    if best <= 0:
        return (0, 0), True
    cand = np.argwhere(counts == best)  # row-major order
    sq = (cand[:, 0] - sh // 2) ** 2 + (cand[:, 1] - sw // 2) ** 2
    i, j = cand[int(np.argmin(sq))]
    return (int(du[j]), int(dv[i])), False


def build_labels(points: Sequence[RadarPoint], gt: SparseDepthImage,
                 params: LabelParams = LabelParams()) -> list[PointLabels]:
    labels = []
    for p in points:
        conf, is_valid = confidence_label(p, gt, params)
        disp, degenerate = displacement_label(p, gt, params)
        labels.append(PointLabels(conf, disp, is_valid, degenerate))
    return labels


LABEL_CSV_HEADER = ["u", "v", "depth", "conf_label", "du", "dv", "is_valid"]


def label_rows(points: Sequence[RadarPoint], labels: Sequence[PointLabels]):
    for p, lab in zip(points, labels):
        yield (p.u, p.v, p.depth, lab.conf_label, lab.disp_label[0], lab.disp_label[1], int(lab.is_valid))

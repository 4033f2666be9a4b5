"""Glue between frame bundles, labels, the refiner and alignment."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import align
from .geometry import RadarPoint, extract_patch
from .labelgen import LabelParams, PointLabels, build_labels
from .refiner import RefinerParams, Sample, forward, radar_features


def frame_patches(image, points: Sequence[RadarPoint], size) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[None]
    h, w = size
    out = np.zeros((len(points), img.shape[0], h, w))
    for i, p in enumerate(points):
        out[i] = extract_patch(img, (p.u, p.v), (h, w)).pixels
    return out


def frame_sample(image, points: Sequence[RadarPoint], labels: Sequence[PointLabels] | None,
                 patch_size=(35, 35)) -> Sample:
    H, W = np.asarray(image).shape[-2:]
    feats = radar_features(points, W, H)
    patches = frame_patches(image, points, patch_size)
    if labels is None:
        return Sample(feats, patches)
    return Sample(feats, patches,
                  [lab.conf_label for lab in labels],
                  np.array([lab.disp_label for lab in labels], dtype=float).reshape(-1, 2),
                  [lab.is_valid for lab in labels])


def refiner_outputs(image, points: Sequence[RadarPoint], params: RefinerParams):
    """(confidence, displacement) predicted by the network for one frame."""
    if not points:
        return np.zeros(0), np.zeros((0, 2))
    s = frame_sample(image, points, None, params.config.patch_size)
    out = forward(s.features, s.patches, params)
    return out.confidence, out.displacement


def oracle_outputs(points: Sequence[RadarPoint], lidar, params: LabelParams = LabelParams()):
    """Ground-truth labels standing in for network predictions."""
    labels = build_labels(points, lidar, params)
    conf = np.array([lab.conf_label for lab in labels], dtype=float)
    disp = np.array([lab.disp_label for lab in labels], dtype=float).reshape(-1, 2)
    return conf, disp


def align_frame(points: Sequence[RadarPoint], confidence, displacement, inv_depth,
                tau: float = 0.5, bilinear: bool = False):
    """Screen, refine and fit; returns (alignment, anchors)."""
    inv = np.asarray(inv_depth, dtype=float)
    anchors = align.screen_and_refine(points, confidence, displacement, tau, inv.shape)
    return align.select_threshold(anchors, inv, bilinear=bilinear), anchors

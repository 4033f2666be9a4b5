"""Radar screening/refinement and global affine alignment of inverse depth.

Monocular inverse depth is only defined up to scale and shift. Given radar
anchors with metric depth, fit 1/d_radar ~ alpha * inv + beta by ordinary
least squares over the anchors whose sampled inverse depth lies in (0, t),
sweep t over a candidate set and keep the fit with the smallest residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RadarPoint, pixel_index


class DegenerateFit(ValueError):
    pass


class NoFeasibleThreshold(RuntimeError):
    pass


@dataclass(frozen=True)
class RefinedAnchor:
    u: float
    v: float
    depth: float
    confidence: float


@dataclass(frozen=True)
class AffineAlignment:
    alpha: float
    beta: float
    t_star: float
    residual: float
    inliers: int

    @property
    def mean_residual(self) -> float:
        return self.residual / self.inliers

    def to_dict(self, undefined_pixels: int | None = None) -> dict:
        d = {"alpha": self.alpha, "beta": self.beta, "t_star": self.t_star,
             "residual": self.residual, "inliers": self.inliers,
             "mean_residual": self.mean_residual}
        if undefined_pixels is not None:
            d["undefined_pixels"] = int(undefined_pixels)
        return d


def screen_and_refine(points: Sequence[RadarPoint], confidence, displacement,
                      tau: float = 0.5, shape: tuple[int, int] | None = None) -> list[RefinedAnchor]:
    """Keep points with confidence >= tau and shift them by their displacement.

    When `shape` = (H, W) is given, anchors whose refined pixel leaves the
    image are dropped.
    """
    conf = np.asarray(confidence, dtype=float).reshape(-1)
    disp = np.asarray(displacement, dtype=float).reshape(-1, 2)
    if len(conf) != len(points) or len(disp) != len(points):
        raise ValueError("need one confidence and one displacement per point")
    anchors = []
    for p, y, (du, dv) in zip(points, conf, disp):
        if y < tau:
            continue
        u, v = p.u + du, p.v + dv
        if shape is not None:
            r, c = pixel_index(v), pixel_index(u)
            if not (0 <= r < shape[0] and 0 <= c < shape[1]):
                continue
        anchors.append(RefinedAnchor(float(u), float(v), float(p.depth), float(y)))
    return anchors


def fit_affine(inv_values, radar_depths) -> tuple[float, float, float]:
    """Least-squares (alpha, beta, residual) for 1/depth ~ alpha * inv + beta."""
    x = np.asarray(inv_values, dtype=float).reshape(-1)
    d = np.asarray(radar_depths, dtype=float).reshape(-1)
    if len(x) != len(d):
        raise ValueError("inverse-depth samples and radar depths differ in length")
    if len(x) < 2:
        raise DegenerateFit(f"need at least 2 pairs, got {len(x)}")
    if np.all(x == x[0]):
        raise DegenerateFit("inverse-depth samples have zero variance")
    y = 1.0 / d
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = dx @ dx
    if sxx == 0.0:
        raise DegenerateFit("inverse-depth samples have zero variance")
    alpha = (dx @ (y - ym)) / sxx
    beta = ym - alpha * xm
    r = y - alpha * x - beta
    return float(alpha), float(beta), float(r @ r)


def sample_inverse_depth(anchors: Sequence[RefinedAnchor], inv_depth, bilinear: bool = False) -> np.ndarray:
    """Inverse depth at each anchor; nearest pixel unless `bilinear`.

    Bilinear sampling returns 0 if any of the four taps is 0 (invalid).
    """
    inv = np.asarray(inv_depth, dtype=float)
    H, W = inv.shape
    out = np.zeros(len(anchors))
    for i, a in enumerate(anchors):
        if not bilinear:
            r, c = pixel_index(a.v), pixel_index(a.u)
            if not (0 <= r < H and 0 <= c < W):
                raise ValueError(f"anchor ({a.u}, {a.v}) outside inverse-depth map")
            out[i] = inv[r, c]
            continue
        u = min(max(a.u, 0.0), W - 1.0)
        v = min(max(a.v, 0.0), H - 1.0)
        c0, r0 = int(np.floor(u)), int(np.floor(v))
        c1, r1 = min(c0 + 1, W - 1), min(r0 + 1, H - 1)
        taps = inv[[r0, r0, r1, r1], [c0, c1, c0, c1]]
        if np.any(taps == 0):
            continue
        fu, fv = u - c0, v - r0
        out[i] = ((1 - fv) * ((1 - fu) * taps[0] + fu * taps[1])
                  + fv * ((1 - fu) * taps[2] + fu * taps[3]))
    return out


def valid_set(samples, t: float) -> np.ndarray:
    """Indices i with 0 < samples[i] < t."""
    s = np.asarray(samples, dtype=float)
    return np.flatnonzero((s > 0) & (s < t))


def candidates_from_samples(samples) -> np.ndarray:
    """Decile thresholds of the nonzero anchor samples.

    The top candidate is nudged just above the maximum so the strict
    inequality of the valid set admits every nonzero anchor.
    """
    s = np.asarray(samples, dtype=float)
    s = s[s > 0]
    if s.size == 0:
        raise NoFeasibleThreshold("no anchor samples a nonzero inverse depth")
    if s.min() == s.max():
        return np.array([s[0] * (1.0 + 1e-9)])
    qs = np.quantile(s, np.linspace(0.1, 1.0, 10))
    qs[-1] = s.max() * (1.0 + 1e-9)
    return np.unique(qs)


def sweep_thresholds(samples, radar_depths, candidates) -> AffineAlignment:
    """Sweep candidate thresholds; keep the fit with the smallest residual sum.

    Residual ties go to the larger threshold.
    """
    s = np.asarray(samples, dtype=float)
    d = np.asarray(radar_depths, dtype=float)
    cands = np.asarray(candidates, dtype=float).reshape(-1)
    if cands.size == 0:
        raise ValueError("candidate set is empty")
    best = None
    for t in cands:
        idx = valid_set(s, t)
        try:
            alpha, beta, res = fit_affine(s[idx], d[idx])
        except DegenerateFit:
            continue
        if best is None or res < best.residual or (res == best.residual and t > best.t_star):
            best = AffineAlignment(alpha, beta, float(t), res, int(idx.size))
    if best is None:
        raise NoFeasibleThreshold("every candidate threshold gives a degenerate fit")
    return best


def default_candidates(inv_depth, anchors: Sequence[RefinedAnchor], bilinear: bool = False) -> np.ndarray:
    return candidates_from_samples(sample_inverse_depth(anchors, inv_depth, bilinear=bilinear))


def select_threshold(anchors: Sequence[RefinedAnchor], inv_depth, candidates=None,
                     bilinear: bool = False) -> AffineAlignment:
    """Sample the map at the anchors and run the threshold sweep.

    Without explicit `candidates` the decile set of the samples is used.
    """
    samples = sample_inverse_depth(anchors, inv_depth, bilinear=bilinear)
    depths = np.array([a.depth for a in anchors], dtype=float)
    if candidates is None:
        candidates = candidates_from_samples(samples)
    return sweep_thresholds(samples, depths, candidates)


def apply_alignment(inv_depth, alignment: AffineAlignment) -> tuple[np.ndarray, np.ndarray, int]:
    """Metric depth 1 / (alpha * inv + beta).

    Returns (depth, defined, n_nonpositive): pixels with zero inverse depth
    or a non-positive aligned value are undefined and hold 0.
    `n_nonpositive` counts the latter kind only.
    """
    inv = np.asarray(inv_depth, dtype=float)
    aligned = alignment.alpha * inv + alignment.beta
    nonzero = inv != 0
    positive = aligned > 0
    defined = nonzero & positive
    depth = np.zeros_like(inv)
    depth[defined] = 1.0 / aligned[defined]
    return depth, defined, int(np.count_nonzero(nonzero & ~positive))

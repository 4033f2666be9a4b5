"""Depth error metrics over range-capped sparse ground truth.

MAE, RMSE and SqRel are reported in millimeters; AbsRel and delta1 are
unitless.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import SparseDepthImage

DELTA1_RATIO = 1.25


class EmptyEvaluation(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    mae: float
    rmse: float
    absrel: float
    sqrel: float
    delta1: float
    count: int
    cap: float
    excluded_undefined: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


CSV_HEADER = ["cap_m", "mae_mm", "rmse_mm", "absrel", "sqrel", "delta1", "count"]


def csv_row(r: EvalReport) -> tuple:
    return (r.cap, r.mae, r.rmse, r.absrel, r.sqrel, r.delta1, r.count)


def evaluate(pred, gt: SparseDepthImage, cap: float, pred_defined=None) -> EvalReport:
    """Metrics over pixels with valid ground truth in (0, cap] and a defined prediction.

    A prediction counts as defined where it is finite and positive, further
    restricted by `pred_defined` when given.
    """
    pred = np.asarray(pred, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    defined = np.isfinite(pred) & (pred > 0)
    if pred_defined is not None:
        defined &= np.asarray(pred_defined, dtype=bool)
    in_range = gt.valid & (gt.depth > 0) & (gt.depth <= cap)
    mask = in_range & defined
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyEvaluation(f"no eligible pixels within {cap} m")
    g = gt.depth[mask]
    p = pred[mask]
    diff = p - g
    absdiff = np.abs(diff)
    ratio = np.maximum(p / g, g / p)
    g_mm = g * 1000.0
    diff_mm = diff * 1000.0
    return EvalReport(
        mae=float(np.mean(absdiff) * 1000.0),
        rmse=float(np.sqrt(np.mean(diff_mm ** 2))),
        absrel=float(np.mean(absdiff / g)),
        sqrel=float(np.mean(diff_mm ** 2 / g_mm)),
        delta1=float(np.mean(ratio < DELTA1_RATIO)),
        count=n,
        cap=float(cap),
        excluded_undefined=int(np.count_nonzero(in_range & ~defined)),
    )


def evaluate_sweep(pred, gt: SparseDepthImage, caps, pred_defined=None) -> list[EvalReport]:
    caps = [float(c) for c in caps]
    if any(b < a for a, b in zip(caps, caps[1:])):
        raise ValueError("caps must be ascending")
    return [evaluate(pred, gt, c, pred_defined) for c in caps]

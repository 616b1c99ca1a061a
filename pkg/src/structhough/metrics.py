"""Evaluation of predicted border/lane lines against ground truth.

Per frame and per track:

* ``Pxl``: mean over image columns of the vertical distance between the
  predicted and true line, skipping columns where either line leaves the
  image;
* ``Ang``: angle between the lines in degrees;
* ``Pen = max(1, Ang) * Pxl``.

A frame is accepted when both penalties are within their thresholds.
``Overlap`` is the intersection over union of the shoulder regions (pixels
between lane marking and border). Frame values are averaged over the
sequence.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .learning import GroundTruthFrame
from .voting import LineHypothesis

COLUMNS = ("Bd_Pxl", "Ld_Pxl", "Bd_Ang", "Ln_Ang", "Bd_Pen", "Ln_Pen",
           "Accept_Ratio", "Overlap_Score")
_FIELDS = ("bd_pxl", "ld_pxl", "bd_ang", "ln_ang", "bd_pen", "ln_pen",
           "accept_ratio", "overlap_score")
ON_LINE_TOL = 1e-9


@dataclass(frozen=True)
class AcceptThresholds:
    bd_pen: float = 10.0
    ln_pen: float = 20.0


@dataclass(frozen=True)
class FrameMetrics:
    frame: int
    bd_pxl: float
    ld_pxl: float
    bd_ang: float
    ln_ang: float
    bd_pen: float
    ln_pen: float
    accepted: bool
    overlap: float


@dataclass(frozen=True)
class MetricReport:
    bd_pxl: float
    ld_pxl: float
    bd_ang: float
    ln_ang: float
    bd_pen: float
    ln_pen: float
    accept_ratio: float
    overlap_score: float
    frames: int = 0
    thresholds: AcceptThresholds = AcceptThresholds()

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in _FIELDS)

    def to_dict(self) -> dict:
        out = dict(zip(COLUMNS, self.values()))
        out["frames"] = self.frames
        out["thresholds"] = asdict(self.thresholds)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self) -> list[str]:
        return [repr(float(v)) for v in self.values()]

    def to_csv(self, label: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = (["tracker"] if label is not None else []) + list(COLUMNS)
        w.writerow(head)
        w.writerow(([label] if label is not None else []) + self.csv_row())
        return buf.getvalue()


def is_steep(h: LineHypothesis) -> bool:
    """Closer to vertical than to horizontal: no usable single y per column."""
    return abs(math.cos(h.theta)) > abs(math.sin(h.theta))


def pixel_distortion(pred: LineHypothesis, gt: LineHypothesis, width: int,
                     height: int) -> float:
    """Mean vertical distance over columns where both lines are inside the image.

    Steep predictions, and frames without any shared column, score the
    image height.
    """
    if is_steep(pred) or is_steep(gt):
        return float(height)
    x = np.arange(width, dtype=np.float64)
    yp, yg = pred.y_at(x), gt.y_at(x)
    ok = (yp >= 0) & (yp <= height) & (yg >= 0) & (yg <= height)
    if not ok.any():
        return float(height)
    return float(np.mean(np.abs(yp[ok] - yg[ok])))


def angle_distortion(pred: LineHypothesis, gt: LineHypothesis) -> float:
    d = abs(math.degrees(pred.theta - gt.theta)) % 180.0
    return min(d, 180.0 - d)


def penalized(pxl: float, ang: float) -> float:
    return max(1.0, ang) * pxl


def _pixel_grid(width: int, height: int):
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    return cols, height - rows


def shoulder_mask(bd: LineHypothesis, ln: LineHypothesis, width: int, height: int) -> np.ndarray:
    """Pixels on or above the lane line and on or below the border line.

    Centers within ``ON_LINE_TOL`` of a line count as on it, so that
    ``cos(pi/2) != 0`` does not split a row lying exactly on a horizontal line.
    """
    x, y = _pixel_grid(width, height)
    res_ln = math.sin(ln.theta) * y + math.cos(ln.theta) * x - ln.r
    res_bd = math.sin(bd.theta) * y + math.cos(bd.theta) * x - bd.r
    return (res_ln >= -ON_LINE_TOL) & (res_bd <= ON_LINE_TOL)


def polygon_mask(polygon: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd rasterization of a road-frame polygon at pixel centers."""
    x, y = _pixel_grid(width, height)
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xc)
    return inside


def overlap_score(det: np.ndarray, gt: np.ndarray) -> float:
    union = np.count_nonzero(det | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(det & gt) / union


def frame_metrics(pred_bd: LineHypothesis, pred_ln: LineHypothesis, gt: GroundTruthFrame,
                  width: int, height: int,
                  thresholds: AcceptThresholds = AcceptThresholds()) -> FrameMetrics:
    bd_pxl = pixel_distortion(pred_bd, gt.bd, width, height)
    ln_pxl = pixel_distortion(pred_ln, gt.ln, width, height)
    bd_ang = angle_distortion(pred_bd, gt.bd)
    ln_ang = angle_distortion(pred_ln, gt.ln)
    bd_pen, ln_pen = penalized(bd_pxl, bd_ang), penalized(ln_pxl, ln_ang)
    steep = is_steep(pred_bd) or is_steep(pred_ln)
    accepted = (not steep) and bd_pen <= thresholds.bd_pen and ln_pen <= thresholds.ln_pen
    det = shoulder_mask(pred_bd, pred_ln, width, height)
    ref = (polygon_mask(gt.polygon, width, height) if gt.polygon is not None
           else shoulder_mask(gt.bd, gt.ln, width, height))
    return FrameMetrics(gt.frame, bd_pxl, ln_pxl, bd_ang, ln_ang, bd_pen, ln_pen, accepted,
                        overlap_score(det, ref))


def _pair(p):
    if hasattr(p, "bd") and hasattr(p, "ln"):
        return p.bd, p.ln
    if hasattr(p, "state"):
        return p.state.h_bd, p.state.h_ln
    return p[0], p[1]


def evaluate_frames(pred: Sequence, truth: Sequence[GroundTruthFrame], size: tuple[int, int],
                    thresholds: AcceptThresholds = AcceptThresholds()) -> list[FrameMetrics]:
    """Per-frame metrics; ``pred`` holds line pairs, frame results or ``(bd, ln)`` tuples."""
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predicted frames but {len(truth)} ground-truth frames")
    width, height = size
    return [frame_metrics(*_pair(p), g, width, height, thresholds) for p, g in zip(pred, truth)]


def summarize(frames: Sequence[FrameMetrics],
              thresholds: AcceptThresholds = AcceptThresholds()) -> MetricReport:
    if not frames:
        raise ValueError("no frames to evaluate")
    arr = np.array([[f.bd_pxl, f.ld_pxl, f.bd_ang, f.ln_ang, f.bd_pen, f.ln_pen,
                     float(f.accepted), f.overlap] for f in frames])
    return MetricReport(*(float(v) for v in arr.mean(axis=0)), frames=len(frames),
                        thresholds=thresholds)


def evaluate(pred: Sequence, truth: Sequence[GroundTruthFrame], size: tuple[int, int],
             thresholds: AcceptThresholds = AcceptThresholds()) -> MetricReport:
    """Sequence-level report: frame metrics averaged over frames."""
    return summarize(evaluate_frames(pred, truth, size, thresholds), thresholds)


def frames_csv(frames: Sequence[FrameMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", *COLUMNS[:6], "Accepted", "Overlap"])
    for f in frames:
        w.writerow([f.frame, *(repr(float(v)) for v in (f.bd_pxl, f.ld_pxl, f.bd_ang, f.ln_ang,
                                                        f.bd_pen, f.ln_pen)),
                    int(f.accepted), repr(float(f.overlap))])
    return buf.getvalue()


__all__ = [
    "AcceptThresholds", "COLUMNS", "FrameMetrics", "MetricReport", "angle_distortion",
    "evaluate", "evaluate_frames", "frame_metrics", "frames_csv", "is_steep", "overlap_score",
    "penalized", "pixel_distortion", "polygon_mask", "shoulder_mask", "summarize",
]

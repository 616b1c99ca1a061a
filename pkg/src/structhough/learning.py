"""Parameter estimation from annotated sequences.

Tolerances are twice a zero-mean standard deviation: inter-frame motion of
each ground-truth line for the window sizes, and the border/lane angle gap
within each distance band for the parallelism bounds. The minimum
separation is a least-squares line through the lower envelope of observed
gaps. The mode penalty must exceed the worst vote loss caused by back
perturbation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .potentials import HARD_VIOLATION, ModelParams, coupled_structure
from .voting import HypothesisGrid, LineHypothesis

log = logging.getLogger(__name__)

DMIN_BUCKET = 5.0
LAMBDA_MODE_MARGIN = 0.10
LAMBDA_MODE_EPS = 1e-9


class LearningError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthFrame:
    """Annotated lines of one frame in road coordinates.

    ``polygon`` optionally holds the shoulder region as ``(K, 2)`` vertices
    (x, y) in the same coordinates.
    """

    frame: int
    bd: LineHypothesis
    ln: LineHypothesis
    polygon: np.ndarray | None = None


def zero_mean_std(samples) -> float:
    s = np.asarray(samples, dtype=float)
    return float(math.sqrt(np.mean(s * s))) if s.size else 0.0


def _check_contiguous(gt: Sequence[GroundTruthFrame]) -> None:
    for prev, cur in zip(gt, gt[1:]):
        if cur.frame != prev.frame + 1:
            raise LearningError(f"ground truth frames not contiguous at {cur.frame}")


def as_sequences(gt) -> list[list[GroundTruthFrame]]:
    """Accept one annotated sequence or a list of them."""
    gt = list(gt)
    if gt and not isinstance(gt[0], GroundTruthFrame):
        return [list(s) for s in gt]
    return [gt]


def _flatten(gt) -> list[GroundTruthFrame]:
    return [g for s in as_sequences(gt) for g in s]


def learn_interframe_lambdas(gt) -> dict[str, tuple[float, float]]:
    """``{"bd": (lambda_theta, lambda_r), "ln": (...)}`` from consecutive-frame deltas.

    ``gt`` is one contiguous sequence or a list of them; deltas are pooled.
    """
    seqs = as_sequences(gt)
    if sum(max(len(s) - 1, 0) for s in seqs) < 1:
        raise LearningError("need at least 2 frames")
    for s in seqs:
        _check_contiguous(s)
    out = {}
    for track in ("bd", "ln"):
        dth = np.concatenate([np.diff([getattr(g, track).theta for g in s]) for s in seqs])
        dr = np.concatenate([np.diff([getattr(g, track).r for g in s]) for s in seqs])
        out[track] = (2.0 * zero_mean_std(dth), 2.0 * zero_mean_std(dr))
    return out


def learn_structure_lambdas(gt: Iterable[GroundTruthFrame], params: ModelParams = ModelParams(),
                            ) -> tuple[float, float]:
    """Parallelism bounds for the near (d1..d2) and middle (d2..d3) bands.

    A band without samples keeps the value from ``params``.
    """
    gaps1, gaps2 = [], []
    for g in _flatten(gt):
        dr = g.bd.r - g.ln.r
        dth = abs(g.bd.theta - g.ln.theta)
        if params.d1 <= dr < params.d2:
            gaps1.append(dth)
        elif params.d2 <= dr < params.d3:
            gaps2.append(dth)
    out = []
    for name, gaps, default in (("lambda_str1", gaps1, params.lambda_str1),
                                ("lambda_str2", gaps2, params.lambda_str2)):
        if gaps:
            out.append(2.0 * zero_mean_std(gaps))
        else:
            log.warning("%s: distance band is empty; keeping %.6g", name, default)
            out.append(default)
    return out[0], out[1]


def lower_envelope(r_ln, gap, bucket: float = DMIN_BUCKET) -> tuple[np.ndarray, np.ndarray]:
    """Per-bucket minimum gap, paired with the lane offset where it occurs."""
    r_ln = np.asarray(r_ln, dtype=float)
    gap = np.asarray(gap, dtype=float)
    keys = np.floor(r_ln / bucket).astype(np.int64)
    xs, ys = [], []
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        k = idx[np.argmin(gap[idx])]
        xs.append(r_ln[k])
        ys.append(gap[k])
    return np.array(xs), np.array(ys)


def fit_line(x, y) -> tuple[float, float]:
    """Least-squares ``y = a x + b``; raises on a rank-deficient design."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x, np.ones_like(x)])
    if len(x) < 2 or np.linalg.matrix_rank(design) < 2:
        raise LearningError("rank-deficient design: need at least 2 distinct lane offsets")
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(a), float(b)


def learn_dmin_regression(gt: Iterable[GroundTruthFrame],
                          bucket: float = DMIN_BUCKET) -> tuple[float, float]:
    gt = _flatten(gt)
    r_ln = [g.ln.r for g in gt]
    gap = [g.bd.r - g.ln.r for g in gt]
    if len(set(r_ln)) < 2:
        raise LearningError("rank-deficient design: need at least 2 distinct lane offsets")
    return fit_line(*lower_envelope(r_ln, gap, bucket))


def learn_lambda_mode(results: Iterable, default: float) -> float:
    """Largest vote loss caused by back perturbation, plus a 10% margin.

    ``results`` are inference frame results (anything with ``perturbed``,
    ``initial_cands_bd`` and ``weight_bd``), or ``(pre_best, post_selected)``
    weight pairs.
    """
    losses = []
    for rec in results:
        if isinstance(rec, tuple):
            pre, post = rec
        else:
            if not getattr(rec, "perturbed", False) or rec.initial_cands_bd is None:
                continue
            pre, post = max(rec.initial_cands_bd.phis), rec.weight_bd
        losses.append(max(0.0, float(pre) - float(post)))
    if not losses:
        return default
    return max(max(losses) * (1.0 + LAMBDA_MODE_MARGIN), LAMBDA_MODE_EPS)


def check_ground_truth(gt: Iterable[GroundTruthFrame], params: ModelParams) -> list[int]:
    """Frames whose annotated pair violates the structure constraint (logged)."""
    bad = [g.frame for g in _flatten(gt) if coupled_structure(g.bd, g.ln, params) is HARD_VIOLATION]
    if bad:
        log.warning("ground truth violates the structure constraint on %d frame(s), first %d",
                    len(bad), bad[0])
    return bad


def learn_params(gt, grid: HypothesisGrid, base: ModelParams = ModelParams(),
                 results: Iterable | None = None) -> ModelParams:
    """All learnable parameters; every tolerance is floored at one grid step.

    ``gt`` is one annotated sequence or a list of them.
    """
    gt = as_sequences(gt)
    check_ground_truth(gt, base)
    lam = learn_interframe_lambdas(gt)
    t_floor, r_floor = grid.theta_step, grid.r_step
    str1, str2 = learn_structure_lambdas(gt, base)
    try:
        a, b = learn_dmin_regression(gt)
    except LearningError as exc:
        log.warning("D_min regression skipped (%s); keeping a=%g, b=%g", exc, base.a, base.b)
        a, b = base.a, base.b
    updates = dict(
        lambda_bd_theta=max(lam["bd"][0], t_floor), lambda_bd_r=max(lam["bd"][1], r_floor),
        lambda_ln_theta=max(lam["ln"][0], t_floor), lambda_ln_r=max(lam["ln"][1], r_floor),
        lambda_str1=max(str1, t_floor), lambda_str2=max(str2, t_floor), a=a, b=b,
    )
    if results is not None:
        updates["lambda_mode"] = learn_lambda_mode(results, base.lambda_mode)
    return base.with_updates(**updates)


# -- ground-truth text format ------------------------------------------------

def write_ground_truth(gt: Iterable[GroundTruthFrame], path) -> None:
    """One line per frame: ``frame theta_bd r_bd theta_ln r_ln`` (degrees)."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in gt:
            vals = (float(v) for v in (g.bd.theta_deg, g.bd.r, g.ln.theta_deg, g.ln.r))
            fh.write(f"{g.frame} " + " ".join(repr(v) for v in vals) + "\n")


def read_ground_truth(path, polygons=None) -> list[GroundTruthFrame]:
    polys = read_polygons(polygons) if polygons is not None else {}
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            tb, rb, tl, rl = (float(p) for p in parts[1:])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed record {raw!r}") from None
        out.append(GroundTruthFrame(frame, LineHypothesis.from_degrees(tb, rb),
                                    LineHypothesis.from_degrees(tl, rl), polys.get(frame)))
    return out


def write_polygons(gt: Iterable[GroundTruthFrame], path) -> None:
    """One line per frame: ``frame x1 y1 x2 y2 ...``."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in gt:
            if g.polygon is None:
                continue
            coords = " ".join(repr(float(v)) for v in np.asarray(g.polygon).ravel())
            fh.write(f"{g.frame} {coords}\n")


def read_polygons(path) -> dict[int, np.ndarray]:
    polys = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) < 7 or len(parts) % 2 == 0:
            raise ValueError(f"{path}:{lineno}: need a frame and at least 3 vertices")
        polys[int(parts[0])] = np.array([float(v) for v in parts[1:]]).reshape(-1, 2)
    return polys


__all__ = [
    "GroundTruthFrame", "LearningError", "as_sequences", "check_ground_truth", "fit_line", "learn_dmin_regression",
    "learn_interframe_lambdas", "learn_lambda_mode", "learn_params", "learn_structure_lambdas",
    "lower_envelope", "read_ground_truth", "read_polygons", "write_ground_truth", "write_polygons",
]

"""Weighted Hough voting over a discretized (theta, r) line grid.

A line is the zero set of ``sin(theta) * y + cos(theta) * x - r``. Each
voting point contributes ``w * exp(-residual**2 / (2 sigma**2))`` to a
hypothesis, and detection is the grid cell with the largest total.

Voters are carried as ``(N, 3)`` float arrays with columns ``x, y, w``;
:func:`as_voters` accepts any sequence of :class:`VotingPoint` or triples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import kernels


class EmptyWindowError(ValueError):
    """A constrained search window contains no grid cell."""


class LineHypothesis(NamedTuple):
    """A line ``sin(theta) y + cos(theta) x = r`` (theta in radians)."""

    theta: float
    r: float

    @classmethod
    def normalized(cls, theta: float, r: float) -> "LineHypothesis":
        """Fold ``theta`` into ``[0, pi)``, negating ``r`` when the normal flips."""
        theta = math.fmod(theta, 2.0 * math.pi)
        if theta < 0.0:
            theta += 2.0 * math.pi
        if theta >= math.pi:
            theta -= math.pi
            r = -r
        if theta >= math.pi:  # tiny negative inputs round up to exactly pi
            theta, r = 0.0, -r
        return cls(theta, r)

    @classmethod
    def from_degrees(cls, theta_deg: float, r: float) -> "LineHypothesis":
        return cls.normalized(math.radians(theta_deg), r)

    @property
    def theta_deg(self) -> float:
        # 15 significant digits so that grid angles print as round decimals
        return float(format(math.degrees(self.theta), ".15g"))

    def y_at(self, x):
        """Ordinate of the line at ``x`` (undefined for vertical lines)."""
        return (self.r - math.cos(self.theta) * np.asarray(x, dtype=float)) / math.sin(self.theta)


class VotingPoint(NamedTuple):
    x: float
    y: float
    weight: float = 1.0


@dataclass(frozen=True)
class VoteConfig:
    sigma: float = 5.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class HypothesisGrid:
    """Discretized hypothesis space.

    Angles are given in degrees so that round values such as 90 land on the
    grid exactly; ``thetas`` exposes them in radians. Both ranges are
    inclusive of their end points.
    """

    theta_min_deg: float = 60.0
    theta_max_deg: float = 120.0
    theta_step_deg: float = 0.5
    r_min: float = 0.0
    r_max: float = 120.0
    r_step: float = 1.0

    def __post_init__(self):
        if not (self.theta_step_deg > 0 and self.r_step > 0):
            raise ValueError("grid steps must be positive")
        if self.theta_max_deg < self.theta_min_deg or self.r_max < self.r_min:
            raise ValueError("grid ranges are empty")

    @classmethod
    def for_image(cls, height: int, **overrides) -> "HypothesisGrid":
        """Default grid for an image: 60..120 degrees, r over ``[0, height]``."""
        return cls(**{"r_max": float(height), **overrides})

    @property
    def n_theta(self) -> int:
        return int(math.floor((self.theta_max_deg - self.theta_min_deg) / self.theta_step_deg + 1e-9)) + 1

    @property
    def n_r(self) -> int:
        return int(math.floor((self.r_max - self.r_min) / self.r_step + 1e-9)) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_theta, self.n_r

    @cached_property
    def thetas(self) -> np.ndarray:
        t = np.deg2rad(self.theta_min_deg + self.theta_step_deg * np.arange(self.n_theta))
        t.flags.writeable = False
        return t

    @cached_property
    def rs(self) -> np.ndarray:
        r = self.r_min + self.r_step * np.arange(self.n_r)
        r.flags.writeable = False
        return r

    @cached_property
    def sin_t(self) -> np.ndarray:
        return np.sin(self.thetas)

    @cached_property
    def cos_t(self) -> np.ndarray:
        return np.cos(self.thetas)

    @property
    def theta_step(self) -> float:
        return math.radians(self.theta_step_deg)

    def hypothesis(self, cell: tuple[int, int]) -> LineHypothesis:
        i, j = cell
        return LineHypothesis(float(self.thetas[i]), float(self.rs[j]))

    def cell_of(self, h: LineHypothesis) -> tuple[int, int]:
        """Nearest grid cell to ``h`` (no range check)."""
        i = int(round((math.degrees(h.theta) - self.theta_min_deg) / self.theta_step_deg))
        j = int(round((h.r - self.r_min) / self.r_step))
        return i, j

    def contains(self, h: LineHypothesis) -> bool:
        i, j = self.cell_of(h)
        return 0 <= i < self.n_theta and 0 <= j < self.n_r


def as_voters(voters) -> np.ndarray:
    """Coerce voting points to a float64 ``(N, 3)`` array (x, y, w)."""
    if isinstance(voters, np.ndarray) and voters.dtype == np.float64 and voters.ndim == 2:
        arr = voters
    else:
        arr = np.asarray(list(voters) if not isinstance(voters, np.ndarray) else voters,
                         dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    arr = arr.reshape(-1, 3)
    if np.any(arr[:, 2] < 0):
        raise ValueError("voting weights must be nonnegative")
    return arr


def to_road_frame(voters, height: float) -> np.ndarray:
    """Flip image rows (y down from the top) to heights above the bottom edge.

    In the road frame ``r`` grows away from the vehicle, so a border line
    carries a larger ``r`` than the lane marking in front of it. The map is
    its own inverse.
    """
    v = as_voters(voters).copy()
    v[:, 1] = height - v[:, 1]
    return v


def flip_line(h: LineHypothesis, height: float) -> LineHypothesis:
    """The same line after mapping ``y -> height - y`` (road frame <-> image rows)."""
    return LineHypothesis(math.pi - h.theta if h.theta > 0.0 else 0.0,
                          height * math.sin(h.theta) - h.r if h.theta > 0.0 else h.r)


def line_residual(h: LineHypothesis, x: float, y: float) -> float:
    return math.sin(h.theta) * y + math.cos(h.theta) * x - h.r


def vote(h: LineHypothesis, voters, cfg: VoteConfig = VoteConfig()) -> float:
    """Gaussian-weighted vote for a single hypothesis, summed in voter order."""
    v = as_voters(voters)
    s, c = math.sin(h.theta), math.cos(h.theta)
    k = 1.0 / (2.0 * cfg.sigma * cfg.sigma)
    total = 0.0
    for x, y, w in v:
        d = s * y + c * x - h.r
        total += w * math.exp(-d * d * k)
    return total


def vote_block(voters, grid: HypothesisGrid, cfg: VoteConfig,
               ti: slice = slice(None), rj: slice = slice(None)) -> np.ndarray:
    """Vote weights for the sub-grid ``thetas[ti] x rs[rj]``."""
    ti = slice(*ti.indices(grid.n_theta))
    rj = slice(*rj.indices(grid.n_r))
    nr = max(0, rj.stop - rj.start)
    r0 = grid.r_min + grid.r_step * rj.start
    return kernels.accumulate(as_voters(voters), grid.sin_t[ti], grid.cos_t[ti],
                              r0, grid.r_step, nr, cfg.sigma)


def vote_grid(voters, grid: HypothesisGrid, cfg: VoteConfig = VoteConfig()) -> np.ndarray:
    return vote_block(voters, grid, cfg)


def masked_argmax(acc: np.ndarray, mask: np.ndarray | None = None) -> tuple[tuple[int, int], float]:
    """First maximal cell in row-major order, optionally restricted to ``mask``."""
    if mask is None:
        flat = int(np.argmax(acc))
    else:
        if not mask.any():
            raise EmptyWindowError("no admissible cell")
        flat = int(np.argmax(np.where(mask, acc, -np.inf)))
    i, j = divmod(flat, acc.shape[1])
    return (i, j), float(acc[i, j])


def argmax_vote(voters, grid: HypothesisGrid,
                cfg: VoteConfig = VoteConfig()) -> tuple[LineHypothesis, float]:
    """Best grid cell; ties go to the smallest theta index, then smallest r index."""
    cell, weight = masked_argmax(vote_grid(voters, grid, cfg))
    return grid.hypothesis(cell), weight


def window_slices(grid: HypothesisGrid, center: LineHypothesis,
                  lambda_theta: float, lambda_r: float) -> tuple[slice, slice]:
    """Index ranges of cells with ``|dtheta| < lambda_theta`` and ``|dr| < lambda_r``.

    Membership is decided on the cell values with the same comparison the
    inter-frame potential uses, so the two can never disagree.
    """
    t_ok = np.abs(grid.thetas - center.theta) < lambda_theta
    r_ok = np.abs(grid.rs - center.r) < lambda_r
    if not t_ok.any() or not r_ok.any():
        raise EmptyWindowError(
            f"window around theta={center.theta:.6g}, r={center.r:.6g} with "
            f"lambda_theta={lambda_theta:.6g}, lambda_r={lambda_r:.6g} is empty")
    ti = np.flatnonzero(t_ok)
    rj = np.flatnonzero(r_ok)
    return slice(int(ti[0]), int(ti[-1]) + 1), slice(int(rj[0]), int(rj[-1]) + 1)


def argmax_vote_constrained(voters, grid: HypothesisGrid, cfg: VoteConfig,
                            center: LineHypothesis, lambda_theta: float,
                            lambda_r: float) -> tuple[LineHypothesis, float]:
    """:func:`argmax_vote` restricted to the open window around ``center``."""
    ti, rj = window_slices(grid, center, lambda_theta, lambda_r)
    (i, j), weight = masked_argmax(vote_block(voters, grid, cfg, ti, rj))
    return grid.hypothesis((ti.start + i, rj.start + j)), weight


def vertical_gradient(image: np.ndarray) -> np.ndarray:
    """Central-difference vertical derivative; border rows are zero."""
    img = np.asarray(image, dtype=np.float64)
    g = np.zeros_like(img)
    if img.shape[0] >= 3:
        g[1:-1] = 0.5 * (img[2:] - img[:-2])
    return g


def gradient_voters(image: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Type-2 voters: pixels whose vertical gradient magnitude exceeds ``threshold``.

    Coordinates are image coordinates (x = column, y = row). With
    ``threshold=None`` the cut is 10% of the largest magnitude.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a nonempty 2-D image")
    mag = np.abs(vertical_gradient(img))
    if threshold is None:
        threshold = 0.1 * float(mag.max())
    rows, cols = np.nonzero(mag > threshold)
    return np.column_stack([cols.astype(np.float64), rows.astype(np.float64), mag[rows, cols]])


__all__ = [
    "EmptyWindowError", "HypothesisGrid", "LineHypothesis", "VoteConfig", "VotingPoint",
    "argmax_vote", "flip_line", "argmax_vote_constrained", "as_voters", "gradient_voters", "line_residual",
    "masked_argmax", "to_road_frame", "vote", "vote_block", "vote_grid", "window_slices",
]

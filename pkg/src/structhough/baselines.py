"""Reference trackers for head-to-head comparison.

* baseline 1: independent per-frame voting on detector voters;
* baseline 2: voting restricted to a window around the previous output;
* baseline 3: baseline 2, falling back to gradient voters when the
  detectors are silent;
* a constant-velocity Kalman filter fed with per-frame argmax measurements.

Each tracker returns one :class:`LinePair` per frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .inference import FrameObservation, FrameResult, iter_sequence
from .potentials import ModelParams
from .voting import (
    HypothesisGrid, LineHypothesis, VoteConfig, masked_argmax, vote_block, vote_grid,
    window_slices,
)

TRACKERS = ("structured", "baseline1", "baseline2", "baseline3", "kalman")


class LinePair(NamedTuple):
    frame: int
    bd: LineHypothesis
    ln: LineHypothesis

    def to_record(self) -> dict:
        return {"frame": self.frame,
                "bd": {"theta": self.bd.theta_deg, "r": self.bd.r},
                "ln": {"theta": self.ln.theta_deg, "r": self.ln.r}}


def pairs_from_results(results: Iterable[FrameResult]) -> list[LinePair]:
    return [LinePair(r.frame, r.state.h_bd, r.state.h_ln) for r in results]


def _voters(obs: FrameObservation, track: str) -> np.ndarray:
    return obs.bd_voters if track == "bd" else obs.ln_voters


def iter_baseline1(observations: Iterable[FrameObservation], grid: HypothesisGrid,
                   cfg: VoteConfig = VoteConfig()) -> Iterator[LinePair]:
    for obs in observations:
        lines = [grid.hypothesis(masked_argmax(vote_grid(_voters(obs, t), grid, cfg))[0])
                 for t in ("bd", "ln")]
        yield LinePair(obs.index, *lines)


def baseline1(observations: Sequence[FrameObservation], grid: HypothesisGrid,
              cfg: VoteConfig = VoteConfig()) -> list[LinePair]:
    """Unconstrained argmax per frame and per track; no memory, no structure."""
    return list(iter_baseline1(observations, grid, cfg))


def _windowed(voters, grid, cfg, prev_cell, lam):
    center = grid.hypothesis(prev_cell)
    ti, rj = window_slices(grid, center, *lam)
    (i, j), w = masked_argmax(vote_block(voters, grid, cfg, ti, rj))
    return (ti.start + i, rj.start + j), w


def iter_windowed(observations: Iterable[FrameObservation], grid: HypothesisGrid,
                  params: ModelParams = ModelParams(),
                  use_gradient: bool = False) -> Iterator[LinePair]:
    """Frame-by-frame baseline 2 (or baseline 3 with ``use_gradient``)."""
    cfg = params.vote_config
    prev = {}
    for k, obs in enumerate(observations):
        cells = {}
        for t in ("bd", "ln"):
            voters = _voters(obs, t)
            if k == 0:
                cells[t] = masked_argmax(vote_grid(voters, grid, cfg))[0]
                continue
            lam = params.interframe(t)
            cell, w = _windowed(voters, grid, cfg, prev[t], lam)
            if w == 0.0 and use_gradient:
                cell, w = _windowed(obs.grad_voters, grid, cfg, prev[t], lam)
            # nothing to vote on: hold the previous output
            cells[t] = cell if w > 0.0 else prev[t]
        prev = cells
        yield LinePair(obs.index, grid.hypothesis(cells["bd"]), grid.hypothesis(cells["ln"]))


def baseline2(observations: Sequence[FrameObservation], grid: HypothesisGrid,
              params: ModelParams = ModelParams()) -> list[LinePair]:
    """Argmax inside the inter-frame window of the previous output.

    Frame 1 is unconstrained. A window without any vote keeps the previous
    line instead of jumping to the window's tie-break corner.
    """
    return list(iter_windowed(observations, grid, params, use_gradient=False))


def baseline3(observations: Sequence[FrameObservation], grid: HypothesisGrid,
              params: ModelParams = ModelParams()) -> list[LinePair]:
    """Baseline 2 with windowed gradient voting on frames where detectors are silent."""
    return list(iter_windowed(observations, grid, params, use_gradient=True))


# -- Kalman filter -----------------------------------------------------------

@dataclass(frozen=True)
class KalmanConfig:
    """Noise levels of the constant-velocity model (angles in degrees).

    ``q_*`` scale the white-acceleration process noise, ``m_*`` are
    measurement variances, ``p0_*`` initial variances of position and
    velocity. Defaults come from :func:`tune_kalman` on clean synthetic
    scenes.
    """

    q_theta: float = 0.01
    q_r: float = 0.1
    m_theta: float = 0.1
    m_r: float = 1.0
    p0_pos: float = 1.0
    p0_vel: float = 1.0

    def __post_init__(self):
        if min(self.q_theta, self.q_r, self.m_theta, self.m_r, self.p0_pos, self.p0_vel) < 0:
            raise ValueError("noise levels must be nonnegative")


F = np.array([[1.0, 0.0, 1.0, 0.0],
              [0.0, 1.0, 0.0, 1.0],
              [0.0, 0.0, 1.0, 0.0],
              [0.0, 0.0, 0.0, 1.0]])
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])


def _process_noise(q_theta: float, q_r: float) -> np.ndarray:
    # piecewise-constant white acceleration, dt = 1
    block = np.array([[0.25, 0.5], [0.5, 1.0]])
    Q = np.zeros((4, 4))
    for q, idx in ((q_theta, (0, 2)), (q_r, (1, 3))):
        Q[np.ix_(idx, idx)] = q * block
    return Q


class KalmanTrack:
    """Constant-velocity filter on ``(theta_deg, r, dtheta, dr)``."""

    def __init__(self, z0: np.ndarray, cfg: KalmanConfig = KalmanConfig()):
        self.x = np.array([z0[0], z0[1], 0.0, 0.0])
        self.P = np.diag([cfg.p0_pos, cfg.p0_pos, cfg.p0_vel, cfg.p0_vel]).astype(float)
        self.Q = _process_noise(cfg.q_theta, cfg.q_r)
        self.R = np.diag([cfg.m_theta, cfg.m_r]).astype(float)

    def predict(self) -> None:
        self.x = F @ self.x
        self.P = F @ self.P @ F.T + self.Q
        self.P = 0.5 * (self.P + self.P.T)

    def update(self, z) -> None:
        y = np.asarray(z, dtype=float) - H @ self.x
        S = H @ self.P @ H.T + self.R
        K = self.P @ H.T @ np.linalg.pinv(S)
        self.x = self.x + K @ y
        IKH = np.eye(4) - K @ H
        # Joseph form keeps P symmetric positive semidefinite
        self.P = IKH @ self.P @ IKH.T + K @ self.R @ K.T
        self.P = 0.5 * (self.P + self.P.T)

    @property
    def line(self) -> LineHypothesis:
        return LineHypothesis.from_degrees(float(self.x[0]), float(self.x[1]))


def _measure(voters, grid, cfg):
    cell, w = masked_argmax(vote_grid(voters, grid, cfg))
    h = grid.hypothesis(cell)
    return np.array([h.theta_deg, h.r]), w


def kalman_track(observations: Sequence[FrameObservation], grid: HypothesisGrid,
                 cfg: VoteConfig = VoteConfig(), kcfg: KalmanConfig = KalmanConfig(),
                 covariances: list | None = None) -> list[LinePair]:
    """Filter each track's per-frame argmax; zero-vote frames only predict.

    Until a track sees its first nonzero vote it reports the grid's
    tie-break cell. If ``covariances`` is a list, each frame appends a
    ``{"bd": P, "ln": P}`` dict (``None`` before initialization).
    """
    return list(iter_kalman(observations, grid, cfg, kcfg, covariances))


def iter_kalman(observations: Iterable[FrameObservation], grid: HypothesisGrid,
                cfg: VoteConfig = VoteConfig(), kcfg: KalmanConfig = KalmanConfig(),
                covariances: list | None = None) -> Iterator[LinePair]:
    filters: dict[str, KalmanTrack | None] = {"bd": None, "ln": None}
    for obs in observations:
        lines = {}
        for t in ("bd", "ln"):
            z, w = _measure(_voters(obs, t), grid, cfg)
            kf = filters[t]
            if kf is None:
                if w > 0.0:
                    kf = filters[t] = KalmanTrack(z, kcfg)
                    lines[t] = kf.line
                else:
                    lines[t] = LineHypothesis.from_degrees(*z)
                continue
            kf.predict()
            if w > 0.0:
                kf.update(z)
            lines[t] = kf.line
        if covariances is not None:
            covariances.append({t: None if f is None else f.P.copy() for t, f in filters.items()})
        yield LinePair(obs.index, lines["bd"], lines["ln"])


def tune_kalman(sequences, grid: HypothesisGrid, cfg: VoteConfig = VoteConfig(),
                q_values=(0.001, 0.01, 0.1, 1.0), m_values=(0.1, 1.0, 10.0),
                score=None) -> tuple[KalmanConfig, float]:
    """Coarse grid search over noise levels.

    ``sequences`` is an iterable of ``(observations, truth, (width, height))``; the
    default score is the mean of Bd_Pxl and Ld_Pxl (lower is better).
    ``q_theta`` and ``m_theta`` are tied to a tenth of their r counterparts.
    """
    from .metrics import evaluate

    seqs = list(sequences)
    if score is None:
        def score(rep):
            return 0.5 * (rep.bd_pxl + rep.ld_pxl)
    best = None
    for q in q_values:
        for m in m_values:
            kc = KalmanConfig(q_theta=0.1 * q, q_r=q, m_theta=0.1 * m, m_r=m)
            total = 0.0
            for obs, truth, size in seqs:
                total += score(evaluate(kalman_track(obs, grid, cfg, kc), truth, size))
            total /= len(seqs)
            if best is None or total < best[1]:
                best = (kc, total)
    return best


def iter_tracker(name: str, observations: Iterable[FrameObservation], grid: HypothesisGrid,
                 params: ModelParams = ModelParams(), kcfg: KalmanConfig = KalmanConfig()):
    """Frame-by-frame output of the named tracker.

    ``structured`` yields :class:`~structhough.inference.FrameResult`, the
    others :class:`LinePair`.
    """
    if name == "structured":
        return iter_sequence(observations, grid, params)
    if name == "baseline1":
        return iter_baseline1(observations, grid, params.vote_config)
    if name == "baseline2":
        return iter_windowed(observations, grid, params, use_gradient=False)
    if name == "baseline3":
        return iter_windowed(observations, grid, params, use_gradient=True)
    if name == "kalman":
        return iter_kalman(observations, grid, params.vote_config, kcfg)
    raise ValueError(f"unknown tracker {name!r}; expected one of {', '.join(TRACKERS)}")


def run_tracker(name: str, observations: Sequence[FrameObservation], grid: HypothesisGrid,
                params: ModelParams = ModelParams(),
                kcfg: KalmanConfig = KalmanConfig()) -> list[LinePair]:
    """Line pairs of the named tracker; ``structured`` runs the CRF engine."""
    out = list(iter_tracker(name, observations, grid, params, kcfg))
    return pairs_from_results(out) if name == "structured" else out


__all__ = [
    "KalmanConfig", "KalmanTrack", "LinePair", "TRACKERS", "baseline1", "baseline2", "baseline3",
    "iter_baseline1", "iter_kalman", "iter_tracker", "iter_windowed", "kalman_track",
    "pairs_from_results", "run_tracker", "tune_kalman",
]

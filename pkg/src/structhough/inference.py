"""Online MAP inference for the structured Hough voting model.

Frame 1 is a joint vote for border and lane marking under the coupled
structure constraint. Every later frame runs four steps:

1. generate three candidates per track (unconstrained detector vote,
   frame-constrained detector vote, frame-constrained gradient vote);
2. pick one candidate per track with the decision tree;
3. if the picked pair violates the structure constraint, regenerate the
   border candidates restricted to cells compatible with the picked lane;
4. pick again among the regenerated border candidates.

Earlier frames are never revisited, so results for a prefix of a sequence
do not depend on what follows.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .potentials import (
    HARD_VIOLATION, CandidateSet, ModelParams, coupled_structure, structure_mask, tree_select,
)
from .voting import (
    EmptyWindowError, HypothesisGrid, LineHypothesis, as_voters, masked_argmax, vote_block,
    vote_grid, window_slices,
)

# frames of Type-1 weight history used to calibrate gradient votes
_CALIB_HISTORY = 10
_CALIB_FLOOR = 1e-6


class InferenceError(RuntimeError):
    """Inference could not produce a feasible configuration for a frame."""

    def __init__(self, message: str, frame: int | None = None):
        self.frame = frame
        super().__init__(f"frame {frame}: {message}" if frame is not None else message)


class InitializationError(InferenceError):
    pass


class ConstraintInfeasibleError(InferenceError):
    pass


@dataclass(frozen=True)
class FrameObservation:
    """Voters of one frame, in road coordinates (y measured up from the bottom)."""

    index: int
    bd_voters: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ln_voters: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    grad_voters: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("frame index must be >= 1")
        for name in ("bd_voters", "ln_voters", "grad_voters"):
            object.__setattr__(self, name, as_voters(getattr(self, name)))


@dataclass(frozen=True)
class TrackState:
    h_bd: LineHypothesis
    h_ln: LineHypothesis
    cell_bd: tuple[int, int]
    cell_ln: tuple[int, int]
    frame: int
    cands_bd: CandidateSet | None = None
    cands_ln: CandidateSet | None = None
    # per-frame mean Type-1 voter weight, most recent last
    type1_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class FrameResult:
    state: TrackState
    chosen_mode_bd: int
    chosen_mode_ln: int
    perturbed: bool = False
    # border candidates before back perturbation (equal to the final set otherwise)
    initial_cands_bd: CandidateSet | None = None
    weight_bd: float = 0.0
    weight_ln: float = 0.0
    degenerate_bd: bool = False
    degenerate_ln: bool = False
    fallback_bd: bool = False

    @property
    def frame(self) -> int:
        return self.state.frame

    def to_record(self) -> dict:
        s = self.state

        def track(h, mode, cands, weight):
            phi = list(cands.phis) if cands is not None else [weight]
            return {"theta": h.theta_deg, "r": h.r, "mode": mode, "phi": phi}

        return {
            "frame": s.frame,
            "bd": track(s.h_bd, self.chosen_mode_bd, s.cands_bd, self.weight_bd),
            "ln": track(s.h_ln, self.chosen_mode_ln, s.cands_ln, self.weight_ln),
            "perturbed": self.perturbed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=False)


# -- frame 1 -----------------------------------------------------------------

def _joint_search(acc_bd: np.ndarray, acc_ln: np.ndarray, grid: HypothesisGrid,
                  params: ModelParams):
    """Exact maximizer of ``acc_bd[b] + acc_ln[l]`` over structure-feasible pairs.

    Lane cells are visited in decreasing vote order and the scan stops once
    no remaining lane cell can beat the incumbent even with the best border
    cell overall.
    """
    order = np.argsort(-acc_ln, axis=None, kind="stable")
    bd_best = float(acc_bd.max())
    best = None
    best_val = -np.inf
    n_r = grid.n_r
    for flat in order:
        l_val = float(acc_ln.flat[flat])
        if l_val + bd_best <= best_val:
            break
        cell_ln = divmod(int(flat), n_r)
        mask = structure_mask(grid.thetas, grid.rs, grid.hypothesis(cell_ln), params)
        if not mask.any():
            continue
        cell_bd, b_val = masked_argmax(acc_bd, mask)
        if l_val + b_val > best_val:
            best_val = l_val + b_val
            best = (cell_bd, cell_ln)
    return best


def init_frame(obs: FrameObservation, grid: HypothesisGrid,
               params: ModelParams = ModelParams()) -> FrameResult:
    """Joint detection on the first frame, subject to the structure constraint."""
    if obs.index != 1:
        raise InitializationError("initial frame must have index 1", obs.index)
    cfg = params.vote_config
    acc_ln = vote_grid(obs.ln_voters, grid, cfg)
    acc_bd = vote_grid(obs.bd_voters, grid, cfg)
    # the scan starts at the lane argmax with its best compatible border and
    # only continues while another lane cell could still win
    pair = _joint_search(acc_bd, acc_ln, grid, params)
    if pair is None:
        raise InitializationError("no grid pair satisfies the structure constraint", 1)
    cell_bd, cell_ln = pair
    w_bd, w_ln = float(acc_bd[cell_bd]), float(acc_ln[cell_ln])
    state = TrackState(
        h_bd=grid.hypothesis(cell_bd), h_ln=grid.hypothesis(cell_ln),
        cell_bd=cell_bd, cell_ln=cell_ln, frame=1,
        type1_history=_push_history((), obs),
    )
    degenerate = len(obs.bd_voters) == 0 and len(obs.ln_voters) == 0
    return FrameResult(state, 1, 1, weight_bd=w_bd, weight_ln=w_ln,
                       degenerate_bd=degenerate, degenerate_ln=degenerate)


def _push_history(history: tuple[float, ...], obs: FrameObservation) -> tuple[float, ...]:
    w = np.concatenate([obs.bd_voters[:, 2], obs.ln_voters[:, 2]])
    if len(w) == 0:
        return history
    return (history + (float(w.mean()),))[-_CALIB_HISTORY:]


def gradient_calibration(history: Sequence[float], grad_voters: np.ndarray,
                         enabled: bool = True) -> float:
    """Scale putting gradient votes on the same footing as detector votes."""
    if not enabled or len(grad_voters) == 0:
        return 1.0
    mean_grad = float(grad_voters[:, 2].mean())
    if mean_grad <= 0.0:
        return 1.0
    mean_t1 = float(np.mean(history)) if len(history) else 1.0
    return max(mean_t1 / mean_grad, _CALIB_FLOOR)


# -- candidate generation ----------------------------------------------------

@dataclass
class _Evidence:
    """Vote accumulators of one track for one frame, reused by back perturbation."""

    prev: LineHypothesis
    prev_cell: tuple[int, int]
    acc1: np.ndarray          # Type-1 votes, full grid
    ti: slice                 # inter-frame window
    rj: slice
    acc3: np.ndarray          # gradient votes over the window block
    calib: float


def _evidence(prev, prev_cell, type1, grad, grid, params, lambda_theta, lambda_r, calib):
    cfg = params.vote_config
    ti, rj = window_slices(grid, prev, lambda_theta, lambda_r)
    return _Evidence(prev, prev_cell, vote_grid(type1, grid, cfg), ti, rj,
                     vote_block(grad, grid, cfg, ti, rj), calib)


@dataclass
class _Candidates:
    cands: CandidateSet
    available: tuple[bool, bool, bool]
    degenerate: bool


def _make_candidates(ev: _Evidence, grid: HypothesisGrid,
                     omega: np.ndarray | None = None) -> _Candidates:
    cell1, phi1 = masked_argmax(ev.acc1, omega)
    block_mask = None if omega is None else omega[ev.ti, ev.rj]
    offset = (ev.ti.start, ev.rj.start)
    cells = [cell1]
    phis = [phi1]
    available = [True]
    for acc, scale in ((ev.acc1[ev.ti, ev.rj], 1.0), (ev.acc3, ev.calib)):
        if block_mask is not None and not block_mask.any():
            # window and structure constraint do not intersect
            cells.append(cell1)
            phis.append(0.0)
            available.append(False)
            continue
        (i, j), w = masked_argmax(acc, block_mask)
        cells.append((offset[0] + i, offset[1] + j))
        phis.append(w * scale)
        available.append(True)
    degenerate = all(p == 0.0 for p in phis)
    if degenerate:
        prev_ok = omega is None or bool(omega[ev.prev_cell])
        if prev_ok:
            # zero evidence: the window candidates collapse onto the held line
            cells[1] = cells[2] = ev.prev_cell
            available[1] = available[2] = True
        else:
            degenerate = False
    hyps = [grid.hypothesis(c) for c in cells]
    cands = CandidateSet(hyps[0], hyps[1], hyps[2], phis[0], phis[1], phis[2],
                         cells=(cells[0], cells[1], cells[2]))
    return _Candidates(cands, (available[0], available[1], available[2]), degenerate)


def generate_candidates(prev: LineHypothesis, type1, grad, grid: HypothesisGrid,
                        params: ModelParams, lambda_theta: float, lambda_r: float,
                        calib: float = 1.0) -> CandidateSet:
    """Three candidates for one track given the previous frame's selection.

    ``calib`` multiplies the gradient vote weight reported as ``phi3``.
    Raises :class:`~structhough.voting.EmptyWindowError` if the inter-frame
    window holds no grid cell.
    """
    ev = _evidence(prev, grid.cell_of(prev), as_voters(type1), as_voters(grad), grid, params,
                   lambda_theta, lambda_r, calib)
    return _make_candidates(ev, grid).cands


@dataclass(frozen=True)
class _Choice:
    cell: tuple[int, int]
    mode: int
    tree_mode: int
    degenerate: bool
    fallback: bool


def _select(c: _Candidates, tree) -> _Choice:
    tree_mode = tree_select(c.cands, tree)
    if c.degenerate:
        return _Choice(c.cands.cells[1], 2, tree_mode, True, False)
    if not c.available[tree_mode - 1]:
        # the unavailable slot carries candidate 1's cell
        return _Choice(c.cands.cells[0], 1, tree_mode, False, True)
    return _Choice(c.cands.cells[tree_mode - 1], tree_mode, tree_mode, False, False)


# -- frames 2.. --------------------------------------------------------------

def step_frame(state: TrackState, obs: FrameObservation, grid: HypothesisGrid,
               params: ModelParams = ModelParams()) -> FrameResult:
    """Incremental update for one frame; see the module docstring for the steps."""
    frame = obs.index
    if frame != state.frame + 1:
        raise InferenceError(f"expected frame {state.frame + 1}", frame)
    calib = gradient_calibration(state.type1_history, obs.grad_voters, params.calibrate_gradient)
    try:
        ev_ln = _evidence(state.h_ln, state.cell_ln, obs.ln_voters, obs.grad_voters, grid,
                          params, *params.interframe("ln"), calib)
        ev_bd = _evidence(state.h_bd, state.cell_bd, obs.bd_voters, obs.grad_voters, grid,
                          params, *params.interframe("bd"), calib)
    except EmptyWindowError as exc:
        raise InferenceError(str(exc), frame) from exc

    # Step 1-2: lane first; back perturbation only ever moves the border
    c_ln = _make_candidates(ev_ln, grid)
    pick_ln = _select(c_ln, params.tree_ln)
    h_ln = grid.hypothesis(pick_ln.cell)

    c_bd = _make_candidates(ev_bd, grid)
    initial_bd = c_bd.cands
    pick_bd = _select(c_bd, params.tree_bd)

    perturbed = False
    if coupled_structure(grid.hypothesis(pick_bd.cell), h_ln, params) is HARD_VIOLATION:
        # Step 3-4
        omega = structure_mask(grid.thetas, grid.rs, h_ln, params)
        if not omega.any():
            raise ConstraintInfeasibleError(
                f"no border cell is compatible with lane theta={h_ln.theta_deg:.3f} deg, "
                f"r={h_ln.r:.3f}", frame)
        c_bd = _make_candidates(ev_bd, grid, omega)
        pick_bd = _select(c_bd, params.tree_bd)
        perturbed = True

    new_state = TrackState(
        h_bd=grid.hypothesis(pick_bd.cell), h_ln=h_ln,
        cell_bd=pick_bd.cell, cell_ln=pick_ln.cell, frame=frame,
        cands_bd=c_bd.cands, cands_ln=c_ln.cands,
        type1_history=_push_history(state.type1_history, obs),
    )
    return FrameResult(
        new_state, pick_bd.mode, pick_ln.mode, perturbed=perturbed,
        initial_cands_bd=initial_bd,
        weight_bd=c_bd.cands.phis[pick_bd.mode - 1],
        weight_ln=c_ln.cands.phis[pick_ln.mode - 1],
        degenerate_bd=pick_bd.degenerate, degenerate_ln=pick_ln.degenerate,
        fallback_bd=pick_bd.fallback,
    )


def iter_sequence(observations: Iterable[FrameObservation], grid: HypothesisGrid,
                  params: ModelParams = ModelParams()) -> Iterator[FrameResult]:
    state = None
    expected = 1
    for obs in observations:
        if obs.index != expected:
            raise InferenceError(f"expected frame {expected}", obs.index)
        try:
            result = init_frame(obs, grid, params) if state is None else \
                step_frame(state, obs, grid, params)
        except InferenceError:
            raise
        except EmptyWindowError as exc:
            raise InferenceError(str(exc), obs.index) from exc
        state = result.state
        expected += 1
        yield result


def run_sequence(observations: Iterable[FrameObservation], grid: HypothesisGrid,
                 params: ModelParams = ModelParams()) -> list[FrameResult]:
    """Initialize on frame 1, then fold :func:`step_frame` over the rest."""
    return list(iter_sequence(observations, grid, params))


def write_results(results: Iterable[FrameResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")


__all__ = [
    "ConstraintInfeasibleError", "FrameObservation", "FrameResult", "InferenceError",
    "InitializationError", "TrackState", "generate_candidates", "gradient_calibration",
    "init_frame", "iter_sequence", "run_sequence", "step_frame", "write_results",
]

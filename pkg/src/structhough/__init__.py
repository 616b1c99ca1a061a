"""Structured Hough voting for temporal road-border and lane-marking detection.

Lines are voted for on a (theta, r) grid by weighted evidence points. A
border track and a lane-marking track are followed over time by an online
MAP update of a conditional random field whose potentials tie each frame
to the previous one and the two lines to each other.
"""
from .inference import (
    ConstraintInfeasibleError, FrameObservation, FrameResult, InferenceError,
    InitializationError, TrackState, generate_candidates, init_frame, run_sequence, step_frame,
)
from .potentials import (
    HARD_VIOLATION, CandidateSet, ModelParams, TreeThresholds, coupled_structure, d_min,
    interframe_potential, mode_selection_potential, tree_select,
)
from .voting import (
    EmptyWindowError, HypothesisGrid, LineHypothesis, VoteConfig, VotingPoint, argmax_vote,
    argmax_vote_constrained, gradient_voters, line_residual, vote,
)

__version__ = "0.1.0"

__all__ = [
    "HARD_VIOLATION", "CandidateSet", "ConstraintInfeasibleError", "EmptyWindowError",
    "FrameObservation", "FrameResult", "HypothesisGrid", "InferenceError", "InitializationError",
    "LineHypothesis", "ModelParams", "TrackState", "TreeThresholds", "VoteConfig", "VotingPoint",
    "argmax_vote", "argmax_vote_constrained", "coupled_structure", "d_min", "generate_candidates",
    "gradient_voters", "init_frame", "interframe_potential", "line_residual",
    "mode_selection_potential", "run_sequence", "step_frame", "tree_select", "vote",
]

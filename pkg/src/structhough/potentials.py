"""CRF potentials coupling border (bd) and lane-marking (ln) hypotheses.

Potentials take values in the extended reals: a finite score or
:data:`HARD_VIOLATION`, an absorbing sentinel standing for minus infinity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .voting import LineHypothesis, VoteConfig


class _HardViolation:
    """Absorbing element for potential sums."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __repr__(self):
        return "HARD_VIOLATION"

    def __reduce__(self):
        return (_HardViolation, ())


HARD_VIOLATION = _HardViolation()


def potential_sum(*terms):
    """Sum potential values; any :data:`HARD_VIOLATION` term absorbs the sum."""
    total = 0.0
    for t in terms:
        if t is HARD_VIOLATION:
            return HARD_VIOLATION
        total += t
    return total


@dataclass(frozen=True)
class TreeThresholds:
    """Thresholds of the three-node mode-selection tree."""

    root_gap: float = 50.0
    left_abs: float = 16.0
    right_abs: float = 10.0


@dataclass(frozen=True)
class ModelParams:
    sigma: float = 5.0
    lambda_bd_theta: float = math.radians(1.5)
    lambda_bd_r: float = 4.0
    lambda_ln_theta: float = math.radians(1.5)
    lambda_ln_r: float = 4.0
    lambda_mode: float = 100.0
    lambda_str1: float = math.radians(3.0)
    lambda_str2: float = math.radians(6.0)
    d1: float = 10.0
    d2: float = 17.0
    d3: float = 35.0
    a: float = 0.1
    b: float = 5.0
    dmin_low: float = 10.0
    dmin_high: float = 27.0
    calibrate_gradient: bool = True
    tree_bd: TreeThresholds = field(default_factory=TreeThresholds)
    tree_ln: TreeThresholds = field(default_factory=TreeThresholds)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.d1 < self.d2 < self.d3:
            raise ValueError("need d1 < d2 < d3")
        for name in ("lambda_bd_theta", "lambda_bd_r", "lambda_ln_theta", "lambda_ln_r",
                     "lambda_mode", "lambda_str1", "lambda_str2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def vote_config(self) -> VoteConfig:
        return VoteConfig(self.sigma)

    def interframe(self, track: str) -> tuple[float, float]:
        if track == "bd":
            return self.lambda_bd_theta, self.lambda_bd_r
        if track == "ln":
            return self.lambda_ln_theta, self.lambda_ln_r
        raise ValueError(f"unknown track {track!r}")

    def tree(self, track: str) -> TreeThresholds:
        return self.tree_bd if track == "bd" else self.tree_ln

    # -- flat ``name = value`` text form -------------------------------------

    def to_dict(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, TreeThresholds):
                for sub in fields(value):
                    out[f"{f.name}.{sub.name}"] = float(getattr(value, sub.name))
            elif isinstance(value, bool):
                out[f.name] = 1.0 if value else 0.0
            else:
                out[f.name] = float(value)
        return out

    def to_text(self) -> str:
        lines = [f"{k} = {_fmt17(v)}" for k, v in self.to_dict().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelParams":
        values: dict[str, float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                values[key] = float(value)
            except ValueError:
                raise ValueError(f"line {lineno}: {key}: not a number: {value!r}") from None
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "ModelParams":
        known = {f.name: f for f in fields(cls)}
        kwargs: dict = {}
        trees: dict[str, dict[str, float]] = {}
        for key, value in values.items():
            head, _, sub = key.partition(".")
            if head not in known:
                raise ValueError(f"unknown parameter {key!r}")
            if sub:
                trees.setdefault(head, {})[sub] = value
            elif head == "calibrate_gradient":
                kwargs[head] = bool(value)
            else:
                kwargs[head] = value
        for name, sub in trees.items():
            kwargs[name] = TreeThresholds(**sub)
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def with_updates(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def _fmt17(v: float) -> str:
    return format(v, ".17g")


@dataclass(frozen=True)
class CandidateSet:
    """The three per-frame candidates of one track and their vote weights.

    ``cells`` holds the grid index of each candidate; candidate identity is
    decided on cells, never on weights.
    """

    c1: LineHypothesis
    c2: LineHypothesis
    c3: LineHypothesis
    phi1: float
    phi2: float
    phi3: float
    cells: tuple[tuple[int, int], tuple[int, int], tuple[int, int]] | None = None

    @property
    def hypotheses(self) -> tuple[LineHypothesis, LineHypothesis, LineHypothesis]:
        return self.c1, self.c2, self.c3

    @property
    def phis(self) -> tuple[float, float, float]:
        return self.phi1, self.phi2, self.phi3

    def candidate(self, index: int) -> LineHypothesis:
        return self.hypotheses[index - 1]

    def index_of(self, h: LineHypothesis, cell: tuple[int, int] | None = None) -> list[int]:
        """1-based indices of candidates identical to ``h``."""
        if cell is not None and self.cells is not None:
            return [k + 1 for k, c in enumerate(self.cells) if c == cell]
        return [k + 1 for k, c in enumerate(self.hypotheses) if c == h]


# -- potentials --------------------------------------------------------------

def interframe_potential(prev: LineHypothesis, cur: LineHypothesis,
                         lambda_theta: float, lambda_r: float):
    if abs(cur.theta - prev.theta) < lambda_theta and abs(cur.r - prev.r) < lambda_r:
        return 0.0
    return HARD_VIOLATION


def d_min(r_ln, a: float, b: float, low: float = 10.0, high: float = 27.0):
    """Minimum border/lane separation as a clamped linear function of ``r_ln``."""
    return np.maximum(np.minimum(a * np.asarray(r_ln, dtype=float) + b, high), low)


def structure_ok(theta_bd, r_bd, theta_ln, r_ln, p: ModelParams):
    """Elementwise feasibility of the coupled structure constraint.

    Works on scalars and broadcastable arrays alike; the scalar potential
    and the grid mask used during back perturbation both route through
    here so they agree bit for bit.
    """
    dr = np.asarray(r_bd, dtype=float) - r_ln
    dtheta = np.abs(np.asarray(theta_bd, dtype=float) - theta_ln)
    above_min = dr >= d_min(r_ln, p.a, p.b, p.dmin_low, p.dmin_high)
    near = above_min & (p.d1 <= dr) & (dr < p.d2) & (dtheta <= p.lambda_str1)
    mid = above_min & (p.d2 <= dr) & (dr < p.d3) & (dtheta <= p.lambda_str2)
    far = dr >= p.d3
    return near | mid | far


def coupled_structure(h_bd: LineHypothesis, h_ln: LineHypothesis, p: ModelParams):
    ok = structure_ok(h_bd.theta, h_bd.r, h_ln.theta, h_ln.r, p)
    return 0.0 if bool(ok) else HARD_VIOLATION


def structure_mask(thetas: np.ndarray, rs: np.ndarray, h_ln: LineHypothesis,
                   p: ModelParams) -> np.ndarray:
    """Boolean ``(len(thetas), len(rs))`` mask of border cells feasible with ``h_ln``."""
    return structure_ok(thetas[:, None], rs[None, :], h_ln.theta, h_ln.r, p)


def tree_select(cands: CandidateSet, t: TreeThresholds) -> int:
    """Pick a candidate index from the vote weights.

    A large lead of the unconstrained candidate signals a sudden change; it
    is trusted when it has enough support, otherwise the gradient candidate
    takes over. Without such a lead the frame-constrained candidate is used
    unless it is too weak.
    """
    if cands.phi1 - cands.phi2 > t.root_gap:
        return 1 if cands.phi1 > t.left_abs else 3
    return 2 if cands.phi2 > t.right_abs else 3


def mode_selection_potential(selected: LineHypothesis, cands: CandidateSet,
                             tree_choice: int, lambda_mode: float,
                             selected_cell: tuple[int, int] | None = None):
    if tree_choice not in (1, 2, 3):
        raise ValueError("tree_choice must be 1, 2 or 3")
    matches = cands.index_of(selected, selected_cell)
    if tree_choice in matches:
        return 0.0
    if matches:
        return -lambda_mode
    return HARD_VIOLATION


__all__ = [
    "HARD_VIOLATION", "CandidateSet", "ModelParams", "TreeThresholds", "coupled_structure",
    "d_min", "interframe_potential", "mode_selection_potential", "potential_sum",
    "structure_mask", "structure_ok", "tree_select",
]

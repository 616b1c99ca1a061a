import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import first_max, vote_direct, vote_table
from structhough import kernels
from structhough.voting import (
    EmptyWindowError, HypothesisGrid, LineHypothesis, VoteConfig, VotingPoint, argmax_vote,
    argmax_vote_constrained, as_voters, flip_line, gradient_voters, line_residual, masked_argmax,
    to_road_frame, vote, vote_grid, window_slices,
)

CFG = VoteConfig()
SMALL = HypothesisGrid(80.0, 100.0, 0.5, 0.0, 60.0, 1.0)

voter_lists = st.lists(
    st.tuples(st.floats(0, 160), st.floats(0, 120), st.floats(0, 3)), min_size=0, max_size=30)


# -- line_residual -----------------------------------------------------------

def test_residual_on_horizontal_line():
    assert line_residual(LineHypothesis(math.pi / 2, 10), 3, 10) == pytest.approx(0.0, abs=1e-12)


def test_residual_equals_vertical_offset():
    assert line_residual(LineHypothesis(math.pi / 2, 10), 3, 15) == pytest.approx(5.0)


def test_residual_diagonal():
    assert line_residual(LineHypothesis(math.pi / 4, 0), 1, 1) == pytest.approx(math.sqrt(2))


@given(st.floats(-10, 10), st.floats(-200, 200))
def test_normalized_theta_in_half_open_range(theta, r):
    h = LineHypothesis.normalized(theta, r)
    assert 0.0 <= h.theta < math.pi
    assert math.sin(h.theta) >= -1e-15
    # same zero set: a point on the input line stays on the output line
    x = 3.0
    if abs(math.sin(theta)) > 1e-3:
        y = (r - math.cos(theta) * x) / math.sin(theta)
        assert line_residual(h, x, y) == pytest.approx(0.0, abs=1e-6 * max(1.0, abs(y)))


def test_from_degrees_round_trips_grid_angles(grid):
    for k in range(grid.n_theta):
        h = grid.hypothesis((k, 0))
        assert LineHypothesis.from_degrees(h.theta_deg, h.r) == h


# -- vote --------------------------------------------------------------------

def test_vote_single_voter_on_line():
    assert vote(LineHypothesis(math.pi / 2, 40), [VotingPoint(5, 40, 1)]) == pytest.approx(1.0)


def test_vote_at_residual_sigma():
    v = vote(LineHypothesis(math.pi / 2, 40), [VotingPoint(5, 45, 2)], VoteConfig(5))
    assert v == pytest.approx(2 * math.exp(-0.5))
    assert v == pytest.approx(1.21306, abs=1e-5)


def test_vote_additive():
    assert vote(LineHypothesis(math.pi / 2, 40), [(1, 40, 1), (9, 40, 1)]) == pytest.approx(2.0)


def test_vote_empty():
    assert vote(LineHypothesis(1.0, 3.0), []) == 0.0


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        VoteConfig(0.0)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        as_voters([(1, 2, -1)])


@given(voter_lists, st.floats(60, 120), st.floats(0, 120))
def test_vote_matches_direct_formula(voters, theta_deg, r):
    h = LineHypothesis.from_degrees(theta_deg, r)
    assert vote(h, voters) == pytest.approx(vote_direct(h.theta, h.r, voters), rel=1e-12, abs=1e-300)


@given(voter_lists, st.tuples(st.floats(0, 160), st.floats(0, 120), st.floats(0, 3)))
def test_adding_a_voter_never_decreases_votes(voters, extra):
    before = vote_grid(voters, SMALL)
    after = vote_grid(voters + [extra], SMALL)
    assert np.all(after >= before - 1e-12 * np.maximum(1.0, before))


@given(voter_lists.filter(lambda v: sum(w for _, _, w in v) > 0), st.floats(0.1, 10))
def test_weight_scaling(voters, c):
    a = vote_grid(voters, SMALL)
    scaled = [(x, y, c * w) for x, y, w in voters]
    b = vote_grid(scaled, SMALL)
    np.testing.assert_allclose(b, c * a, rtol=1e-9, atol=1e-300)
    # the argmax cell survives unless the scaled maximum is a near tie
    cell_a, _ = masked_argmax(a)
    cell_b, wb = masked_argmax(b)
    if cell_a != cell_b:
        assert b[cell_a] == pytest.approx(wb, rel=1e-9)


# -- argmax_vote -------------------------------------------------------------

def test_argmax_three_voters_on_row():
    g = HypothesisGrid(60, 120, 0.5, 0, 120, 1)
    h, w = argmax_vote([(10, 40, 1), (50, 40, 1), (90, 40, 1)], g)
    assert h.theta == pytest.approx(math.pi / 2)
    assert h.r == 40.0
    assert w == pytest.approx(3.0)
    table = vote_table(g.thetas, g.rs, [(10, 40, 1), (50, 40, 1), (90, 40, 1)])
    assert first_max(table)[0] == g.cell_of(h)


def test_argmax_empty_is_first_cell(grid):
    h, w = argmax_vote([], grid)
    assert w == 0.0
    assert h == grid.hypothesis((0, 0))


def test_argmax_single_voter():
    g = SMALL
    h, w = argmax_vote([(20.0, 30.3, 1.0)], g)
    assert w == pytest.approx(1.0, abs=1e-2)
    assert abs(line_residual(h, 20.0, 30.3)) <= g.r_step / 2 + 1e-9
    table = vote_table(g.thetas, g.rs, [(20.0, 30.3, 1.0)])
    assert first_max(table)[0] == g.cell_of(h)


@given(voter_lists)
def test_argmax_matches_exhaustive_oracle(voters):
    table = vote_table(SMALL.thetas, SMALL.rs, voters)
    cell, best = first_max(table)
    h, w = argmax_vote(voters, SMALL)
    got = SMALL.cell_of(h)
    assert w == pytest.approx(best, rel=1e-9, abs=1e-300)
    if got != cell:
        # only acceptable on an exact tie up to rounding
        assert table[got] == pytest.approx(best, rel=1e-9)


def test_tie_break_prefers_small_theta_then_small_r():
    acc = np.zeros((3, 4))
    acc[1, 2] = acc[1, 3] = acc[2, 0] = 5.0
    assert masked_argmax(acc)[0] == (1, 2)


def test_masked_argmax_respects_mask():
    acc = np.arange(12.0).reshape(3, 4)
    mask = np.zeros_like(acc, dtype=bool)
    mask[0, 1] = mask[1, 1] = True
    assert masked_argmax(acc, mask) == ((1, 1), 5.0)
    with pytest.raises(EmptyWindowError):
        masked_argmax(acc, np.zeros_like(mask))


@given(voter_lists, st.integers(-10, 10))
def test_vertical_shift_moves_r_of_horizontal_optimum(voters, dy):
    # voters spread on a horizontal line; shift them and the r range together
    xs = np.linspace(5, 150, 12)
    base = [(x, 40.0, 1.0) for x in xs]
    g0 = HypothesisGrid(80, 100, 0.5, 0, 80, 1)
    g1 = HypothesisGrid(80, 100, 0.5, dy, 80 + dy, 1)
    h0, _ = argmax_vote(base, g0)
    h1, _ = argmax_vote([(x, y + dy, w) for x, y, w in base], g1)
    assert h1.theta == h0.theta
    assert h1.r == pytest.approx(h0.r + math.sin(h0.theta) * dy)


# -- constrained search ------------------------------------------------------

def test_constrained_on_target():
    g = HypothesisGrid(60, 120, 0.5, 0, 120, 1)
    v = [(x, 40, 1) for x in range(0, 160, 10)]
    h, _ = argmax_vote_constrained(v, g, CFG, LineHypothesis(math.pi / 2, 40), 0.1, 5)
    assert h == LineHypothesis(math.pi / 2, 40.0)


def test_constrained_window_pins_result():
    g = HypothesisGrid(60, 120, 0.5, 0, 120, 1)
    v = [(x, 60, 1) for x in range(0, 160, 10)]
    center = LineHypothesis(math.pi / 2, 40)
    h, w = argmax_vote_constrained(v, g, CFG, center, 0.1, 5)
    _, w_free = argmax_vote(v, g)
    assert 35 < h.r < 45
    assert w < w_free
    # brute force within the window
    table = vote_table(g.thetas, g.rs, v)
    mask = (np.abs(g.thetas - center.theta)[:, None] < 0.1) & (np.abs(g.rs - 40)[None, :] < 5)
    cell, best = first_max(table, mask)
    assert g.cell_of(h) == cell
    assert w == pytest.approx(best, rel=1e-9)


def test_constrained_zero_lambda_is_empty():
    with pytest.raises(EmptyWindowError):
        argmax_vote_constrained([(1, 1, 1)], SMALL, CFG, LineHypothesis(math.pi / 2, 40), 0.1, 0.0)


def test_window_is_strict():
    center = SMALL.hypothesis((10, 20))
    ti, rj = window_slices(SMALL, center, 0.99 * SMALL.theta_step, 1.0)
    assert (ti.start, ti.stop) == (10, 11)
    assert (rj.start, rj.stop) == (20, 21)


@given(voter_lists, st.integers(0, 40), st.integers(0, 60), st.floats(0.01, 0.3), st.floats(0.5, 20))
def test_constrained_never_beats_unconstrained(voters, i, j, lt, lr):
    center = SMALL.hypothesis((i, j))
    _, w_c = argmax_vote_constrained(voters, SMALL, CFG, center, lt, lr)
    _, w_u = argmax_vote(voters, SMALL)
    assert w_c <= w_u * (1 + 1e-12) + 1e-300


# -- gradient voters ---------------------------------------------------------

def test_constant_image_has_no_gradient_voters():
    assert len(gradient_voters(np.full((10, 12), 0.4))) == 0


def test_step_edge_voters_on_adjacent_rows():
    img = np.zeros((20, 15))
    img[8:] = 1.0  # step between rows 7 and 8
    v = gradient_voters(img)
    assert set(v[:, 1].astype(int)) == {7, 8}
    assert np.allclose(v[:, 2], 0.5)


def test_ramp_threshold_zero_gives_every_interior_pixel():
    img = np.tile(np.arange(10.0)[:, None], (1, 7))
    v = gradient_voters(img, 0.0)
    assert len(v) == 8 * 7
    assert np.allclose(v[:, 2], 1.0)


def test_gradient_voters_reject_empty_image():
    with pytest.raises(ValueError):
        gradient_voters(np.zeros((0, 3)))


# -- coordinates -------------------------------------------------------------

@given(st.floats(1, 179), st.floats(-100, 200), st.floats(0, 160))
def test_flip_line_maps_points(theta_deg, r, x):
    h = LineHypothesis.from_degrees(theta_deg, r)
    f = flip_line(h, 120.0)
    y = float(h.y_at(x))
    if abs(y) < 1e6:
        assert line_residual(f, x, 120.0 - y) == pytest.approx(0.0, abs=1e-7 * max(1, abs(y)))
    assert flip_line(f, 120.0) == pytest.approx(h)


def test_road_frame_flip_is_involution():
    v = np.array([[1.0, 2.0, 3.0], [4.0, 119.0, 1.0]])
    np.testing.assert_array_equal(to_road_frame(to_road_frame(v, 120), 120), v)
    assert to_road_frame(v, 120)[0, 1] == 118.0


# -- grid --------------------------------------------------------------------

def test_default_grid_shape(grid):
    assert grid.shape == (121, 121)
    assert grid.thetas[0] == pytest.approx(math.radians(60))
    assert grid.thetas[-1] == pytest.approx(math.radians(120))


def test_grid_validation():
    with pytest.raises(ValueError):
        HypothesisGrid(theta_step_deg=0)
    with pytest.raises(ValueError):
        HypothesisGrid(r_min=10, r_max=0)


# -- backends ----------------------------------------------------------------

@pytest.mark.parametrize("backend", kernels.available_backends())
@given(voters=voter_lists)
def test_backends_match_direct_table(backend, voters):
    with kernels.use_backend(backend):
        acc = vote_grid(voters, SMALL)
    np.testing.assert_allclose(acc, vote_table(SMALL.thetas, SMALL.rs, voters), rtol=1e-9,
                               atol=1e-12)

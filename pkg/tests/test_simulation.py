import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from structhough.fileio import quantize, read_pgm, read_voters, write_pgm
from structhough.learning import GroundTruthFrame, read_ground_truth
from structhough.potentials import ModelParams, coupled_structure
from structhough.rng import SplitMix64, derive_seed, mix64
from structhough.simulation import (
    Dropout, Jump, OutlierBurst, SceneScript, ScriptError, clean_script, default_script,
    detector_voters, dropout_outlier_script, dump_script, entrance_script, generate,
    parse_script, render_frame, stress_script, training_script, truth_lines,
)
from structhough.voting import HypothesisGrid, LineHypothesis, argmax_vote, gradient_voters


# -- random numbers ----------------------------------------------------------

def test_splitmix_reference_output():
    assert int(SplitMix64(0).next_u64(1)[0]) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(1, 50))
def test_vector_and_scalar_streams_agree(seed, n):
    g = SplitMix64(seed)
    got = [int(v) for v in g.next_u64(n)]
    want = [mix64(seed + k * 0x9E3779B97F4A7C15) for k in range(1, n + 1)]
    assert got == want
    assert g.state == (seed + n * 0x9E3779B97F4A7C15) % 2**64


def test_split_calls_continue_the_stream():
    a = SplitMix64(42)
    b = SplitMix64(42)
    np.testing.assert_array_equal(np.concatenate([a.next_u64(3), a.next_u64(4)]), b.next_u64(7))


def test_distributions():
    g = SplitMix64(7)
    u = g.uniform(100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    z = g.normal(100_000)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02
    t = g.truncated_normal(10_000, 2.0)
    assert len(t) == 10_000 and np.abs(t).max() <= 6.0
    k = g.integers(10_000, 3)
    assert set(np.unique(k)) == {0, 1, 2}


def test_derived_seeds_differ():
    seeds = {derive_seed(1, f, s) for f in range(1, 50) for s in range(1, 6)}
    assert len(seeds) == 49 * 5
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)


# -- scripts -----------------------------------------------------------------

def test_default_script():
    s = default_script()
    assert (s.frames, s.width, s.height, s.render) == (200, 160, 120, True)
    assert Jump(140, "bd", 30.0) in s.events
    assert Dropout("bd", 40, 52) in s.events


@pytest.mark.parametrize("script", [default_script(), stress_script(3), dropout_outlier_script(2),
                                    training_script(), entrance_script()])
def test_script_text_round_trip(script):
    assert parse_script(dump_script(script)) == script


@pytest.mark.parametrize("text,lineno", [
    ("[scene]\nframes = ten\n", 2),
    ("[scene]\nframes = 10\n\n[bd]\nbogus = 1\n", 5),
    ("frames = 10\n", 1),
    ("[scene]\nframes = 10\n[event e]\ntype = jump\nframe = 11\ntrack = bd\ndr = 3\n", 3),
    ("[scene]\nframes = 10\n[event e]\ntype = teleport\n", 3),
    ("[voters]\njitter = 1\noutlier_rate = 1.5\n", 3),
    ("[scene]\nframes = 10\n[event e]\ntype = burst\nstart = 1\nend = 2\nrate = 0.5\n"
     "region = 1 2 3\n", 8),
    ("[scene]\nframes = 3\nframes = 4\n", 3),
])
def test_script_errors_have_line_numbers(text, lineno):
    with pytest.raises(ScriptError) as exc:
        parse_script(text)
    assert exc.value.lineno == lineno
    assert str(exc.value).startswith(f"line {lineno}:")


def test_with_frames_trims_events():
    s = default_script().with_frames(45)
    assert s.frames == 45
    assert Dropout("bd", 40, 45) in s.events
    assert all(not isinstance(e, Jump) for e in s.events)


def test_invalid_scripts_rejected():
    with pytest.raises(ScriptError):
        SceneScript(frames=0)
    with pytest.raises(ScriptError):
        SceneScript(frames=10, events=(Dropout("bd", 5, 3),))
    with pytest.raises(ScriptError):
        SceneScript(frames=10, events=(OutlierBurst(1, 2, 1.2),))


# -- truth and voters --------------------------------------------------------

@settings(max_examples=10)
@given(st.integers(0, 2**32))
def test_truth_within_image_and_structured(seed):
    s = clean_script(frames=100)
    truth = truth_lines(s, seed)
    assert [g.frame for g in truth] == list(range(1, 101))
    for g in truth:
        for h in (g.bd, g.ln):
            assert 61 <= h.theta_deg <= 119 and 1 <= h.r <= s.height - 1
        assert coupled_structure(g.bd, g.ln, ModelParams()) == 0.0


def test_jump_moves_border():
    s = entrance_script(frames=40, jump_frame=20, dr=30.0, drift_r=0.0, drift_theta_deg=0.0)
    t = truth_lines(s, 1)
    assert t[19].bd.r - t[18].bd.r == 30.0
    assert t[19].ln == t[18].ln


def test_dropout_empties_track():
    s = SceneScript(frames=10, events=(Dropout("ln", 3, 5),))
    seq = generate(s, 2)
    assert [len(o.ln_voters) == 0 for o in seq.observations] == [False, False, True, True, True,
                                                                 False, False, False, False, False]
    assert all(len(o.bd_voters) > 0 for o in seq.observations)


def test_outlier_counts():
    line = LineHypothesis.from_degrees(90, 50)
    s = SceneScript(frames=3, density_bd=80, outlier_rate=0.2)
    assert len(detector_voters(s, 1, 1, "bd", line)) == 80 + 20
    s = SceneScript(frames=3, outlier_rate=0.0,
                    events=(OutlierBurst(2, 2, 0.6, (0, 10, 160, 14), "bd"),))
    v = detector_voters(s, 1, 2, "bd", line)
    assert len(v) == 80 + 120
    burst = v[80:]
    assert np.all((burst[:, 1] >= 10) & (burst[:, 1] < 14))
    assert len(detector_voters(s, 1, 1, "bd", line)) == 80


def test_clean_voters_hug_truth():
    seq = generate(clean_script(frames=3), 5)
    for o, g in zip(seq.observations, seq.truth):
        for v, h in ((o.bd_voters, g.bd), (o.ln_voters, g.ln)):
            res = math.sin(h.theta) * v[:, 1] + math.cos(h.theta) * v[:, 0] - h.r
            assert np.abs(res).max() <= 3.0 + 1e-9


def test_generation_is_deterministic(tmp_path):
    s = default_script().with_frames(6)
    a, b = generate(s, 11), generate(s, 11)
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    for key in ("voters", "truth"):
        assert pa[key].read_bytes() == pb[key].read_bytes()
    for fa, fb in zip(sorted(pa["frames"].iterdir()), sorted(pb["frames"].iterdir())):
        assert fa.read_bytes() == fb.read_bytes()
    assert generate(s, 12).observations[0].bd_voters.tolist() != a.observations[0].bd_voters.tolist()


def test_written_sequence_reads_back(tmp_path):
    seq = generate(default_script().with_frames(4), 3)
    paths = seq.write(tmp_path)
    vf = read_voters(paths["voters"])
    assert (vf.width, vf.height, len(vf.observations)) == (160, 120, 4)
    for o, r in zip(seq.observations, vf.observations):
        for name in ("bd_voters", "ln_voters", "grad_voters"):
            np.testing.assert_array_equal(getattr(o, name), getattr(r, name))
    gt = read_ground_truth(paths["truth"])
    assert [(g.bd, g.ln) for g in gt] == [(g.bd, g.ln) for g in seq.truth]
    np.testing.assert_array_equal(read_pgm(paths["frames"] / "frame_0002.pgm"), seq.images[1])


# -- rendering ---------------------------------------------------------------

def _truth(bd=(91.0, 78.0), ln=(90.0, 32.0)):
    return GroundTruthFrame(1, LineHypothesis.from_degrees(*bd), LineHypothesis.from_degrees(*ln))


def _line_dist(v, h):
    return np.abs(math.sin(h.theta) * v[:, 1] + math.cos(h.theta) * v[:, 0] - h.r)


@pytest.mark.parametrize("bd,ln", [((91.0, 78.0), (90.0, 32.0)), ((88.0, 60.0), (93.5, 20.0)),
                                   ((90.0, 100.0), (90.0, 50.0))])
def test_noise_free_gradient_voters_hug_lines(bd, ln):
    g = _truth(bd, ln)
    v = gradient_voters(render_frame(g, 160, 120), 0.05)
    v[:, 1] = 120 - v[:, 1]
    near = np.minimum(_line_dist(v, g.bd), _line_dist(v, g.ln))
    assert len(v) > 0 and near.max() <= 2.0
    # both lines collect votes
    assert (_line_dist(v, g.bd) <= 2.0).sum() >= 160 and (_line_dist(v, g.ln) <= 2.0).sum() >= 160


def test_noise_increases_off_line_gradient_voters():
    g = _truth()

    def off_line(noise):
        counts = []
        for seed in range(5):
            img = quantize(render_frame(g, 160, 120, noise, SplitMix64(seed)))
            v = gradient_voters(img, 0.05)
            v[:, 1] = 120 - v[:, 1]
            counts.append(np.sum(np.minimum(_line_dist(v, g.bd), _line_dist(v, g.ln)) > 2.0))
        return np.mean(counts)

    counts = [off_line(s) for s in (0.0, 0.02, 0.05, 0.1)]
    assert counts[0] == 0
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_render_regions():
    img = render_frame(_truth((90.0, 80.0), (90.0, 30.0)), 20, 120)
    assert img[10, 5] == 0.8        # above the border (road y = 110)
    assert img[60, 5] == 0.3        # shoulder (y = 60)
    assert img[90, 5] == 0.9        # stripe (y = 30)
    assert img[110, 5] == 0.45      # road (y = 10)


def test_noise_increases_deviation():
    g = _truth()
    clean = render_frame(g, 160, 120)
    devs = [np.abs(render_frame(g, 160, 120, s, SplitMix64(3)) - clean).mean()
            for s in (0.01, 0.05, 0.2)]
    assert devs[0] < devs[1] < devs[2]
    with pytest.raises(ValueError):
        render_frame(g, 10, 10, 0.1)


# -- PGM ---------------------------------------------------------------------

@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32))
def test_pgm_round_trip_is_exact_after_quantization(tmp_path_factory, h, w, seed):
    img = quantize(np.random.default_rng(seed).uniform(size=(h, w)))
    p = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(p, img)
    np.testing.assert_array_equal(read_pgm(p), img)


def test_pgm_with_comment_and_16_bit(tmp_path):
    data = np.array([[0, 1000], [65535, 7]], dtype=">u2")
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + data.tobytes())
    np.testing.assert_allclose(read_pgm(p), data / 65535.0)


def test_pgm_errors(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    (tmp_path / "b.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    for name in ("a.pgm", "b.pgm"):
        with pytest.raises(ValueError):
            read_pgm(tmp_path / name)

"""Synthetic road scenes with scripted adversities.

A scene is a border line and a lane-marking line drifting slowly over
time. Each frame yields detector voters sampled around the true lines,
uniform outliers, gradient voters, and optionally a rendered grayscale
image. Scripts add sudden jumps (entrances, exits), detector dropouts and
bursts of fake detections.

All randomness comes from :mod:`structhough.rng`, seeded per frame and per
stream, so a ``(script, seed)`` pair fully determines the output.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .fileio import quantize, write_pgm, write_voters
from .inference import FrameObservation
from .learning import GroundTruthFrame, write_ground_truth
from .rng import SplitMix64, derive_seed
from .voting import LineHypothesis, gradient_voters, to_road_frame

TRACKS = ("bd", "ln")

# stream identifiers for seed splitting
_S_TRUTH, _S_BD, _S_LN, _S_GRAD, _S_RENDER = 1, 2, 3, 4, 5

# rendered intensities
SKY, SHOULDER, ROAD, STRIPE = 0.8, 0.3, 0.45, 0.9
STRIPE_HALF_WIDTH = 1.0


class ScriptError(ValueError):
    """Invalid scene script; ``lineno`` points into the source text when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


@dataclass(frozen=True)
class Jump:
    frame: int
    track: str
    dr: float
    dtheta_deg: float = 0.0


@dataclass(frozen=True)
class Dropout:
    track: str
    start: int
    end: int  # inclusive

    def active(self, frame: int) -> bool:
        return self.start <= frame <= self.end


@dataclass(frozen=True)
class OutlierBurst:
    start: int
    end: int  # inclusive
    rate: float
    region: tuple[float, float, float, float] | None = None  # x0, y0, x1, y1 (road frame)
    track: str = "both"

    def active(self, frame: int, track: str) -> bool:
        return self.start <= frame <= self.end and self.track in (track, "both")


@dataclass(frozen=True)
class SceneScript:
    frames: int = 200
    width: int = 160
    height: int = 120
    bd_theta_deg: float = 91.0
    bd_r: float = 78.0
    ln_theta_deg: float = 90.0
    ln_r: float = 32.0
    drift_theta_deg: float = 0.25
    drift_r: float = 0.6
    reversion: float = 0.1
    density_bd: int = 80
    density_ln: int = 70
    jitter: float = 1.0
    outlier_rate: float = 0.2
    grad_jitter: float = 2.0
    grad_clutter: int = 40
    render: bool = False
    noise: float = 0.02
    grad_threshold: float = 0.05
    snap_theta_deg: float = 0.5
    snap_r: float = 1.0
    events: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        self.validate()

    def validate(self) -> None:
        if self.frames < 1:
            raise ScriptError("frames must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ScriptError("image size must be positive")
        for name in ("density_bd", "density_ln", "grad_clutter", "jitter", "grad_jitter",
                     "noise", "drift_theta_deg", "drift_r", "grad_threshold"):
            if getattr(self, name) < 0:
                raise ScriptError(f"{name} must be >= 0")
        if not 0.0 <= self.reversion <= 1.0:
            raise ScriptError("reversion must lie in [0, 1]")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ScriptError("outlier_rate must lie in [0, 1]")
        if self.snap_theta_deg < 0 or self.snap_r < 0:
            raise ScriptError("snap steps must be >= 0")
        for ev in self.events:
            _validate_event(ev, self.frames)

    def density(self, track: str) -> int:
        return self.density_bd if track == "bd" else self.density_ln

    def initial(self, track: str) -> tuple[float, float]:
        if track == "bd":
            return self.bd_theta_deg, self.bd_r
        return self.ln_theta_deg, self.ln_r

    def with_updates(self, **changes) -> "SceneScript":
        return replace(self, **changes)

    def with_frames(self, frames: int) -> "SceneScript":
        """Shorter or longer script; events past the end are dropped or clipped."""
        events = []
        for ev in self.events:
            if isinstance(ev, Jump):
                if ev.frame <= frames:
                    events.append(ev)
            elif ev.start <= frames:
                events.append(replace(ev, end=min(ev.end, frames)))
        return replace(self, frames=frames, events=tuple(events))

    # -- text form -----------------------------------------------------------

    def to_text(self) -> str:
        return dump_script(self)

    @classmethod
    def from_text(cls, text: str) -> "SceneScript":
        return parse_script(text)

    @classmethod
    def load(cls, path) -> "SceneScript":
        return parse_script(Path(path).read_text(encoding="utf-8"))


def _validate_event(ev, frames: int) -> None:
    def in_range(f):
        if not 1 <= f <= frames:
            raise ScriptError(f"event frame {f} outside 1..{frames}")

    if isinstance(ev, Jump):
        in_range(ev.frame)
        if ev.track not in TRACKS:
            raise ScriptError(f"unknown track {ev.track!r}")
    elif isinstance(ev, Dropout):
        in_range(ev.start)
        in_range(ev.end)
        if ev.end < ev.start or ev.track not in TRACKS:
            raise ScriptError("dropout needs start <= end and a known track")
    elif isinstance(ev, OutlierBurst):
        in_range(ev.start)
        in_range(ev.end)
        if ev.end < ev.start:
            raise ScriptError("burst needs start <= end")
        if not 0.0 <= ev.rate <= 1.0:
            raise ScriptError("burst rate must lie in [0, 1]")
        if ev.track not in TRACKS + ("both",):
            raise ScriptError(f"unknown track {ev.track!r}")
        if ev.region is not None and (ev.region[2] < ev.region[0] or ev.region[3] < ev.region[1]):
            raise ScriptError("burst region must have x0 <= x1 and y0 <= y1")
    else:
        raise ScriptError(f"unknown event {ev!r}")


# -- script files ------------------------------------------------------------

_SCALARS = {
    # (section, key) -> field
    ("scene", "frames"): "frames", ("scene", "width"): "width", ("scene", "height"): "height",
    ("scene", "render"): "render", ("scene", "noise"): "noise",
    ("scene", "grad_threshold"): "grad_threshold",
    ("scene", "snap_theta"): "snap_theta_deg", ("scene", "snap_r"): "snap_r",
    ("bd", "theta"): "bd_theta_deg", ("bd", "r"): "bd_r", ("bd", "density"): "density_bd",
    ("ln", "theta"): "ln_theta_deg", ("ln", "r"): "ln_r", ("ln", "density"): "density_ln",
    ("drift", "theta"): "drift_theta_deg", ("drift", "r"): "drift_r",
    ("drift", "reversion"): "reversion",
    ("voters", "jitter"): "jitter", ("voters", "outlier_rate"): "outlier_rate",
    ("voters", "grad_jitter"): "grad_jitter", ("voters", "grad_clutter"): "grad_clutter",
}
_FIELD_TYPES = {f.name: f.type for f in fields(SceneScript)}
_EVENT_KEYS = {
    "jump": {"frame", "track", "dr", "dtheta"},
    "dropout": {"track", "start", "end"},
    "burst": {"start", "end", "rate", "region", "track"},
}


def _find_line(text: str, section: str, key: str | None = None) -> int | None:
    lines = text.splitlines()
    in_sec = False
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            in_sec = m.group(1).strip() == section
            if in_sec and key is None:
                return i
            continue
        if in_sec and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def parse_script(text: str) -> SceneScript:
    """Parse an INI-style scene script; errors carry the offending line number."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ScriptError("missing section header", exc.lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ScriptError(exc.message.split(":", 1)[-1].strip(), exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ScriptError("malformed line", lineno) from None

    kwargs: dict = {}
    event_sections = []
    for section in cp.sections():
        if section.startswith("event"):
            event_sections.append(section)
            continue
        known = {k for (s, k) in _SCALARS if s == section}
        if not known:
            raise ScriptError(f"unknown section [{section}]", _find_line(text, section))
        for key, raw in cp[section].items():
            if key not in known:
                raise ScriptError(f"[{section}] unknown key {key!r}", _find_line(text, section, key))
            name = _SCALARS[(section, key)]
            kwargs[name] = _convert(raw, _FIELD_TYPES[name], text, section, key)
    frames = kwargs.get("frames", SceneScript.frames)
    events = tuple(_parse_event(cp[s], s, text, frames) for s in event_sections)
    try:
        return SceneScript(**kwargs, events=events)
    except ScriptError as exc:
        name = str(exc).split()[0]
        where = [k for k, v in _SCALARS.items() if v == name]
        raise ScriptError(str(exc), _find_line(text, *where[0]) if where else None) from None


def _convert(raw: str, typ, text, section, key):
    where = _find_line(text, section, key)
    try:
        if typ in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ScriptError(f"[{section}] {key}: bad value {raw!r}", where) from None


def _parse_event(sec, section: str, text: str, frames: int):
    kind = sec.get("type")
    line = _find_line(text, section)
    if kind not in _EVENT_KEYS:
        raise ScriptError(f"[{section}] type must be one of {sorted(_EVENT_KEYS)}", line)
    extra = set(sec.keys()) - _EVENT_KEYS[kind] - {"type"}
    if extra:
        key = sorted(extra)[0]
        raise ScriptError(f"[{section}] unknown key {key!r}", _find_line(text, section, key))

    def get(key, conv, default=None):
        if key not in sec:
            if default is not None:
                return default
            raise ScriptError(f"[{section}] missing key {key!r}", line)
        try:
            return conv(sec[key])
        except ValueError:
            raise ScriptError(f"[{section}] {key}: bad value {sec[key]!r}",
                              _find_line(text, section, key)) from None

    try:
        if kind == "jump":
            ev = Jump(get("frame", int), get("track", str), get("dr", float),
                      get("dtheta", float, 0.0))
        elif kind == "dropout":
            ev = Dropout(get("track", str), get("start", int), get("end", int))
        else:
            region = None
            if "region" in sec:
                region = tuple(get("region", lambda s: [float(v) for v in s.split()]))
                if len(region) != 4:
                    raise ScriptError(f"[{section}] region needs 4 numbers",
                                      _find_line(text, section, "region"))
            ev = OutlierBurst(get("start", int), get("end", int), get("rate", float), region,
                              get("track", str, "both"))
        _validate_event(ev, frames)
    except ScriptError as exc:
        if exc.lineno is None:
            raise ScriptError(f"[{section}] {exc}", line) from None
        raise
    return ev


def dump_script(s: SceneScript) -> str:
    by_section: dict[str, list[str]] = {}
    for (section, key), name in _SCALARS.items():
        v = getattr(s, name)
        if isinstance(v, bool):
            txt = "true" if v else "false"
        elif isinstance(v, int):
            txt = str(v)
        else:
            txt = repr(float(v))
        by_section.setdefault(section, []).append(f"{key} = {txt}")
    out = []
    for section, lines in by_section.items():
        out += [f"[{section}]", *lines, ""]
    for k, ev in enumerate(s.events, 1):
        out.append(f"[event {k}]")
        if isinstance(ev, Jump):
            out += ["type = jump", f"frame = {ev.frame}", f"track = {ev.track}",
                    f"dr = {ev.dr!r}", f"dtheta = {ev.dtheta_deg!r}"]
        elif isinstance(ev, Dropout):
            out += ["type = dropout", f"track = {ev.track}", f"start = {ev.start}",
                    f"end = {ev.end}"]
        else:
            out += ["type = burst", f"start = {ev.start}", f"end = {ev.end}",
                    f"rate = {ev.rate!r}", f"track = {ev.track}"]
            if ev.region is not None:
                out.append("region = " + " ".join(repr(float(v)) for v in ev.region))
        out.append("")
    return "\n".join(out)


def default_script() -> SceneScript:
    text = resources.files("structhough").joinpath("data/default.ini").read_text(encoding="utf-8")
    return parse_script(text)


# -- generation --------------------------------------------------------------

@dataclass
class SyntheticSequence:
    script: SceneScript
    seed: int
    observations: list[FrameObservation]
    truth: list[GroundTruthFrame]
    images: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.observations)

    def write(self, out_dir, pgm: bool = True) -> dict[str, Path]:
        """Write ``voters.txt``, ``truth.txt`` and (if rendered) ``frames/*.pgm``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"voters": out / "voters.txt", "truth": out / "truth.txt"}
        write_voters(self.observations, paths["voters"], self.script.width, self.script.height)
        write_ground_truth(self.truth, paths["truth"])
        if pgm and self.images is not None:
            frames = out / "frames"
            frames.mkdir(exist_ok=True)
            for k, img in enumerate(self.images, 1):
                write_pgm(frames / f"frame_{k:04d}.pgm", img)
            paths["frames"] = frames
        return paths


def _snap(v: float, step: float) -> float:
    return float(round(v / step) * step) if step > 0 else float(v)


def truth_lines(script: SceneScript, seed: int) -> list[GroundTruthFrame]:
    """Drifting, jumping truth lines, snapped to the grid resolution."""
    jumps = [e for e in script.events if isinstance(e, Jump)]
    base = {t: list(script.initial(t)) for t in TRACKS}
    off = {t: [0.0, 0.0] for t in TRACKS}
    keep = 1.0 - script.reversion
    lo_t, hi_t = 61.0, 119.0
    out = []
    for f in range(1, script.frames + 1):
        if f > 1:
            rng = SplitMix64(derive_seed(seed, f, _S_TRUTH))
            z = rng.normal(4)
            for k, t in enumerate(TRACKS):
                off[t][0] = keep * off[t][0] + script.drift_theta_deg * z[2 * k]
                off[t][1] = keep * off[t][1] + script.drift_r * z[2 * k + 1]
        for j in jumps:
            if j.frame == f:
                base[j.track][0] += j.dtheta_deg
                base[j.track][1] += j.dr
        lines = {}
        for t in TRACKS:
            th = min(max(base[t][0] + off[t][0], lo_t), hi_t)
            r = min(max(base[t][1] + off[t][1], 1.0), script.height - 1.0)
            lines[t] = LineHypothesis.from_degrees(_snap(th, script.snap_theta_deg),
                                                   _snap(r, script.snap_r))
        out.append(GroundTruthFrame(f, lines["bd"], lines["ln"]))
    return out


def _on_line(rng: SplitMix64, h: LineHypothesis, x: np.ndarray, jitter: float) -> np.ndarray:
    """Points at abscissae ``x`` on ``h``, displaced along the normal."""
    y = h.y_at(x)
    eps = rng.truncated_normal(len(x), jitter) if jitter > 0 else np.zeros(len(x))
    return np.column_stack([x + eps * math.cos(h.theta), y + eps * math.sin(h.theta)])


def _n_outliers(rate: float, n: int) -> int:
    if rate >= 1.0:
        return n
    return int(round(n * rate / (1.0 - rate)))


def _uniform_points(rng: SplitMix64, n: int, region) -> np.ndarray:
    x0, y0, x1, y1 = region
    return np.column_stack([rng.uniform(n, x0, x1), rng.uniform(n, y0, y1)])


def detector_voters(script: SceneScript, seed: int, frame: int, track: str,
                    line: LineHypothesis) -> np.ndarray:
    """Type-1 voters of one track: samples on the line plus outliers."""
    if any(isinstance(e, Dropout) and e.track == track and e.active(frame)
           for e in script.events):
        return np.zeros((0, 3))
    rng = SplitMix64(derive_seed(seed, frame, _S_BD if track == "bd" else _S_LN))
    n = script.density(track)
    full = (0.0, 0.0, float(script.width), float(script.height))
    bursts = [e for e in script.events
              if isinstance(e, OutlierBurst) and e.active(frame, track)]
    n_true = 0 if any(b.rate >= 1.0 for b in bursts) else n
    pts = [_on_line(rng, line, rng.uniform(n_true, 0.0, script.width), script.jitter)]
    pts.append(_uniform_points(rng, _n_outliers(script.outlier_rate, n_true), full))
    for b in bursts:
        pts.append(_uniform_points(rng, _n_outliers(b.rate, n), b.region or full))
    xy = np.concatenate(pts)
    return np.column_stack([xy, np.ones(len(xy))])


def synthetic_gradient_voters(script: SceneScript, seed: int, frame: int,
                              truth: GroundTruthFrame) -> np.ndarray:
    """Gradient voters without rendering: one per column per line plus clutter."""
    rng = SplitMix64(derive_seed(seed, frame, _S_GRAD))
    cols = np.arange(script.width, dtype=np.float64)
    parts = []
    for h in (truth.bd, truth.ln):
        xy = _on_line(rng, h, cols, script.grad_jitter)
        parts.append(np.column_stack([xy, rng.uniform(len(cols), 0.5, 1.0)]))
    m = script.grad_clutter
    clutter = _uniform_points(rng, m, (0.0, 0.0, float(script.width), float(script.height)))
    parts.append(np.column_stack([clutter, rng.uniform(m, 0.0, 0.5)]))
    return np.concatenate(parts)


def render_frame(truth: GroundTruthFrame, width: int, height: int, noise: float = 0.0,
                 rng: SplitMix64 | None = None) -> np.ndarray:
    """Grayscale frame (row 0 at the top) for a pair of road-frame lines.

    Above the border is bright, the shoulder between border and lane
    marking is dark, the road below is mid-gray, and the marking itself is
    a bright stripe three pixels tall.
    """
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    y = height - rows
    bd, ln = truth.bd, truth.ln
    res_bd = math.sin(bd.theta) * y + math.cos(bd.theta) * cols - bd.r
    res_ln = math.sin(ln.theta) * y + math.cos(ln.theta) * cols - ln.r
    img = np.where(res_bd > 0.0, SKY, SHOULDER)
    img = np.where((res_bd <= 0.0) & (res_ln < 0.0), ROAD, img)
    img = np.where(np.abs(res_ln) <= STRIPE_HALF_WIDTH, STRIPE, img)
    if noise > 0:
        if rng is None:
            raise ValueError("noise requires a random stream")
        img = img + rng.normal(img.size, 0.0, noise).reshape(img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_frame(script: SceneScript, seed: int, truth: GroundTruthFrame):
    """Observation (and image, if rendering) for one frame."""
    f = truth.frame
    bd = detector_voters(script, seed, f, "bd", truth.bd)
    ln = detector_voters(script, seed, f, "ln", truth.ln)
    image = None
    if script.render:
        rng = SplitMix64(derive_seed(seed, f, _S_RENDER))
        image = quantize(render_frame(truth, script.width, script.height, script.noise, rng))
        grad = to_road_frame(gradient_voters(image, script.grad_threshold), script.height)
    else:
        grad = synthetic_gradient_voters(script, seed, f, truth)
    return FrameObservation(f, bd, ln, grad), image


def generate(script: SceneScript, seed: int) -> SyntheticSequence:
    """Deterministic synthetic sequence for ``(script, seed)``."""
    truth = truth_lines(script, seed)
    obs, images = [], []
    for g in truth:
        o, img = generate_frame(script, seed, g)
        obs.append(o)
        images.append(img)
    return SyntheticSequence(script, seed, obs, truth, images if script.render else None)


# -- scripted suites ---------------------------------------------------------

def clean_script(frames: int = 200, **overrides) -> SceneScript:
    """No outliers and no events."""
    return SceneScript(frames=frames, outlier_rate=0.0, **overrides)


def entrance_script(frames: int = 60, jump_frame: int = 30, dr: float = 30.0,
                    **overrides) -> SceneScript:
    """The border jumps away from the lane, as at a highway entrance."""
    return SceneScript(frames=frames, events=(Jump(jump_frame, "bd", dr),), **overrides)


def _strip(line: LineHypothesis, offset: float, width: int, half: float = 2.0):
    y = line.r + offset
    return (0.0, y - half, float(width), y + half)


def dropout_outlier_script(seed: int, frames: int = 500, **overrides) -> SceneScript:
    """Alternating detector dropouts and fake-line bursts on both tracks.

    Event placement is drawn from ``seed`` so that a suite of seeds covers
    different timings. A burst concentrates outliers in a thin horizontal
    strip offset from the true line, forming a fake marking that outvotes
    the real one.
    """
    base = SceneScript(frames=frames, **overrides)
    rng = SplitMix64(derive_seed(seed, 0, 99))
    events = []
    f = 20
    k = 0
    while True:
        length = 6 + int(rng.integers(1, 10)[0])
        if f + length >= frames:
            break
        track = TRACKS[(k // 2) % 2]
        if k % 2 == 0:
            events.append(Dropout(track, f, f + length - 1))
        else:
            th, r = base.initial(track)
            sign = 1.0 if rng.uniform(1)[0] < 0.5 else -1.0
            offset = sign * (8.0 + float(rng.uniform(1, 0.0, 6.0)[0]))
            if track == "bd":
                offset = abs(offset)  # keep the fake border clear of the lane
            region = _strip(LineHypothesis.from_degrees(90.0, r), offset, base.width)
            events.append(OutlierBurst(f, f + length - 1, 0.6, region, track))
        k += 1
        f += length + 20 + int(rng.integers(1, 20)[0])
    return base.with_updates(events=tuple(events))


def stress_script(index: int, frames: int = 100) -> SceneScript:
    """One script of the constraint stress suite: jumps both ways, dropouts,
    20% outliers; some jumps push the border toward the lane marking."""
    rng = SplitMix64(derive_seed(index, 0, 77))
    events = []
    f = 10
    while f < frames - 5:
        kind = int(rng.integers(1, 4)[0])
        mag = float(rng.uniform(1, 25.0, 40.0)[0])
        if kind == 0:
            sign = 1.0 if rng.uniform(1)[0] < 0.5 else -1.0
            events.append(Jump(f, "bd", sign * mag))
            events.append(Jump(min(f + 10, frames), "bd", -sign * mag))
        elif kind == 1:
            track = TRACKS[int(rng.integers(1, 2)[0])]
            events.append(Dropout(track, f, min(f + 8, frames)))
        else:
            events.append(Jump(f, "ln", 6.0 if rng.uniform(1)[0] < 0.5 else -6.0))
        f += 12 + int(rng.integers(1, 8)[0])
    return SceneScript(frames=frames, outlier_rate=0.2, events=tuple(events))


def training_script(frames: int = 600, **overrides) -> SceneScript:
    """Annotated training scene whose border visits every distance band.

    The border steps toward the lane marking (middle band, then near band)
    and back, so that parallelism tolerances of both bands can be learned.
    """
    events = (Jump(frames // 4, "bd", -26.0), Jump(frames // 2, "bd", -6.0),
              Jump(3 * frames // 4, "bd", 32.0))
    return SceneScript(frames=frames, events=events, **overrides)


__all__ = [
    "Dropout", "Jump", "OutlierBurst", "SceneScript", "ScriptError", "SyntheticSequence",
    "clean_script", "default_script", "detector_voters", "dropout_outlier_script", "dump_script",
    "entrance_script", "generate", "generate_frame", "parse_script", "render_frame",
    "stress_script", "synthetic_gradient_voters", "training_script", "truth_lines",
]

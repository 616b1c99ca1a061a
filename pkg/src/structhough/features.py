"""Scanning-window detection producing Type-1 voting points.

Each window is described by the mean filter-bank responses of its upper
and lower halves and by normalized orientation histograms of a 2x4 cell
layout. Both are rectangle sums over per-pixel channels, so every window
costs a handful of integral-image lookups. A Fisher projection followed by
an RBF kernel expansion turns the descriptor into a score; windows scoring
above threshold vote at their center with unit weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .voting import LineHypothesis

N_BINS = 9
HOG_EPS = 1e-5
HOG_CELLS = (2, 4)  # rows, columns
MODEL_MAGIC = "structhough-detector"
MODEL_VERSION = 1


# -- channels ----------------------------------------------------------------

@dataclass(frozen=True)
class FilterBank:
    """Gaussian, oriented first-derivative and Laplacian-of-Gaussian filters."""

    gaussian_scales: tuple[float, ...] = (1.0, 2.0, 4.0)
    derivative_scales: tuple[float, ...] = (2.0, 4.0)
    derivative_angles_deg: tuple[float, ...] = (0.0, 45.0, 90.0, 135.0)
    laplacian_scales: tuple[float, ...] = (2.0, 4.0)

    @property
    def size(self) -> int:
        return (len(self.gaussian_scales)
                + len(self.derivative_scales) * len(self.derivative_angles_deg)
                + len(self.laplacian_scales))

    def apply(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        out = [ndimage.gaussian_filter(img, s, mode="reflect") for s in self.gaussian_scales]
        for s in self.derivative_scales:
            gx = ndimage.gaussian_filter(img, s, order=(0, 1), mode="reflect")
            gy = ndimage.gaussian_filter(img, s, order=(1, 0), mode="reflect")
            for a in self.derivative_angles_deg:
                t = math.radians(a)
                out.append(math.cos(t) * gx + math.sin(t) * gy)
        out.extend(ndimage.gaussian_laplace(img, s, mode="reflect") for s in self.laplacian_scales)
        return np.stack(out)


def orientation_channels(image: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Gradient magnitude split into unsigned orientation bins, shape (n_bins, H, W)."""
    img = np.asarray(image, dtype=np.float64)
    if min(img.shape) >= 2:
        gy, gx = np.gradient(img)
    else:
        gy = gx = np.zeros_like(img)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), math.pi)
    idx = np.minimum((ang / (math.pi / n_bins)).astype(np.int64), n_bins - 1)
    out = np.zeros((n_bins,) + img.shape)
    rows, cols = np.indices(img.shape)
    out[idx, rows, cols] = mag
    return out


@dataclass(frozen=True)
class Channels:
    bank: np.ndarray  # (C, H, W)
    hog: np.ndarray   # (N_BINS, H, W)

    @classmethod
    def from_image(cls, image: np.ndarray, bank: FilterBank = FilterBank()) -> "Channels":
        return cls(bank.apply(image), orientation_channels(image))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bank.shape[1:]


@dataclass(frozen=True)
class IntegralImage:
    """Zero-padded cumulative sums: ``table[c, y, x]`` sums rows < y, columns < x."""

    table: np.ndarray  # (C, H+1, W+1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.table.shape[1] - 1, self.table.shape[2] - 1

    def rect_sum(self, x0, y0, x1, y1) -> np.ndarray:
        """Per-channel sums over ``[y0, y1) x [x0, x1)``; indices broadcast."""
        t = self.table
        return t[:, y1, x1] - t[:, y0, x1] - t[:, y1, x0] + t[:, y0, x0]


def build_integral(channels) -> IntegralImage:
    ch = np.asarray(channels, dtype=np.float64)
    if ch.ndim == 2:
        ch = ch[None]
    table = np.zeros((ch.shape[0], ch.shape[1] + 1, ch.shape[2] + 1))
    np.cumsum(np.cumsum(ch, axis=1), axis=2, out=table[:, 1:, 1:])
    return IntegralImage(table)


@dataclass(frozen=True)
class IntegralChannels:
    bank: IntegralImage
    hog: IntegralImage

    @classmethod
    def from_channels(cls, ch: Channels) -> "IntegralChannels":
        return cls(build_integral(ch.bank), build_integral(ch.hog))

    @classmethod
    def from_image(cls, image, bank: FilterBank = FilterBank()) -> "IntegralChannels":
        return cls.from_channels(Channels.from_image(image, bank))

    @property
    def shape(self):
        return self.bank.shape


# -- window descriptor -------------------------------------------------------

def feature_length(bank_size: int, n_bins: int = N_BINS) -> int:
    return 2 * bank_size + HOG_CELLS[0] * HOG_CELLS[1] * n_bins


def _cell_edges(start, length, n):
    start = np.asarray(start)
    return [start + (length * k) // n for k in range(n + 1)]


def _normalize_cells(h: np.ndarray) -> np.ndarray:
    # h: (..., cells, bins)
    return h / np.sqrt(np.sum(h * h, axis=-1, keepdims=True) + HOG_EPS ** 2)


def _check_window(shape, x0, y0, w, h):
    H, W = shape
    if w < HOG_CELLS[1] or h < HOG_CELLS[0]:
        raise ValueError(f"window {w}x{h} smaller than the cell layout")
    x0 = np.asarray(x0)
    y0 = np.asarray(y0)
    if np.any(x0 < 0) or np.any(y0 < 0) or np.any(x0 + w > W) or np.any(y0 + h > H):
        raise ValueError(f"window out of bounds for a {W}x{H} image")


def extract_features_batch(ic: IntegralChannels, x0, y0, w: int, h: int) -> np.ndarray:
    """Descriptors of same-size windows with top-left corners ``(x0, y0)``; (n, D)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.int64))
    y0 = np.atleast_1d(np.asarray(y0, dtype=np.int64))
    _check_window(ic.shape, x0, y0, w, h)
    half = h // 2
    area_up = half * w
    area_lo = (h - half) * w
    up = ic.bank.rect_sum(x0, y0, x0 + w, y0 + half) / area_up
    lo = ic.bank.rect_sum(x0, y0 + half, x0 + w, y0 + h) / area_lo
    ys = _cell_edges(y0, h, HOG_CELLS[0])
    xs = _cell_edges(x0, w, HOG_CELLS[1])
    cells = []
    for a in range(HOG_CELLS[0]):
        for b in range(HOG_CELLS[1]):
            cells.append(ic.hog.rect_sum(xs[b], ys[a], xs[b + 1], ys[a + 1]).T)
    hog = _normalize_cells(np.stack(cells, axis=1))  # (n, cells, bins)
    return np.concatenate([up.T, lo.T, hog.reshape(len(x0), -1)], axis=1)


def extract_features(ic: IntegralChannels, window: tuple[int, int, int, int]) -> np.ndarray:
    """Descriptor of the window ``(x0, y0, width, height)`` via integral images."""
    x0, y0, w, h = window
    return extract_features_batch(ic, [x0], [y0], w, h)[0]


def extract_features_direct(ch: Channels, window: tuple[int, int, int, int]) -> np.ndarray:
    """Same descriptor by summing channel pixels directly (reference path)."""
    x0, y0, w, h = window
    _check_window(ch.shape, x0, y0, w, h)
    half = h // 2
    up = ch.bank[:, y0:y0 + half, x0:x0 + w].mean(axis=(1, 2))
    lo = ch.bank[:, y0 + half:y0 + h, x0:x0 + w].mean(axis=(1, 2))
    ys = [y0 + (h * k) // HOG_CELLS[0] for k in range(HOG_CELLS[0] + 1)]
    xs = [x0 + (w * k) // HOG_CELLS[1] for k in range(HOG_CELLS[1] + 1)]
    cells = np.array([ch.hog[:, ys[a]:ys[a + 1], xs[b]:xs[b + 1]].sum(axis=(1, 2))
                      for a in range(HOG_CELLS[0]) for b in range(HOG_CELLS[1])])
    return np.concatenate([up, lo, _normalize_cells(cells).ravel()])


# -- classifier --------------------------------------------------------------

def fit_fda(neg: np.ndarray, pos: np.ndarray, reg: float = 1e-3) -> np.ndarray:
    """Two-class Fisher direction as a ``(D, 1)`` projection, oriented so that
    positives project above negatives."""
    neg = np.asarray(neg, dtype=float)
    pos = np.asarray(pos, dtype=float)
    mu0, mu1 = neg.mean(axis=0), pos.mean(axis=0)
    sw = np.cov(neg, rowvar=False, bias=True) * len(neg) + np.cov(pos, rowvar=False, bias=True) * len(pos)
    sw = np.atleast_2d(sw)
    sw = sw + reg * (np.trace(sw) / len(sw) + 1e-12) * np.eye(len(sw))
    wv = np.linalg.solve(sw, mu1 - mu0)
    wv /= np.linalg.norm(wv)
    return wv[:, None]


@dataclass(frozen=True)
class DetectorModel:
    projection: np.ndarray   # (D, k)
    centers: np.ndarray      # (K, k)
    weights: np.ndarray      # (K,)
    bias: float
    bandwidth: float
    threshold: float = 0.0
    name: str = "detector"
    bank: FilterBank = field(default_factory=FilterBank)

    def __post_init__(self):
        proj = np.atleast_2d(np.asarray(self.projection, dtype=float))
        centers = np.asarray(self.centers, dtype=float).reshape(-1, proj.shape[1])
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) != len(centers):
            raise ValueError("one weight per RBF center required")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def reduced_dim(self) -> int:
        return self.projection.shape[1]

    def scores(self, image, x0, y0, w, h, ic: IntegralChannels | None = None) -> np.ndarray:
        ic = ic if ic is not None else IntegralChannels.from_image(image, self.bank)
        f = extract_features_batch(ic, x0, y0, w, h)
        return rbf_score_batch(fda_project_batch(f, self), self)


def fda_project(f, model: DetectorModel) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (model.feature_dim,):
        raise ValueError(f"feature length {f.shape} does not match model ({model.feature_dim},)")
    return f @ model.projection


def fda_project_batch(f: np.ndarray, model: DetectorModel) -> np.ndarray:
    if f.shape[-1] != model.feature_dim:
        raise ValueError(f"feature length {f.shape[-1]} does not match model {model.feature_dim}")
    return f @ model.projection


def rbf_score(v, model: DetectorModel) -> float:
    """``sum_k w_k exp(-|v - c_k|^2 / (2 gamma^2)) + bias``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.reduced_dim,):
        raise ValueError(f"reduced vector {v.shape} does not match model ({model.reduced_dim},)")
    return float(rbf_score_batch(v[None], model)[0])


def rbf_score_batch(v: np.ndarray, model: DetectorModel) -> np.ndarray:
    d2 = ((v[:, None, :] - model.centers[None, :, :]) ** 2).sum(axis=-1)
    k = np.exp(-d2 / (2.0 * model.bandwidth ** 2))
    return k @ model.weights + model.bias


def fit_parzen_detector(neg: np.ndarray, pos: np.ndarray, name: str = "detector",
                        max_centers: int = 100, bank: FilterBank = FilterBank()) -> DetectorModel:
    """Fisher projection plus a signed Parzen-window RBF expansion.

    Stands in for a trained kernel SVM on synthetic data: positive training
    samples are centers with weight ``+1/n_pos``, negatives ``-1/n_neg``.
    """
    proj = fit_fda(neg, pos)
    zn, zp = np.asarray(neg) @ proj, np.asarray(pos) @ proj

    def pick(z):
        idx = np.unique(np.linspace(0, len(z) - 1, min(len(z), max_centers)).round().astype(int))
        return z[idx]

    cn, cp = pick(zn), pick(zp)
    spread = float(np.std(np.concatenate([zn, zp]), axis=0).mean())
    bandwidth = max(0.5 * spread, 1e-6)
    centers = np.concatenate([cp, cn])
    weights = np.concatenate([np.full(len(cp), 1.0 / len(cp)), np.full(len(cn), -1.0 / len(cn))])
    return DetectorModel(proj, centers, weights, 0.0, bandwidth, 0.0, name, bank)


# -- model files -------------------------------------------------------------

def _rows(a: np.ndarray) -> list[str]:
    return [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(a)]


def dump_models(models: Sequence[DetectorModel]) -> str:
    """Text form: a magic/version line, then one block per model.

    Every number is a decimal literal; there is no binary payload, so the
    file does not depend on byte order.
    """
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}"]
    for m in models:
        b = m.bank
        lines += [
            f"model {m.name}",
            f"dims {m.feature_dim} {m.reduced_dim} {len(m.centers)}",
            "bank " + " ; ".join(" ".join(repr(float(v)) for v in grp) for grp in (
                b.gaussian_scales, b.derivative_scales, b.derivative_angles_deg,
                b.laplacian_scales)),
            f"bias {m.bias!r}", f"bandwidth {m.bandwidth!r}", f"threshold {m.threshold!r}",
            "projection", *_rows(m.projection),
            "centers", *_rows(m.centers),
            "weights", " ".join(repr(float(v)) for v in m.weights),
            "end",
        ]
    return "\n".join(lines) + "\n"


def parse_models(text: str) -> dict[str, DetectorModel]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split()[:1] != [MODEL_MAGIC]:
        raise ValueError("not a detector model file")
    version = int(lines[0].split()[1])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported detector model version {version}")
    models: dict[str, DetectorModel] = {}
    i = 1

    def floats(s):
        return [float(v) for v in s.split()]

    while i < len(lines):
        head = lines[i].split()
        if head[0] != "model" or len(head) != 2:
            raise ValueError(f"expected 'model <name>', got {lines[i]!r}")
        name = head[1]
        kv = {}
        i += 1
        while lines[i] not in ("projection",):
            key, _, rest = lines[i].partition(" ")
            kv[key] = rest
            i += 1
        d, k, n = (int(v) for v in kv["dims"].split())
        proj = np.array([floats(lines[i + 1 + r]) for r in range(d)]).reshape(d, k)
        i += 1 + d
        if lines[i] != "centers":
            raise ValueError(f"model {name}: expected 'centers'")
        centers = np.array([floats(lines[i + 1 + r]) for r in range(n)]).reshape(n, k)
        i += 1 + n
        if lines[i] != "weights":
            raise ValueError(f"model {name}: expected 'weights'")
        weights = np.array(floats(lines[i + 1]) if n else [])
        i += 2
        if lines[i] != "end":
            raise ValueError(f"model {name}: expected 'end'")
        i += 1
        groups = [tuple(floats(g)) for g in kv["bank"].split(";")]
        bank = FilterBank(*groups)
        models[name] = DetectorModel(proj, centers, weights, float(kv["bias"]),
                                     float(kv["bandwidth"]), float(kv["threshold"]), name, bank)
    return models


def save_models(models: Sequence[DetectorModel], path) -> None:
    Path(path).write_text(dump_models(models), encoding="utf-8")


def load_models(path) -> dict[str, DetectorModel]:
    return parse_models(Path(path).read_text(encoding="utf-8"))


# -- scanning ----------------------------------------------------------------

class Detector(Protocol):
    threshold: float

    def scores(self, image, x0, y0, w, h, ic=None) -> np.ndarray: ...


@dataclass(frozen=True)
class PlantedLineDetector:
    """Fires when the window center lies within ``tol`` pixels of a line.

    Lines are in image coordinates unless ``height`` is given, in which case
    they are in road coordinates (y up from the bottom edge).
    """

    lines: tuple[LineHypothesis, ...]
    tol: float = 2.0
    height: float | None = None
    threshold: float = 0.5

    def scores(self, image, x0, y0, w, h, ic=None) -> np.ndarray:
        cx = np.asarray(x0, dtype=float) + (w - 1) / 2.0
        cy = np.asarray(y0, dtype=float) + (h - 1) / 2.0
        if self.height is not None:
            cy = self.height - cy
        hit = np.zeros(cx.shape, dtype=bool)
        for ln in self.lines:
            res = math.sin(ln.theta) * cy + math.cos(ln.theta) * cx - ln.r
            hit |= np.abs(res) <= self.tol
        return hit.astype(float)


@dataclass(frozen=True)
class WindowSpec:
    width: int = 32
    height: int = 16
    stride_x: int = 4
    stride_y: int = 4
    band: tuple[int, int] | None = None  # image rows [start, stop)

    def positions(self, image_shape) -> tuple[np.ndarray, np.ndarray]:
        H, W = image_shape
        r0, r1 = self.band if self.band is not None else (0, H)
        r0, r1 = max(0, r0), min(H, r1)
        if self.width > W or self.height > r1 - r0:
            raise ValueError("window does not fit inside the detection band")
        xs = np.arange(0, W - self.width + 1, self.stride_x)
        ys = np.arange(r0, r1 - self.height + 1, self.stride_y)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return xx.ravel(), yy.ravel()

    def centers(self, x0, y0) -> tuple[np.ndarray, np.ndarray]:
        return x0 + (self.width - 1) / 2.0, y0 + (self.height - 1) / 2.0


def scan_windows(image: np.ndarray, spec: WindowSpec, detector: Detector,
                 ic: IntegralChannels | None = None) -> np.ndarray:
    """Unit-weight voters (image coordinates) at centers of windows scoring above threshold."""
    img = np.asarray(image, dtype=np.float64)
    x0, y0 = spec.positions(img.shape)
    s = detector.scores(img, x0, y0, spec.width, spec.height, ic=ic)
    keep = s > detector.threshold
    cx, cy = spec.centers(x0[keep], y0[keep])
    return np.column_stack([cx, cy, np.ones(int(keep.sum()))]).astype(np.float64)


def training_windows(image, lines_img: Sequence[LineHypothesis], spec: WindowSpec,
                     pos_tol: float = 2.0, neg_margin: float = 8.0,
                     ic: IntegralChannels | None = None, bank: FilterBank = FilterBank()):
    """Descriptors of windows centered on ``lines_img[0]`` (positives) and of
    windows far from every listed line (negatives)."""
    img = np.asarray(image, dtype=np.float64)
    ic = ic if ic is not None else IntegralChannels.from_image(img, bank)
    x0, y0 = spec.positions(img.shape)
    cx, cy = spec.centers(x0, y0)

    def dist(ln):
        return np.abs(math.sin(ln.theta) * cy + math.cos(ln.theta) * cx - ln.r)

    pos = dist(lines_img[0]) <= pos_tol
    far = np.all([dist(ln) > neg_margin for ln in lines_img], axis=0)
    f = extract_features_batch(ic, x0, y0, spec.width, spec.height)
    return f[far], f[pos]


def fit_line_detectors(images: Sequence[np.ndarray], truths: Sequence, height: int,
                       spec: WindowSpec = WindowSpec(), bank: FilterBank = FilterBank(),
                       ) -> dict[str, DetectorModel]:
    """Fit ``bd`` and ``ln`` detectors on rendered frames with known lines.

    ``truths`` hold road-frame ``bd``/``ln`` lines (ground-truth frames).
    """
    from .voting import flip_line

    negs = {"bd": [], "ln": []}
    poss = {"bd": [], "ln": []}
    for img, g in zip(images, truths):
        ic = IntegralChannels.from_image(img, bank)
        bd, ln = flip_line(g.bd, height), flip_line(g.ln, height)
        for name, lines in (("bd", (bd, ln)), ("ln", (ln, bd))):
            neg, pos = training_windows(img, lines, spec, ic=ic)
            negs[name].append(neg)
            poss[name].append(pos)
    out = {}
    for name in ("bd", "ln"):
        neg, pos = np.concatenate(negs[name]), np.concatenate(poss[name])
        if len(neg) == 0 or len(pos) == 0:
            raise ValueError(f"no {'negative' if len(neg) == 0 else 'positive'} windows for {name}")
        out[name] = fit_parzen_detector(neg, pos, name=name, bank=bank)
    return out


__all__ = [
    "Channels", "Detector", "DetectorModel", "FilterBank", "IntegralChannels", "IntegralImage",
    "PlantedLineDetector", "WindowSpec", "build_integral", "dump_models", "extract_features",
    "extract_features_batch", "extract_features_direct", "fda_project", "feature_length",
    "fit_fda", "fit_line_detectors", "fit_parzen_detector", "load_models", "orientation_channels", "parse_models",
    "rbf_score", "save_models", "scan_windows", "training_windows",
]

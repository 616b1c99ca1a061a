"""Plain-text voter files and binary PGM images.

Voter files hold one ``frame type x y w`` row per voting point, where
``type`` is ``bd``, ``ln`` or ``grad`` and coordinates are in the road
frame (y measured up from the bottom edge). A header comment records the
frame count and image size so frames without voters survive a round trip::

    # structhough voters frames=200 width=160 height=120
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .inference import FrameObservation

VOTER_TYPES = ("bd", "ln", "grad")
_HEADER = re.compile(r"#\s*structhough voters\s+frames=(\d+)\s+width=(\d+)\s+height=(\d+)")


@dataclass(frozen=True)
class VoterFile:
    observations: list[FrameObservation]
    width: int
    height: int


def format_voters(observations: Sequence[FrameObservation], width: int, height: int) -> str:
    lines = [f"# structhough voters frames={len(observations)} width={width} height={height}"]
    for obs in observations:
        for kind, arr in (("bd", obs.bd_voters), ("ln", obs.ln_voters), ("grad", obs.grad_voters)):
            for x, y, w in arr.tolist():
                lines.append(f"{obs.index} {kind} {x!r} {y!r} {w!r}")
    return "\n".join(lines) + "\n"


def write_voters(observations: Sequence[FrameObservation], path, width: int, height: int) -> None:
    Path(path).write_text(format_voters(observations, width, height), encoding="utf-8")


def read_voters(path) -> VoterFile:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    m = _HEADER.match(lines[0]) if lines else None
    if m is None:
        raise ValueError(f"{path}:1: missing voter file header")
    n_frames, width, height = (int(g) for g in m.groups())
    rows: dict[int, dict[str, list]] = {f: {k: [] for k in VOTER_TYPES}
                                        for f in range(1, n_frames + 1)}
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5 or parts[1] not in VOTER_TYPES:
            raise ValueError(f"{path}:{lineno}: expected 'frame type x y w', got {raw!r}")
        try:
            frame = int(parts[0])
            x, y, w = (float(p) for p in parts[2:])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed number in {raw!r}") from None
        if frame not in rows:
            raise ValueError(f"{path}:{lineno}: frame {frame} outside 1..{n_frames}")
        if w < 0:
            raise ValueError(f"{path}:{lineno}: negative weight")
        rows[frame][parts[1]].append((x, y, w))
    obs = [FrameObservation(f, *(np.array(rows[f][k], dtype=np.float64).reshape(-1, 3)
                                 for k in VOTER_TYPES))
           for f in range(1, n_frames + 1)]
    return VoterFile(obs, width, height)


# -- PGM ---------------------------------------------------------------------

def quantize(image: np.ndarray) -> np.ndarray:
    """Round intensities in [0, 1] to the 8-bit levels a PGM file can hold."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a nonempty 2-D image")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        out.append(int(buf[start:pos]))
    return out, pos


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM as float intensities in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    try:
        (w, h, maxval), pos = _pgm_tokens(buf, 3, 2)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad PGM dimensions")
    pos += 1  # single whitespace after maxval
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) - pos < n:
        raise ValueError(f"{path}: truncated PGM data")
    data = np.frombuffer(buf[pos:pos + n], dtype=dtype).reshape(h, w)
    return data.astype(np.float64) / maxval


def list_pgm(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".pgm")


def iter_pgm(paths: Iterable) -> Iterable[np.ndarray]:
    for p in paths:
        yield read_pgm(p)


__all__ = ["VoterFile", "format_voters", "list_pgm", "quantize", "read_pgm", "read_voters",
           "write_pgm", "write_voters"]

"""Video data model: frames, GOPs, sequences, and raw-file round tripping.

Samples are floats in [0, 1] in memory and 8 bits on disk: ``save_raw``
quantizes with round(x * 255) and ``load_raw`` returns k / 255.0, so
save -> load -> save is byte identical and load(save(x)) == x whenever x
already sits on the 8-bit grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHANNELS = 3

SIDECAR_FIELDS = ("width", "height", "fps", "frames")


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Frame:
    """One RGB raster, shape (height, width, 3), samples in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.data)
        if arr.ndim != 3 or arr.shape[2] != CHANNELS:
            raise ValueError(f"frame must have shape (h, w, {CHANNELS}), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("frame must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frame samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("frame samples must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return CHANNELS


@dataclass(frozen=True)
class Gop:
    """A group of pictures: consecutive same-sized frames coded as a unit."""

    frames: tuple

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a GOP needs at least one frame")
        w, h = frames[0].width, frames[0].height
        for f in frames:
            if (f.width, f.height) != (w, h):
                raise ValueError("all frames in a GOP must share dimensions")
        object.__setattr__(self, "frames", frames)

    @property
    def gop_size(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def to_array(self) -> np.ndarray:
        """Stack frames into an (n, h, w, 3) array."""
        return np.stack([f.data for f in self.frames])

    @classmethod
    def from_array(cls, arr) -> "Gop":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(Frame(a) for a in arr))


@dataclass(frozen=True)
class VideoSequence:
    """An ordered run of frames with a playback rate."""

    frames: tuple
    fps: float

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not np.isfinite(self.fps) or self.fps <= 0:
            raise ValueError("fps must be positive and finite")
        if frames:
            w, h = frames[0].width, frames[0].height
            for f in frames:
                if (f.width, f.height) != (w, h):
                    raise ValueError("all frames in a sequence must share dimensions")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration_seconds(self) -> float:
        return len(self.frames) / self.fps

    def to_array(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])

    @classmethod
    def from_array(cls, arr, fps: float) -> "VideoSequence":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(Frame(a) for a in arr), fps)


def segment_gops(video: VideoSequence, n: int) -> list:
    """Split a video into GOPs of ``n`` frames; the last GOP may be shorter.

    Concatenating the returned GOPs reproduces the input frame order.
    """
    if n < 1:
        raise ValueError("GOP size must be >= 1")
    if len(video) == 0:
        raise ValueError("cannot segment an empty video")
    return [Gop(video.frames[i : i + n]) for i in range(0, len(video), n)]


def flatten_gops(gops, fps: float) -> VideoSequence:
    """Inverse of :func:`segment_gops`."""
    frames = []
    for g in gops:
        frames.extend(g.frames)
    return VideoSequence(tuple(frames), fps)


def pad_edge(arr: np.ndarray, multiple_h: int, multiple_w: int) -> np.ndarray:
    """Edge-replicate an (h, w, ...) array up to the given multiples."""
    h, w = arr.shape[:2]
    ph = (-h) % multiple_h
    pw = (-w) % multiple_w
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="edge")


def box_downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Box-filter average of an (h, w, ...) array; edge-pads first, so the
    output has shape (ceil(h/f), ceil(w/f), ...)."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return np.array(arr)
    padded = pad_edge(np.asarray(arr, dtype=np.float64), factor, factor)
    h, w = padded.shape[:2]
    shaped = padded.reshape(h // factor, factor, w // factor, factor, *padded.shape[2:])
    return shaped.mean(axis=(1, 3))


def downsample(frame: Frame, factor: int) -> Frame:
    """Thumbnail a frame by box averaging over factor x factor cells."""
    return Frame(box_downsample(frame.data, factor))


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_raw(video: VideoSequence, path) -> None:
    """Write ``<name>.rgb`` (planar 8-bit payload) plus a ``<name>.json``
    sidecar with fields width, height, fps, frames.

    Planar layout: for each frame, the full R plane, then G, then B,
    row major, one byte per sample.
    """
    path = Path(path)
    if len(video) == 0:
        raise ValueError("refusing to save an empty video")
    arr = video.to_array()
    quantized = np.round(arr * 255.0).astype(np.uint8)
    planar = np.moveaxis(quantized, 3, 1)  # (n, 3, h, w)
    path.write_bytes(planar.tobytes())
    header = {
        "width": video.frames[0].width,
        "height": video.frames[0].height,
        "fps": video.fps,
        "frames": len(video),
    }
    _sidecar_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")


def load_raw(path) -> VideoSequence:
    """Load a raw video written by :func:`save_raw`."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise IOError(f"missing sidecar header {sidecar}")
    header = json.loads(sidecar.read_text())
    missing = [k for k in SIDECAR_FIELDS if k not in header]
    if missing:
        raise IOError(f"sidecar {sidecar} missing fields {missing}")
    width, height = int(header["width"]), int(header["height"])
    n_frames, fps = int(header["frames"]), float(header["fps"])
    payload = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    expected = n_frames * CHANNELS * height * width
    if payload.size != expected:
        raise IOError(
            f"payload size mismatch for {path}: header implies {expected} bytes, "
            f"found {payload.size}"
        )
    planar = payload.reshape(n_frames, CHANNELS, height, width)
    arr = np.moveaxis(planar, 1, 3).astype(np.float64) / 255.0
    return VideoSequence.from_array(arr, fps)

"""Signal containers and their on-disk formats.

Binary layouts (all little-endian)::

    pose      b"MMHPOSE1"  u32 T, u32 K, u32 C, f32 fps, T*K*C f32
    features  b"MMHFEAT1"  u32 T, u32 D, f32 fps, T*D f32
    video     b"MMHVID1\\0" u32 T, u32 H, u32 W, u32 C, f32 fps, T*H*W*C u8

A JSON fallback is accepted by every loader: an object with ``fps``
(default 25) and ``frames`` (pose, video) or ``features`` (features).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError

DEFAULT_FPS = 25.0

POSE_MAGIC = b"MMHPOSE1"
FEATURE_MAGIC = b"MMHFEAT1"
VIDEO_MAGIC = b"MMHVID1\0"


class SignalError(InputError):
    pass


class BadMagic(SignalError):
    pass


class TruncatedFile(SignalError):
    pass


class NonFiniteValue(SignalError):
    pass


class InvalidSignal(SignalError):
    pass


class EmptyClip(SignalError):
    pass


@dataclass(frozen=True, eq=False)
class PoseSequence:
    frames: np.ndarray  # [T, K, C] float32
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise InvalidSignal(f"pose frames must be [T, K, C], got shape {frames.shape}")
        T, K, C = frames.shape
        if T < 1 or K < 1 or C < 2:
            raise InvalidSignal(f"pose needs T>=1, K>=1, C>=2; got {frames.shape}")
        _check_fps(self.fps)
        _check_finite(frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames, fps=None):
        return replace(self, frames=frames, fps=self.fps if fps is None else fps)

    def to_features(self) -> np.ndarray:
        T = self.frames.shape[0]
        return self.frames.reshape(T, -1)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    features: np.ndarray  # [T, D] float32
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise InvalidSignal(f"features must be [T>=1, D>=1], got shape {feats.shape}")
        _check_fps(self.fps)
        _check_finite(feats)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    def with_frames(self, frames, fps=None):
        return replace(self, features=frames, fps=self.fps if fps is None else fps)

    def to_features(self) -> np.ndarray:
        return self.features


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: np.ndarray  # [T, H, W, C] uint8
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.dtype != np.uint8:
            raise InvalidSignal(f"video frames must be uint8, got {frames.dtype}")
        if frames.ndim != 4 or min(frames.shape[:3]) < 1 or frames.shape[3] not in (1, 3):
            raise InvalidSignal(f"video frames must be [T, H, W, C in {{1,3}}], got {frames.shape}")
        _check_fps(self.fps)
        object.__setattr__(self, "frames", np.ascontiguousarray(frames))
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames, fps=None):
        return replace(self, frames=frames, fps=self.fps if fps is None else fps)

    def to_features(self) -> np.ndarray:
        T = self.frames.shape[0]
        return self.frames.reshape(T, -1).astype(np.float32) / np.float32(255.0)


@dataclass(frozen=True, eq=False)
class ImageSequence:
    images: np.ndarray  # [N, H, W] uint8, grayscale
    source_tokens: tuple[str, ...] = ()
    missing_glyphs: int = 0

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.dtype != np.uint8 or images.ndim != 3:
            raise InvalidSignal(f"images must be uint8 [N, H, W], got {images.dtype} {images.shape}")
        tokens = tuple(self.source_tokens)
        if images.shape[0] != len(tokens):
            raise InvalidSignal(f"{images.shape[0]} images for {len(tokens)} tokens")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "source_tokens", tokens)

    def __len__(self):
        return self.images.shape[0]

    def to_features(self) -> np.ndarray:
        N = self.images.shape[0]
        return self.images.reshape(N, -1).astype(np.float32) / np.float32(255.0)


def _check_fps(fps):
    if not (isinstance(fps, (int, float)) and math.isfinite(fps) and fps > 0):
        raise InvalidSignal(f"fps must be a positive finite number, got {fps!r}")


def _check_finite(arr):
    if not np.isfinite(arr).all():
        raise NonFiniteValue("signal contains NaN or infinite values")


# -- binary containers -----------------------------------------------------

def _read_container(path, magic: bytes, n_dims: int, dtype) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if data[:1] == b"{":
        raise BadMagic(f"{path}: JSON content, not a binary container")
    if data[:8] != magic:
        raise BadMagic(f"{path}: expected magic {magic!r}, found {data[:8]!r}")
    head = struct.Struct(f"<{n_dims}If")
    if len(data) < 8 + head.size:
        raise TruncatedFile(f"{path}: header is truncated")
    *dims, fps = head.unpack_from(data, 8)
    count = math.prod(dims)
    itemsize = np.dtype(dtype).itemsize
    payload = data[8 + head.size:]
    if len(payload) < count * itemsize:
        raise TruncatedFile(f"{path}: expected {count * itemsize} payload bytes, found {len(payload)}")
    if len(payload) > count * itemsize:
        raise InvalidSignal(f"{path}: {len(payload) - count * itemsize} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<")).reshape(dims)
    return arr.astype(dtype), float(fps)


def _write_container(path, magic: bytes, arr: np.ndarray, fps: float, dtype) -> None:
    header = magic + struct.pack(f"<{arr.ndim}If", *arr.shape, fps)
    payload = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + payload)


def _read_json(path, key: str, default_fps: float):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagic(f"{path}: neither a binary container nor valid JSON ({exc})") from None
    if not isinstance(obj, dict) or key not in obj:
        raise InvalidSignal(f"{path}: JSON signal must be an object with a {key!r} array")
    return obj[key], obj.get("fps", default_fps)


def _json_array(path, values, dtype=np.float32) -> np.ndarray:
    try:
        return np.asarray(values, dtype=dtype)
    except (ValueError, TypeError) as exc:
        raise InvalidSignal(f"{path}: JSON signal is not a rectangular numeric array ({exc})") from None


def _is_json(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(64).lstrip().startswith(b"{")


def load_pose(path, default_fps: float = DEFAULT_FPS) -> PoseSequence:
    if _is_json(path):
        frames, fps = _read_json(path, "frames", default_fps)
        return PoseSequence(_json_array(path, frames), fps)
    frames, fps = _read_container(path, POSE_MAGIC, 3, np.float32)
    return PoseSequence(frames, fps)


def save_pose(seq: PoseSequence, path) -> None:
    _write_container(path, POSE_MAGIC, seq.frames, seq.fps, np.float32)


def load_features(path, default_fps: float = DEFAULT_FPS) -> FeatureSequence:
    if _is_json(path):
        feats, fps = _read_json(path, "features", default_fps)
        return FeatureSequence(_json_array(path, feats), fps)
    feats, fps = _read_container(path, FEATURE_MAGIC, 2, np.float32)
    return FeatureSequence(feats, fps)


def save_features(seq: FeatureSequence, path) -> None:
    _write_container(path, FEATURE_MAGIC, seq.features, seq.fps, np.float32)


def load_frames(path, default_fps: float = DEFAULT_FPS) -> FrameSequence:
    if _is_json(path):
        frames, fps = _read_json(path, "frames", default_fps)
        arr = _json_array(path, frames, None)
        if arr.size and (arr.min() < 0 or arr.max() > 255 or not np.issubdtype(arr.dtype, np.integer)):
            raise InvalidSignal(f"{path}: JSON video frames must be integers in [0, 255]")
        return FrameSequence(arr.astype(np.uint8), fps)
    frames, fps = _read_container(path, VIDEO_MAGIC, 4, np.uint8)
    return FrameSequence(frames, fps)


def save_frames(seq: FrameSequence, path) -> None:
    _write_container(path, VIDEO_MAGIC, seq.frames, seq.fps, np.uint8)


LOADERS = {"pose": load_pose, "features": load_features, "video": load_frames}


def load_signal(path, kind: str, default_fps: float = DEFAULT_FPS):
    try:
        loader = LOADERS[kind]
    except KeyError:
        raise SignalError(f"no loader for signal kind {kind!r}") from None
    return loader(path, default_fps)


# -- temporal operations ---------------------------------------------------

def clip_bounds(num_frames: int, fps: float, start_ms: int, end_ms: int) -> tuple[int, int]:
    """Frame range ``[lo, hi)`` covering ``[start_ms, end_ms]``.

    Start rounds down and end rounds up so no requested time is dropped.
    ``end_ms == 0`` means "to the end of the signal". Arithmetic is exact.
    """
    rate = Fraction(fps)
    lo = math.floor(Fraction(start_ms, 1000) * rate)
    hi = math.ceil(Fraction(end_ms, 1000) * rate) if end_ms else num_frames
    lo = min(max(lo, 0), num_frames)
    hi = min(max(hi, 0), num_frames)
    return lo, hi


def clip_temporal(seq, start_ms: int, end_ms: int):
    """Cut ``seq`` to the millisecond interval; ``(0, 0)`` returns it unchanged."""
    if start_ms == 0 and end_ms == 0:
        return seq
    if start_ms < 0 or end_ms < 0 or (end_ms and end_ms <= start_ms):
        raise EmptyClip(f"invalid clip bounds {start_ms}-{end_ms} ms")
    lo, hi = clip_bounds(seq.num_frames, seq.fps, start_ms, end_ms)
    if hi <= lo:
        duration = seq.num_frames / seq.fps * 1000
        raise EmptyClip(
            f"clip {start_ms}-{end_ms} ms selects no frames of a {duration:.0f} ms signal"
        )
    return seq.with_frames(_frames_of(seq)[lo:hi])


def skip_frames(seq, stride: int):
    """Keep every ``stride``-th frame starting at frame 0."""
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    if stride == 1:
        return seq
    return seq.with_frames(_frames_of(seq)[::stride], fps=seq.fps / stride)


def _frames_of(seq) -> np.ndarray:
    if isinstance(seq, FeatureSequence):
        return seq.features
    if isinstance(seq, (PoseSequence, FrameSequence)):
        return seq.frames
    raise TypeError(f"{type(seq).__name__} has no time axis")

"""WAV decoding and fixed-duration overlapping framing."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, MalformedHeader, UnsupportedEncoding

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValueError("AudioClip samples must lie in [-1, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSpec:
    frame_ms: float = 25.0
    overlap_ms: float = 15.0

    def __post_init__(self):
        if not (0 <= self.overlap_ms < self.frame_ms):
            raise InvalidConfig(
                f"need 0 <= overlap_ms < frame_ms, got {self.overlap_ms}/{self.frame_ms}"
            )

    @property
    def hop_ms(self) -> float:
        return self.frame_ms - self.overlap_ms

    def frame_len(self, rate: int) -> int:
        n = int(np.floor(self.frame_ms * rate / 1000.0))
        if n < 1:
            raise InvalidConfig(f"{self.frame_ms} ms at {rate} Hz is shorter than one sample")
        return n

    def hop_len(self, rate: int) -> int:
        n = int(np.floor(self.hop_ms * rate / 1000.0))
        if n < 1:
            raise InvalidConfig(f"hop of {self.hop_ms} ms at {rate} Hz is shorter than one sample")
        return n


@dataclass
class Frame:
    samples: np.ndarray
    clip_index: int
    start_sample: int


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        yield cid, body, size
        pos = body + size + (size & 1)


def _decode(data: bytes, path: str) -> AudioClip:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body, size in _chunks(data):
        if body + size > len(data):
            raise MalformedHeader(
                f"{path}: chunk {cid!r} declares {size} bytes, only {len(data) - body} present"
            )
        if cid == b"fmt ":
            if size < 16:
                raise MalformedHeader(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", data, body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise MalformedHeader(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
                sub = struct.unpack_from("<H", data, body + 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = data[body:body + size]
            break

    if fmt is None:
        raise MalformedHeader(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedHeader(f"{path}: missing data chunk")

    code, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedHeader(f"{path}: channels={channels}, rate={rate}")
    if code == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif code == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"{path}: format code {code} with {bits} bits per sample")
    if block_align != channels * dtype.itemsize:
        raise MalformedHeader(f"{path}: block_align {block_align} inconsistent with format")

    n_frames = len(payload) // block_align
    raw = np.frombuffer(payload[:n_frames * block_align], dtype=dtype)
    samples = raw.astype(np.float64).reshape(n_frames, channels) / scale
    mono = samples.mean(axis=1) if channels > 1 else samples[:, 0]
    # float WAVs may overshoot full scale slightly
    mono = np.clip(mono, -1.0, 1.0)
    return AudioClip(mono, int(rate), path)


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 RIFF/WAVE file into a mono clip in [-1, 1].

    Multi-channel audio is downmixed by averaging the channels of each sample.
    """
    path = str(path)
    data = Path(path).read_bytes()
    return _decode(data, path)


def wav_bytes(samples, rate: int, channels: int = 1, float32: bool = False) -> bytes:
    """Encode interleaved samples in [-1, 1] as a RIFF/WAVE byte string."""
    x = np.asarray(samples, dtype=np.float64)
    if float32:
        code, body = WAVE_FORMAT_IEEE_FLOAT, x.astype("<f4").tobytes()
        width = 4
    else:
        ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        code, body = WAVE_FORMAT_PCM, ints.tobytes()
        width = 2
    fmt = struct.pack("<HHIIHH", code, channels, rate, rate * channels * width,
                      channels * width, 8 * width)
    out = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        out += b"\x00"
    return b"RIFF" + struct.pack("<I", len(out)) + out


def write_wav(path, samples, rate: int, channels: int = 1, float32: bool = False) -> None:
    Path(path).write_bytes(wav_bytes(samples, rate, channels, float32))


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_matrix(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Stack the full frames of ``samples`` into a (count, frame_len) array.

    Trailing samples that do not fill a frame are dropped.
    """
    n = frame_count(samples.size, frame_len, hop)
    if n == 0:
        return np.empty((0, frame_len), dtype=np.float64)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def frame_clip(clip: AudioClip, spec: FrameSpec = FrameSpec()) -> list[Frame]:
    rate = clip.sample_rate_hz
    frame_len, hop = spec.frame_len(rate), spec.hop_len(rate)
    mat = frame_matrix(clip.samples, frame_len, hop)
    return [Frame(row, i, i * hop) for i, row in enumerate(mat)]

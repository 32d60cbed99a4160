"""MFCC extraction, the log-mel-energy silence gate and labeled frame datasets."""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import FrameSpec, frame_matrix, load_wav
from .errors import DataError, InvalidConfig, LengthMismatch

N_COEFFS = 13
SPEECH, NONSPEECH = 1, -1
CLASS_LABELS = {"speech": SPEECH, "music": NONSPEECH, "noise": NONSPEECH}

VADF_MAGIC = b"VADF"
VADF_VERSION = 1
META_MAGIC = b"META"
_ROW = np.dtype([("coeffs", "<f4", (N_COEFFS,)), ("label", "i1"),
                 ("clip", "<u4"), ("frame", "<u4")])


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = N_COEFFS
    n_filters: int = 26
    fft_size: int | None = None  # None: smallest power of two >= frame length
    preemphasis: float = 0.97
    mel_low_hz: float = 0.0
    mel_high_hz: float | None = None  # None: Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 1 <= self.n_coeffs <= self.n_filters:
            raise InvalidConfig("need 1 <= n_coeffs <= n_filters")
        if not 0.0 <= self.preemphasis < 1.0:
            raise InvalidConfig("preemphasis must lie in [0, 1)")
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive")

    def resolved_fft_size(self, frame_len: int) -> int:
        if self.fft_size is None:
            return 1 << max(frame_len - 1, 0).bit_length()
        if self.fft_size < frame_len:
            raise InvalidConfig(f"fft_size {self.fft_size} < frame length {frame_len}")
        return self.fft_size

    def band(self, rate: int) -> tuple[float, float]:
        high = rate / 2.0 if self.mel_high_hz is None else self.mel_high_hz
        if not 0 <= self.mel_low_hz < high <= rate / 2.0:
            raise InvalidConfig(
                f"mel band [{self.mel_low_hz}, {high}] invalid for rate {rate}"
            )
        return self.mel_low_hz, high


@dataclass(frozen=True)
class GateConfig:
    energy_threshold: float

    def __post_init__(self):
        if not np.isfinite(self.energy_threshold):
            raise InvalidConfig("gate threshold must be finite")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, fft_size: int, rate: int,
                   low_hz: float = 0.0, high_hz: float | None = None) -> np.ndarray:
    """Triangular filters over the rfft bins, shape (n_filters, fft_size // 2 + 1).

    Filter edges are evaluated on each bin's exact frequency rather than
    snapped to bins, so narrow low-frequency filters never vanish.
    """
    if high_hz is None:
        high_hz = rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_filters + 2))
    freqs = np.arange(fft_size // 2 + 1) * rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row k holds basis function k."""
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * t + 1) / (2 * n))
    d[0] /= np.sqrt(2.0)
    return d


class MfccExtractor:
    """Precomputed filterbank and DCT for one (frame length, rate, config)."""

    def __init__(self, frame_len: int, rate: int, cfg: MfccConfig = MfccConfig()):
        if frame_len < 1:
            raise InvalidConfig("frame length must be at least one sample")
        self.frame_len = frame_len
        self.rate = rate
        self.cfg = cfg
        self.fft_size = cfg.resolved_fft_size(frame_len)
        low, high = cfg.band(rate)
        self.window = np.hamming(frame_len) if frame_len > 1 else np.ones(1)
        self.fbank = mel_filterbank(cfg.n_filters, self.fft_size, rate, low, high)
        self.dct = dct_matrix(cfg.n_filters)[:cfg.n_coeffs]

    def log_mel(self, frames: np.ndarray) -> np.ndarray:
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if frames.shape[1] != self.frame_len:
            raise InvalidConfig(f"frames have length {frames.shape[1]}, expected {self.frame_len}")
        emph = frames.copy()
        emph[:, 1:] -= self.cfg.preemphasis * frames[:, :-1]
        spec = np.fft.rfft(emph * self.window, n=self.fft_size, axis=1)
        power = spec.real ** 2 + spec.imag ** 2
        return np.log(power @ self.fbank.T + self.cfg.log_floor)

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        """MFCCs for a (count, frame_len) stack; returns (count, n_coeffs)."""
        return self.log_mel(frames) @ self.dct.T


def mfcc(frame, rate: int, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """13 MFCCs of a single frame; element 0 is the log-mel energy term.

    Accepts either a raw sample array or an ``audio_io.Frame``.
    """
    samples = getattr(frame, "samples", frame)
    samples = np.asarray(samples, dtype=np.float64)
    return MfccExtractor(samples.size, rate, cfg)(samples[None, :])[0]


def is_silent(fv, gate: GateConfig) -> bool:
    return bool(fv[0] < gate.energy_threshold)


def silent_mask(vectors: np.ndarray, gate: GateConfig) -> np.ndarray:
    return np.asarray(vectors)[:, 0] < gate.energy_threshold


@dataclass
class LabeledDataset:
    """Rows of MFCC vectors with +1 (speech) / -1 (non-speech) labels.

    ``clip_ids`` index into ``paths``; together with ``frame_idx`` they give
    each row's provenance.
    """

    vectors: np.ndarray
    labels: np.ndarray
    clip_ids: np.ndarray | None = None
    frame_idx: np.ndarray | None = None
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim == 1:
            self.vectors = self.vectors.reshape(-1, 1) if self.vectors.size else \
                self.vectors.reshape(0, N_COEFFS)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        n = self.vectors.shape[0]
        if self.labels.size != n:
            raise LengthMismatch(f"{n} vectors but {self.labels.size} labels")
        if not np.all(np.isin(self.labels, (SPEECH, NONSPEECH))):
            raise DataError("labels must be +1 or -1")
        if self.clip_ids is None:
            self.clip_ids = np.zeros(n, dtype=np.uint32)
        if self.frame_idx is None:
            self.frame_idx = np.arange(n, dtype=np.uint32)
        self.clip_ids = np.asarray(self.clip_ids, dtype=np.uint32)
        self.frame_idx = np.asarray(self.frame_idx, dtype=np.uint32)

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, idx) -> LabeledDataset:
        idx = np.asarray(idx)
        return LabeledDataset(self.vectors[idx], self.labels[idx], self.clip_ids[idx],
                              self.frame_idx[idx], list(self.paths))

    def class_counts(self) -> dict[str, int]:
        return {"speech": int(np.sum(self.labels == SPEECH)),
                "nonspeech": int(np.sum(self.labels == NONSPEECH))}

    def provenance(self, i: int) -> tuple[str, int]:
        cid = int(self.clip_ids[i])
        path = self.paths[cid] if cid < len(self.paths) else ""
        return path, int(self.frame_idx[i])

    @staticmethod
    def concatenate(parts: list[LabeledDataset]) -> LabeledDataset:
        paths: list[str] = []
        clip_ids = []
        for p in parts:
            clip_ids.append(p.clip_ids.astype(np.int64) + len(paths))
            paths.extend(p.paths)
        return LabeledDataset(
            np.concatenate([p.vectors for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate(clip_ids),
            np.concatenate([p.frame_idx for p in parts]),
            paths,
        )


def read_manifest(path) -> list[tuple[str, str]]:
    """Parse a ``path,label`` CSV; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["path", "label"]:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 'path,label', got {row!r}")
            wav, label = row[0].strip(), row[1].strip().lower()
            if label not in CLASS_LABELS:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            p = Path(wav)
            rows.append((str(p if p.is_absolute() else base / p), label))
    return rows


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for wav, label in rows:
            w.writerow([wav, label])


def _clip_features(path: str, spec: FrameSpec, cfg: MfccConfig) -> np.ndarray:
    try:
        clip = load_wav(path)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    rate = clip.sample_rate_hz
    frames = frame_matrix(clip.samples, spec.frame_len(rate), spec.hop_len(rate))
    if frames.shape[0] == 0:
        return np.empty((0, cfg.n_coeffs))
    return MfccExtractor(frames.shape[1], rate, cfg)(frames)


def default_gate_threshold(vectors: np.ndarray, labels: np.ndarray, q: float = 5.0) -> float:
    """5th percentile of coefficient 0 over speech rows."""
    speech = np.asarray(vectors)[np.asarray(labels) == SPEECH, 0]
    if speech.size == 0:
        raise DataError("no speech frames to derive a gate threshold from")
    return float(np.percentile(speech, q))


def extract_dataset(manifest, spec: FrameSpec = FrameSpec(), cfg: MfccConfig = MfccConfig(),
                    gate: GateConfig | None = None, drop_silent: bool = True,
                    jobs: int = 1) -> tuple[LabeledDataset, GateConfig]:
    """Frame and featurize every file in ``manifest`` in manifest order.

    With ``drop_silent`` set, speech frames whose log-mel energy falls below
    the gate are omitted. ``gate=None`` derives the threshold from the speech
    frames themselves. Returns the dataset and the gate actually applied.
    """
    manifest = list(manifest)
    paths = [str(p) for p, _ in manifest]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        feats = list(pool.map(lambda p: _clip_features(p, spec, cfg), paths))

    vectors, labels, clip_ids, frame_idx = [], [], [], []
    for cid, ((_, label), fv) in enumerate(zip(manifest, feats)):
        y = CLASS_LABELS[label] if isinstance(label, str) else int(label)
        vectors.append(fv)
        labels.append(np.full(len(fv), y, dtype=np.int8))
        clip_ids.append(np.full(len(fv), cid, dtype=np.uint32))
        frame_idx.append(np.arange(len(fv), dtype=np.uint32))
    data = LabeledDataset(
        np.concatenate(vectors) if vectors else np.empty((0, cfg.n_coeffs)),
        np.concatenate(labels) if labels else np.empty(0),
        np.concatenate(clip_ids) if clip_ids else None,
        np.concatenate(frame_idx) if frame_idx else None,
        paths,
    )
    if not np.all(np.isfinite(data.vectors)):
        raise DataError("non-finite MFCC values produced")
    if gate is None:
        gate = GateConfig(default_gate_threshold(data.vectors, data.labels))
    if drop_silent:
        keep = ~((data.labels == SPEECH) & silent_mask(data.vectors, gate))
        data = data.subset(np.flatnonzero(keep))
    return data, gate


def save_features(path, data: LabeledDataset, meta: dict | None = None) -> None:
    """Write the VADF binary; ``meta`` (plus the clip paths) goes in a JSON trailer."""
    if data.dim != N_COEFFS:
        raise InvalidConfig(f"feature files hold {N_COEFFS}-dim rows, got {data.dim}")
    rows = np.empty(len(data), dtype=_ROW)
    rows["coeffs"] = data.vectors.astype(np.float32)
    rows["label"] = data.labels
    rows["clip"] = data.clip_ids
    rows["frame"] = data.frame_idx
    trailer = dict(meta or {})
    trailer["paths"] = list(data.paths)
    blob = json.dumps(trailer, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VADF_MAGIC + struct.pack("<III", VADF_VERSION, len(data), N_COEFFS))
        fh.write(rows.tobytes())
        fh.write(META_MAGIC + struct.pack("<I", len(blob)) + blob)


def load_features(path) -> tuple[LabeledDataset, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != VADF_MAGIC:
        raise DataError(f"{path}: not a VADF feature file")
    version, n, dim = struct.unpack_from("<III", raw, 4)
    if version != VADF_VERSION or dim != N_COEFFS:
        raise DataError(f"{path}: unsupported VADF version {version} / dim {dim}")
    end = 16 + n * _ROW.itemsize
    if len(raw) < end:
        raise DataError(f"{path}: truncated, expected {n} rows")
    rows = np.frombuffer(raw, dtype=_ROW, count=n, offset=16)
    meta: dict = {}
    if raw[end:end + 4] == META_MAGIC:
        (size,) = struct.unpack_from("<I", raw, end + 4)
        meta = json.loads(raw[end + 8:end + 8 + size].decode("utf-8"))
    data = LabeledDataset(rows["coeffs"].astype(np.float64), rows["label"],
                          rows["clip"], rows["frame"], meta.pop("paths", []))
    return data, meta


def config_dict(spec: FrameSpec, cfg: MfccConfig) -> dict:
    return {"frame": asdict(spec), "mfcc": asdict(cfg)}

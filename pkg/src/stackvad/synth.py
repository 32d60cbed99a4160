"""Seeded synthetic speech / music / noise corpus for desk-scale experiments.

Speech-like clips are syllable trains: a glottal harmonic stack with a
drifting pitch, shaped by per-syllable formant resonances and a smooth
syllabic envelope, with occasional fricative noise bursts and a colored
background at a random SNR. Non-speech clips alternate between stationary
colored noise and "music": sustained constant-pitch harmonic notes and chords.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import write_wav
from .errors import InvalidConfig
from .features import write_manifest


@dataclass(frozen=True)
class SynthSpec:
    n_speech: int = 10
    n_nonspeech: int = 10
    duration_s: float = 2.0
    rate: int = 16000
    seed: int = 0
    snr_db: tuple[float, float] = (10.0, 30.0)

    def __post_init__(self):
        if self.n_speech < 0 or self.n_nonspeech < 0 or self.n_speech + self.n_nonspeech == 0:
            raise InvalidConfig("need a positive number of clips")
        if self.duration_s <= 0 or self.rate < 8000:
            raise InvalidConfig("duration must be positive and rate at least 8 kHz")
        if self.snr_db[0] > self.snr_db[1]:
            raise InvalidConfig("snr_db must be an ordered (low, high) pair")


def colored_noise(rng: np.random.Generator, n: int, rate: int, tilt: float,
                  band: tuple[float, float] | None = None) -> np.ndarray:
    """Gaussian noise with a 1/f^tilt power spectrum, optionally band-limited."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    shape = 1.0 / np.maximum(f, 20.0) ** (tilt / 2.0)
    if band is not None:
        lo, hi = band
        shape *= 1.0 / (1.0 + ((f - 0.5 * (lo + hi)) / (0.5 * (hi - lo))) ** 4)
    x = np.fft.irfft(spec * shape, n)
    return x / (np.std(x) + 1e-12)


def _envelope(n: int, rise: int) -> np.ndarray:
    env = np.ones(n)
    rise = max(1, min(rise, n // 2))
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, rise))
    env[:rise] = ramp
    env[n - rise:] = ramp[::-1]
    return env


def _harmonics(phase: np.ndarray, f0: np.ndarray, amps_fn, rate: int) -> np.ndarray:
    n_harm = int(0.45 * rate / max(float(f0.min()), 50.0))
    out = np.zeros_like(phase)
    for k in range(1, n_harm + 1):
        fk = k * f0
        a = amps_fn(fk) * (fk < 0.45 * rate)
        out += a * np.sin(k * phase)
    return out


def speech_clip(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    rate = spec.rate
    n = int(round(spec.duration_s * rate))
    out = np.zeros(n)
    base_f0 = rng.uniform(90.0, 240.0)
    pos = int(rng.uniform(0.0, 0.15) * rate)
    while pos < n:
        seg = int(rng.uniform(0.12, 0.32) * rate)
        seg = min(seg, n - pos)
        if seg < 16:
            break
        t = np.arange(seg) / rate
        if rng.random() < 0.2:
            # fricative
            burst = colored_noise(rng, seg, rate, rng.uniform(-1.0, 0.5),
                                  band=(rng.uniform(2500, 4000), rng.uniform(5000, 7500)))
            syl = 0.5 * burst
        else:
            contour = 1.0 + rng.uniform(-0.25, 0.25) * t / max(t[-1], 1e-3)
            jitter = 1.0 + 0.01 * np.cumsum(rng.standard_normal(seg)) / np.sqrt(seg)
            f0 = base_f0 * contour * jitter
            phase = 2 * np.pi * np.cumsum(f0) / rate
            formants = [(rng.uniform(300, 900), rng.uniform(60, 120)),
                        (rng.uniform(900, 2400), rng.uniform(80, 160)),
                        (rng.uniform(2300, 3300), rng.uniform(120, 250))]

            def amps(fk, formants=formants):
                env = sum(g / (1.0 + ((fk - fc) / bw) ** 2)
                          for (fc, bw), g in zip(formants, (1.0, 0.6, 0.3)))
                return env / np.sqrt(fk / 100.0)

            syl = _harmonics(phase, f0, amps, rate)
            syl /= np.std(syl) + 1e-12
        env = np.sin(np.pi * np.arange(seg) / seg) ** rng.uniform(0.3, 1.0)
        out[pos:pos + seg] += syl * env * rng.uniform(0.4, 1.0)
        pos += seg + int(rng.uniform(0.01, 0.08) * rate)
    return out


def music_clip(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    rate = spec.rate
    n = int(round(spec.duration_s * rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.3, 1.0) * rate), n - pos)
        voices = rng.integers(1, 4)
        root = 110.0 * 2 ** (rng.integers(0, 36) / 12.0)
        decay = rng.uniform(0.5, 2.0)
        note = np.zeros(seg)
        for v in range(voices):
            f = root * 2 ** (rng.choice([0, 4, 7, 12]) / 12.0)
            f0 = np.full(seg, f)
            phase = 2 * np.pi * np.cumsum(f0) / rate
            note += _harmonics(phase, f0, lambda fk, f=f: (fk / f) ** -decay, rate)
        note /= np.std(note) + 1e-12
        attack = np.exp(-np.arange(seg) / (rate * rng.uniform(0.2, 2.0)))
        note *= _envelope(seg, int(0.01 * rate)) * (0.4 + 0.6 * attack)
        out[pos:pos + seg] += note
        pos += seg
    return out


def noise_clip(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    n = int(round(spec.duration_s * spec.rate))
    return colored_noise(rng, n, spec.rate, rng.uniform(0.2, 1.6))


def make_clip(spec: SynthSpec, index: int) -> tuple[np.ndarray, str]:
    """Clip ``index`` of the corpus and its class name; independent of other clips."""
    rng = np.random.default_rng([spec.seed, index])
    if index < spec.n_speech:
        x, label = speech_clip(rng, spec), "speech"
        bg = colored_noise(rng, x.size, spec.rate, rng.uniform(0.2, 1.6))
        snr = rng.uniform(*spec.snr_db)
        x = x / (np.std(x) + 1e-12) + bg * 10 ** (-snr / 20.0)
    elif (index - spec.n_speech) % 2 == 0:
        x, label = music_clip(rng, spec), "music"
    else:
        x, label = noise_clip(rng, spec), "noise"
    level = rng.uniform(0.05, 0.7)
    x = x * (level / (np.max(np.abs(x)) + 1e-12))
    return x, label


def generate_corpus(out_dir, spec: SynthSpec = SynthSpec()) -> Path:
    """Write the clips as 16-bit WAVs plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(spec.n_speech + spec.n_nonspeech):
        x, label = make_clip(spec, i)
        name = f"{label}-{i:04d}.wav"
        write_wav(out_dir / name, x, spec.rate)
        rows.append((name, label))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest

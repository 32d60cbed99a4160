import math

import numpy as np
import pytest
import scipy.fft
import scipy.signal.windows
from hypothesis import given, settings
from hypothesis import strategies as st

from stackvad.audio_io import AudioClip, FrameSpec, frame_clip, write_wav
from stackvad.errors import DataError, InvalidConfig
from stackvad.features import (GateConfig, LabeledDataset, MfccConfig, MfccExtractor,
                               dct_matrix, extract_dataset, is_silent, load_features,
                               mel_filterbank, mfcc, read_manifest, save_features)

RATE = 16000


def reference_mfcc(x, rate, n_filters=26, n_coeffs=13, pre=0.97, nfft=512, floor=1e-10):
    """Loop-based MFCC with scipy's window and DCT."""
    y = np.array([x[0]] + [x[t] - pre * x[t - 1] for t in range(1, len(x))])
    y = y * scipy.signal.windows.hamming(len(x), sym=True)
    spec = np.abs(np.fft.rfft(y, nfft)) ** 2
    mel = lambda f: 2595 * math.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    top = mel(rate / 2)
    pts = [imel(top * i / (n_filters + 1)) for i in range(n_filters + 2)]
    energies = []
    for m in range(n_filters):
        lo, c, hi = pts[m], pts[m + 1], pts[m + 2]
        e = 0.0
        for b, p in enumerate(spec):
            f = b * rate / nfft
            if lo < f <= c:
                e += p * (f - lo) / (c - lo)
            elif c < f < hi:
                e += p * (hi - f) / (hi - c)
        energies.append(math.log(e + floor))
    return scipy.fft.dct(np.array(energies), type=2, norm="ortho")[:n_coeffs]


def test_matches_reference_pipeline():
    x = np.random.default_rng(3).normal(0, 0.1, 400)
    np.testing.assert_allclose(mfcc(x, RATE), reference_mfcc(x, RATE), rtol=1e-10, atol=1e-9)


def test_zero_frame():
    fv = mfcc(np.zeros(400), RATE)
    assert fv.shape == (13,)
    assert fv[0] == pytest.approx(math.sqrt(1 / 26) * 26 * math.log(1e-10), rel=1e-12)
    np.testing.assert_allclose(fv[1:], 0.0, atol=1e-12)


def test_sign_flip_invariance():
    x = np.random.default_rng(1).normal(0, 0.2, 400)
    np.testing.assert_array_equal(mfcc(x, RATE), mfcc(-x, RATE))


@pytest.mark.parametrize("gain", [0.1, 0.5, 2.0, 7.0])
def test_gain_shifts_only_energy_term(gain):
    # the log floor must be negligible next to every filter energy for the shift to be exact
    cfg = MfccConfig(log_floor=1e-30)
    x = np.random.default_rng(2).normal(0, 0.1, 400)
    a, b = mfcc(x, RATE, cfg), mfcc(gain * x, RATE, cfg)
    assert b[0] - a[0] == pytest.approx(2 * math.log(gain) * 26 * math.sqrt(1 / 26), abs=1e-6)
    np.testing.assert_allclose(b[1:], a[1:], atol=1e-9)


def test_accepts_frame_objects():
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 800), RATE)
    fr = frame_clip(clip)[2]
    np.testing.assert_array_equal(mfcc(fr, RATE), mfcc(fr.samples, RATE))


def test_fft_smaller_than_frame_rejected():
    with pytest.raises(InvalidConfig):
        mfcc(np.zeros(400), RATE, MfccConfig(fft_size=256))
    assert MfccConfig().resolved_fft_size(400) == 512
    assert MfccConfig().resolved_fft_size(512) == 512


def test_config_invariants():
    with pytest.raises(InvalidConfig):
        MfccConfig(n_coeffs=30, n_filters=26)
    with pytest.raises(InvalidConfig):
        MfccExtractor(400, RATE, MfccConfig(mel_high_hz=9000))


def test_deterministic():
    x = np.random.default_rng(5).normal(0, 0.3, 400)
    assert mfcc(x, RATE).tobytes() == mfcc(x.copy(), RATE).tobytes()


def test_batch_matches_single_frames():
    frames = np.random.default_rng(6).normal(0, 0.1, (7, 400))
    batch = MfccExtractor(400, RATE)(frames)
    for row, fr in zip(batch, frames):
        np.testing.assert_allclose(row, mfcc(fr, RATE), rtol=0, atol=1e-10)


def test_dct_orthonormal():
    d = dct_matrix(26)
    v = np.random.default_rng(0).normal(size=26)
    np.testing.assert_allclose(d.T @ (d @ v), v, atol=1e-9)
    np.testing.assert_allclose(d, scipy.fft.dct(np.eye(26), norm="ortho", axis=0), atol=1e-12)


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank(26, 512, RATE)
    assert fb.shape == (26, 257)
    assert np.all(fb >= 0)
    freqs = np.arange(257) * RATE / 512
    interior = (freqs > 0) & (freqs < RATE / 2)
    assert np.all(fb[:, interior].sum(axis=0) > 0)
    for k, w in enumerate(fb):
        nz = np.flatnonzero(w)
        peak = np.argmax(w)
        # single peak: rises then falls
        assert np.all(np.diff(w[nz[0]:peak + 1]) >= 0)
        assert np.all(np.diff(w[peak:nz[-1] + 1]) <= 0)
        if k + 1 < len(fb):
            assert np.any((w > 0) & (fb[k + 1] > 0))


def test_is_silent_boundary():
    assert is_silent(np.r_[-50.0, np.zeros(12)], GateConfig(-30))
    assert not is_silent(np.r_[-30.0, np.zeros(12)], GateConfig(-30))
    with pytest.raises(InvalidConfig):
        GateConfig(float("nan"))


def test_gate_opens_as_gain_grows():
    x = np.random.default_rng(9).normal(0, 1e-4, 400)
    gate = GateConfig(-10.0)
    states = [is_silent(mfcc(g * x, RATE), gate) for g in 10.0 ** np.arange(0, 6)]
    assert states[0] and not states[-1]
    # once open it stays open
    first_open = states.index(False)
    assert not any(states[first_open:])


@pytest.fixture
def small_manifest(tmp_path):
    rng = np.random.default_rng(0)
    write_wav(tmp_path / "noise.wav", rng.uniform(-0.3, 0.3, RATE), RATE)
    write_wav(tmp_path / "quiet.wav", np.zeros(RATE), RATE)
    write_wav(tmp_path / "talk.wav", rng.uniform(-0.3, 0.3, RATE // 2), RATE)
    return tmp_path


def test_extract_noise_file(small_manifest):
    data, _ = extract_dataset([(str(small_manifest / "noise.wav"), "noise")],
                              gate=GateConfig(-100.0))
    assert len(data) == 98
    assert np.all(data.labels == -1)
    assert data.dim == 13


def test_extract_silent_speech_dropped_or_kept(small_manifest):
    rows = [(str(small_manifest / "quiet.wav"), "speech")]
    floor_value = 26 * math.sqrt(1 / 26) * math.log(1e-10)
    gate = GateConfig(floor_value + 1.0)
    dropped, _ = extract_dataset(rows, gate=gate, drop_silent=True)
    assert len(dropped) == 0
    kept, _ = extract_dataset(rows, gate=gate, drop_silent=False)
    assert len(kept) == 98 and np.all(kept.labels == 1)


def test_extract_preserves_manifest_then_frame_order(small_manifest):
    rows = [(str(small_manifest / "talk.wav"), "speech"),
            (str(small_manifest / "noise.wav"), "music")]
    data, gate = extract_dataset(rows, drop_silent=False, jobs=3)
    key = list(zip(data.clip_ids.tolist(), data.frame_idx.tolist()))
    assert key == sorted(key)
    assert data.provenance(0) == (rows[0][0], 0)
    assert data.provenance(len(data) - 1) == (rows[1][0], 97)
    assert np.isfinite(gate.energy_threshold)


def test_extract_missing_file_names_path(tmp_path):
    missing = str(tmp_path / "nope.wav")
    with pytest.raises(DataError, match="nope.wav"):
        extract_dataset([(missing, "speech")])


def test_only_nonspeech_speech_threshold_needs_gate(small_manifest):
    with pytest.raises(DataError):
        extract_dataset([(str(small_manifest / "noise.wav"), "noise")])


def test_manifest_parsing(tmp_path):
    (tmp_path / "m.csv").write_text("path,label\na.wav,speech\n\nsub/b.wav,Music\n")
    rows = read_manifest(tmp_path / "m.csv")
    assert rows == [(str(tmp_path / "a.wav"), "speech"), (str(tmp_path / "sub/b.wav"), "music")]
    (tmp_path / "bad.csv").write_text("a.wav,cat\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "bad.csv")


def test_feature_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    data = LabeledDataset(rng.normal(size=(5, 13)), [1, -1, 1, 1, -1],
                          [0, 0, 1, 1, 1], [0, 1, 0, 1, 2], ["a.wav", "b.wav"])
    save_features(tmp_path / "f.vadf", data, {"seed": 4})
    back, meta = load_features(tmp_path / "f.vadf")
    np.testing.assert_array_equal(back.vectors, data.vectors.astype(np.float32))
    np.testing.assert_array_equal(back.labels, data.labels)
    np.testing.assert_array_equal(back.clip_ids, data.clip_ids)
    np.testing.assert_array_equal(back.frame_idx, data.frame_idx)
    assert back.paths == ["a.wav", "b.wav"] and meta == {"seed": 4}
    raw = (tmp_path / "f.vadf").read_bytes()
    assert raw[:4] == b"VADF"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [1, 5, 13]
    # 13 float32 + int8 + u32 + u32 per row
    assert raw[16 + 5 * 61:16 + 5 * 61 + 4] == b"META"


def test_feature_file_rejects_garbage(tmp_path):
    (tmp_path / "g.vadf").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError):
        load_features(tmp_path / "g.vadf")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
def test_sign_invariance_property(samples):
    x = np.asarray(samples)
    cfg = MfccConfig(n_filters=8, n_coeffs=8)
    np.testing.assert_array_equal(mfcc(x, 8000, cfg), mfcc(-x, 8000, cfg))

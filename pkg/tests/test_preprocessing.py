import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import sine, single_bin_amplitude
from pcgvae.preprocessing import (AudioRecord, CropBatch, FormatError, IngestionError, ManifestError, PreprocessConfig,
                                  clip_percentile, load_manifest, lowpass_filter, make_crop_batch, mulaw_bin_bound,
                                  mulaw_decode, mulaw_encode, random_crops, read_wav, rescale_unit, stratified_split,
                                  write_wav)


def wav_bytes(samples, rate=4000, channels=1, bits=16):
    """RIFF/WAVE container assembled field by field."""
    width = bits // 8
    data = struct.pack(f"<{len(samples)}h", *samples) if bits == 16 else bytes(len(samples) * width)
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * channels * width, channels * width, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def percentile_oracle(values, p):
    s = sorted(abs(v) for v in values)
    pos = p / 100 * (len(s) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


# --------------------------------------------------------------- ingestion

def test_manifest_byte_level_wav(tmp_path):
    (tmp_path / "a.wav").write_bytes(wav_bytes([0, 16384, -32768]))
    (tmp_path / "m.csv").write_text("path,label\na.wav,Normal\n")
    recs = load_manifest(tmp_path / "m.csv")
    assert len(recs) == 1 and recs[0].label == "Normal" and recs[0].sample_rate == 4000
    np.testing.assert_array_equal(recs[0].samples, [0.0, 0.5, -1.0])


def test_write_wav_matches_byte_oracle(tmp_path):
    write_wav(tmp_path / "w.wav", np.array([0.0, 0.5, -1.0]))
    samples, rate = read_wav(tmp_path / "w.wav")
    assert rate == 4000
    assert (tmp_path / "w.wav").read_bytes()[44:] == struct.pack("<3h", 0, 16384, -32767)


def test_manifest_errors(tmp_path):
    (tmp_path / "empty.csv").write_text("path,label\n")
    assert load_manifest(tmp_path / "empty.csv") == []
    (tmp_path / "a.wav").write_bytes(wav_bytes([1, 2, 3]))
    (tmp_path / "weird.csv").write_text("path,label\na.wav,Weird\n")
    with pytest.raises(ManifestError, match="row 1"):
        load_manifest(tmp_path / "weird.csv")
    (tmp_path / "missing.csv").write_text("path,label\nnope.wav,Normal\n")
    with pytest.raises(IngestionError, match="nope.wav"):
        load_manifest(tmp_path / "missing.csv")
    (tmp_path / "st.wav").write_bytes(wav_bytes([1, 2, 3, 4], channels=2))
    with pytest.raises(FormatError, match="mono"):
        read_wav(tmp_path / "st.wav")
    (tmp_path / "b8.wav").write_bytes(wav_bytes([1, 2, 3], bits=8))
    with pytest.raises(FormatError, match="8-bit"):
        read_wav(tmp_path / "b8.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "junk.wav")


def test_record_invariants():
    with pytest.raises(ValueError):
        AudioRecord(np.zeros(0), 4000, "Normal", "x")
    with pytest.raises(ValueError):
        AudioRecord(np.zeros(3), 0, "Normal", "x")
    with pytest.raises(ManifestError):
        AudioRecord(np.zeros(3), 4000, "normal", "x")
    with pytest.raises(ValueError):
        PreprocessConfig(crop_length=6000)
    with pytest.raises(ValueError):
        PreprocessConfig(clip_percentile=0)


# ----------------------------------------------------------------- signal chain

def test_clip_examples():
    np.testing.assert_array_equal(clip_percentile([0, 0, 0], 99.9), [0, 0, 0])
    np.testing.assert_allclose(clip_percentile([1, -2, 3, -100], 75), [1, -2, 3, -27.25])
    x = np.random.default_rng(0).standard_normal(50)
    np.testing.assert_array_equal(clip_percentile(x, 100), x)
    with pytest.raises(ValueError):
        clip_percentile([], 50)


def test_clip_matches_sort_interpolate_oracle():
    g = np.random.default_rng(1)
    for _ in range(100):
        x = g.standard_normal(int(g.integers(1, 400))) * g.uniform(0.1, 10)
        p = float(g.uniform(1, 100))
        t = percentile_oracle(x.tolist(), p)
        np.testing.assert_allclose(clip_percentile(x, p), np.clip(x, -t, t), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.5, 100))
def test_clip_never_grows(values, p):
    x = np.array(values)
    y = clip_percentile(x, p)
    assert np.all(np.abs(y) <= np.abs(x) + 1e-12)
    assert y.min() >= x.min() - 1e-12 and y.max() <= x.max() + 1e-12


def test_lowpass_examples():
    np.testing.assert_allclose(lowpass_filter(np.full(4096, 0.5)), 0.5, atol=1e-3)
    with pytest.raises(ValueError):
        lowpass_filter(np.zeros(10), 2000.0, 4000.0)
    assert lowpass_filter(np.zeros(37)).shape == (37,)


def _gain_db(freq):
    # 8000 samples; measure a central 6000-sample window holding whole cycles
    y = lowpass_filter(sine(freq, n=8000))[1000:7000]
    return 20 * np.log10(single_bin_amplitude(y, freq) / single_bin_amplitude(sine(freq, n=8000)[1000:7000], freq))


def test_lowpass_50hz_and_1000hz():
    assert abs(_gain_db(50.0)) <= 1.0
    assert _gain_db(1000.0) <= -40.0


def test_lowpass_band_contract():
    step = 2 / 3  # whole number of cycles in 6000 samples at 4 kHz
    passband = [k * step for k in range(1, int(0.8 * 195 / step) + 1)]
    stopband = [k * step for k in range(int(np.ceil(2 * 195 / step)), int(1999 / step))]
    assert max(abs(_gain_db(f)) for f in passband) <= 1.0
    assert max(_gain_db(f) for f in stopband[::3]) <= -40.0


def test_rescale_examples():
    np.testing.assert_array_equal(rescale_unit([-2, 0, 2]), [-1, 0, 1])
    np.testing.assert_array_equal(rescale_unit([0, 0]), [0, 0])
    np.testing.assert_allclose(rescale_unit([0.1, -0.4, 0.2]), [0.25, -1.0, 0.5])
    x = np.random.default_rng(4).standard_normal(20)
    once = rescale_unit(x)
    np.testing.assert_array_equal(rescale_unit(once), once)
    assert np.max(np.abs(once)) == 1.0


# ---------------------------------------------------------------------- crops

def test_crops_exact_length():
    cfg = PreprocessConfig(crop_length=64, crops_per_signal=3)
    x = np.random.default_rng(0).uniform(-1, 1, 64)
    c = random_crops(x, cfg)
    assert c.shape == (3, 64)
    for row in c:
        np.testing.assert_array_equal(row, x)


def test_crops_deterministic_offsets():
    cfg = PreprocessConfig(crop_length=128, crops_per_signal=5, rng_seed=42)
    x = np.arange(256, dtype=float)
    a, b = random_crops(x, cfg, 3), random_crops(x, cfg, 3)
    np.testing.assert_array_equal(a, b)
    for row in a:
        np.testing.assert_array_equal(np.diff(row), 1.0)
    assert not np.array_equal(a, random_crops(x, cfg, 4))


def test_crops_reflect_pad():
    L = 128
    cfg = PreprocessConfig(crop_length=L, crops_per_signal=2)
    x = np.random.default_rng(2).uniform(-1, 1, L // 2)
    c = random_crops(x, cfg)
    n = len(x)
    period = 2 * (n - 1)
    mirror = [i % period if i % period < n else period - i % period for i in range(L)]
    expected = x[mirror]
    assert mirror[n] == n - 2  # the padded part starts by mirroring the tail
    np.testing.assert_array_equal(c[0], expected)


def test_crop_batch_invariants_and_determinism():
    g = np.random.default_rng(5)
    recs = [AudioRecord(g.standard_normal(int(n)) * 3, 4000, lab, f"r{i}")
            for i, (n, lab) in enumerate([(900, "Normal"), (300, "Murmur"), (2000, "Extrasystole")])]
    cfg = PreprocessConfig(crop_length=512, crops_per_signal=4, rng_seed=9)
    a = make_crop_batch(recs, cfg)
    b = make_crop_batch(recs, cfg)
    assert a.crops.tobytes() == b.crops.tobytes() and a.quantized.tobytes() == b.quantized.tobytes()
    assert a.crops.shape == (12, 512)
    assert np.all(np.abs(a.crops) <= 1) and a.quantized.min() >= 0 and a.quantized.max() < 256
    np.testing.assert_array_equal(a.record_ids, np.repeat([0, 1, 2], 4))
    # per-record streams: dropping a record leaves the others unchanged
    c = make_crop_batch([recs[0], recs[2]], cfg, record_ids=[0, 2])
    np.testing.assert_array_equal(c.crops[4:], a.crops[8:])


# --------------------------------------------------------------------- mu-law

def test_mulaw_examples():
    assert mulaw_encode(0.0) == 128
    assert mulaw_encode(1.0) == 255 and mulaw_encode(-1.0) == 0
    counter = {}
    out = mulaw_encode(np.array([1.5, -2.0, 0.3]), counter=counter)
    assert counter["clamped"] == 2 and out[0] == 255 and out[1] == 0


def test_mulaw_round_trip_grid():
    x = np.linspace(-1, 1, 10_001)
    k = mulaw_encode(x)
    y = mulaw_decode(k)
    assert np.all(np.abs(y - x) <= mulaw_bin_bound(x) + 1e-12)
    assert np.all(np.diff(y) >= 0)
    np.testing.assert_array_equal(mulaw_encode(mulaw_decode(k)), k)
    # analytic bound from the expander's slope at the bin edge
    mu = 255.0
    c = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    slope_bound = np.log1p(mu) / mu * np.exp((np.abs(c) + 2 / 256) * np.log1p(mu)) * (1 / 256)
    assert np.all(np.abs(y - x) <= slope_bound + 1e-12)


# --------------------------------------------------------------------- splits

def _expected_val(n, f):
    return 0 if n < 2 else min(int(np.floor(n * f + 0.5)), n - 1)


def test_split_examples():
    labels = ["Normal"] * 10 + ["Murmur"] * 10
    tr, va = stratified_split(labels, 0.2, 0)
    assert sum(labels[i] == "Normal" for i in va) == 2 and sum(labels[i] == "Murmur" for i in va) == 2
    assert not set(tr) & set(va) and sorted(tr + va) == list(range(20))
    tr, va = stratified_split(labels, 0.0, 0)
    assert va == [] and tr == list(range(20))
    assert stratified_split(labels, 0.2, 3) == stratified_split(labels, 0.2, 3)


def test_split_counting_507():
    counts = {"Normal": 351, "Murmur": 110, "Extrasystole": 46}
    labels = [c for c, n in counts.items() for _ in range(n)]
    for f in (0.1, 0.2, 0.25, 0.3):
        tr, va = stratified_split(labels, f, 1)
        assert len(tr) + len(va) == 507
        for c, n in counts.items():
            got = sum(labels[i] == c for i in va)
            assert got == _expected_val(n, f)
            assert abs(got - n * f) <= 1


def test_split_tiny_class_stays_in_train(caplog):
    labels = ["Normal"] * 5 + ["Murmur"]
    tr, va = stratified_split(labels, 0.4, 0)
    assert 5 in tr and 5 not in va
    assert "kept in training" in caplog.text


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["Normal", "Murmur", "Extrasystole"]), min_size=1, max_size=80),
       st.floats(0, 0.9), st.integers(0, 100))
def test_split_properties(labels, f, seed):
    tr, va = stratified_split(labels, f, seed)
    assert sorted(tr + va) == list(range(len(labels))) and not set(tr) & set(va)
    for c in set(labels):
        n = labels.count(c)
        got = sum(labels[i] == c for i in va)
        assert got == _expected_val(n, f)

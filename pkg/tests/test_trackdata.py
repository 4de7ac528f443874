import json
import math
import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from syncasd.trackdata import (
    LOG_FLOOR,
    Corpus,
    CorpusFormatError,
    CorruptedCorpusError,
    SampleValidationError,
    corpus_checksums,
    decode_tensor,
    encode_tensor,
    extract_speaking_segments,
    load_corpus,
    make_sample,
    mfcc_from_wav,
    paint_segments,
    read_wav,
    save_corpus,
    silent_mfcc_row,
)


def _sample(id="a", T=5, hv=4, wv=4, ha=3, video="v0", seed=0):
    r = np.random.default_rng(seed)
    return make_sample(id, video, "t0", r.uniform(size=(T, hv, wv)), r.normal(size=(4 * T, ha)), (r.uniform(size=T) < 0.5).astype(np.int8))


# ------------------------------------------------------------------ segments

@pytest.mark.parametrize(
    "y, want",
    [([0, 0, 0], []), ([1, 1, 1], [(0, 3)]), ([0, 1, 1, 0, 1], [(1, 3), (4, 5)]), ([], [])],
)
def test_extract_examples(y, want):
    assert [tuple(s) for s in extract_speaking_segments(np.array(y, dtype=np.int8))] == want


def _runs_brute_force(y):
    runs, start = [], None
    for t, v in enumerate(list(y) + [0]):
        if v and start is None:
            start = t
        if not v and start is not None:
            runs.append((start, t))
            start = None
    return runs


@given(st.lists(st.integers(0, 1), max_size=60))
def test_extract_matches_scan_and_paint_inverts(y):
    y = np.array(y, dtype=np.int8)
    segs = extract_speaking_segments(y)
    assert [tuple(s) for s in segs] == _runs_brute_force(y)
    np.testing.assert_array_equal(paint_segments(segs, y.size), y)
    for a, b in zip(segs, segs[1:]):
        assert a.end < b.start  # disjoint and maximal


# ------------------------------------------------------------------ samples

def test_make_sample_validates_lengths():
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.zeros((3, 4, 4)), np.zeros((11, 2)), np.zeros(3))
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.zeros((3, 4, 4)), np.zeros((12, 2)), np.zeros(4))
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.full((3, 4, 4), 1.5), np.zeros((12, 2)), np.zeros(3))
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.zeros((3, 3, 4)), np.zeros((12, 2)), np.zeros(3))
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.zeros((3, 4, 4)), np.full((12, 2), np.inf), np.zeros(3))
    with pytest.raises(SampleValidationError):
        make_sample("x", "v", "t", np.zeros((3, 4, 4)), np.zeros((12, 2)), np.array([0, 2, 1]))


# ------------------------------------------------------------------ tensors and corpora

@given(st.lists(st.integers(0, 5), min_size=0, max_size=4))
def test_tensor_roundtrip(shape):
    a = np.random.default_rng(len(shape)).normal(size=shape).astype(np.float32)
    buf = encode_tensor(a)
    assert buf[:4] == b"AVT1" and buf[4] == len(shape)
    np.testing.assert_array_equal(decode_tensor(buf), a)


def test_tensor_header_layout():
    buf = encode_tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert buf[5:13] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(buf[13:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_decode_rejects_bad_payload():
    with pytest.raises(CorpusFormatError):
        decode_tensor(b"AVT2\x00")
    with pytest.raises(CorpusFormatError):
        decode_tensor(encode_tensor(np.ones(3))[:-1])


def test_empty_corpus_roundtrip(tmp_path):
    m = save_corpus(Corpus([], seed=5), tmp_path)
    assert m == {"version": 1, "seed": 5, "samples": []}
    c = load_corpus(tmp_path)
    assert len(c) == 0 and c.seed == 5


def test_corpus_roundtrip_is_bit_exact(tmp_path):
    c = Corpus([_sample("a", seed=1), _sample("b", T=7, seed=2, video="v1")], seed=3)
    save_corpus(c, tmp_path / "one")
    back = load_corpus(tmp_path / "one")
    for s, t in zip(c, back):
        assert s.frames.tobytes() == t.frames.tobytes()
        assert s.mfcc.tobytes() == t.mfcc.tobytes()
        np.testing.assert_array_equal(s.labels, t.labels)
        assert (s.id, s.video_id, s.track_id, s.split, s.class_tag) == (t.id, t.video_id, t.track_id, t.split, t.class_tag)
    save_corpus(back, tmp_path / "two")
    assert corpus_checksums(tmp_path / "one") == corpus_checksums(tmp_path / "two")


def test_manifest_fields(tmp_path):
    save_corpus(Corpus([_sample()], seed=0), tmp_path)
    entry = json.loads((tmp_path / "manifest.json").read_text())["samples"][0]
    assert {"id", "video_id", "class_tag", "split", "T", "Hv", "Wv", "Ha", "files", "crc32s"} <= set(entry)


def test_flipped_byte_fails_checksum(tmp_path):
    save_corpus(Corpus([_sample()], seed=0), tmp_path)
    path = tmp_path / "a.mfcc.avt"
    data = bytearray(path.read_bytes())
    data[-3] ^= 0x40
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptedCorpusError):
        load_corpus(tmp_path)


def test_shape_mismatch_against_manifest(tmp_path):
    save_corpus(Corpus([_sample()], seed=0), tmp_path)
    mpath = tmp_path / "manifest.json"
    m = json.loads(mpath.read_text())
    m["samples"][0]["Ha"] = 4
    mpath.write_text(json.dumps(m))
    with pytest.raises(CorpusFormatError):
        load_corpus(tmp_path)


def test_duplicate_ids_rejected(tmp_path):
    with pytest.raises(CorpusFormatError):
        save_corpus(Corpus([_sample("a"), _sample("a", seed=3)], 0), tmp_path)


# ------------------------------------------------------------------ MFCC

def _reference_mfcc(x, n_coeffs=13):
    """Loop-based MFCC: explicit DFT, filters and DCT sums."""
    sr, win, hop, nfft, nmel = 16000, 400, 160, 512, 26
    y = [x[0]] + [x[i] - 0.97 * x[i - 1] for i in range(1, len(x))]
    y = np.array(y + [0.0] * win)
    ham = np.array([0.54 - 0.46 * math.cos(2 * math.pi * n / (win - 1)) for n in range(win)])
    k = np.arange(nfft // 2 + 1)[:, None]
    n = np.arange(win)[None, :]
    basis = np.exp(-2j * np.pi * k * n / nfft)
    mel = lambda f: 2595 * math.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    top = mel(sr / 2)
    edges = [imel(top * i / (nmel + 1)) for i in range(nmel + 2)]
    fb = np.zeros((nmel, nfft // 2 + 1))
    for m in range(nmel):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b in range(nfft // 2 + 1):
            f = b * sr / nfft
            if lo < f <= mid:
                fb[m, b] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[m, b] = (hi - f) / (hi - mid)
    rows = []
    for r in range(len(x) // hop):
        frame = y[r * hop: r * hop + win] * ham
        power = np.abs(basis @ frame) ** 2 / nfft
        logmel = np.log(np.maximum(fb @ power, 1e-10))
        c = []
        for q in range(n_coeffs):
            scale = math.sqrt(1 / nmel) if q == 0 else math.sqrt(2 / nmel)
            c.append(scale * sum(logmel[j] * math.cos(math.pi * q * (2 * j + 1) / (2 * nmel)) for j in range(nmel)))
        rows.append(c)
    return np.array(rows)


def test_mfcc_matches_reference_on_white_noise():
    x = np.random.default_rng(0).normal(scale=0.1, size=16000)
    got = mfcc_from_wav(x, 13).mfcc
    want = _reference_mfcc(x, 13)
    assert got.shape == want.shape == (100, 13)
    assert np.max(np.abs(got - want)) < 1e-6


def test_mfcc_silence_rows_are_constant():
    m = mfcc_from_wav(np.zeros(16000), 13).mfcc
    assert m.shape == (100, 13)
    np.testing.assert_array_equal(m, np.tile(m[0], (100, 1)))
    assert m[0, 0] == pytest.approx(math.sqrt(26) * math.log(LOG_FLOOR))
    np.testing.assert_allclose(m[0, 1:], 0.0, atol=1e-9)
    np.testing.assert_array_equal(silent_mfcc_row(13), m[0])


def test_mfcc_sine_row_count():
    t = np.arange(16000) / 16000
    assert mfcc_from_wav(np.sin(2 * np.pi * 440 * t)).mfcc.shape[0] == 100


@given(st.integers(1, 4), st.integers(-159, 159))
def test_mfcc_row_rate(seconds, extra):
    n = 16000 * seconds + extra
    rows = mfcc_from_wav(np.zeros(n)).mfcc.shape[0]
    assert abs(rows - 100 * n / 16000) <= 1


def test_mfcc_pads_or_truncates_to_track_length():
    x = np.random.default_rng(1).normal(size=8000)
    full = mfcc_from_wav(x).mfcc
    short = mfcc_from_wav(x, n_frames=10).mfcc
    long = mfcc_from_wav(x, n_frames=15).mfcc
    assert short.shape == (40, 13) and long.shape == (60, 13)
    np.testing.assert_array_equal(short, full[:40])
    np.testing.assert_array_equal(long[50:], 0.0)


@pytest.mark.parametrize("bad", [np.array([]), np.zeros(100), np.array([0.0] * 399 + [np.nan]), np.zeros((2, 400))])
def test_mfcc_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        mfcc_from_wav(bad)


def test_read_wav(tmp_path):
    pcm = (np.sin(np.arange(1600)) * 10000).astype("<i2")
    path = tmp_path / "a.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(pcm.tobytes())
    np.testing.assert_allclose(read_wav(path), pcm / 32768.0)
    with wave.open(str(tmp_path / "b.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(np.zeros(20, "<i2").tobytes())
    with pytest.raises(CorpusFormatError):
        read_wav(tmp_path / "b.wav")

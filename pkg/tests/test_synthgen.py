import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from syncasd.synthgen import (
    SampleClass,
    SynthConfig,
    audio_energy,
    gen_corpus,
    gen_envelope,
    gen_sample,
    mouth_intensity,
    mouth_rows,
    speaking_mask,
    write_config,
)
from syncasd.trackdata import extract_speaking_segments, save_corpus, corpus_checksums, validate_sample

GOLDEN_SEED42_L8_S3 = np.array([0.61028354, 0.54416035, 0.24655847, 0.34759293, 0.40265098, 1.0, 0.26829304, 0.0])


def test_envelope_golden_vector():
    np.testing.assert_allclose(gen_envelope(8, 3, np.random.default_rng(42)), GOLDEN_SEED42_L8_S3, atol=1e-8)


def test_envelope_degenerate_length():
    np.testing.assert_array_equal(gen_envelope(1, 3, np.random.default_rng(0)), [0.0])


@given(st.integers(2, 50), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_envelope_range(length, smooth, seed):
    e = gen_envelope(length, smooth, np.random.default_rng(seed))
    assert e.shape == (length,)
    assert e.min() >= 0 and e.max() <= 1
    if smooth == 1:
        assert e.min() == 0.0 and e.max() == 1.0


def test_envelope_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_envelope(0, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen_envelope(5, 0, np.random.default_rng(0))


def test_speaking_mask_drops_short_runs():
    e = np.array([0, 0.5, 0.5, 0.5, 0, 0.9, 0.9, 0.9, 0.9, 0])
    np.testing.assert_array_equal(speaking_mask(e), [0, 0, 0, 0, 0, 1, 1, 1, 1, 0])


def test_mouth_rows():
    assert mouth_rows(16) == 5
    assert mouth_rows(10) == 3


@pytest.mark.parametrize("cls", list(SampleClass))
@given(seed=st.integers(0, 2**32 - 1))
def test_samples_valid_and_labelled(cls, seed):
    cfg = SynthConfig(T_min=12, T_max=30)
    s = gen_sample(cls, cfg, np.random.default_rng(seed))
    validate_sample(s)
    assert cfg.T_min <= s.T <= cfg.T_max
    assert s.class_tag == cls.value
    if cls in (SampleClass.SILENT, SampleClass.VISUAL_ONLY, SampleClass.AUDIO_ONLY):
        assert not s.labels.any()
    else:
        assert s.labels.any()
        assert all(seg.length >= 4 for seg in extract_speaking_segments(s.labels))


def test_silent_audio_bounded_by_noise():
    cfg = SynthConfig(sigma_a=0.05)
    for seed in range(20):
        s = gen_sample("Silent", cfg, np.random.default_rng(seed))
        assert np.abs(s.mfcc).max() <= 3 * 0.05 + 1e-6


def test_sync_noise_free_modalities_agree():
    cfg = SynthConfig(sigma_v=0.0, sigma_a=0.0)
    for seed in range(10):
        s = gen_sample("SyncSpeaking", cfg, np.random.default_rng(seed))
        r = np.corrcoef(mouth_intensity(s.frames), audio_energy(s.mfcc))[0, 1]
        assert r == pytest.approx(1.0, abs=1e-6)  # float32 storage limits this to ~1e-7


def test_dubbed_modalities_mostly_uncorrelated():
    cfg = SynthConfig(sigma_v=0.0, sigma_a=0.0)
    ok = 0
    for seed in range(200):
        s = gen_sample("Dubbed", cfg, np.random.default_rng(seed))
        pos = s.labels == 1
        a = audio_energy(s.mfcc)[pos]
        m = mouth_intensity(s.frames)[pos]
        r = 0.0 if np.ptp(a) == 0 or np.ptp(m) == 0 else np.corrcoef(m, a)[0, 1]
        ok += abs(r) < 0.5
    assert ok >= 0.95 * 200


def test_corpus_counts_and_splits():
    cfg = SynthConfig(counts={"train": {"SyncSpeaking": 10, "Silent": 10}}, seed=3)
    c = gen_corpus(cfg)
    assert len(c) == 20
    assert sorted(s.class_tag for s in c).count("Silent") == 10
    assert {s.split for s in c} == {"train"}
    assert len(set(c.ids())) == 20


def test_empty_counts_give_empty_corpus():
    assert len(gen_corpus(SynthConfig(counts={}))) == 0


def test_default_config_sizes():
    cfg = SynthConfig()
    assert sum(cfg.counts["train"].values()) == 400
    assert cfg.counts["train"]["SyncSpeaking"] == 160
    assert sum(cfg.counts["test"].values()) == 120
    assert cfg.counts["test"]["Dubbed"] == 20


def test_gen_corpus_is_deterministic_and_parallel_safe(tmp_path):
    cfg = SynthConfig(counts={"train": {"SyncSpeaking": 4, "AudioOnly": 3}, "test": {"Dubbed": 2}}, seed=11)
    save_corpus(gen_corpus(cfg), tmp_path / "a")
    save_corpus(gen_corpus(cfg), tmp_path / "b")
    save_corpus(gen_corpus(cfg, jobs=2), tmp_path / "c")
    assert corpus_checksums(tmp_path / "a") == corpus_checksums(tmp_path / "b") == corpus_checksums(tmp_path / "c")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"T_min": 11},
        {"T_min": 30, "T_max": 20},
        {"sigma_v": -1.0},
        {"counts": {"train": {"Dubbed": 1}}},
        {"counts": {"holdout": {"Silent": 1}}},
        {"counts": {"train": {"Whisper": 1}}},
        {"counts": {"train": {"Silent": -1}}},
    ],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_config_file_roundtrip(tmp_path):
    cfg = SynthConfig(T_min=14, seed=9)
    write_config(cfg, tmp_path / "c.json")
    assert SynthConfig.from_file(tmp_path / "c.json") == cfg
    (tmp_path / "c.toml").write_text("T_min = 14\nseed = 9\n[counts.test]\nSilent = 2\n")
    got = SynthConfig.from_file(tmp_path / "c.toml")
    assert got.counts == {"test": {"Silent": 2}} and got.seed == 9


def test_config_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"T_min": 14, "colour": 1}))
    with pytest.raises(ValueError, match="colour"):
        SynthConfig.from_file(tmp_path / "c.json")

import json
import wave
from itertools import chain

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fabrictouch import synth
from fabrictouch.dataset import (
    FabricClass, PropertyLabels, SplitPolicy, Trial, load_trial, partition_sequences, split_by_trial,
    validation_split, write_trial,
)
from fabrictouch.errors import CorruptAudio, InvalidTrial, LengthMismatch, MissingStream, OverlapError


def fake_trial(n, fabric=1, tag="day1", shape=(60, 80), trial_id=""):
    ends = 2048 + 960 * np.arange(n)
    return Trial(
        fabric=FabricClass(fabric, "", PropertyLabels(0, 1, 2)), session_tag=tag,
        frames=np.zeros((n, *shape), dtype=np.uint8),
        audio_internal=np.zeros(2048 + 960 * n, dtype=np.int16),
        audio_external=np.zeros(2048 + 960 * n, dtype=np.int16),
        window_ends=np.stack([ends, ends], 1), proprio=np.zeros((n, 18)),
        timestamps=ends / 48000, trial_id=trial_id or f"{fabric}-{tag}",
    )


def test_property_levels():
    PropertyLabels(1, 4, 2)
    for bad in [(2, 0, 0), (0, 5, 0), (0, 0, 3), (-1, 0, 0)]:
        with pytest.raises(ValueError):
            PropertyLabels(*bad)


def test_fabric_ids():
    assert FabricClass(23).is_holdout and not FabricClass(20).is_holdout
    with pytest.raises(ValueError):
        FabricClass(24)


def test_sample_invariants(small_trial):
    s = small_trial.sample(10)
    assert s.audio_internal.shape == s.audio_external.shape == (2048,)
    assert s.proprio.shape == (18,)
    assert s.image.shape == (308, 410)
    assert s.label is small_trial.fabric
    assert len(small_trial.samples) == 240


def test_trial_is_immutable(small_trial):
    with pytest.raises(ValueError):
        small_trial.frames[0, 0, 0] = 1


def test_bad_timestamps():
    t = fake_trial(5)
    with pytest.raises(InvalidTrial):
        Trial(t.fabric, t.session_tag, t.frames, t.audio_internal, t.audio_external, t.window_ends,
              t.proprio, t.timestamps[::-1])
    with pytest.raises(LengthMismatch):
        Trial(t.fabric, t.session_tag, t.frames, t.audio_internal, t.audio_external, t.window_ends,
              t.proprio[:, :17], t.timestamps)


def test_roundtrip_bit_exact(small_trial, tmp_path):
    loaded = load_trial(write_trial(small_trial, tmp_path / "trial"))
    for name in ("frames", "audio_internal", "audio_external", "window_ends", "proprio", "timestamps"):
        a, b = getattr(small_trial, name), getattr(loaded, name)
        assert a.dtype == b.dtype
        np.testing.assert_array_equal(a, b)
    assert loaded.fabric == small_trial.fabric
    assert loaded.session_tag == small_trial.session_tag
    assert loaded.trial_id == small_trial.trial_id


def test_roundtrip_rgb(tmp_path):
    t = fake_trial(3, shape=(60, 80))
    rgb = np.random.default_rng(0).integers(0, 256, size=(3, 60, 80, 3)).astype(np.uint8)
    t = Trial(t.fabric, t.session_tag, rgb, t.audio_internal, t.audio_external, t.window_ends, t.proprio, t.timestamps)
    np.testing.assert_array_equal(load_trial(write_trial(t, tmp_path / "rgb")).frames, rgb)


def test_load_full_length_fixture(tmp_path, specs):
    trial = synth.generate_trial(specs[0], 1500, 0)
    assert len(trial.audio_internal) >= 1500 * 960 + 2048
    loaded = load_trial(write_trial(trial, tmp_path / "long"))
    assert len(loaded) == 1500
    assert len(partition_sequences(loaded)) == 7


def test_empty_directory(tmp_path):
    with pytest.raises(MissingStream):
        load_trial(tmp_path)


@pytest.fixture
def written(tmp_path):
    return write_trial(fake_trial(4), tmp_path / "t")


def test_proprio_17_columns(written):
    lines = (written / "proprio.csv").read_text().splitlines()
    (written / "proprio.csv").write_text("\n".join(",".join(l.split(",")[1:]) for l in lines) + "\n")
    with pytest.raises(LengthMismatch):
        load_trial(written)


def test_missing_audio(written):
    (written / "audio_external.wav").unlink()
    with pytest.raises(MissingStream):
        load_trial(written)


def test_frame_count_mismatch(written):
    (written / "frames" / "000003.png").unlink()
    with pytest.raises(LengthMismatch):
        load_trial(written)


@pytest.mark.parametrize("rate,width", [(44100, 2), (48000, 1), (48000, 4)])
def test_corrupt_audio(written, rate, width):
    with wave.open(str(written / "audio_internal.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(b"\0" * width * 6000)
    with pytest.raises(CorruptAudio):
        load_trial(written)


def test_meta_count_checked(written):
    meta = json.loads((written / "meta.json").read_text())
    meta["sample_count"] = 5
    (written / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(LengthMismatch):
        load_trial(written)


@pytest.mark.parametrize("n,expected", [(1500, 7), (199, 0), (400, 2), (200, 1)])
def test_partition_counts(n, expected):
    assert len(partition_sequences(fake_trial(n))) == expected


def test_partition_400_exact():
    t = fake_trial(400)
    seqs = partition_sequences(t, 200)
    idx = list(chain.from_iterable(range(s.start, s.stop) for s in seqs))
    assert idx == list(range(400))
    assert seqs[1].samples[0].timestamp == t.timestamps[200]


def test_partition_rejects_nonpositive():
    with pytest.raises(ValueError):
        partition_sequences(fake_trial(5), 0)


@given(st.integers(0, 700), st.integers(1, 250))
@settings(max_examples=40, deadline=None)
def test_partition_disjoint_ordered(length, n):
    seqs = partition_sequences(fake_trial(length, shape=(60, 80)) if length else fake_trial(0), n)
    assert len(seqs) == length // n
    for a, b in zip(seqs, seqs[1:]):
        assert a.stop == b.start
    assert all(len(s) == n for s in seqs)


def tagged_trials(n_classes=3):
    trials = []
    for c in range(n_classes):
        for day, count in (("day1", 6), ("day2", 6), ("day3", 2)):
            trials += [fake_trial(1, fabric=c, tag=day, trial_id=f"{c}-{day}-{k}") for k in range(count)]
    return trials


def test_split_twelve_two():
    trials = tagged_trials()
    split = split_by_trial(trials, SplitPolicy({"day1", "day2"}, {"day3"}))
    for c in range(3):
        assert sum(t.fabric.id == c for t in split.train) == 12
        assert sum(t.fabric.id == c for t in split.test) == 2


def test_split_overlap():
    with pytest.raises(OverlapError):
        split_by_trial(tagged_trials(), SplitPolicy({"day1", "day3"}, {"day3"}))


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=30),
       st.sets(st.sampled_from(["a", "b", "c", "d"])), st.sets(st.sampled_from(["a", "b", "c", "d"])))
@settings(max_examples=50, deadline=None)
def test_split_never_leaks(tags, train_tags, test_tags):
    trials = [fake_trial(1, tag=t, trial_id=f"{i}") for i, t in enumerate(tags)]
    if train_tags & test_tags:
        with pytest.raises(OverlapError):
            split_by_trial(trials, SplitPolicy(train_tags, test_tags))
        return
    split = split_by_trial(trials, SplitPolicy(train_tags, test_tags))
    assert not {t.trial_id for t in split.train} & {t.trial_id for t in split.test}


def test_sequence_counts():
    trials = [fake_trial(450, fabric=c % 3, tag="day1" if c < 6 else "day3") for c in range(8)]
    split = split_by_trial(trials, SplitPolicy({"day1"}, {"day3"}))
    assert split.sequence_counts() == {"train": 12, "test": 4, "classes": 3}


def test_validation_split_holds_two_per_class():
    trials = tagged_trials()
    train = [t for t in trials if t.session_tag != "day3"]
    split = validation_split(train, 2)
    assert len(split.test) == 6 and len(split.train) == 30
    assert {t.fabric.id for t in split.test} == {0, 1, 2}

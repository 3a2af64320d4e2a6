"""PK08, MFCC and temporal baseline features and the feature-file format."""

import numpy as np
import pytest

from qbv_engine.barkgram import PK08_BANDS, Barkgram, barkgram
from qbv_engine.corpus import CANONICAL_RATE, AudioClip
from qbv_engine.features import (
    MFCC_DIM, TEMP_DIM, FeatureError, MfccExtractor, Pk08Extractor, TemporalExtractor,
    create_extractor, mfcc_features, pk08_distance, read_feature_csv, regression_delta,
    rms_envelope, temporal_features, write_feature_csv,
)
from qbv_engine.models import FeatureVector

from .helpers import decaying_burst, sine


def random_barkgram(rng, frames, bands=PK08_BANDS):
    return Barkgram(values=rng.uniform(0, 70, size=(bands, frames)))


def test_pk08_distance_is_a_metric(rng):
    a, b, c = (random_barkgram(rng, n) for n in (10, 14, 7))

    assert pk08_distance(a, a) == 0.0
    assert pk08_distance(a, b) == pytest.approx(pk08_distance(b, a))
    assert pk08_distance(a, c) <= pk08_distance(a, b) + pk08_distance(b, c) + 1e-9


def test_pk08_distance_zero_pads_the_shorter_barkgram(rng):
    a = random_barkgram(rng, 5)
    longer = Barkgram(values=np.hstack([a.values, np.full((PK08_BANDS, 2), 3.0)]))
    assert pk08_distance(a, longer) == pytest.approx(np.sqrt(PK08_BANDS * 2 * 9.0))


def test_pk08_distance_ignores_trailing_digital_silence():
    clip = decaying_burst(seconds=0.5, tail=0.5)
    longer = np.concatenate([clip, np.zeros(CANONICAL_RATE)])
    a = barkgram(AudioClip(samples=clip), PK08_BANDS)
    b = barkgram(AudioClip(samples=longer), PK08_BANDS)
    assert pk08_distance(a, b) < 1e-9


def test_pk08_distance_rejects_band_mismatch(rng):
    with pytest.raises(FeatureError, match="mismatch"):
        pk08_distance(random_barkgram(rng, 4), random_barkgram(rng, 4, bands=128))
    with pytest.raises(FeatureError):
        pk08_distance(random_barkgram(rng, 4, bands=128), random_barkgram(rng, 4, bands=128))


def test_mfcc_has_78_values(noise_clip):
    features = mfcc_features(noise_clip)
    assert features.dim == MFCC_DIM == 78
    assert features.extractor_id == "mfcc"
    assert np.all(np.isfinite(features.values))


def test_mfcc_of_a_single_frame_has_zero_deltas_and_variances():
    values = mfcc_features(AudioClip(samples=sine(440.0, seconds=0.05, amplitude=0.5))).values
    # delta and delta-delta means, then every variance
    np.testing.assert_allclose(values[13:39], 0.0, atol=1e-12)
    np.testing.assert_allclose(values[39:], 0.0, atol=1e-12)


def test_mfcc_ignores_gain(noise_clip):
    quiet = AudioClip(samples=0.1 * noise_clip.samples)
    np.testing.assert_allclose(mfcc_features(quiet).values, mfcc_features(noise_clip).values, rtol=1e-6, atol=1e-8)


def test_regression_delta_of_a_ramp_is_its_slope():
    frames = np.tile(np.arange(20, dtype=float), (3, 1))
    delta = regression_delta(frames)
    np.testing.assert_allclose(delta[:, 2:-2], 1.0)


def test_temporal_features_of_a_constant_clip():
    lat, tc, ratio, tcf, duration = temporal_features(AudioClip(samples=np.ones(44100))).values

    assert lat == pytest.approx(-3.0)
    assert tc == pytest.approx(0.5, abs=1e-9)
    assert ratio == pytest.approx(-6.0)
    assert tcf == pytest.approx(1.0)
    assert duration == pytest.approx(1.0)


def test_temporal_centroid_of_a_linear_decay_is_a_quarter():
    x = 1.0 - np.arange(44100) / 44100
    tc = temporal_features(AudioClip(samples=x)).values[1]
    assert tc == pytest.approx(0.25, abs=0.01)


def test_instantaneous_attack_hits_the_floor():
    x = np.exp(-np.arange(44100) / (0.1 * CANONICAL_RATE))
    assert temporal_features(AudioClip(samples=x)).values[0] == pytest.approx(-3.0)


def test_temporal_features_trim_silence():
    x = np.concatenate([np.zeros(4410), np.ones(22050), np.zeros(4410)])
    assert temporal_features(AudioClip(samples=x)).values[4] == pytest.approx(0.5)


def test_temporal_feature_ranges(rng):
    for _ in range(5):
        x = rng.uniform(-1, 1, 20000) * np.exp(-np.arange(20000) / rng.uniform(500, 10000))
        lat, tc, _, tcf, duration = temporal_features(AudioClip(samples=x)).values
        assert tcf >= 1.0
        assert 0.0 <= tc <= duration
        assert lat >= -3.0


def test_temporal_features_reject_an_all_zero_clip():
    with pytest.raises(FeatureError, match="all-zero"):
        temporal_features(AudioClip(samples=np.zeros(1000)))


def test_rms_envelope_hop_and_window():
    times, env = rms_envelope(np.ones(4410))
    assert times[1] - times[0] == pytest.approx(0.010)
    np.testing.assert_allclose(env, 1.0)


def test_extractor_factory():
    assert isinstance(create_extractor("pk08"), Pk08Extractor)
    assert isinstance(create_extractor("MFCC"), MfccExtractor)
    assert create_extractor("temp").extract(AudioClip(samples=np.ones(1000))).dim == TEMP_DIM
    assert isinstance(create_extractor("temp"), TemporalExtractor)
    with pytest.raises(FeatureError, match="checkpoint"):
        create_extractor("cae-3")
    with pytest.raises(FeatureError, match="unknown"):
        create_extractor("chroma")


def test_extractor_distance_dispatch(rng):
    a, b = random_barkgram(rng, 6), random_barkgram(rng, 9)
    assert Pk08Extractor().distance(a, b) == pytest.approx(pk08_distance(a, b))
    u = FeatureVector(values=[0.0, 3.0], extractor_id="mfcc")
    v = FeatureVector(values=[4.0, 0.0], extractor_id="mfcc")
    assert MfccExtractor().distance(u, v) == pytest.approx(5.0)


def test_feature_file_keeps_vectors_and_barkgrams(tmp_path, rng, noise_clip):
    mfcc = {"a": mfcc_features(noise_clip), "b": FeatureVector(values=np.arange(78.0), extractor_id="mfcc")}
    write_feature_csv(mfcc, "mfcc", tmp_path / "mfcc.csv")
    extractor_id, loaded = read_feature_csv(tmp_path / "mfcc.csv")
    assert extractor_id == "mfcc"
    assert list(loaded) == ["a", "b"]
    np.testing.assert_array_equal(loaded["a"].values, mfcc["a"].values)

    bgs = {"x": random_barkgram(rng, 3), "y": random_barkgram(rng, 5)}
    write_feature_csv(bgs, "pk08", tmp_path / "pk08.csv")
    header = (tmp_path / "pk08.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["id", "extractor_id", "dim"] and header[-1] == f"v{PK08_BANDS * 5 - 1}"
    _, loaded = read_feature_csv(tmp_path / "pk08.csv")
    assert loaded["y"].values.shape == (PK08_BANDS, 5)
    np.testing.assert_array_equal(loaded["y"].values, bgs["y"].values)


def test_feature_file_rejects_short_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,extractor_id,dim,v0,v1\na,mfcc,2,1.0\n")
    with pytest.raises(FeatureError, match="row 2"):
        read_feature_csv(path)

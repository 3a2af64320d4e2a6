"""STFT framing, Terhardt weighting, Bark banding and barkgram I/O."""

import struct

import numpy as np
import pytest

from qbv_engine.barkgram import (
    CAE_BANDS, CAE_FRAMES, HOP_SIZE, PK08_BANDS, WINDOW_SIZE, Barkgram, BarkgramError,
    band_powers, bark_band_index, barkgram, barkgram_from_bytes, barkgram_to_bytes,
    bin_frequencies, cae_input, fix_frames, frame_count, hz_to_bark, normalize_unit,
    read_barkgram_csv, stft_magnitude, terhardt_weight, write_barkgram_csv,
)
from qbv_engine.corpus import CANONICAL_RATE, AudioClip

from .helpers import sine


BIN_HZ = CANONICAL_RATE / WINDOW_SIZE


def test_one_second_of_silence_gives_79_zero_frames():
    mag = stft_magnitude(AudioClip(samples=np.zeros(44100)))
    assert mag.shape == (WINDOW_SIZE // 2 + 1, 79)
    assert not mag.any()
    assert frame_count(44100) == 79


def test_short_clip_is_padded_to_one_frame():
    assert stft_magnitude(AudioClip(samples=np.ones(100))).shape[1] == 1


def test_sinusoid_peaks_in_its_bin():
    mag = stft_magnitude(AudioClip(samples=sine(1000.0, amplitude=0.5)))
    assert set(np.argmax(mag, axis=0)) == {round(1000.0 / BIN_HZ)}


def test_full_scale_bin_centred_sinusoid_peaks_at_unity():
    mag = stft_magnitude(AudioClip(samples=sine(93 * BIN_HZ)))
    assert mag[93].max() == pytest.approx(1.0, rel=1e-3)


def test_terhardt_weight_values():
    assert terhardt_weight(3300.0) == pytest.approx(4.98, abs=0.01)
    expected = -3.64 + 6.5 * np.exp(-0.6 * 2.3 ** 2) - 1e-3
    assert terhardt_weight(1000.0) == pytest.approx(expected, abs=1e-12)
    assert terhardt_weight(20.0) < -30.0


def test_terhardt_weight_rejects_non_positive_frequencies():
    with pytest.raises(BarkgramError):
        terhardt_weight(0.0)


def test_bark_band_index_edges_and_monotonicity():
    assert bark_band_index(CANONICAL_RATE / 2, PK08_BANDS) == PK08_BANDS - 1
    assert bark_band_index(CANONICAL_RATE / 2, CAE_BANDS) == CAE_BANDS - 1
    assert bark_band_index(1.0, PK08_BANDS) == 0
    z_top = hz_to_bark(CANONICAL_RATE / 2)
    assert bark_band_index(1000.0, PK08_BANDS) == int(np.floor(PK08_BANDS * hz_to_bark(1000.0) / z_top))

    bands = bark_band_index(bin_frequencies()[1:], CAE_BANDS)
    assert np.all(np.diff(bands) >= 0)


def test_bark_band_index_rejects_out_of_range():
    with pytest.raises(BarkgramError):
        bark_band_index(30000.0, PK08_BANDS)
    with pytest.raises(BarkgramError):
        bark_band_index(100.0, 0)


def test_band_powers_sum_the_weighted_bin_powers(noise_clip):
    power = stft_magnitude(noise_clip) ** 2
    freqs = bin_frequencies()[1:]
    gains = 10.0 ** (terhardt_weight(freqs) / 10.0)
    expected = (gains[:, None] * power[1:]).sum(axis=0)

    np.testing.assert_allclose(band_powers(noise_clip, PK08_BANDS).sum(axis=0), expected, rtol=1e-10)


def test_band_limited_signal_only_lights_its_bands():
    # bin-centred partials between 100 and 200 Hz leak into one bin on each side
    bins = np.arange(10, 19)
    x = sum(sine(k * BIN_HZ, amplitude=0.1) for k in bins)
    bg = barkgram(AudioClip(samples=x), PK08_BANDS)

    lit = set(bark_band_index(np.arange(bins[0] - 1, bins[-1] + 2) * BIN_HZ, PK08_BANDS).tolist())
    for band in range(PK08_BANDS):
        if band in lit:
            continue
        assert not bg.values[band].any(), f"band {band} should be silent"
    core = set(bark_band_index(bins * BIN_HZ, PK08_BANDS).tolist())
    assert all(bg.values[band].min() > 0 for band in core)


def test_barkgram_of_silence_is_zero():
    bg = barkgram(AudioClip(samples=np.zeros(10000)), PK08_BANDS)
    assert bg.n_bands == PK08_BANDS
    assert not bg.values.any()


def test_appended_silence_adds_silent_frames_and_keeps_the_rest(noise_clip):
    padded = AudioClip(samples=np.concatenate([noise_clip.samples, np.zeros(8192)]))
    a = barkgram(noise_clip, PK08_BANDS).values
    b = barkgram(padded, PK08_BANDS).values

    assert a.shape[1] == 79 and b.shape[1] == 95
    np.testing.assert_allclose(b[:, :79], a, atol=1e-9)
    # frames starting at or after the end of the noise
    first_silent = -(-len(noise_clip) // HOP_SIZE)
    assert not b[:, first_silent:].any()


def test_prepended_silence_shifts_frames(noise_clip):
    k = 10
    shifted = AudioClip(samples=np.concatenate([np.zeros(k * HOP_SIZE), noise_clip.samples]))
    a = barkgram(noise_clip, PK08_BANDS).values
    b = barkgram(shifted, PK08_BANDS).values

    assert b.shape[1] == a.shape[1] + k
    np.testing.assert_allclose(b[:, k:], a, atol=1e-9)
    # windows lying entirely inside the leading silence
    assert not b[:, :k - WINDOW_SIZE // HOP_SIZE + 1].any()


def test_barkgram_rejects_other_sample_rates():
    with pytest.raises(BarkgramError):
        stft_magnitude(AudioClip(samples=np.zeros(5000), sample_rate=22050))


def test_fix_frames_pads_and_truncates():
    bg = Barkgram(values=np.ones((4, 5)))
    padded = fix_frames(bg, 8)
    assert padded.values.shape == (4, 8)
    assert not padded.values[:, 5:].any()
    assert fix_frames(bg, 3).values.shape == (4, 3)
    assert fix_frames(fix_frames(bg, 8), 8).values.shape == (4, 8)


def test_normalize_unit_maps_the_dynamic_range_onto_unit_interval():
    bg = Barkgram(values=np.array([[0.0, 35.0, 70.0, 90.0]]))
    np.testing.assert_allclose(normalize_unit(bg).values, [[0.0, 0.5, 1.0, 1.0]])


def test_cae_input_shape_and_range(sine_clip):
    x = cae_input(sine_clip)
    assert x.shape == (CAE_BANDS, CAE_FRAMES)
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_barkgram_rejects_negative_values():
    with pytest.raises(BarkgramError):
        Barkgram(values=np.array([[-1.0]]))


def test_binary_layout(sine_clip):
    bg = barkgram(sine_clip, PK08_BANDS)
    data = barkgram_to_bytes(bg)

    assert data[:4] == b"BKG1"
    assert struct.unpack_from("<II", data, 4) == (PK08_BANDS, bg.n_frames)
    assert len(data) == 12 + 4 * PK08_BANDS * bg.n_frames
    np.testing.assert_allclose(barkgram_from_bytes(data).values, bg.values, rtol=1e-6)

    with pytest.raises(BarkgramError):
        barkgram_from_bytes(data[:-4])


def test_csv_keeps_values_exactly(tmp_path, noise_clip):
    bg = barkgram(noise_clip, PK08_BANDS)
    write_barkgram_csv(bg, tmp_path / "bg.csv")
    np.testing.assert_array_equal(read_barkgram_csv(tmp_path / "bg.csv").values, bg.values)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soilscan.errors import ConfigurationError
from soilscan.medium import FreqShape, MediumProperties, SaltResponseModel, SoilSample
from soilscan.propagation import (
    AIR,
    DEFAULT_PATH,
    NEPER_TO_DB,
    ConstantMedium,
    NoiseModel,
    PathGeometry,
    TransmitConfig,
    received_power,
    received_signal,
    simulate_spectrum,
    soil_loss_db,
    standard_media,
)
from soilscan.spectrum import HIGH_BAND, subtract_background

MODELS = {"NaCl": SaltResponseModel(1.5e-4), "Pb": SaltResponseModel(5e-5, FreqShape((700.0, 2500.0), (0.5, 2.0)))}


class FixedAlpha:
    def __init__(self, alpha, beta=1.0):
        self.alpha, self.beta = alpha, beta

    def properties(self, f_mhz):
        return MediumProperties(1.0, 0.0, 0.0, 0.0, self.alpha, self.beta)


def test_lossless_path_returns_gain():
    cfg = TransmitConfig(gain_dbm=6.0)
    media = {"air": AIR, "wall": ConstantMedium(2.3, 0.0), "soil": ConstantMedium(4.0, 0.0)}
    assert received_power(cfg, DEFAULT_PATH, media, 850.0) == 6.0


def test_one_neper_per_metre_over_ten_cm():
    p = received_power(TransmitConfig(gain_dbm=0.0), PathGeometry((("x", 0.1),)), {"x": FixedAlpha(1.0)}, 800.0)
    assert p == pytest.approx(-0.86858896380650366, rel=1e-14)


def test_doubling_length_doubles_loss():
    cfg = TransmitConfig(gain_dbm=0.0)
    m = {"x": FixedAlpha(3.7)}
    one = received_power(cfg, PathGeometry((("x", 0.05),)), m, 800.0)
    two = received_power(cfg, PathGeometry((("x", 0.10),)), m, 800.0)
    assert two == pytest.approx(2 * one, rel=1e-14)


def test_unknown_medium():
    with pytest.raises(ConfigurationError, match="lead"):
        received_power(TransmitConfig(), PathGeometry((("lead", 0.1),)), {}, 800.0)


def test_complex_signal_matches_power():
    cfg = TransmitConfig(amplitude=1.0, gain_dbm=0.0)
    media = standard_media(SoilSample.from_ppm({"NaCl": 400}, moisture=0.2), MODELS)
    s = received_signal(cfg, DEFAULT_PATH, media, 900.0)
    assert 20 * math.log10(abs(s)) == pytest.approx(received_power(cfg, DEFAULT_PATH, media, 900.0), abs=1e-12)


def test_default_path_is_18cm():
    assert DEFAULT_PATH.total_distance == pytest.approx(0.18, abs=1e-15)


@settings(max_examples=1000)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.floats(1e-4, 0.5)), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_segment_order_invariance(segments, rnd):
    media = {"a": FixedAlpha(0.7), "b": FixedAlpha(12.0), "c": ConstantMedium(4.0, 0.3)}
    shuffled = list(segments)
    rnd.shuffle(shuffled)
    cfg = TransmitConfig()
    p1 = received_power(cfg, PathGeometry(tuple(segments)), media, 900.0)
    p2 = received_power(cfg, PathGeometry(tuple(shuffled)), media, 900.0)
    assert p1 == pytest.approx(p2, rel=1e-12, abs=1e-12)


@settings(max_examples=300)
@given(st.floats(0, 50), st.floats(1e-3, 10), st.floats(1e-3, 0.3))
def test_power_strictly_falls_with_alpha(a, da, d):
    cfg = TransmitConfig()
    path = PathGeometry((("air", 0.05), ("soil", d)))
    lo = received_power(cfg, path, {"air": AIR, "soil": FixedAlpha(a)}, 800.0)
    hi = received_power(cfg, path, {"air": AIR, "soil": FixedAlpha(a + da)}, 800.0)
    assert hi < lo


@settings(max_examples=150)
@given(st.floats(0, 2000), st.floats(1, 1000), st.floats(0.0, 0.4), st.floats(700, 2500))
def test_adding_salt_never_raises_power(c, dc, moist, f):
    # holds whenever a salt's dielectric-loss slope is non-negative
    cfg = TransmitConfig()
    before = received_power(cfg, DEFAULT_PATH, standard_media(SoilSample.from_ppm({"Pb": c}, moisture=moist), MODELS), f)
    after = received_power(cfg, DEFAULT_PATH, standard_media(SoilSample.from_ppm({"Pb": c + dc}, moisture=moist), MODELS), f)
    assert after <= before


class TestSimulate:
    def test_grid_sizes(self):
        s = SoilSample(moisture=0.2)
        assert len(simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(), 0, MODELS)) == 601
        hi = TransmitConfig(band=HIGH_BAND)
        assert len(simulate_spectrum(hi, DEFAULT_PATH, s, NoiseModel(), 0, MODELS)) == 401

    def test_noiseless_ignores_seed(self):
        s = SoilSample.from_ppm({"NaCl": 100}, moisture=0.2)
        a = simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(), 1, MODELS)
        b = simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(), 2, MODELS)
        assert a == b

    def test_seeded_noise_reproducible(self):
        s = SoilSample(moisture=0.2)
        run = lambda seed: simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(0.5), seed, MODELS)
        assert run(7).power_dbm.tobytes() == run(7).power_dbm.tobytes()
        assert run(7) != run(8)

    def test_noise_is_additive_with_sigma(self):
        s = SoilSample(moisture=0.2)
        clean = simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(), 0, MODELS)
        noisy = simulate_spectrum(TransmitConfig(), DEFAULT_PATH, s, NoiseModel(2.0), 0, MODELS)
        resid = noisy.power_dbm - clean.power_dbm
        assert abs(resid.mean()) < 0.3 and 1.7 < resid.std() < 2.3

    def test_provenance(self):
        s = simulate_spectrum(TransmitConfig(), DEFAULT_PATH, SoilSample(), NoiseModel(), 5, MODELS)
        assert s.provenance["kind"] == "simulated" and s.provenance["seed"] == 5
        assert len(s.provenance["config_hash"]) == 64

    def test_background_isolates_soil_loss(self):
        sample = SoilSample.from_ppm({"NaCl": 1000, "Pb": 400}, moisture=0.2)
        cfg = TransmitConfig()
        full = simulate_spectrum(cfg, DEFAULT_PATH, sample, NoiseModel(), 0, MODELS)
        empty_path = PathGeometry(tuple(("air" if m == "soil" else m, d) for m, d in DEFAULT_PATH.segments))
        empty = simulate_spectrum(cfg, empty_path, sample, NoiseModel(), 0, MODELS)
        diff = subtract_background(full, empty)
        expected = -soil_loss_db(sample, full.freqs_mhz, MODELS)
        np.testing.assert_allclose(diff.power_dbm, expected, rtol=0, atol=1e-9)

    def test_vectorized_matches_scalar(self):
        media = standard_media(SoilSample.from_ppm({"NaCl": 50}, moisture=0.1), MODELS)
        f = np.array([700.0, 812.5, 999.5])
        vec = received_power(TransmitConfig(), DEFAULT_PATH, media, f)
        for i, fi in enumerate(f):
            assert vec[i] == pytest.approx(received_power(TransmitConfig(), DEFAULT_PATH, media, fi), rel=1e-14)


def test_neper_constant():
    assert NEPER_TO_DB == pytest.approx(20 / math.log(10), rel=1e-15)

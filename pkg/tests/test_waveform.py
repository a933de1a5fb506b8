import numpy as np
import pytest
from hypothesis import given, strategies as st

from vfeel.sensing import dechirp
from vfeel.waveform import (QPSK_PHASES, IsacConfig, InvalidInput, qpsk_map, qpsk_unmap,
                            reference_chirp, synth_frame)

bit_lists = st.lists(st.integers(0, 1), min_size=0, max_size=50).map(
    lambda b: b[:len(b) - len(b) % 2])


def test_qpsk_single_symbol():
    assert qpsk_map([0, 0])[0] == pytest.approx(np.pi / 4)


def test_qpsk_empty():
    assert qpsk_map([]).size == 0


def test_qpsk_gray_order():
    np.testing.assert_allclose(qpsk_map([0, 0, 0, 1, 1, 1, 1, 0]),
                               [np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4])


def test_qpsk_odd_bits():
    with pytest.raises(InvalidInput):
        qpsk_map([1, 0, 1])


@given(bit_lists)
def test_qpsk_round_trip(bits):
    phases = qpsk_map(bits)
    assert set(np.round(phases, 12)) <= set(np.round(QPSK_PHASES, 12))
    idx = np.searchsorted(QPSK_PHASES, phases - 1e-9)
    np.testing.assert_array_equal(qpsk_unmap(idx), np.asarray(bits, np.uint8))


def test_config_derived(cfg):
    assert cfg.n_samples == 100
    assert cfg.slope == 1e12
    assert cfg.t_frame == pytest.approx(250e-6)
    assert cfg.data_rate == 200_000.0


@pytest.mark.parametrize("kw", [dict(sample_rate=10.05e6, bandwidth=1e6),
                                dict(bandwidth=0.0), dict(chirps_per_frame=0),
                                dict(sample_rate=5e6), dict(carrier=0.5e9)])
def test_config_rejects(kw):
    with pytest.raises(InvalidInput):
        IsacConfig(**kw)


def test_synth_frame_table_config(cfg):
    f = synth_frame(cfg, np.zeros(25))
    assert f.samples.shape == (2500,)
    assert np.angle(f.samples[0]) == 0.0


def test_synth_frame_phase_factor(cfg):
    a = synth_frame(cfg, np.zeros(25)).samples
    b = synth_frame(cfg, np.full(25, np.pi / 4)).samples
    np.testing.assert_allclose(b, a * np.exp(1j * np.pi / 4), atol=1e-12)


def test_synth_frame_length_mismatch(cfg):
    with pytest.raises(InvalidInput):
        synth_frame(cfg, np.zeros(24))


def test_synth_sample_formula():
    cfg = IsacConfig(tx_power=2.0)
    ph = np.linspace(0, 1, 25)
    s = synth_frame(cfg, ph).samples.reshape(25, 100)
    t = np.arange(100) / cfg.sample_rate
    want = np.sqrt(2.0) * np.exp(1j * (np.pi * cfg.slope * t**2 + ph[:, None]))
    np.testing.assert_allclose(s, want, atol=1e-12)


def test_reference_chirp(cfg):
    r = reference_chirp(cfg)
    assert r.size == 100 and r[0] == 1 + 0j
    np.testing.assert_allclose(np.conj(r) * r, np.ones(100), atol=1e-15)
    assert np.vdot(r, r).real == pytest.approx(100.0)


@given(st.lists(st.integers(0, 1), min_size=50, max_size=50),
       st.floats(0.1, 5.0))
def test_constant_modulus(bits, power):
    cfg = IsacConfig(tx_power=power)
    s = synth_frame(cfg, qpsk_map(bits)).samples
    np.testing.assert_allclose(np.abs(s), np.sqrt(power), rtol=1e-12)
    assert np.all(np.abs(s) <= np.sqrt(2 * power))


@given(st.lists(st.integers(0, 1), min_size=50, max_size=50))
def test_dechirp_recovers_phase(bits):
    cfg = IsacConfig()
    ph = qpsk_map(bits)
    mixed = synth_frame(cfg, ph).samples.reshape(25, 100) * np.conj(reference_chirp(cfg))
    err = np.angle(mixed * np.exp(-1j * ph)[:, None])
    assert np.max(np.abs(err)) < 1e-9


def test_doubling_sample_rate():
    a, b = IsacConfig(), IsacConfig(sample_rate=20e6)
    assert b.n_samples == 2 * a.n_samples
    ph = qpsk_map(np.random.default_rng(0).integers(0, 2, 50))
    for c in (a, b):
        y = dechirp(synth_frame(c, ph).samples, ph, c)
        assert np.max(np.abs(np.angle(y))) < 1e-9

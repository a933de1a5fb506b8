import numpy as np
import pytest
from hypothesis import given, strategies as st

from vfeel.channel import QdCommChannel, Scatterer, apply_comm, apply_echo, sample_qd_channel
from vfeel.comm import (LinkError, VectorCodec, decide, decode_vector, demodulate,
                        encode_vector, link_budget, transfer_time, transmit_bits,
                        transmit_vector)
from vfeel.sensing import dechirp, range_profile
from vfeel.waveform import SPEED_OF_LIGHT, IsacConfig, InvalidInput, qpsk_map, synth_frame

LAM = SPEED_OF_LIGHT / 60e9
C34 = VectorCodec(34)


def test_rate(cfg):
    assert cfg.data_rate == 200_000
    assert link_budget(400_000, cfg).seconds == 2.0


def test_hfeel_reference_time(cfg):
    bits = 2 * 104_637 * 32
    assert bits == 6_696_768
    assert transfer_time(bits, cfg) == pytest.approx(33.48384, abs=1e-12)


def test_zero_bits(cfg):
    assert transfer_time(0, cfg) == 0.0
    with pytest.raises(InvalidInput):
        transfer_time(-1, cfg)


@given(st.integers(0, 10**9), st.integers(0, 10**9))
def test_transfer_time_additive(a, b):
    cfg = IsacConfig()
    ta, tb = (transfer_time(n, cfg, exact=True) for n in (a, b))
    assert transfer_time(a + b, cfg, exact=True) == ta + tb


def test_encode_zero():
    np.testing.assert_array_equal(encode_vector([0.0]), np.zeros(32, np.uint8))
    bits = encode_vector([0.0], C34)
    assert bits.size == 34 and bits[0] == 1 and not np.any(bits[1:])


def test_encode_msb_first():
    # 1.0f = 0x3f800000
    bits = encode_vector([1.0])
    assert "".join(map(str, bits)) == "0011111110000000" + "0" * 16


def test_codec_round_trip_784():
    v = np.random.default_rng(0).standard_normal(784).astype(np.float32)
    np.testing.assert_array_equal(decode_vector(encode_vector(v)), v)
    bits = encode_vector(v, C34)
    assert bits.size == 26_656
    np.testing.assert_array_equal(decode_vector(bits, C34), v)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32), max_size=40))
def test_codec_round_trip_property(values):
    v = np.asarray(values, np.float32)
    for codec in (VectorCodec(), C34):
        np.testing.assert_array_equal(decode_vector(encode_vector(v, codec), codec).view(np.uint32),
                                      v.view(np.uint32))


def test_codec_errors():
    with pytest.raises(InvalidInput):
        decode_vector(np.zeros(33, np.uint8))
    with pytest.raises(InvalidInput):
        VectorCodec(16)
    with pytest.raises(InvalidInput):
        encode_vector([np.nan])


def test_demod_noiseless_los(cfg):
    bits = np.random.default_rng(3).integers(0, 2, 2 * 25 * 8, dtype=np.uint8)
    ch = QdCommChannel.los(2.5, LAM, phase=1.1)
    np.testing.assert_array_equal(transmit_bits(bits, cfg, ch), bits)


def test_demod_zero_input_tie_break(cfg):
    ch = QdCommChannel.los(1.0, LAM)
    np.testing.assert_array_equal(demodulate(np.zeros(300), ch, cfg), np.zeros(6, np.uint8))
    assert decide([0j, 1 + 0j, 1j])[0] == 0 and decide([1j])[0] == 1


def test_demod_length_error(cfg):
    with pytest.raises(InvalidInput):
        demodulate(np.zeros(150), QdCommChannel.los(1.0, LAM), cfg)


def test_modem_transparency(cfg):
    v = np.random.default_rng(4).standard_normal(60).astype(np.float32)
    bits = encode_vector(v)
    ch = QdCommChannel.los(3.0, LAM)
    phases = qpsk_map(bits)
    phases = np.concatenate([phases, np.full(-phases.size % 25, np.pi / 4)])
    rx = np.concatenate([apply_comm(synth_frame(cfg, phases[i:i + 25]), ch)
                         for i in range(0, phases.size, 25)])
    np.testing.assert_array_equal(decode_vector(demodulate(rx, ch, cfg)[:bits.size]), v)


def test_transmit_vector_multipath(cfg, rng):
    ch = sample_qd_channel(rng, 3.2, LAM)
    v = rng.standard_normal((4, 7)).astype(np.float32)
    got = transmit_vector(v, cfg, ch)
    assert got.shape == v.shape
    np.testing.assert_array_equal(got, v)


def test_transmit_requires_rng_for_noise(cfg):
    with pytest.raises(InvalidInput):
        transmit_bits(np.zeros(10, np.uint8), cfg, QdCommChannel.los(1.0, LAM), snr_db=10.0)


def test_transmit_vector_garbled_raises(cfg):
    # at -20 dB the decoded floats are garbage; non-finite values must surface
    rng = np.random.default_rng(0)
    v = np.ones(2000, np.float32)
    with pytest.raises(LinkError):
        transmit_vector(v, cfg, QdCommChannel.los(1.0, LAM), rng, snr_db=-20.0)


def test_isac_duality(cfg):
    # one frame carries bits to a receiver and echoes off a 30 m target
    bits = np.random.default_rng(5).integers(0, 2, 50, dtype=np.uint8)
    f = synth_frame(cfg, qpsk_map(bits))
    ch = sample_qd_channel(np.random.default_rng(6), 4.0, LAM)
    np.testing.assert_array_equal(demodulate(apply_comm(f, ch), ch, cfg), bits)
    dev = np.zeros(3)
    y = dechirp(apply_echo(f, [Scatterer.fixed([30.0, 0, 0])], dev), f.phases, cfg)
    assert np.all(np.argmax(range_profile(y), axis=0) == 2)

"""QPSK-over-chirp modem, float-vector codec and link-time accounting."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .channel import QdCommChannel, apply_comm
from .waveform import (IsacConfig, InvalidInput, qpsk_map, qpsk_unmap, reference_chirp,
                       synth_chirps)


class LinkError(RuntimeError):
    """A transfer over the simulated link could not be decoded."""


@dataclass(frozen=True)
class VectorCodec:
    """Single-precision payload, optionally wrapped as start(1) + 32 bits + stop(0)."""

    bits_per_element: int = 32

    def __post_init__(self):
        if self.bits_per_element not in (32, 34):
            raise InvalidInput("bits_per_element must be 32 or 34")


@dataclass(frozen=True)
class LinkBudget:
    rate: float
    bits: int
    seconds: float


def transfer_time(n_bits, cfg: IsacConfig, exact: bool = False):
    """Seconds to move ``n_bits`` at two bits per chirp.

    ``exact=True`` returns a :class:`~fractions.Fraction`, which is additive
    without rounding.
    """
    if n_bits < 0:
        raise InvalidInput("bit count must be non-negative")
    t = Fraction(int(n_bits)) * cfg.n_samples / (2 * Fraction(cfg.sample_rate))
    return t if exact else float(t)


def link_budget(n_bits: int, cfg: IsacConfig) -> LinkBudget:
    return LinkBudget(cfg.data_rate, int(n_bits), transfer_time(n_bits, cfg))


def encode_vector(v, codec: VectorCodec = VectorCodec()) -> np.ndarray:
    """Bits of ``v`` as float32, MSB first within each element, in index order."""
    v = np.asarray(v).ravel()
    if not np.all(np.isfinite(v)):
        raise InvalidInput("vector has non-finite entries")
    raw = np.unpackbits(v.astype(">f4").view(np.uint8)).reshape(v.size, 32)
    if codec.bits_per_element == 34:
        ones = np.ones((v.size, 1), np.uint8)
        raw = np.hstack([ones, raw, np.zeros_like(ones)])
    return raw.ravel()


def decode_vector(bits, codec: VectorCodec = VectorCodec()) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    bpe = codec.bits_per_element
    if bits.size % bpe:
        raise InvalidInput(f"{bits.size} bits is not a multiple of {bpe}")
    rows = bits.reshape(-1, bpe)
    if bpe == 34:
        rows = rows[:, 1:33]
    return np.packbits(rows, axis=1).view(">f4").ravel().astype(np.float32)


def matched_reference(ch: QdCommChannel, cfg: IsacConfig) -> np.ndarray:
    """The unmodulated chirp as seen through ``ch``; the receiver knows ``ch``."""
    tx = np.sqrt(cfg.tx_power) * reference_chirp(cfg)
    return apply_comm(tx, ch, cfg.sample_rate)


def decide(correlations) -> np.ndarray:
    """Nearest QPSK point by quadrant; boundary angles go counterclockwise."""
    ang = np.mod(np.angle(np.asarray(correlations)), 2 * np.pi)
    return np.minimum((ang // (np.pi / 2)).astype(np.int64), 3)


def demodulate(rx, ch: QdCommChannel, cfg: IsacConfig) -> np.ndarray:
    rx = np.asarray(rx).ravel()
    if rx.size % cfg.n_samples:
        raise InvalidInput(f"{rx.size} samples is not a whole number of chirps")
    ref = matched_reference(ch, cfg)
    corr = rx.reshape(-1, cfg.n_samples) @ np.conj(ref)
    return qpsk_unmap(decide(corr))


def post_correlation_noise_power(snr_db: float, ch: QdCommChannel, cfg: IsacConfig) -> float:
    """Per-sample noise power giving ``snr_db`` after the matched filter."""
    ref = matched_reference(ch, cfg)
    return float(np.sum(np.abs(ref) ** 2)) / 10 ** (snr_db / 10)


def transmit_bits(bits, cfg: IsacConfig, ch: QdCommChannel, rng=None, snr_db=None,
                  chunk_frames: int = 2000) -> np.ndarray:
    """Send bits over a simulated ISAC link and return the receiver's decisions.

    Bits are padded with zeros to whole frames; frames go through the channel
    one at a time (vectorized), so inter-frame multipath leakage is ignored.
    ``snr_db`` is the post-correlation SNR; ``None`` means noiseless.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size == 0:
        return bits.copy()
    per_frame = 2 * cfg.chirps_per_frame
    n_frames = -(-bits.size // per_frame)
    padded = np.zeros(n_frames * per_frame, np.uint8)
    padded[:bits.size] = bits
    phases = qpsk_map(padded).reshape(n_frames, cfg.chirps_per_frame)
    sigma2 = None
    if snr_db is not None:
        if rng is None:
            raise InvalidInput("noisy transfers need an rng")
        sigma2 = post_correlation_noise_power(snr_db, ch, cfg)
    out = []
    for start in range(0, n_frames, chunk_frames):
        ph = phases[start:start + chunk_frames]
        tx = synth_chirps(cfg, ph.ravel()).reshape(ph.shape[0], -1)
        rx = apply_comm(tx, ch, cfg.sample_rate)
        if sigma2:
            rx = rx + np.sqrt(sigma2 / 2) * (rng.standard_normal(rx.shape)
                                             + 1j * rng.standard_normal(rx.shape))
        out.append(demodulate(rx, ch, cfg))
    return np.concatenate(out)[:bits.size]


def transmit_vector(v, cfg: IsacConfig, ch: QdCommChannel, rng=None, snr_db=None,
                    codec: VectorCodec = VectorCodec()) -> np.ndarray:
    """Encode, send and decode a real array; the shape is preserved."""
    v = np.asarray(v)
    bits = encode_vector(v, codec)
    got = decode_vector(transmit_bits(bits, cfg, ch, rng, snr_db), codec)
    if not np.all(np.isfinite(got)):
        raise LinkError("decoded vector contains non-finite values")
    return got.reshape(v.shape)

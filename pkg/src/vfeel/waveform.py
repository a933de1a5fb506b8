"""Modulated-FMCW ISAC frames at complex baseband.

Every chirp is a linear up-ramp starting at baseband DC; QPSK symbols ride on
the chirp phase. The carrier is never materialized, it enters only through the
wavelength used by the channel models.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Gray map: symbol index -> bit pair, index i carries phase (2i + 1) * pi / 4
GRAY_BITS = ((0, 0), (0, 1), (1, 1), (1, 0))
QPSK_PHASES = np.array([np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4])


class InvalidInput(ValueError):
    """Raised when an operation's preconditions are violated."""


@dataclass(frozen=True)
class IsacConfig:
    """Waveform and sampling parameters of one edge device.

    Defaults are the values used throughout the motion-recognition
    experiments: 10 MHz chirps of 10 us, 25 chirps per frame, sampled at
    10 MHz, 1 W transmit power on a 60 GHz carrier.
    """

    bandwidth: float = 10e6
    carrier: float = 60e9
    t_chirp: float = 10e-6
    chirps_per_frame: int = 25
    sample_rate: float = 10e6
    tx_power: float = 1.0
    n_samples: int = field(init=False, repr=False)

    def __post_init__(self):
        if self.bandwidth <= 0 or self.t_chirp <= 0:
            raise InvalidInput("bandwidth and chirp duration must be positive")
        if self.chirps_per_frame < 1:
            raise InvalidInput("need at least one chirp per frame")
        if self.sample_rate < self.bandwidth:
            raise InvalidInput(
                f"sample rate {self.sample_rate:g} Hz below bandwidth {self.bandwidth:g} Hz")
        if self.carrier < 100 * self.bandwidth:
            raise InvalidInput("carrier must be at least 100x the bandwidth")
        if self.tx_power < 0:
            raise InvalidInput("transmit power must be non-negative")
        n = self.t_chirp * self.sample_rate
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise InvalidInput(f"t_chirp * sample_rate = {n!r} is not a positive integer")
        object.__setattr__(self, "n_samples", int(round(n)))

    @property
    def slope(self) -> float:
        # t_chirp == n_samples / sample_rate exactly; this form avoids 1/t_chirp rounding
        return self.bandwidth * self.sample_rate / self.n_samples

    @property
    def t_frame(self) -> float:
        return self.chirps_per_frame * self.t_chirp

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @property
    def data_rate(self) -> float:
        """Bits per second carried by QPSK-on-chirp: two bits per chirp."""
        return 2.0 * self.sample_rate / self.n_samples

    def fast_time(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    def baseband_freqs(self, n: int | None = None) -> np.ndarray:
        """DFT bin frequencies on the chirp's own support ``[0, F_s)``.

        Up-chirps start at DC and sweep upward, so the non-negative grid is
        the one on which a phase ramp realizes a true (not aliased) delay.
        """
        n = self.n_samples if n is None else n
        return np.arange(n) * (self.sample_rate / n)


@dataclass
class BasebandFrame:
    samples: np.ndarray
    cfg: IsacConfig
    phases: np.ndarray


def qpsk_map(bits) -> np.ndarray:
    """Map a flat bit sequence to per-chirp QPSK phases (two bits per chirp)."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % 2:
        raise InvalidInput(f"odd bit count {bits.size}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise InvalidInput("bits must be 0 or 1")
    pairs = bits.reshape(-1, 2)
    # 00->0, 01->1, 11->2, 10->3
    index = (pairs[:, 0] * 2 + (pairs[:, 0] ^ pairs[:, 1])).astype(np.int64)
    return QPSK_PHASES[index]


def qpsk_unmap(symbol_index) -> np.ndarray:
    """Inverse Gray map from symbol indices (0..3) to a flat bit array."""
    idx = np.asarray(symbol_index, dtype=np.int64).ravel()
    table = np.array(GRAY_BITS, dtype=np.uint8)
    return table[idx].ravel()


def reference_chirp(cfg: IsacConfig) -> np.ndarray:
    """Unit-power, unmodulated chirp used for dechirping and matched filtering."""
    t = cfg.fast_time()
    return np.exp(1j * np.pi * cfg.slope * t * t)


def synth_frame(cfg: IsacConfig, phases) -> BasebandFrame:
    phases = np.asarray(phases, dtype=float).ravel()
    if phases.size != cfg.chirps_per_frame:
        raise InvalidInput(
            f"expected {cfg.chirps_per_frame} chirp phases, got {phases.size}")
    return BasebandFrame(synth_chirps(cfg, phases).ravel(), cfg, phases)


def synth_chirps(cfg: IsacConfig, phases) -> np.ndarray:
    """Chirp train for an arbitrary number of chirps, shape ``(n_chirps, N_c)``."""
    phases = np.asarray(phases, dtype=float).ravel()
    amp = np.sqrt(cfg.tx_power)
    return amp * np.exp(1j * phases)[:, None] * reference_chirp(cfg)[None, :]


def random_phases(rng: np.random.Generator, n_chirps: int) -> np.ndarray:
    """Random QPSK payload, one symbol per chirp."""
    return QPSK_PHASES[rng.integers(0, 4, size=n_chirps)]

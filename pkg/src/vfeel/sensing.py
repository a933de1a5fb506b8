"""Sensing receiver: echo samples -> sensing matrices -> micro-Doppler image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .waveform import IsacConfig, InvalidInput, reference_chirp


@dataclass
class SensingCube:
    """Fast-time x slow-time samples of ``n_frames`` concatenated frames."""

    data: np.ndarray
    chirps_per_frame: int

    def __post_init__(self):
        if self.data.ndim != 2:
            raise InvalidInput("sensing cube must be 2-D")
        if self.chirps_per_frame < 1 or self.data.shape[1] % self.chirps_per_frame:
            raise InvalidInput("column count is not a whole number of frames")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1] // self.chirps_per_frame


@dataclass
class RxParams:
    """Spectrogram pipeline settings. Window/hop/FFT sizes are in slow-time samples."""

    clutter_rank: int = 1
    window: int = 512
    hop: int = 128
    nfft: int = 1024
    band: float = 1000.0
    out_shape: tuple = (28, 28)
    floor_db: float = -80.0


@dataclass
class Spectrogram:
    image: np.ndarray      # (H, W) standardized log-magnitude
    freqs: np.ndarray      # row centre frequencies, Hz
    times: np.ndarray      # column centre times, s
    energy: float          # linear STFT energy before any normalization


def dechirp_chirps(rx_chirps, phases, cfg: IsacConfig) -> np.ndarray:
    """Dechirp and strip QPSK symbols from ``(n_chirps, N_c)`` samples; returns ``(N_c, n_chirps)``."""
    rx = np.asarray(rx_chirps)
    phases = np.asarray(phases, dtype=float).ravel()
    if rx.ndim != 2 or rx.shape != (phases.size, cfg.n_samples):
        raise InvalidInput(f"expected {(phases.size, cfg.n_samples)} samples, got {rx.shape}")
    mixed = rx * np.conj(reference_chirp(cfg))[None, :] * np.exp(-1j * phases)[:, None]
    return mixed.T


def dechirp(rx, phases, cfg: IsacConfig) -> np.ndarray:
    rx = np.asarray(rx).ravel()
    phases = np.asarray(phases, dtype=float).ravel()
    m, n = cfg.chirps_per_frame, cfg.n_samples
    if rx.size != m * n or phases.size != m:
        raise InvalidInput(f"need {m * n} samples and {m} phases, got {rx.size} and {phases.size}")
    return dechirp_chirps(rx.reshape(m, n), phases, cfg)


def range_profile(frame_matrix) -> np.ndarray:
    """Fast-time spectrum magnitude indexed by range bin.

    Mixing with the conjugate reference leaves a target at range ``R`` as a
    tone at ``-2 R mu / c``, so range bin ``b`` sits at DFT bin ``-b``; the
    inverse transform puts it back at index ``b``.
    """
    y = np.asarray(frame_matrix)
    return np.abs(np.fft.ifft(y, axis=0)) * y.shape[0]


def concat_frames(frames) -> SensingCube:
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise InvalidInput("no frames to concatenate")
    shape = frames[0].shape
    if len(shape) != 2 or any(f.shape != shape for f in frames):
        raise InvalidInput("frames must all share the same (N_c, M) shape")
    return SensingCube(np.concatenate(frames, axis=1), shape[1])


def svd_clutter_filter(cube: SensingCube, rank: int = 1) -> SensingCube:
    """Subtract the best rank-``rank`` approximation of the cube."""
    y = cube.data
    if not 0 <= rank < min(y.shape):
        raise InvalidInput(f"rank {rank} outside [0, {min(y.shape)})")
    if rank == 0:
        return SensingCube(y.copy(), cube.chirps_per_frame)
    # leading singular vectors of the short side via its Gram matrix; projecting
    # onto them removes exactly the best rank-`rank` approximation
    if y.shape[0] <= y.shape[1]:
        _, vecs = np.linalg.eigh(y @ y.conj().T)
        u = vecs[:, ::-1][:, :rank]
        clutter = u @ (u.conj().T @ y)
    else:
        _, vecs = np.linalg.eigh(y.conj().T @ y)
        v = vecs[:, ::-1][:, :rank]
        clutter = (y @ v) @ v.conj().T
    return SensingCube(y - clutter, cube.chirps_per_frame)


def slow_time_series(cube: SensingCube) -> np.ndarray:
    return cube.data.sum(axis=0)


def stft_power(series, slow_rate: float, window: int = 512, hop: int = 128, nfft: int = 1024):
    """Hann-windowed STFT power, centred frequency axis.

    Returns ``(power, freqs, times)`` with ``power`` of shape
    ``(nfft, n_segments)``.
    """
    x = np.asarray(series)
    if window > x.size:
        raise InvalidInput(f"window {window} longer than series {x.size}")
    if hop < 1 or nfft < window:
        raise InvalidInput("need hop >= 1 and nfft >= window")
    segs = sliding_window_view(x, window)[::hop]
    win = get_window("hann", window)
    spec = np.fft.fftshift(np.fft.fft(segs * win, n=nfft, axis=1), axes=1)
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, 1.0 / slow_rate))
    times = (np.arange(segs.shape[0]) * hop + window / 2) / slow_rate
    return (np.abs(spec) ** 2).T, freqs, times


def rebin(a, n: int, axis: int) -> np.ndarray:
    """Area-weighted resampling of ``a`` to ``n`` cells along ``axis``.

    Each output cell is the mean of the input over its (fractional) extent,
    so the same code handles shrinking and stretching.
    """
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    m = a.shape[0]
    cum = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
    edges = np.linspace(0.0, m, n + 1)
    lo = np.clip(np.floor(edges).astype(int), 0, m - 1)
    frac = (edges - lo).reshape((-1,) + (1,) * (a.ndim - 1))
    at_edges = cum[lo] + frac * (cum[lo + 1] - cum[lo])
    out = np.diff(at_edges, axis=0) / (m / n)
    return np.moveaxis(out, 0, axis)


def stft_spectrogram(series, slow_rate: float, params: RxParams | None = None) -> Spectrogram:
    p = params or RxParams()
    power, freqs, times = stft_power(series, slow_rate, p.window, p.hop, p.nfft)
    keep = np.abs(freqs) <= p.band
    power, freqs = power[keep], freqs[keep]
    energy = float(power.sum())
    peak = power.max()
    if peak > 0:
        db = 10 * np.log10(np.maximum(power / peak, 10 ** (p.floor_db / 10)))
    else:
        db = np.full(power.shape, p.floor_db)
    h, w = p.out_shape
    img = rebin(rebin(db, h, axis=0), w, axis=1)
    sd = img.std()
    if sd**2 < 1e-12:
        img = np.zeros_like(img)
    else:
        img = (img - img.mean()) / sd
    return Spectrogram(img.astype(np.float32), rebin(freqs, h, 0), rebin(times, w, 0), energy)


def doppler_centroid(series, slow_rate: float, params: RxParams | None = None) -> float:
    """Power-weighted mean absolute Doppler (Hz) inside the crop band."""
    p = params or RxParams()
    power, freqs, _ = stft_power(series, slow_rate, p.window, p.hop, p.nfft)
    keep = np.abs(freqs) <= p.band
    w = power[keep].sum(axis=1)
    return float(np.sum(w * np.abs(freqs[keep])) / np.sum(w))

"""Propagation: point-scatterer echoes, the cluster/ray link channel, AWGN.

Delays are applied as phase ramps in the frequency domain over the signal's
own band ``[0, F_s)``, which is exact for the band-limited chirps we carry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .waveform import SPEED_OF_LIGHT, BasebandFrame, IsacConfig, InvalidInput, synth_chirps


@dataclass
class Scatterer:
    """A point reflector. ``trajectory`` maps times (s) of shape (n,) to (n, 3) metres."""

    trajectory: Callable[[np.ndarray], np.ndarray]
    reflectivity: float = 1.0
    static: bool = False

    def __post_init__(self):
        if self.reflectivity < 0:
            raise InvalidInput("reflectivity must be non-negative")

    @classmethod
    def fixed(cls, position, reflectivity=1.0):
        p = np.asarray(position, dtype=float).reshape(3)
        return cls(lambda t: np.broadcast_to(p, (np.size(t), 3)).copy(), reflectivity, True)

    @classmethod
    def moving(cls, start, velocity, reflectivity=1.0):
        p0 = np.asarray(start, dtype=float).reshape(3)
        v = np.asarray(velocity, dtype=float).reshape(3)
        return cls(lambda t: p0 + np.atleast_1d(t)[:, None] * v, reflectivity, False)

    def positions(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.trajectory(t), dtype=float).reshape(t.size, 3)


def echo_chirps(cfg: IsacConfig, phases, scatterers: Sequence[Scatterer], device,
                chirp_times) -> np.ndarray:
    """Stop-and-hop echo of a chirp train, shape ``(n_chirps, N_c)``.

    Chirp ``m`` is transmitted at ``chirp_times[m]``; each scatterer is frozen
    at that instant for the duration of the chirp.
    """
    phases = np.asarray(phases, dtype=float).ravel()
    times = np.asarray(chirp_times, dtype=float).ravel()
    if phases.size != times.size:
        raise InvalidInput("one phase per chirp time required")
    n = cfg.n_samples
    response = np.zeros((times.size, n), dtype=complex)
    if not scatterers:
        return response
    device = np.asarray(device, dtype=float).reshape(3)
    f = cfg.baseband_freqs()
    k = 4 * np.pi / cfg.wavelength
    static = np.zeros(n, dtype=complex)
    for s in scatterers:
        r = np.linalg.norm(s.positions(times[:1] if s.static else times) - device, axis=1)
        if np.any(r <= 1e-9):
            raise InvalidInput("scatterer at zero range")
        tau = 2 * r / SPEED_OF_LIGHT
        gain = s.reflectivity / r**2 * np.exp(-1j * k * r)
        if s.static:
            static += gain[0] * np.exp(-2j * np.pi * tau[0] * f)
        else:
            response += gain[:, None] * _delay_ramp(tau, f[1], n)
    response += static[None, :]
    tx_spec = np.fft.fft(synth_chirps(cfg, phases), axis=1)
    return np.fft.ifft(tx_spec * response, axis=1)


def _delay_ramp(tau, df, n):
    """``exp(-2j pi tau f_k)`` on the grid ``f_k = k df``, one row per delay."""
    # a running product is several times cheaper than a full complex exp
    ramp = np.empty((tau.size, n), dtype=complex)
    ramp[:, 0] = 1.0
    ramp[:, 1:] = np.exp(-2j * np.pi * tau * df)[:, None]
    return np.cumprod(ramp, axis=1, out=ramp)


def apply_echo(frame: BasebandFrame, scatterers: Sequence[Scatterer], device, t0: float = 0.0):
    cfg = frame.cfg
    times = t0 + np.arange(cfg.chirps_per_frame) * cfg.t_chirp
    return echo_chirps(cfg, frame.phases, scatterers, device, times).ravel()


@dataclass
class QdCommChannel:
    """Cluster/ray multipath channel between two devices.

    ``ray_delay`` holds absolute ray delays (s), each no earlier than the
    owning cluster's delay. Cluster ``0`` is the line-of-sight cluster.
    """

    cluster_loss: np.ndarray
    cluster_delay: np.ndarray
    ray_amp: list
    ray_phase: list
    ray_delay: list
    distance: float
    wavelength: float
    # forces the path-loss factor to 1 when True (identity-style test channels)
    unit_gain: bool = field(default=False)

    def __post_init__(self):
        self.cluster_loss = np.asarray(self.cluster_loss, dtype=float)
        self.cluster_delay = np.asarray(self.cluster_delay, dtype=float)
        if self.distance <= 0 or self.wavelength <= 0:
            raise InvalidInput("distance and wavelength must be positive")
        if self.cluster_loss.size < 1:
            raise InvalidInput("need at least one cluster")
        if np.any(self.cluster_loss < 0) or np.any(self.cluster_delay < 0):
            raise InvalidInput("cluster losses and delays must be non-negative")
        if not (len(self.ray_amp) == len(self.ray_phase) == len(self.ray_delay)
                == self.cluster_loss.size):
            raise InvalidInput("ray lists must have one entry per cluster")
        for n, (a, p, d) in enumerate(zip(self.ray_amp, self.ray_phase, self.ray_delay)):
            a, d = np.atleast_1d(a), np.atleast_1d(d)
            if a.size < 1 or a.size != np.atleast_1d(p).size or a.size != d.size:
                raise InvalidInput(f"cluster {n}: ray arrays must be non-empty and equal length")
            if np.any(d < self.cluster_delay[n] - 1e-18):
                raise InvalidInput(f"cluster {n}: ray delay precedes its cluster delay")

    @classmethod
    def los(cls, distance, wavelength, phase=0.0, unit_gain=False):
        return cls([1.0], [0.0], [[1.0]], [[phase]], [[0.0]], distance, wavelength, unit_gain)

    @property
    def n_clusters(self) -> int:
        return self.cluster_loss.size

    def taps(self):
        """Complex gains and delays of every ray, flattened across clusters."""
        gains, delays = [], []
        for n in range(self.n_clusters):
            if self.unit_gain:
                path = 1.0
            else:
                path = self.wavelength / (
                    4 * np.pi * (self.distance + self.cluster_delay[n] * SPEED_OF_LIGHT))
            amp = np.sqrt(self.cluster_loss[n]) * path * np.atleast_1d(self.ray_amp[n])
            gains.append(amp * np.exp(1j * np.atleast_1d(self.ray_phase[n])))
            delays.append(np.atleast_1d(self.ray_delay[n]).astype(float))
        return np.concatenate(gains), np.concatenate(delays)

    def frequency_response(self, freqs) -> np.ndarray:
        g, d = self.taps()
        return np.exp(-2j * np.pi * np.outer(freqs, d)) @ g


def sample_qd_channel(rng: np.random.Generator, distance: float, wavelength: float,
                      n_clusters: int = 3, rays_per_cluster: int = 5,
                      cluster_delay_mean: float = 10e-9, ray_delay_mean: float = 2e-9,
                      ray_decay: float = 5e-9, nlos_loss_db: float = -10.0) -> QdCommChannel:
    """Draw a quasi-deterministic channel realization.

    Cluster 0 is a single unit ray at zero delay. Later clusters get
    exponential delays, ``rays_per_cluster`` rays with exponential excess
    delays, amplitudes ``exp(-excess / ray_decay)`` and uniform phases.
    """
    if distance <= 0:
        raise InvalidInput("distance must be positive")
    if n_clusters < 1 or rays_per_cluster < 1:
        raise InvalidInput("need at least one cluster and one ray")
    loss, cdelay = [1.0], [0.0]
    amps, phases, rdelays = [np.ones(1)], [np.zeros(1)], [np.zeros(1)]
    for _ in range(1, n_clusters):
        tc = rng.exponential(cluster_delay_mean)
        excess = rng.exponential(ray_delay_mean, size=rays_per_cluster)
        excess[0] = 0.0
        loss.append(10 ** (nlos_loss_db / 10))
        cdelay.append(tc)
        amps.append(np.exp(-excess / ray_decay))
        phases.append(rng.uniform(0, 2 * np.pi, size=rays_per_cluster))
        rdelays.append(tc + excess)
    return QdCommChannel(np.array(loss), np.array(cdelay), amps, phases, rdelays,
                         float(distance), float(wavelength))


def apply_comm(signal, ch: QdCommChannel, sample_rate: float | None = None) -> np.ndarray:
    """Pass a baseband signal through the link channel.

    ``signal`` is a :class:`BasebandFrame` or an array whose last axis is
    time; a 2-D array is treated as independent frames.
    """
    if isinstance(signal, BasebandFrame):
        sample_rate = signal.cfg.sample_rate
        x = signal.samples
    else:
        x = np.asarray(signal)
        if sample_rate is None:
            raise InvalidInput("sample_rate required for raw arrays")
    n = x.shape[-1]
    freqs = np.arange(n) * (sample_rate / n)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * ch.frequency_response(freqs), axis=-1)


@dataclass(frozen=True)
class NoiseSpec:
    """Either an absolute ``power`` or ``snr_db`` against ``ref_power``.

    If ``snr_db`` is set without ``ref_power`` the signal's own mean power
    is used as the reference.
    """

    power: float | None = None
    snr_db: float | None = None
    ref_power: float | None = None

    def __post_init__(self):
        if self.power is None and self.snr_db is None:
            raise InvalidInput("give either power or snr_db")
        if self.power is not None and self.power < 0:
            raise InvalidInput("noise power must be non-negative")

    def noise_power(self, signal) -> float:
        if self.power is not None:
            return float(self.power)
        ref = self.ref_power
        if ref is None:
            ref = float(np.mean(np.abs(signal) ** 2))
        if not np.isfinite(ref):
            raise InvalidInput("reference power is not finite")
        return ref / 10 ** (self.snr_db / 10)


def add_noise(signal, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(signal)
    p = spec.noise_power(x)
    if p == 0:
        return x.astype(complex, copy=True)
    w = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + np.sqrt(p / 2) * w

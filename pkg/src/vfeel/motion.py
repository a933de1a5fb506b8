"""Labelled multi-view micro-Doppler scenes of five human motions.

A person is five point scatterers (torso, two legs, two arms). The torso
translates at the class speed; limbs add sinusoidal velocity swings along the
heading. This keeps what the recognition task depends on: body speed, gait
periodicity, height scaling and the cosine dependence on aspect angle.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .channel import NoiseSpec, Scatterer, add_noise, echo_chirps
from .sensing import (RxParams, SensingCube, Spectrogram, dechirp_chirps, slow_time_series,
                      stft_spectrogram, svd_clutter_filter)
from .waveform import IsacConfig, InvalidInput, random_phases


class MotionClass(enum.IntEnum):
    CHILD_WALKING = 0
    CHILD_PACING = 1
    ADULT_WALKING = 2
    ADULT_PACING = 3
    STANDING = 4

    @property
    def is_child(self):
        return self in (MotionClass.CHILD_WALKING, MotionClass.CHILD_PACING)

    @property
    def is_pacing(self):
        return self in (MotionClass.CHILD_PACING, MotionClass.ADULT_PACING)

    def speed(self, height: float) -> float:
        if self is MotionClass.STANDING:
            return 0.0
        return (0.25 if self.is_pacing else 0.5) * height


CHILD_HEIGHT = (0.9, 1.2)
ADULT_HEIGHT = (1.6, 1.9)
# standing people are drawn from the pooled child and adult ranges
STANDING_HEIGHTS = (CHILD_HEIGHT, ADULT_HEIGHT)

# kinematic constants of the scatterer model
LEG_SWING = 1.5
ARM_SWING = 0.8
TURN_PERIOD = 2.0
SWAY_AMPLITUDE = 0.01
SWAY_FREQ = 0.3
Z_FRACTION = {"torso": 0.55, "leg": 0.25, "arm": 0.45}
LATERAL = {"leg": 0.1, "arm": 0.2}
REFLECTIVITY = np.array([1.0, 0.4, 0.4, 0.25, 0.25])
SCATTERER_NAMES = ("torso", "leg_l", "leg_r", "arm_l", "arm_r")


@dataclass
class Scenario:
    """Room, devices and where people appear.

    The room spans ``x in [0, 4.5]``, ``y in [-1.5, 1.5]``, ``z in [0, 3]``
    metres; devices sit on its walls.
    """

    room_min: tuple = (0.0, -1.5, 0.0)
    room_max: tuple = (4.5, 1.5, 3.0)
    devices: tuple = ((0.0, 0.0, 1.0), (3.0, 1.5, 1.0), (4.5, -1.0, 1.0))
    carriers: tuple = (60e9, 60.01e9, 60.02e9)
    spawn_size: tuple = (3.0, 2.0)
    clutter: tuple = (((0.6, 1.2, 0.8), 3.0), ((4.0, 1.3, 1.6), 3.0), ((2.2, -1.4, 0.4), 3.0))

    def __post_init__(self):
        devs = np.asarray(self.devices, dtype=float)
        if devs.ndim != 2 or devs.shape[1] != 3 or len(devs) < 1:
            raise InvalidInput("devices must be a list of 3-D points")
        if len({tuple(d) for d in devs.tolist()}) != len(devs):
            raise InvalidInput("device positions must be distinct")
        if len(self.carriers) != len(devs):
            raise InvalidInput("one carrier frequency per device")
        lo, hi = self.spawn_bounds()
        if np.any(lo < np.asarray(self.room_min[:2])) or np.any(hi > np.asarray(self.room_max[:2])):
            raise InvalidInput("spawn rectangle leaves the room footprint")

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    def spawn_bounds(self):
        centre = (np.asarray(self.room_min[:2]) + np.asarray(self.room_max[:2])) / 2
        half = np.asarray(self.spawn_size) / 2
        return centre - half, centre + half

    def clutter_scatterers(self):
        return [Scatterer.fixed(p, r) for p, r in self.clutter]

    def inside(self, xy) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return np.all((xy >= np.asarray(self.room_min[:2])) & (xy <= np.asarray(self.room_max[:2])),
                      axis=1)


@dataclass
class Subject:
    motion: MotionClass
    height: float
    heading: float             # rad, azimuth of the walking direction
    start: np.ndarray          # (x, y) of the torso at t = 0
    gait_phase: float = 0.0    # rad
    turn_phase: float = 0.0    # s into the pacing turn cycle at t = 0
    sway_phase: float = 0.0
    speed: float = field(init=False)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(2)
        self.speed = self.motion.speed(self.height)

    @property
    def gait_freq(self) -> float:
        return self.speed / (0.5 * self.height) if self.speed else 0.0

    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading)])

    def torso_travel(self, t) -> np.ndarray:
        """Signed distance travelled along the heading, metres."""
        t = np.asarray(t, dtype=float)
        if self.motion is MotionClass.STANDING:
            return SWAY_AMPLITUDE * (np.sin(2 * np.pi * SWAY_FREQ * t + self.sway_phase)
                                     - np.sin(self.sway_phase))
        if not self.motion.is_pacing:
            return self.speed * t
        return self.speed * (_triangle(t + self.turn_phase, TURN_PERIOD)
                             - _triangle(self.turn_phase, TURN_PERIOD))

    def positions(self, t) -> np.ndarray:
        """Scatterer positions, shape ``(n_times, 5, 3)`` in :data:`SCATTERER_NAMES` order."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = self.direction()
        side = np.array([-u[1], u[0]])
        base = self.start[None, :] + self.torso_travel(t)[:, None] * u[None, :]
        out = np.empty((t.size, 5, 3))
        out[:, :, :2] = base[:, None, :]
        f = self.gait_freq
        for i, name in enumerate(SCATTERER_NAMES):
            kind = name.split("_")[0]
            out[:, i, 2] = Z_FRACTION[kind] * self.height
            if kind == "torso":
                continue
            lateral = LATERAL[kind] * (1 if name.endswith("_l") else -1)
            out[:, i, :2] += lateral * side
            if f == 0:
                continue
            amp = (LEG_SWING if kind == "leg" else ARM_SWING) * self.speed
            # arms swing against the leg on the same side
            phase = self.gait_phase + (np.pi if name in ("leg_r", "arm_l") else 0.0)
            w = 2 * np.pi * f
            swing = -amp / w * (np.cos(w * t + phase) - np.cos(phase))
            out[:, i, :2] += swing[:, None] * u[None, :]
        return out

    def scatterers(self):
        return [Scatterer(lambda tt, i=i: self.positions(tt)[:, i, :], float(REFLECTIVITY[i]))
                for i in range(5)]


def _triangle(s, period):
    """Distance covered by unit-speed back-and-forth motion reversing every ``period``."""
    s = np.mod(s, 2 * period)
    return np.where(s < period, s, 2 * period - s)


def subject_scatterers(subject: Subject, t) -> np.ndarray:
    return subject.positions(t)


def sample_subject(rng: np.random.Generator, motion: MotionClass, scenario: Scenario) -> Subject:
    motion = MotionClass(motion)
    if motion is MotionClass.STANDING:
        lo, hi = STANDING_HEIGHTS[rng.integers(0, 2)]
    else:
        lo, hi = CHILD_HEIGHT if motion.is_child else ADULT_HEIGHT
    height = rng.uniform(lo, hi)
    heading = np.deg2rad(rng.uniform(-180.0, 180.0))
    spawn_lo, spawn_hi = scenario.spawn_bounds()
    start = rng.uniform(spawn_lo, spawn_hi)
    return Subject(motion, height, heading, start,
                   gait_phase=rng.uniform(0, 2 * np.pi),
                   turn_phase=rng.uniform(0, TURN_PERIOD),
                   sway_phase=rng.uniform(0, 2 * np.pi))


@dataclass
class SensingSetup:
    """Everything needed to turn a subject into K spectrograms."""

    base: IsacConfig = field(default_factory=IsacConfig)
    t_spec: float = 0.5
    decimation: int = 1        # keep one chirp in `decimation` along slow time
    snr_db: float = 20.0
    rx: RxParams = field(default_factory=RxParams)

    @property
    def n_frames(self) -> int:
        n = self.t_spec / self.base.t_frame
        if abs(n - round(n)) > 1e-6 or round(n) < 1:
            raise InvalidInput(f"T_spec / T_frame = {n!r} is not a positive integer")
        return int(round(n))

    @property
    def slow_rate(self) -> float:
        return 1.0 / (self.decimation * self.base.t_chirp)

    def chirp_times(self) -> np.ndarray:
        n_chirps = self.n_frames * self.base.chirps_per_frame
        if self.decimation < 1 or n_chirps % (self.decimation * self.base.chirps_per_frame):
            raise InvalidInput("decimation must divide the number of frames")
        return np.arange(0, n_chirps, self.decimation) * self.base.t_chirp

    def device_config(self, carrier: float) -> IsacConfig:
        b = self.base
        return IsacConfig(b.bandwidth, carrier, b.t_chirp, b.chirps_per_frame, b.sample_rate,
                          b.tx_power)


def sense_series(setup: SensingSetup, cfg: IsacConfig, device, targets, clutter, rng,
                 times=None) -> np.ndarray:
    """Echo, noise, dechirp and clutter filter down to the slow-time series."""
    times = setup.chirp_times() if times is None else times
    phases = random_phases(rng, times.size)
    target = echo_chirps(cfg, phases, targets, device, times)
    ref = float(np.mean(np.abs(target) ** 2)) if targets else 1.0
    rx = target + echo_chirps(cfg, phases, clutter, device, times)
    rx = add_noise(rx, NoiseSpec(snr_db=setup.snr_db, ref_power=ref), rng)
    cube = SensingCube(dechirp_chirps(rx, phases, cfg), cfg.chirps_per_frame)
    cube = svd_clutter_filter(cube, setup.rx.clutter_rank)
    return slow_time_series(cube)


def sense(setup: SensingSetup, cfg: IsacConfig, device, targets, clutter, rng,
          times=None) -> Spectrogram:
    """One device's full chain: echo, noise, dechirp, clutter filter, spectrogram."""
    series = sense_series(setup, cfg, device, targets, clutter, rng, times)
    return stft_spectrogram(series, setup.slow_rate, setup.rx)


def stays_inside(subject: Subject, scenario: Scenario, times) -> bool:
    pos = subject.positions(times)[:, :, :2].reshape(-1, 2)
    return bool(np.all(scenario.inside(pos)))


def generate_sample(scenario: Scenario, subject: Subject, setup: SensingSetup, rng,
                    max_retries: int = 20):
    """Spectrograms of one subject seen by every device, plus its label.

    If the subject would leave the room during the sensing interval its start
    position is re-drawn, at most ``max_retries`` times.
    """
    times = setup.chirp_times()
    spawn_lo, spawn_hi = scenario.spawn_bounds()
    for _ in range(max_retries + 1):
        if stays_inside(subject, scenario, times):
            break
        subject.start = rng.uniform(spawn_lo, spawn_hi)
    else:
        raise InvalidInput("subject keeps leaving the room")
    targets = subject.scatterers()
    clutter = scenario.clutter_scatterers()
    views = []
    for dev, fc in zip(scenario.devices, scenario.carriers):
        views.append(sense(setup, setup.device_config(fc), dev, targets, clutter, rng, times))
    return views, int(subject.motion)


@dataclass
class Dataset:
    train_x: np.ndarray     # (N, K, H, W) float32
    train_y: np.ndarray     # (N,) uint8
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_views(self) -> int:
        return self.train_x.shape[1]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for sample ``index``: ``SeedSequence(seed, spawn_key=(index,))``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_dataset(scenario: Scenario, counts, split: float, setup: SensingSetup, seed: int,
                     progress=None) -> Dataset:
    """Balanced dataset; per class the first ``round(split * n)`` samples train.

    Sample ``i`` (classes in label order, ``counts[c]`` each) is generated
    from :func:`sample_rng` ``(seed, i)``, then each split is shuffled with
    ``default_rng(seed)``.
    """
    counts = [int(c) for c in counts]
    if len(counts) != len(MotionClass) or min(counts) < 1:
        raise InvalidInput("need a positive count for each of the 5 classes")
    if not 0 <= split <= 1:
        raise InvalidInput("split must lie in [0, 1]")
    xs, ys, is_train = [], [], []
    i = 0
    for label, n in zip(MotionClass, counts):
        n_train = int(round(split * n))
        for j in range(n):
            rng = sample_rng(seed, i)
            subject = sample_subject(rng, label, scenario)
            views, y = generate_sample(scenario, subject, setup, rng)
            xs.append(np.stack([v.image for v in views]))
            ys.append(y)
            is_train.append(j < n_train)
            i += 1
            if progress:
                progress(i)
    x = np.stack(xs).astype(np.float32)
    y = np.asarray(ys, dtype=np.uint8)
    mask = np.asarray(is_train)
    shuffle = np.random.default_rng(seed)
    tr = shuffle.permutation(np.flatnonzero(mask))
    te = shuffle.permutation(np.flatnonzero(~mask))
    return Dataset(x[tr], y[tr], x[te], y[te])

"""Walk one chirp frame through both halves of ISAC.

The same QPSK-modulated chirps carry bits to a neighbour device and come
back as radar echoes. Run: ``python3 demos/signal_chain.py``.
"""
import numpy as np

from vfeel.channel import Scatterer, apply_comm, apply_echo, sample_qd_channel
from vfeel.comm import demodulate, link_budget
from vfeel.motion import MotionClass, Scenario, SensingSetup, Subject, sense
from vfeel.sensing import RxParams, dechirp, range_profile
from vfeel.waveform import SPEED_OF_LIGHT, IsacConfig, qpsk_map, synth_frame

cfg = IsacConfig()
rng = np.random.default_rng(0)
print(f"chirp slope {cfg.slope:.3g} Hz/s, {cfg.n_samples} samples per chirp, "
      f"link rate {cfg.data_rate:.0f} bit/s")

# 50 bits ride on one 25-chirp frame
bits = rng.integers(0, 2, 50, dtype=np.uint8)
frame = synth_frame(cfg, qpsk_map(bits))

# communication: a 4.7 m multipath link, matched filter per chirp
ch = sample_qd_channel(rng, 4.7, SPEED_OF_LIGHT / cfg.carrier)
got = demodulate(apply_comm(frame, ch), ch, cfg)
n_rays = sum(len(a) for a in ch.ray_amp)
print(f"link: {ch.cluster_loss.size} clusters, {n_rays} rays, bit errors {int(np.sum(got != bits))} of {bits.size}")

# sensing: the same frame echoes off a wall 30 m away
dev = np.zeros(3)
echo = apply_echo(frame, [Scatterer.fixed([30.0, 0, 0])], dev)
prof = range_profile(dechirp(echo, frame.phases, cfg))
print(f"range profile peak bin {int(np.argmax(prof[:, 0]))} "
      f"(bin width {SPEED_OF_LIGHT / (2 * cfg.bandwidth):.0f} m)")

# a walking adult seen by device 1, reduced slow-time rate
setup = SensingSetup(decimation=10, rx=RxParams(window=128, hop=32, nfft=256))
sc = Scenario()
walker = Subject(MotionClass.ADULT_WALKING, 1.8, 0.0, (1.5, 0.0))
spec = sense(setup, setup.device_config(sc.carriers[0]), sc.devices[0], walker.scatterers(),
             sc.clutter_scatterers(), rng)
ridge = spec.freqs[np.argmax(spec.image, axis=0)]
# walking away from the device, so the ridge sits at negative Doppler
print(f"spectrogram {spec.image.shape}, median ridge {np.median(ridge):.0f} Hz "
      f"(torso alone: -{2 * walker.speed * cfg.carrier / SPEED_OF_LIGHT:.0f} Hz)")

# what a 784-float intermediate vector costs on that link
b = link_budget(784 * 32 * 32, cfg)
print(f"one split-A batch message: {b.bits} bits, {b.seconds:.3f} s")

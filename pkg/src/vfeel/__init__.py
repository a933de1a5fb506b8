"""Deterministic simulator for vertical federated edge learning over distributed ISAC.

Modules, bottom up: ``waveform`` (QPSK-modulated FMCW chirps), ``channel``
(radar echoes, device-to-device links, noise), ``sensing`` (dechirp, clutter
filter, spectrograms), ``comm`` (modem, float codec, link budget), ``motion``
(kinematic human scenes and datasets), ``neural`` (CNN with exact backprop),
``protocol`` (split training and baselines) and ``harness`` (config, files, CLI).
"""

__version__ = "0.1.0"

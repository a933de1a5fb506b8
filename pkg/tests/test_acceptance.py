"""Acceptance criteria, each checked at its stated tolerance.

Every clause records a PASS/FAIL line; the terminal summary prints one
line per criterion.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import gradcheck, monolithic_grads
from vfeel.channel import Scatterer, echo_chirps, sample_qd_channel
from vfeel.comm import transfer_time, transmit_bits
from vfeel.harness import cli, experiments
from vfeel.motion import MotionClass, Scenario, Subject, sense_series
from vfeel.neural import Conv2D, Dense, Flatten, MaxPool, Network, ReLU, full_network
from vfeel.protocol import (CommLedger, SplitNetwork, TrainConfig, hfeel_iteration_bits,
                            vfeel_backward, vfeel_forward, vfeel_iteration_bits, vfeel_step)
from vfeel.sensing import (SensingCube, dechirp_chirps, doppler_centroid, range_profile,
                           slow_time_series, stft_power, svd_clutter_filter)
from vfeel.waveform import SPEED_OF_LIGHT, IsacConfig, random_phases

ISAC = IsacConfig()
DEV = np.array([0.0, 0.0, 1.0])


# 1 -------------------------------------------------------------------------

def test_c1_rate_identity(criterion):
    r = ISAC.data_rate
    criterion(1, "rate identity R = 2/T_chirp", "R == 200000 bit/s", r == 200_000, f"R={r!r}")
    assert r == 200_000


# 2 -------------------------------------------------------------------------

def test_c2_hfeel_table(criterion):
    bits = 2 * hfeel_iteration_bits(104_637, 32)
    t = transfer_time(bits, ISAC)
    ok = abs(t - 33.48) <= 0.01
    criterion(2, "H-FEEL per-iteration time", "33.48 s +-0.01", ok, f"{t:.5f} s")
    assert ok


# 3 -------------------------------------------------------------------------

@pytest.mark.parametrize("d,paper", [(784, 4.27), (60, 0.33)])
def test_c3_vfeel_table(criterion, d, paper):
    led = CommLedger(ISAC, two_way=False)
    bits = vfeel_iteration_bits(d, 32, 34)
    led.record(bits, bits, 0)
    t = led.seconds(0)
    ok = abs(t - paper) <= 0.02 * paper
    criterion(3, "V-FEEL per-iteration time (34-bit, one-way)", f"d={d} within 2% of {paper}",
              ok, f"{t:.5f} s")
    assert ok


# 4 -------------------------------------------------------------------------

def test_c4_range_bin(criterion):
    rng = np.random.default_rng(0)
    ph = random_phases(rng, 25)
    times = np.arange(25) * ISAC.t_chirp
    rx = echo_chirps(ISAC, ph, [Scatterer.fixed(DEV + [30.0, 0, 0])], DEV, times)
    peaks = np.argmax(range_profile(dechirp_chirps(rx, ph, ISAC)), axis=0)
    ok = bool(np.all(peaks == 2))
    criterion(4, "DSP oracles", "30 m target at fast-time bin 2", ok,
              f"peak bins {sorted({int(p) for p in peaks})}")
    assert ok


def test_c4_doppler_tone(criterion):
    rng = np.random.default_rng(1)
    n = 20_000
    times = np.arange(n) * ISAC.t_chirp
    ph = random_phases(rng, n)
    s = Scatterer.moving(DEV + [-3.0, 0, 0], [1.0, 0, 0])
    x = slow_time_series(SensingCube(dechirp_chirps(echo_chirps(ISAC, ph, [s], DEV, times),
                                                    ph, ISAC), 25))
    power, freqs, _ = stft_power(x, 1 / ISAC.t_chirp, 512, 128, 1024)
    f = abs(freqs[np.argmax(power.sum(axis=1))])
    bin_hz = freqs[1] - freqs[0]
    ok = abs(f - 400.0) <= bin_hz
    criterion(4, "DSP oracles", "1 m/s tone at 400 Hz +-1 STFT bin", ok,
              f"{f:.1f} Hz (bin {bin_hz:.1f} Hz)")
    assert ok


def test_c4_svd_suppression(criterion):
    rng = np.random.default_rng(2)
    times = np.arange(2000) * ISAC.t_chirp
    ph = random_phases(rng, times.size)
    cube = SensingCube(dechirp_chirps(echo_chirps(ISAC, ph, Scenario().clutter_scatterers(),
                                                  DEV, times), ph, ISAC), 25)
    out = svd_clutter_filter(cube, 1)
    db = 10 * np.log10(max(np.sum(np.abs(out.data) ** 2) / np.sum(np.abs(cube.data) ** 2),
                           1e-300))
    ok = db <= -20
    criterion(4, "DSP oracles", "static scene suppressed >= 20 dB", ok, f"{db:.1f} dB")
    assert ok


# 5 -------------------------------------------------------------------------

def link_channel(rng, a=0, b=2):
    sc = Scenario()
    dist = float(np.linalg.norm(np.subtract(sc.devices[a], sc.devices[b])))
    return sample_qd_channel(rng, dist, SPEED_OF_LIGHT / sc.carriers[a])


def test_c5_noiseless_round_trip(criterion):
    rng = np.random.default_rng(3)
    payloads = [rng.integers(0, 2, 10_000, dtype=np.uint8) for _ in range(5)]
    payloads += [np.zeros(10_000, np.uint8), np.ones(10_000, np.uint8)]
    ok = all(np.array_equal(transmit_bits(p, ISAC, link_channel(rng)), p) for p in payloads)
    criterion(5, "modem", "noiseless 10,000-bit payloads bit-exact", ok,
              f"{len(payloads)} payloads over sampled multipath links")
    assert ok


def test_c5_ber_at_15db(criterion):
    rng = np.random.default_rng(4)
    n = 1_000_000
    bits = rng.integers(0, 2, n, dtype=np.uint8)
    t0 = time.perf_counter()
    got = transmit_bits(bits, ISAC, link_channel(rng), rng, snr_db=15.0)
    dt = time.perf_counter() - t0
    ber = float(np.mean(got != bits))
    ok = ber < 1e-4 and dt < 60
    criterion(5, "modem", "BER < 1e-4 at 15 dB over 1e6 bits", ok, f"BER={ber:.2e} in {dt:.1f} s")
    assert ok


# 6 -------------------------------------------------------------------------

LAYER_NETS = {
    "Conv2D": lambda dt: Network([Conv2D(2, 3, 3, padding=1), ReLU(), Conv2D(3, 2, 3, stride=2)],
                                 (2, 7, 7), dt),
    "MaxPool": lambda dt: Network([Conv2D(1, 2, 3), ReLU(), MaxPool(2)], (1, 8, 8), dt),
    "ReLU": lambda dt: Network([Dense(5, 6), ReLU(), Dense(6, 3)], (5,), dt),
    "Flatten": lambda dt: Network([Conv2D(1, 2, 3), Flatten(), Dense(32, 4)], (1, 6, 6), dt),
    "Dense": lambda dt: Network([Dense(7, 5), ReLU(), Dense(5, 4)], (7,), dt),
    "full CNN": lambda dt: full_network(dtype=dt),
}


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-6)])
def test_c6_gradcheck(criterion, dtype, tol):
    rng = np.random.default_rng(5)
    worst = {}
    for name, make in LAYER_NETS.items():
        net = make(dtype).init(rng)
        net.set_flat(net.get_flat() + 0.1 * rng.standard_normal(net.param_count()))
        worst[name] = max(gradcheck(net, rng.standard_normal((3,) + net.input_shape), rng))
    ok = all(v < tol for v in worst.values())
    criterion(6, "gradient certification", f"finite differences {np.dtype(dtype).name} < {tol:g}",
              ok, f"max rel err {max(worst.values()):.1e}")
    assert ok, worst


def test_c6_split_equals_monolithic(criterion):
    rng = np.random.default_rng(6)
    views = rng.standard_normal((8, 3, 28, 28))
    labels = rng.integers(0, 5, 8)
    worst = 0.0
    for split in "AB":
        for agg in ("ewa", "cat"):
            s = SplitNetwork.build(split, 3, agg, np.random.default_rng(7), dtype=np.float64)
            ol, os_ = monolithic_grads(s, views, labels)
            before = [m.get_flat() for m in s.lmodels] + [s.smodel.get_flat()]
            vfeel_step(s, views, labels, TrainConfig(dtype=np.float64))
            after = [m.get_flat() for m in s.lmodels] + [s.smodel.get_flat()]
            for w0, w1, g in zip(before, after, ol + [os_]):
                want = w0 - 0.01 * g
                worst = max(worst, float(np.abs(w1 - want).max() / np.abs(want).max()))
    ok = worst <= 1e-6
    criterion(6, "gradient certification", "split updates == monolithic SGD (4 variants)", ok,
              f"max rel diff {worst:.1e}")
    assert ok


# 7 -------------------------------------------------------------------------

SCHEMES_7 = ["cl", "vfl-a-ewa", "hfeel", "ed-1", "ed-2", "ed-3"]


@pytest.fixture(scope="module")
def experiment(reduced_timed, tmp_path_factory):
    cfg, ds, gen_seconds, fresh = reduced_timed
    cfg = replace(cfg, out=str(tmp_path_factory.mktemp("c7")))
    t0 = time.perf_counter()
    rows = experiments.sweep(cfg, ds, SCHEMES_7, cfg.seeds)
    train_seconds = time.perf_counter() - t0
    med = {r["scheme"]: r["median"] for r in rows}
    return med, train_seconds, gen_seconds, fresh, len(cfg.seeds)


def _fmt(med):
    return " ".join(f"{k}={v:.3f}" for k, v in med.items())


def test_c7_ordering(criterion, experiment):
    med, *_ = experiment
    best_ed = max(med[f"ed-{k}"] for k in (1, 2, 3))
    ok = med["cl"] >= med["vfl-a-ewa"] >= med["hfeel"] and med["vfl-a-ewa"] >= best_ed
    criterion(7, "learning experiment (reduced profile, 12 seeds)",
              "CL >= VFL-A-EWA >= H-FEEL and VFL-A-EWA >= max ED-k", ok, _fmt(med))
    assert ok


def test_c7_accuracy_floor(criterion, experiment):
    med, *_ = experiment
    ok = med["vfl-a-ewa"] >= 0.85
    criterion(7, "learning experiment (reduced profile, 12 seeds)", "VFL-A-EWA median >= 85%",
              ok, f"{med['vfl-a-ewa']:.3f}")
    assert ok


def test_c7_margin(criterion, experiment):
    med, *_ = experiment
    best_ed = max(med[f"ed-{k}"] for k in (1, 2, 3))
    margin = med["vfl-a-ewa"] - best_ed
    ok = margin >= 0.03
    criterion(7, "learning experiment (reduced profile, 12 seeds)",
              "VFL-A-EWA beats best ED-k by >= 3 points", ok, f"{100 * margin:+.1f} points")
    assert ok


def test_c7_runtime(criterion, experiment):
    med, train_s, gen_s, fresh, n_seeds = experiment
    total = train_s + gen_s
    ok = total <= 1800 and n_seeds == 12
    how = "generated this session" if fresh else "loaded from cache"
    criterion(7, "learning experiment (reduced profile, 12 seeds)", "runtime <= 30 min", ok,
              f"{total / 60:.1f} min (training {train_s:.0f} s, data {gen_s:.0f} s {how})")
    assert ok


# 8 -------------------------------------------------------------------------

def test_c8_aspect_angle(criterion, reduced):
    cfg, _ = reduced
    setup, sc, rx = cfg.setup(), cfg.scenario(), cfg.rx()
    # along device 2's line of sight, across device 1's
    subject = Subject(MotionClass.ADULT_WALKING, 1.8, -np.pi / 2, (3.0, 0.8))
    rng = np.random.default_rng(8)
    cents = []
    for k in (0, 1):
        x = sense_series(setup, setup.device_config(sc.carriers[k]), sc.devices[k],
                         subject.scatterers(), sc.clutter_scatterers(), rng)
        cents.append(doppler_centroid(x, setup.slow_rate, rx))
    ratio = cents[1] / cents[0]
    ok = ratio >= 3
    criterion(8, "aspect-angle diversity", "centroid ratio >= 3", ok,
              f"{cents[1]:.0f} Hz / {cents[0]:.0f} Hz = {ratio:.2f}")
    assert ok


# 9 -------------------------------------------------------------------------

TINY = """\
profile: reduced
train_per_class: 2
test_per_class: 1
iterations: 6
eval_every: 3
batch: 4
seeds: [0, 1]
"""


def test_c9_reproducibility(criterion, tmp_path, capsys):
    conf = tmp_path / "tiny.yaml"
    conf.write_text(TINY)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        common = ["--config", str(conf), "--out", str(out)]
        codes = [cli.main(["gen-data", *common, "--seed", "5"]),
                 cli.main(["gen-data", *common]),
                 cli.main(["train", *common, "--scheme", "vfl-b-cat"]),
                 cli.main(["sweep", *common, "--scheme", "ed-3,hfeel,cl,vfl-a-ewa"]),
                 cli.main(["eval", *common, "--scheme", "vfl-b-cat"]),
                 cli.main(["overhead", *common]),
                 cli.main(["signal-demo", *common, "--seed", "2"])]
        assert codes == [0] * 7
    capsys.readouterr()
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    same = [f for f in files if (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()]
    kinds = {f.suffix for f in files}
    ok = len(same) == len(files) and {".vfsd", ".jsonl", ".csv", ".vfsm"} <= kinds
    criterion(9, "reproducibility", "two CLI runs byte-identical", ok,
              f"{len(same)}/{len(files)} files identical")
    assert ok

"""Experiment drivers behind the CLI: data generation, training runs, summaries."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel import Scatterer, apply_comm, echo_chirps, sample_qd_channel
from ..comm import decide, matched_reference, post_correlation_noise_power, transfer_time
from ..motion import MotionClass, Subject, generate_dataset, sense
from ..neural import full_network, load_network, save_network, split_networks
from ..protocol import (SplitNetwork, TrainResult, hfeel_iteration_bits, infer, parse_scheme,
                        predict, run_scheme, vfeel_iteration_bits)
from ..sensing import dechirp_chirps, range_profile
from ..waveform import SPEED_OF_LIGHT, qpsk_map, qpsk_unmap, random_phases, synth_chirps
from . import datafile
from .config import ExperimentConfig

SUMMARY_FIELDS = ("scheme", "n", "median", "min", "q1", "q3", "max")


# ---------------------------------------------------------------- data

def dataset_base(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "data" / f"{cfg.profile}_seed{cfg.data_seed}"


def generate(cfg: ExperimentConfig, progress=None):
    return generate_dataset(cfg.scenario(), cfg.counts(), cfg.split, cfg.setup(), cfg.data_seed,
                            progress)


def gen_data(cfg: ExperimentConfig, progress=None):
    """Generate and write the dataset; returns ``(paths, digest, dataset)``."""
    ds = generate(cfg, progress)
    paths = datafile.write_dataset(ds, dataset_base(cfg))
    return paths, datafile.digest(paths), ds


def load_or_generate(cfg: ExperimentConfig, progress=None):
    base = dataset_base(cfg)
    if all(p.is_file() for p in datafile.split_paths(base)):
        return datafile.read_dataset(base)
    return gen_data(cfg, progress)[2]


def class_counts(y, classes: int = 5):
    return np.bincount(np.asarray(y, dtype=np.int64), minlength=classes).tolist()


# ---------------------------------------------------------------- statistics

def summarize(values) -> dict:
    """Box-plot statistics; quartiles by linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return {"n": int(v.size), "median": float(med), "min": float(v.min()), "q1": float(q1),
            "q3": float(q3), "max": float(v.max())}


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k])
                    for k in SUMMARY_FIELDS})
    return buf.getvalue()


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- checkpoints

MODEL_MAGIC = b"VFSM"


def save_model(model, scheme: str, fh):
    """Scheme header, then each sub-network checkpoint (L-models first, S-model last)."""
    if isinstance(model, SplitNetwork):
        nets = list(model.lmodels) + [model.smodel]
        meta = {"scheme": scheme, "aggregator": model.aggregator, "split": model.split}
    else:
        nets, meta = [model], {"scheme": scheme}
    meta["networks"] = len(nets)
    head = json.dumps(meta, sort_keys=True).encode()
    fh.write(MODEL_MAGIC + struct.pack("<I", len(head)) + head)
    for net in nets:
        save_network(net, fh)


def load_model(fh):
    if fh.read(4) != MODEL_MAGIC:
        raise datafile.DatasetFormatError("not a model checkpoint")
    (n,) = struct.unpack("<I", fh.read(4))
    meta = json.loads(fh.read(n))
    count = meta["networks"]
    nets = [load_network(fh, expect_end=(i == count - 1)) for i in range(count)]
    if "aggregator" in meta:
        return SplitNetwork(nets[:-1], nets[-1], meta["aggregator"], meta["split"]), meta
    return nets[0], meta


def model_accuracy(model, scheme: str, ds) -> float:
    kind, detail = parse_scheme(scheme)
    if kind == "vfl":
        pred = infer(model, ds.test_x)
        return float(np.mean(pred == ds.test_y))
    if kind == "ed":
        return float(np.mean(predict(model, ds.test_x[:, detail:detail + 1]) == ds.test_y))
    if kind == "hfeel":
        return float(np.mean([np.mean(predict(model, ds.test_x[:, k:k + 1]) == ds.test_y)
                              for k in range(ds.n_views)]))
    return float(np.mean(predict(model, ds.test_x) == ds.test_y))


# ---------------------------------------------------------------- training runs

def run_paths(cfg: ExperimentConfig, scheme: str, seed: int):
    root = Path(cfg.out)
    return (root / "metrics" / f"{scheme}_seed{seed}.jsonl",
            root / "models" / f"{scheme}_seed{seed}.vfsm")


def metrics_lines(result: TrainResult) -> str:
    return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in result.history)


def read_metrics(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def train_scheme(cfg: ExperimentConfig, ds, scheme: str, seeds, log=None):
    """Train one scheme for every seed, writing metrics, checkpoints and a summary row."""
    scheme = scheme.lower()
    parse_scheme(scheme)
    finals = []
    for seed in seeds:
        res = run_scheme(scheme, ds, cfg.train_config(seed), cfg.isac(),
                         np.asarray(cfg.devices, float), list(cfg.carriers))
        mpath, cpath = run_paths(cfg, scheme, seed)
        mpath.parent.mkdir(parents=True, exist_ok=True)
        cpath.parent.mkdir(parents=True, exist_ok=True)
        mpath.write_text(metrics_lines(res))
        with open(cpath, "wb") as fh:
            save_model(res.model, scheme, fh)
        finals.append(res.final_accuracy)
        if log:
            log(f"{scheme} seed {seed}: test accuracy {res.final_accuracy:.4f}")
    row = {"scheme": scheme, **summarize(finals)}
    path = Path(cfg.out) / f"summary_{scheme}.csv"
    path.write_text(summary_csv([row]))
    return row


def summary_from_metrics(cfg: ExperimentConfig, scheme: str, seeds) -> dict:
    """Recompute a summary row from the metric streams on disk."""
    finals = [read_metrics(run_paths(cfg, scheme, s)[0])[-1]["test_accuracy"] for s in seeds]
    return {"scheme": scheme, **summarize(finals)}


def sweep(cfg: ExperimentConfig, ds, schemes, seeds, log=None):
    rows = [train_scheme(cfg, ds, s, seeds, log) for s in schemes]
    (Path(cfg.out) / "summary.csv").write_text(summary_csv(rows))
    return rows


# ---------------------------------------------------------------- overhead

# parameter count and split dimensions used by the published overhead table
REFERENCE_PARAMS = 104_637
REFERENCE_DIMS = {"A": 784, "B": 60}


@dataclass
class OverheadRow:
    scheme: str
    l_model: int
    s_model: int
    flops: int
    seconds_32_two_way: float
    seconds_34_one_way: float


def _times(bits_per_direction_32: int, bits_per_direction_34: int, cfg):
    isac = cfg.isac()
    return (transfer_time(2 * bits_per_direction_32, isac), transfer_time(bits_per_direction_34, isac))


def overhead_rows(cfg: ExperimentConfig, n_views: int | None = None):
    k = n_views or len(cfg.devices)
    b = cfg.batch
    rows = []
    for scheme in cfg.schemes:
        kind, detail = parse_scheme(scheme)
        if kind == "vfl":
            lm, sm = split_networks(detail[0], k, detail[1] == "cat")
            d = lm.output_shape[0]
            flops = 3 * b * (lm.flops_per_sample() * k + sm.flops_per_sample())
            t32, t34 = _times(vfeel_iteration_bits(d, b, 32), vfeel_iteration_bits(d, b, 34), cfg)
            rows.append(OverheadRow(scheme, lm.param_count(), sm.param_count(), flops, t32, t34))
        elif kind == "hfeel":
            net = full_network(1)
            p = net.param_count()
            t32, t34 = _times(hfeel_iteration_bits(p, 32), hfeel_iteration_bits(p, 34), cfg)
            rows.append(OverheadRow(scheme, p, 0, 3 * b * k * net.flops_per_sample(), t32, t34))
        else:
            net = full_network(k if kind == "cl" else 1)
            rows.append(OverheadRow(scheme, net.param_count(), 0, 3 * b * net.flops_per_sample(),
                                    0.0, 0.0))
    isac = cfg.isac()
    rows.append(OverheadRow("reference-hfeel", REFERENCE_PARAMS, 0, 0,
                            transfer_time(hfeel_iteration_bits(REFERENCE_PARAMS) * 2, isac),
                            transfer_time(hfeel_iteration_bits(REFERENCE_PARAMS, 34), isac)))
    for split, d in REFERENCE_DIMS.items():
        t32, t34 = _times(vfeel_iteration_bits(d, b, 32), vfeel_iteration_bits(d, b, 34), cfg)
        rows.append(OverheadRow(f"reference-vfl-{split.lower()}", 0, 0, 0, t32, t34))
    return rows


def overhead_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "l_model_params", "s_model_params", "flops_per_iteration",
                "seconds_32bit_two_way", "seconds_34bit_one_way"])
    for r in rows:
        w.writerow([r.scheme, r.l_model, r.s_model, r.flops, f"{r.seconds_32_two_way:.6f}",
                    f"{r.seconds_34_one_way:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------- signal demo

def signal_demo(cfg: ExperimentConfig, seed: int, out_dir, snr_db: float = 15.0,
                n_bits: int = 200_000):
    """Write plot-ready text arrays; returns a dict of headline numbers."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    isac = cfg.isac()
    device = np.asarray(cfg.devices[0], float)

    # static target 30 m down-range: fast-time spectrum of one dechirped chirp
    target = Scatterer.fixed(device + np.array([30.0, 0.0, 0.0]))
    phases = random_phases(rng, isac.chirps_per_frame)
    times = np.arange(isac.chirps_per_frame) * isac.t_chirp
    rx = echo_chirps(isac, phases, [target], device, times)
    frame = dechirp_chirps(rx, phases, isac)
    spectrum = range_profile(frame)[:, 0]
    np.savetxt(out / "fast_time_spectrum.txt", spectrum, fmt="%.9e")
    peak = int(np.argmax(spectrum))

    # one walking adult seen by the first device
    sc = cfg.scenario()
    setup = cfg.setup()
    subject = Subject(MotionClass.ADULT_WALKING, 1.8, 0.0, np.array([1.5, 0.0]))
    spec = sense(setup, setup.device_config(sc.carriers[0]), sc.devices[0],
                 subject.scatterers(), sc.clutter_scatterers(), rng)
    np.savetxt(out / "spectrogram.txt", spec.image, fmt="%.6f")

    # QPSK over a sampled link channel at the requested post-correlation SNR
    dist = float(np.linalg.norm(np.subtract(sc.devices[0], sc.devices[-1])))
    ch = sample_qd_channel(rng, dist, SPEED_OF_LIGHT / isac.carrier)
    bits = rng.integers(0, 2, n_bits, dtype=np.uint8)
    ph = qpsk_map(bits)
    tx = synth_chirps(isac, ph)
    rxc = apply_comm(tx, ch, isac.sample_rate)
    sigma2 = post_correlation_noise_power(snr_db, ch, isac)
    rxc = rxc + np.sqrt(sigma2 / 2) * (rng.standard_normal(rxc.shape)
                                       + 1j * rng.standard_normal(rxc.shape))
    corr = rxc @ np.conj(matched_reference(ch, isac))
    got = qpsk_unmap(decide(corr))
    ber = float(np.mean(got != bits))
    ref = np.sum(np.abs(matched_reference(ch, isac)) ** 2)
    pts = corr[:2000] / ref
    np.savetxt(out / "constellation.txt",
               np.column_stack([pts.real, pts.imag, decide(corr[:2000])]),
               fmt=["%.6f", "%.6f", "%d"], header="real imag decision")
    info = {"range_peak_bin": peak, "spectrogram_shape": list(spec.image.shape),
            "snr_db": snr_db, "bits": n_bits, "bit_errors": int(np.sum(got != bits)), "ber": ber}
    (out / "signal_demo.json").write_text(json.dumps(info, sort_keys=True, indent=1) + "\n")
    return info

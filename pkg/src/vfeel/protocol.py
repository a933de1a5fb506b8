"""Vertical FEEL training and inference, plus the ED-k, H-FEEL and CL baselines.

Device ``K-1`` (zero-based) is the coordinator: it holds the labels, the
aggregator and the S-model. Every other device owns one L-model and one
view of each sample. Messages are exchanged once per iteration as whole
``(batch, d)`` matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .channel import QdCommChannel, sample_qd_channel
from .comm import VectorCodec, transfer_time, transmit_vector
from .neural import (Network, apply_sgd, backward, forward, full_network, softmax_cross_entropy,
                     split_networks)
from .waveform import IsacConfig, InvalidInput

AGGREGATORS = ("ewa", "cat")
LINK_MODES = ("ideal", "isac")
SCHEMES = ("vfl-a-ewa", "vfl-a-cat", "vfl-b-ewa", "vfl-b-cat", "ed-1", "ed-2", "ed-3",
           "hfeel", "cl")


class ProtocolError(RuntimeError):
    """A message between devices could not be delivered intact."""


class TrainingDiverged(ArithmeticError):
    """The training loss stopped being finite."""


@dataclass
class TrainConfig:
    batch: int = 32
    lr_s: float = 0.01
    lr_l: float = 0.01
    iterations: int = 500
    seed: int = 0
    link: str = "ideal"
    bits_per_element: int = 32
    two_way: bool = True        # ledger counts the gradient return trip
    eval_every: int = 50
    link_snr_db: float | None = None   # None: noiseless simulated link
    dtype: type = np.float32

    def __post_init__(self):
        if self.batch < 1:
            raise InvalidInput("batch must be at least 1")
        if self.lr_s <= 0 or self.lr_l <= 0:
            raise InvalidInput("learning rates must be positive")
        if self.iterations < 0 or self.eval_every < 1:
            raise InvalidInput("iterations >= 0 and eval_every >= 1 required")
        if self.link not in LINK_MODES:
            raise InvalidInput(f"link must be one of {LINK_MODES}")
        VectorCodec(self.bits_per_element)

    def stream(self, *key) -> np.random.Generator:
        """Independent generator for one purpose: 0 init, 1 batches, 2 link."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


# ---------------------------------------------------------------- ledger

@dataclass
class CommLedger:
    """Per-iteration traffic on one device link, and compute over all devices.

    Links run on dedicated sub-channels in parallel, so the wall-clock cost
    of an iteration is the traffic of a single link divided by the rate.
    """

    cfg: IsacConfig = field(default_factory=IsacConfig)
    two_way: bool = True
    uplink: list = field(default_factory=list)
    downlink: list = field(default_factory=list)
    flops: list = field(default_factory=list)

    def record(self, up_bits: int, down_bits: int, flops: int):
        self.uplink.append(int(up_bits))
        self.downlink.append(int(down_bits))
        self.flops.append(int(flops))

    @property
    def iterations(self) -> int:
        return len(self.flops)

    def bits(self, i: int) -> int:
        return self.uplink[i] + (self.downlink[i] if self.two_way else 0)

    def seconds(self, i: int) -> float:
        return transfer_time(self.bits(i), self.cfg)

    def total_bits(self, upto: int | None = None) -> int:
        n = self.iterations if upto is None else upto
        return sum(self.bits(i) for i in range(n))

    def total_seconds(self, upto: int | None = None) -> float:
        return float(transfer_time(self.total_bits(upto), self.cfg, exact=True))

    def total_flops(self, upto: int | None = None) -> int:
        n = self.iterations if upto is None else upto
        return sum(self.flops[:n])


def vfeel_iteration_bits(d: int, batch: int, bits_per_element: int) -> int:
    """Bits of one ``(batch, d)`` message on one link."""
    return int(d) * int(batch) * int(bits_per_element)


def hfeel_iteration_bits(param_count: int, bits_per_element: int = 32) -> int:
    """Bits of one model upload (or download) on one link."""
    return int(param_count) * int(bits_per_element)


# ---------------------------------------------------------------- links

class IdealLink:
    """Lossless, instantaneous delivery."""

    def send(self, v, src: int, dst: int):
        return np.array(v, copy=True)


class IsacLink:
    """Delivery through the simulated QPSK-over-chirp modem.

    One channel realization per ordered device pair is drawn lazily from
    ``rng``, at the devices' distance and the sender's carrier.
    """

    def __init__(self, cfg: IsacConfig, positions, rng, snr_db=None, carriers=None):
        self.cfg = cfg
        self.positions = np.asarray(positions, dtype=float)
        self.carriers = carriers
        self.rng = rng
        self.snr_db = snr_db
        self.channels: dict = {}
        self.codec = VectorCodec(32)

    def channel(self, src: int, dst: int) -> QdCommChannel:
        if (src, dst) not in self.channels:
            dist = float(np.linalg.norm(self.positions[src] - self.positions[dst]))
            fc = self.carriers[src] if self.carriers is not None else self.cfg.carrier
            self.channels[(src, dst)] = sample_qd_channel(self.rng, dist, 299792458.0 / fc)
        return self.channels[(src, dst)]

    def send(self, v, src: int, dst: int):
        v = np.asarray(v)
        try:
            got = transmit_vector(v.astype(np.float32), self.cfg, self.channel(src, dst),
                                  self.rng, self.snr_db, self.codec)
        except Exception as exc:   # decoding failures surface as protocol errors
            raise ProtocolError(f"transfer {src}->{dst} failed: {exc}") from exc
        return got.astype(v.dtype)


# ---------------------------------------------------------------- split network

@dataclass
class SplitNetwork:
    lmodels: list
    smodel: Network
    aggregator: str
    split: str = "A"

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise InvalidInput(f"aggregator must be one of {AGGREGATORS}")
        if not self.lmodels:
            raise InvalidInput("need at least one L-model")
        dims = {m.output_shape for m in self.lmodels}
        if len(dims) != 1 or len(self.lmodels[0].output_shape) != 1:
            raise InvalidInput("L-models must all emit vectors of one dimension")
        want = self.d * (self.n_devices if self.aggregator == "cat" else 1)
        if self.smodel.input_shape != (want,):
            raise InvalidInput(f"S-model input must be {want} for {self.aggregator}")

    @classmethod
    def build(cls, split: str, n_devices: int, aggregator: str, rng, classes=5,
              dtype=np.float32) -> "SplitNetwork":
        """Fresh network; L-models are initialized one after another, then the S-model."""
        lmodels = []
        for _ in range(n_devices):
            lm, sm = split_networks(split, n_devices, aggregator == "cat", classes, dtype)
            lmodels.append(lm.init(rng))
        return cls(lmodels, sm.init(rng), aggregator, split)

    @property
    def n_devices(self) -> int:
        return len(self.lmodels)

    @property
    def coordinator(self) -> int:
        return self.n_devices - 1

    @property
    def d(self) -> int:
        return self.lmodels[0].output_shape[0]

    def aggregate(self, vs):
        return np.mean(vs, axis=0) if self.aggregator == "ewa" else np.concatenate(vs, axis=1)

    def split_gradient(self, ga):
        """Gradient w.r.t. each device's intermediate vector."""
        if self.aggregator == "ewa":
            g = ga / self.n_devices
            return [g] * self.n_devices
        d = self.d
        return [ga[:, k * d:(k + 1) * d] for k in range(self.n_devices)]

    def flops_per_sample(self) -> int:
        return sum(m.flops_per_sample() for m in self.lmodels) + self.smodel.flops_per_sample()

    def copy(self) -> "SplitNetwork":
        return SplitNetwork([m.copy() for m in self.lmodels], self.smodel.copy(),
                            self.aggregator, self.split)


@dataclass
class ForwardState:
    lcaches: list
    scache: object
    loss: float
    probs: np.ndarray
    grad_logits: np.ndarray


def _check_views(split: SplitNetwork, views):
    views = np.asarray(views)
    if views.ndim != 4 or views.shape[1] != split.n_devices:
        raise InvalidInput(f"need (batch, {split.n_devices}, H, W) views, got {views.shape}")
    return views


def vfeel_forward(split: SplitNetwork, views, labels=None, link=None):
    """One forward pass. Returns ``(loss, probs, state)``; ``loss`` is None without labels."""
    link = link or IdealLink()
    views = _check_views(split, views)
    c = split.coordinator
    vs, lcaches = [], []
    for k, lm in enumerate(split.lmodels):
        v, cache = forward(lm, views[:, k:k + 1])
        lcaches.append(cache)
        vs.append(v if k == c else link.send(v, k, c))
    logits, scache = forward(split.smodel, split.aggregate(vs))
    if labels is None:
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return None, e / e.sum(axis=1, keepdims=True), ForwardState(lcaches, scache, None, None, None)
    loss, probs, g = softmax_cross_entropy(logits, labels)
    return loss, probs, ForwardState(lcaches, scache, loss, probs, g)


def vfeel_backward(split: SplitNetwork, state: ForwardState, link=None):
    """Batch-mean gradients: a list of L-model gradients and the S-model gradient."""
    if state.grad_logits is None:
        raise InvalidInput("forward pass ran without labels")
    link = link or IdealLink()
    c = split.coordinator
    gs, ga = backward(split.smodel, state.scache, state.grad_logits)
    parts = split.split_gradient(ga)
    gl = []
    for k, lm in enumerate(split.lmodels):
        dv = parts[k] if k == c else link.send(parts[k], c, k)
        g, _ = backward(lm, state.lcaches[k], dv, input_grad=False)
        gl.append(g)
    return gl, gs


def vfeel_step(split: SplitNetwork, views, labels, cfg: TrainConfig, link=None) -> float:
    loss, _, state = vfeel_forward(split, views, labels, link)
    gl, gs = vfeel_backward(split, state, link)
    apply_sgd(split.smodel, gs, cfg.lr_s)
    for lm, g in zip(split.lmodels, gl):
        apply_sgd(lm, g, cfg.lr_l)
    return loss


def infer(split: SplitNetwork, views, link=None, chunk: int = 256) -> np.ndarray:
    views = _check_views(split, views)
    out = []
    for i in range(0, views.shape[0], chunk):
        _, probs, _ = vfeel_forward(split, views[i:i + chunk], None, link)
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out) if out else np.zeros(0, np.int64)


def predict(net: Network, x, chunk: int = 256) -> np.ndarray:
    out = [np.argmax(forward(net, x[i:i + chunk])[0], axis=1) for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros(0, np.int64)


# ---------------------------------------------------------------- training loops

@dataclass
class MetricRecord:
    scheme: str
    seed: int
    iteration: int
    train_loss: float
    test_accuracy: float
    cumulative_bits: int
    cumulative_seconds: float
    cumulative_flops: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainResult:
    model: object
    history: list
    ledger: CommLedger
    losses: np.ndarray      # mini-batch loss of every iteration

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_accuracy if self.history else float("nan")


class BatchSampler:
    """Mini-batches drawn from successive random permutations of the training set."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        if n < 1:
            raise InvalidInput("empty training set")
        self.n, self.batch, self.rng = n, min(batch, n), rng
        self.order, self.pos = rng.permutation(n), 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order, self.pos = self.rng.permutation(self.n), 0
        idx = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return idx


def _run(scheme, cfg, n_train, step, evaluate, ledger, per_iter):
    """Shared loop: ``step(idx) -> loss`` and ``evaluate() -> accuracy``."""
    sampler = BatchSampler(n_train, cfg.batch, cfg.stream(1))
    losses, history, since = [], [], []
    for it in range(1, cfg.iterations + 1):
        loss = step(sampler.next())
        if not np.isfinite(loss):
            raise TrainingDiverged(f"{scheme} seed {cfg.seed}: loss is {loss} at iteration {it}")
        losses.append(loss)
        since.append(loss)
        ledger.record(*per_iter)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            history.append(MetricRecord(scheme, cfg.seed, it, float(np.mean(since)), evaluate(),
                                        ledger.total_bits(), ledger.total_seconds(),
                                        ledger.total_flops()))
            since = []
    return np.asarray(losses), history


def _ledger(cfg: TrainConfig, isac: IsacConfig | None) -> CommLedger:
    return CommLedger(isac or IsacConfig(), cfg.two_way)


def train_vfeel(split: SplitNetwork, dataset, cfg: TrainConfig, link=None, scheme="vfl",
                isac: IsacConfig | None = None) -> TrainResult:
    """Mini-batch SGD over the split network; ``split`` is updated in place."""
    link = link or IdealLink()
    ledger = _ledger(cfg, isac)
    b = min(cfg.batch, len(dataset.train_y))
    msg = vfeel_iteration_bits(split.d, b, cfg.bits_per_element) if split.n_devices > 1 else 0
    flops = 3 * b * split.flops_per_sample()
    tx, ty = dataset.train_x, dataset.train_y

    def step(idx):
        return vfeel_step(split, tx[idx], ty[idx], cfg, link)

    def evaluate():
        return float(np.mean(infer(split, dataset.test_x, link) == dataset.test_y))

    losses, hist = _run(scheme, cfg, len(ty), step, evaluate, ledger, (msg, msg, flops))
    return TrainResult(split, hist, ledger, losses)


def _train_full(net: Network, x, y, test_x, test_y, cfg, scheme, isac) -> TrainResult:
    ledger = _ledger(cfg, isac)
    b = min(cfg.batch, len(y))
    flops = 3 * b * net.flops_per_sample()

    def step(idx):
        logits, cache = forward(net, x[idx])
        loss, _, g = softmax_cross_entropy(logits, y[idx])
        grads, _ = backward(net, cache, g, input_grad=False)
        apply_sgd(net, grads, cfg.lr_l)
        return loss

    def evaluate():
        return float(np.mean(predict(net, test_x) == test_y))

    losses, hist = _run(scheme, cfg, len(y), step, evaluate, ledger, (0, 0, flops))
    return TrainResult(net, hist, ledger, losses)


def train_on_device(k: int, dataset, cfg: TrainConfig, isac: IsacConfig | None = None,
                    classes: int = 5) -> TrainResult:
    """Baseline ED-k (``k`` zero-based): the full CNN on view ``k`` alone."""
    if not 0 <= k < dataset.n_views:
        raise InvalidInput(f"device {k} outside [0, {dataset.n_views})")
    net = full_network(1, classes, cfg.dtype).init(cfg.stream(0))
    sl = slice(k, k + 1)
    return _train_full(net, dataset.train_x[:, sl], dataset.train_y, dataset.test_x[:, sl],
                       dataset.test_y, cfg, f"ed-{k + 1}", isac)


def train_centralized(dataset, cfg: TrainConfig, isac: IsacConfig | None = None,
                      classes: int = 5) -> TrainResult:
    """Baseline CL: all views stacked as input channels of one CNN."""
    net = full_network(dataset.n_views, classes, cfg.dtype).init(cfg.stream(0))
    return _train_full(net, dataset.train_x, dataset.train_y, dataset.test_x, dataset.test_y,
                       cfg, "cl", isac)


def train_hfeel(dataset, cfg: TrainConfig, isac: IsacConfig | None = None, classes: int = 5,
                ledger_params: int | None = None) -> TrainResult:
    """Baseline H-FEEL: per-device replicas averaged after every iteration.

    Each device takes one SGD step on its own view of the shared mini-batch
    indices; the equal-weight average of the replicas becomes the next
    global model. Test accuracy is the mean over devices of the global
    model's accuracy on that device's view. ``ledger_params`` overrides the
    parameter count used for traffic accounting only.
    """
    k_dev = dataset.n_views
    net = full_network(1, classes, cfg.dtype).init(cfg.stream(0))
    ledger = _ledger(cfg, isac)
    b = min(cfg.batch, len(dataset.train_y))
    p = ledger_params if ledger_params is not None else net.param_count()
    msg = hfeel_iteration_bits(p, cfg.bits_per_element)
    flops = 3 * b * net.flops_per_sample() * k_dev
    tx, ty = dataset.train_x, dataset.train_y

    def step(idx):
        w = net.get_flat()
        new, losses = np.zeros_like(w), []
        for k in range(k_dev):
            logits, cache = forward(net, tx[idx, k:k + 1])
            loss, _, g = softmax_cross_entropy(logits, ty[idx])
            grads, _ = backward(net, cache, g, input_grad=False)
            new += w - cfg.lr_l * grads
            losses.append(loss)
        net.set_flat(new / k_dev)
        return float(np.mean(losses))

    def evaluate():
        return float(np.mean([np.mean(predict(net, dataset.test_x[:, k:k + 1]) == dataset.test_y)
                              for k in range(k_dev)]))

    losses, hist = _run("hfeel", cfg, len(ty), step, evaluate, ledger, (msg, msg, flops))
    return TrainResult(net, hist, ledger, losses)


def parse_scheme(name: str):
    """``(kind, detail)`` for a scheme name, e.g. ``('vfl', ('A', 'ewa'))`` or ``('ed', 0)``."""
    n = name.lower()
    if n.startswith("vfl-"):
        parts = n.split("-")
        if len(parts) == 3 and parts[1] in ("a", "b") and parts[2] in AGGREGATORS:
            return "vfl", (parts[1].upper(), parts[2])
    elif n.startswith("ed-") and n[3:].isdigit() and int(n[3:]) >= 1:
        return "ed", int(n[3:]) - 1
    elif n in ("hfeel", "cl"):
        return n, None
    raise InvalidInput(f"unknown scheme {name!r}; valid: {', '.join(SCHEMES)}")


def run_scheme(name: str, dataset, cfg: TrainConfig, isac: IsacConfig | None = None,
               positions=None, carriers=None, classes: int = 5) -> TrainResult:
    kind, detail = parse_scheme(name)
    if kind == "vfl":
        split = SplitNetwork.build(detail[0], dataset.n_views, detail[1], cfg.stream(0),
                                   classes, cfg.dtype)
        link = None
        if cfg.link == "isac":
            if positions is None:
                raise InvalidInput("simulated links need device positions")
            link = IsacLink(isac or IsacConfig(), positions, cfg.stream(2), cfg.link_snr_db,
                            carriers)
        return train_vfeel(split, dataset, cfg, link, name.lower(), isac)
    if kind == "ed":
        return train_on_device(detail, dataset, cfg, isac, classes)
    if kind == "hfeel":
        return train_hfeel(dataset, cfg, isac, classes)
    return train_centralized(dataset, cfg, isac, classes)


def exact_seconds(bits: int, isac: IsacConfig | None = None) -> Fraction:
    return transfer_time(bits, isac or IsacConfig(), exact=True)

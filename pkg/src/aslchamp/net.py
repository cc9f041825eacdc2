"""The sequence recognizer: two tanh conv+pool stages, two stacked LSTM
layers, then three tanh dense layers with dropout and a softmax output.

Published widths (conv 512/256, LSTM 512/256, dense 512/256/128) are the
defaults; ``scale_factor`` shrinks every width uniformly so the same shape
trains in desk time.  The output layer starts at zero, so an untrained
network predicts the exactly uniform distribution and loss ln(K).
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import nn_ops
from .gesture import (
    CANONICAL_NAMES,
    EncodingConfig,
    FEATURE_DIM,
    FeatureMatrix,
    GestureDataset,
    GestureSample,
    SignClass,
    encode_features,
    pad_or_truncate,
    sign_class,
)
from .nn_ops import (
    AdamState,
    LSTMCellParams,
    NonFiniteValue,
    ShapeMismatch,
    adam_step,
    conv1d_forward,
    conv1d_backward,
    conv1d_out_len,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_sequence,
    lstm_sequence_backward,
    maxpool1d_backward,
    maxpool1d_forward,
    softmax,
    softmax_xent_batch,
    tanh_backward,
)


class InvalidConfig(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class ClassMismatch(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    """Loss went non-finite; carries the last good network and report."""

    def __init__(self, message, net=None, report=None):
        super().__init__(message)
        self.net = net
        self.report = report


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetConfig:
    t_max: int = 651
    feature_dim: int = FEATURE_DIM
    conv1_filters: int = 512
    conv2_filters: int = 256
    kernel_size: int = 3
    pool: int = 2
    lstm1_units: int = 512
    lstm2_units: int = 256
    dense_units: tuple[int, int, int] = (512, 256, 128)
    dropout_rate: float = 0.6
    n_classes: int = 9
    classes: tuple[str, ...] = CANONICAL_NAMES
    scale_factor: Fraction = Fraction(1)
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "scale_factor", Fraction(self.scale_factor))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "dense_units", tuple(self.dense_units))
        s = self.scale_factor
        if not 0 < s <= 1:
            raise InvalidConfig(f"scale_factor must be in (0, 1], got {s}")
        if self.n_classes < 2:
            raise InvalidConfig("n_classes must be >= 2")
        if len(self.classes) != self.n_classes:
            raise InvalidConfig(f"{len(self.classes)} class names != n_classes {self.n_classes}")
        positives = (self.t_max, self.feature_dim, self.conv1_filters, self.conv2_filters,
                     self.kernel_size, self.pool, self.lstm1_units, self.lstm2_units,
                     *self.dense_units)
        if any(v < 1 for v in positives):
            raise InvalidConfig("all size fields must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfig(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.pooled_len(2) < 1:
            raise InvalidConfig(f"t_max {self.t_max} too short for two conv+pool stages")

    def _scaled(self, width: int) -> int:
        return max(1, int(width * self.scale_factor))

    @property
    def conv1_width(self) -> int:
        return self._scaled(self.conv1_filters)

    @property
    def conv2_width(self) -> int:
        return self._scaled(self.conv2_filters)

    @property
    def lstm1_width(self) -> int:
        return self._scaled(self.lstm1_units)

    @property
    def lstm2_width(self) -> int:
        return self._scaled(self.lstm2_units)

    @property
    def dense_widths(self) -> tuple[int, int, int]:
        return tuple(self._scaled(d) for d in self.dense_units)

    def pooled_len(self, stages: int) -> int:
        t = self.t_max
        for _ in range(stages):
            t = conv1d_out_len(t, self.kernel_size, 1)
            if t < self.pool:
                return 0
            t = conv1d_out_len(t, self.pool, self.pool)
        return t

    @property
    def flat_dim(self) -> int:
        return self.pooled_len(2) * self.lstm2_width

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def encoding(self) -> EncodingConfig:
        if self.feature_dim == FEATURE_DIM:
            return EncodingConfig(presence_flags=False)
        if self.feature_dim == FEATURE_DIM + 2:
            return EncodingConfig(presence_flags=True)
        raise InvalidConfig(f"no standard encoding produces feature_dim {self.feature_dim}")

    def to_obj(self) -> dict:
        return {
            "t_max": self.t_max, "feature_dim": self.feature_dim,
            "conv1_filters": self.conv1_filters, "conv2_filters": self.conv2_filters,
            "kernel_size": self.kernel_size, "pool": self.pool,
            "lstm1_units": self.lstm1_units, "lstm2_units": self.lstm2_units,
            "dense_units": list(self.dense_units), "dropout_rate": self.dropout_rate,
            "n_classes": self.n_classes, "classes": list(self.classes),
            "scale_factor": str(self.scale_factor), "dtype": self.dtype,
        }

    @staticmethod
    def from_obj(obj: dict) -> "NetConfig":
        return NetConfig(
            t_max=obj["t_max"], feature_dim=obj["feature_dim"],
            conv1_filters=obj["conv1_filters"], conv2_filters=obj["conv2_filters"],
            kernel_size=obj["kernel_size"], pool=obj["pool"],
            lstm1_units=obj["lstm1_units"], lstm2_units=obj["lstm2_units"],
            dense_units=tuple(obj["dense_units"]), dropout_rate=obj["dropout_rate"],
            n_classes=obj["n_classes"], classes=tuple(obj["classes"]),
            scale_factor=Fraction(obj["scale_factor"]), dtype=obj["dtype"],
        )


@dataclass
class ChampNet:
    """Configuration plus the full parameter set, keyed by layer/name."""

    config: NetConfig
    params: dict[str, np.ndarray]
    seed: int

    def lstm_params(self, layer: str) -> LSTMCellParams:
        kw = {name: self.params[f"{layer}/{name}"]
              for name in LSTMCellParams.__dataclass_fields__}
        return LSTMCellParams(**kw)


def _param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["conv1/K"] = (cfg.conv1_width, cfg.kernel_size, cfg.feature_dim)
    shapes["conv1/b"] = (cfg.conv1_width,)
    shapes["conv2/K"] = (cfg.conv2_width, cfg.kernel_size, cfg.conv1_width)
    shapes["conv2/b"] = (cfg.conv2_width,)
    for layer, d_in, h in (("lstm1", cfg.conv2_width, cfg.lstm1_width),
                           ("lstm2", cfg.lstm1_width, cfg.lstm2_width)):
        for g in LSTMCellParams.GATE_ORDER:
            shapes[f"{layer}/W_i{g}"] = (h, d_in)
            shapes[f"{layer}/W_h{g}"] = (h, h)
            shapes[f"{layer}/b_i{g}"] = (h,)
            shapes[f"{layer}/b_h{g}"] = (h,)
    d_prev = cfg.flat_dim
    for i, width in enumerate(cfg.dense_widths, start=1):
        shapes[f"dense{i}/W"] = (d_prev, width)
        shapes[f"dense{i}/b"] = (width,)
        d_prev = width
    shapes["out/W"] = (d_prev, cfg.n_classes)
    shapes["out/b"] = (cfg.n_classes,)
    return shapes


def param_count(cfg: NetConfig) -> int:
    """Total learnable parameters, derived from the config alone."""
    return sum(int(np.prod(s)) for s in _param_shapes(cfg).values())


# Gains over the plain Glorot bound.  The encoded features and the values the
# LSTM hands to the dense stack sit well below unit variance, so unscaled
# Glorot starts the network in a vanishing-signal regime (it then plateaus on
# class priors).  The gains restore O(1) activations at init; verified
# empirically on the synthetic corpus.
CONV_INIT_GAIN = 2.0
DENSE_INIT_GAIN = 4.0


def build_network(cfg: NetConfig, seed: int = 0) -> ChampNet:
    """Deterministic initialization from the seed.

    Conv and dense weights are uniform Glorot scaled by the gains above;
    LSTM input weights are uniform +-sqrt(6/(fan_in+hidden)), recurrent
    weights +-sqrt(1/hidden); the input-side forget bias starts at +1 and
    the output layer at zero (so an untrained network is exactly uniform).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dtype = cfg.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.startswith("out/"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name.endswith("/b") or "/b_" in name:
            if name.endswith("b_if"):
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        elif "/W_i" in name:  # LSTM input-to-gate
            h, d = shape
            bound = np.sqrt(6.0 / (d + h))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif "/W_h" in name:  # LSTM recurrent
            h = shape[0]
            bound = np.sqrt(1.0 / h)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.startswith("conv"):
            f, k, d = shape
            bound = np.sqrt(6.0 / (k * d + f)) * CONV_INIT_GAIN
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:  # dense weights
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out)) * DENSE_INIT_GAIN
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ChampNet(config=cfg, params=params, seed=seed)


def param_checksum(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for key in sorted(params):
        h.update(key.encode())
        h.update(params[key].astype("<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _coerce_batch(net: ChampNet, batch) -> np.ndarray:
    cfg = net.config
    if isinstance(batch, FeatureMatrix):
        batch = [batch]
    if isinstance(batch, (list, tuple)):
        arrs = []
        for m in batch:
            if m.values.shape != (cfg.t_max, cfg.feature_dim):
                raise ShapeMismatch(f"feature matrix {m.values.shape} != "
                                    f"({cfg.t_max}, {cfg.feature_dim}); pad first")
            arrs.append(m.values)
        batch = np.stack(arrs)
    x = np.asarray(batch)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.t_max, cfg.feature_dim):
        raise ShapeMismatch(f"batch shape {x.shape} != (B, {cfg.t_max}, {cfg.feature_dim})")
    return x.astype(cfg.np_dtype, copy=False)


def _forward_full(net: ChampNet, x: np.ndarray, train: bool,
                  rng: np.random.Generator | None):
    """Returns (logits, probs, cache).  The softmax is computed in float64."""
    cfg = net.config
    p = net.params
    cache: dict[str, object] = {}

    a1 = conv1d_forward(x, p["conv1/K"], p["conv1/b"])
    t1 = np.tanh(a1)
    pool1, arg1 = maxpool1d_forward(t1, cfg.pool, cfg.pool)
    a2 = conv1d_forward(pool1, p["conv2/K"], p["conv2/b"])
    t2 = np.tanh(a2)
    pool2, arg2 = maxpool1d_forward(t2, cfg.pool, cfg.pool)
    h1, lstm1_cache = lstm_sequence(pool2, net.lstm_params("lstm1"))
    h2, lstm2_cache = lstm_sequence(h1, net.lstm_params("lstm2"))
    flat = h2.reshape(h2.shape[0], -1)

    cache.update(x=x, t1=t1, arg1=arg1, pool1=pool1, t2=t2, arg2=arg2,
                 pool2_len=pool2.shape[1], lstm1=lstm1_cache, lstm2=lstm2_cache,
                 h2_shape=h2.shape)

    act = flat
    for i in range(1, 4):
        act, dcache = dense_forward(act, p[f"dense{i}/W"], p[f"dense{i}/b"], activation="tanh")
        mode = "train" if train else "infer"
        act, mask = dropout_forward(act, cfg.dropout_rate, mode, rng)
        cache[f"dense{i}"] = dcache
        cache[f"drop{i}"] = mask
    logits, out_cache = dense_forward(act, p["out/W"], p["out/b"])
    cache["out"] = out_cache
    probs = softmax(logits.astype(np.float64), axis=-1)
    return logits, probs, cache


def _backward_full(net: ChampNet, cache: dict, grad_logits: np.ndarray):
    cfg = net.config
    p = net.params
    grads: dict[str, np.ndarray] = {}

    g, grads["out/W"], grads["out/b"] = dense_backward(cache["out"],
                                                       grad_logits.astype(cfg.np_dtype))
    for i in range(3, 0, -1):
        g = dropout_backward(g, cache[f"drop{i}"], cfg.dropout_rate)
        g, grads[f"dense{i}/W"], grads[f"dense{i}/b"] = dense_backward(cache[f"dense{i}"], g)

    g = g.reshape(cache["h2_shape"])
    g, lstm2_grads, _, _ = lstm_sequence_backward(cache["lstm2"], net.lstm_params("lstm2"), g)
    for name, val in lstm2_grads.items():
        grads[f"lstm2/{name}"] = val
    g, lstm1_grads, _, _ = lstm_sequence_backward(cache["lstm1"], net.lstm_params("lstm1"), g)
    for name, val in lstm1_grads.items():
        grads[f"lstm1/{name}"] = val

    g = maxpool1d_backward(g, cache["arg2"], cache["t2"].shape[1], stride=cfg.pool)
    g = tanh_backward(cache["t2"], g)
    g, grads["conv2/K"], grads["conv2/b"] = conv1d_backward(
        cache["pool1"], p["conv2/K"], g)
    g = maxpool1d_backward(g, cache["arg1"], cache["t1"].shape[1], stride=cfg.pool)
    g = tanh_backward(cache["t1"], g)
    _, grads["conv1/K"], grads["conv1/b"] = conv1d_backward(
        cache["x"], p["conv1/K"], g, need_input_grad=False)
    return grads


def forward(net: ChampNet, batch, mode: str = "infer",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1 within 1e-9."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None and net.config.dropout_rate > 0:
        raise ValueError("training-mode forward needs an rng for dropout")
    x = _coerce_batch(net, batch)
    _, probs, _ = _forward_full(net, x, mode == "train", rng)
    if not np.isfinite(probs).all():
        raise NonFiniteValue("forward produced non-finite probabilities")
    return probs


# ---------------------------------------------------------------------------
# Encoded datasets and training
# ---------------------------------------------------------------------------


@dataclass
class EncodedDataset:
    """Per-sample feature matrices (unpadded) with integer class targets."""

    features: list[np.ndarray]
    lengths: np.ndarray
    y: np.ndarray
    signer_ids: list[str]

    def __len__(self):
        return len(self.features)

    def batch(self, indices, t_max: int, dtype) -> np.ndarray:
        d = self.features[0].shape[1]
        out = np.zeros((len(indices), t_max, d), dtype=dtype)
        for row, idx in enumerate(indices):
            f = self.features[idx]
            t = min(f.shape[0], t_max)
            out[row, :t] = f[:t]
        return out


def encode_gesture_dataset(ds: GestureDataset, cfg: NetConfig) -> EncodedDataset:
    """Encode every sample and map labels to positions in cfg.classes."""
    if len(ds.samples) == 0:
        raise EmptyDataset("no samples to encode")
    label_index = {name: i for i, name in enumerate(cfg.classes)}
    enc_cfg = cfg.encoding()
    feats, lens, ys, signers = [], [], [], []
    for s in ds.samples:
        if s.label.name not in label_index:
            raise ClassMismatch(f"sample label {s.label.name} not in network classes")
        m = encode_features(s, enc_cfg)
        feats.append(m.values.astype(cfg.np_dtype))
        lens.append(m.mask_len)
        ys.append(label_index[s.label.name])
        signers.append(s.signer_id)
    return EncodedDataset(features=feats, lengths=np.array(lens),
                          y=np.array(ys, dtype=np.int64), signer_ids=signers)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle_seed: int = 0
    early_stop_patience: int | None = None
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainingReport:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_accuracy: list[float | None] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    nonmonotone_epochs: list[int] = field(default_factory=list)
    start_epoch: int = 0
    epochs_run: int = 0
    param_checksum: str = ""

    def to_obj(self, include_timings: bool = True) -> dict:
        obj = {
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "epoch_seconds": self.epoch_seconds if include_timings
            else [0.0] * len(self.epoch_seconds),
            "nonmonotone_epochs": self.nonmonotone_epochs,
            "start_epoch": self.start_epoch,
            "epochs_run": self.epochs_run,
            "param_checksum": self.param_checksum,
        }
        return obj


@dataclass
class TrainState:
    """Optimizer progress persisted alongside a checkpoint for exact resume."""

    epoch: int
    adam: AdamState


def _eval_encoded(net_params, cfg: NetConfig, data: EncodedDataset, chunk: int = 256):
    """Mean loss and accuracy in inference mode."""
    net = ChampNet(config=cfg, params=net_params, seed=0)
    total_loss = 0.0
    correct = 0
    n = len(data)
    for start in range(0, n, chunk):
        idx = range(start, min(start + chunk, n))
        x = data.batch(idx, cfg.t_max, cfg.np_dtype)
        logits, probs, _ = _forward_full(net, x, train=False, rng=None)
        targets = data.y[start:start + chunk]
        picked = np.clip(probs[np.arange(len(targets)), targets], 1e-12, 1.0)
        total_loss += float(-np.log(picked).sum())
        correct += int((probs.argmax(axis=1) == targets).sum())
    return total_loss / n, correct / n


def train(net: ChampNet, train_set: EncodedDataset, val_set: EncodedDataset | None,
          tc: TrainConfig, resume: TrainState | None = None):
    """Mini-batch Adam with the fused softmax cross-entropy.

    Returns (trained_net, report, train_state).  Deterministic given the
    shuffle seed; raises DivergenceDetected (carrying the last finite-loss
    network) if the loss goes non-finite.
    """
    cfg = net.config
    if len(train_set) == 0:
        raise EmptyDataset("empty training set")
    if train_set.y.max() >= cfg.n_classes or train_set.y.min() < 0:
        raise ClassMismatch("training targets out of range for the configured classes")

    params = dict(net.params)
    adam = resume.adam if resume is not None else AdamState.init(
        params, alpha=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2, epsilon=tc.epsilon)
    start_epoch = resume.epoch if resume is not None else 0
    report = TrainingReport(start_epoch=start_epoch)

    n = len(train_set)
    last_good = dict(params)
    best_val = np.inf
    stall = 0
    loss_history: list[float] = []

    for epoch in range(start_epoch + 1, start_epoch + tc.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence((tc.shuffle_seed, epoch))).permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for b_start in range(0, n, tc.batch_size):
            batch_idx = order[b_start:b_start + tc.batch_size]
            x = train_set.batch(batch_idx, cfg.t_max, cfg.np_dtype)
            targets = train_set.y[batch_idx]
            drop_rng = np.random.default_rng(
                np.random.SeedSequence((tc.shuffle_seed, epoch, b_start, 1)))
            live = ChampNet(config=cfg, params=params, seed=net.seed)
            logits, probs, cache = _forward_full(live, x, train=True, rng=drop_rng)
            loss, grad_logits = softmax_xent_batch(logits.astype(np.float64), targets)
            if not np.isfinite(loss):
                good_net = ChampNet(config=cfg, params=last_good, seed=net.seed)
                report.param_checksum = param_checksum(last_good)
                raise DivergenceDetected(
                    f"non-finite loss at epoch {epoch}", net=good_net, report=report)
            epoch_loss += loss * len(batch_idx)
            epoch_correct += int((probs.argmax(axis=1) == targets).sum())
            grads = _backward_full(live, cache, grad_logits)
            params, adam = adam_step(params, grads, adam)

        last_good = dict(params)
        train_loss = epoch_loss / n
        loss_history.append(train_loss)
        report.train_loss.append(train_loss)
        report.train_accuracy.append(epoch_correct / n)
        if len(loss_history) > 10 and train_loss > loss_history[-11]:
            report.nonmonotone_epochs.append(epoch)

        stop = False
        if val_set is not None and len(val_set) > 0:
            v_loss, v_acc = _eval_encoded(params, cfg, val_set)
            report.val_loss.append(v_loss)
            report.val_accuracy.append(v_acc)
            if tc.early_stop_patience is not None:
                if v_loss < best_val - 1e-12:
                    best_val = v_loss
                    stall = 0
                else:
                    stall += 1
                    stop = stall > tc.early_stop_patience
        else:
            report.val_loss.append(None)
            report.val_accuracy.append(None)
        report.epoch_seconds.append(time.perf_counter() - t0)
        if stop:
            break

    report.epochs_run = len(report.train_loss)
    report.param_checksum = param_checksum(params)
    trained = ChampNet(config=cfg, params=params, seed=net.seed)
    state = TrainState(epoch=start_epoch + report.epochs_run, adam=adam)
    return trained, report, state


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


class Prediction(NamedTuple):
    label: SignClass
    confidence: float
    distribution: np.ndarray


def predict(net: ChampNet, sample: GestureSample) -> Prediction:
    """Encode, pad, and classify one sample; argmax ties go to the lowest
    class code (numpy argmax picks the first maximum and cfg.classes is
    ordered)."""
    cfg = net.config
    m = encode_features(sample, cfg.encoding())
    m = pad_or_truncate(m, cfg.t_max)
    probs = forward(net, [m], mode="infer")[0]
    idx = int(np.argmax(probs))
    return Prediction(label=sign_class(cfg.classes[idx]),
                      confidence=float(probs[idx]),
                      distribution=probs)

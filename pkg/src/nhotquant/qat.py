"""Two-stage straight-through-estimator fine-tuning on a toy dense net.

Stage 1 trains with uniformly quantized activations only; stage 2 adds
shift-term projection of the weights, re-projected from full-precision
master weights on every forward pass.  Everything is plain numpy and
deterministic for a fixed seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codebook import gen_codebook
from .codec import QuantParams, project_array, uniform_quantize


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def cosine_lr(epoch: float, l_initial: float, period: float) -> float:
    """Cosine decay: l_initial * (1 + cos(epoch * pi / period))."""
    if period <= 0:
        raise ValueError(f"cosine period must be > 0, got {period}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return l_initial * (1.0 + math.cos(epoch * math.pi / period))


def ste_backward(upstream_grad: np.ndarray, x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Clipped pass-through gradient: upstream inside [m, M], zero outside."""
    mask = (x >= params.lower) & (x <= params.upper)
    return upstream_grad * mask


@dataclass
class TrainConfig:
    epochs_warmup: int = 20
    epochs_total: int = 40
    batch_size: int = 32
    minibatches_per_epoch: Optional[int] = None  # None = full pass
    lr_initial: float = 0.01
    cosine_period: float = 20.0
    weight_decay: float = 0.0001
    seed: int = 0
    weight_bits: Optional[int] = 6
    weight_terms: int = 2
    weight_mode: Optional[str] = "nhot"  # None disables weight quantization
    act_bits: Optional[int] = 8  # None disables activation quantization
    ema_decay: float = 0.99
    restart_cosine: bool = True
    hidden: tuple[int, ...] = (16, 16)

    def __post_init__(self) -> None:
        if not 0 <= self.epochs_warmup <= self.epochs_total:
            raise ValueError("need 0 <= epochs_warmup <= epochs_total")
        if self.lr_initial <= 0 or self.cosine_period <= 0:
            raise ValueError("rates and periods must be positive")

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["hidden"] = list(d["hidden"])
        return json.dumps(d, sort_keys=True)


@dataclass
class ToyDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def make_toy_dataset(seed: int, size: int) -> ToyDataset:
    """Two 2-D Gaussian blobs (unit variance, means 4 sigma apart), 80/20 split."""
    if size < 4:
        raise ValueError(f"need size >= 4 (2 per class), got {size}")
    rng = np.random.default_rng(seed)
    per_class = size // 2
    x0 = rng.normal(loc=(-2.0, 0.0), scale=1.0, size=(per_class, 2))
    x1 = rng.normal(loc=(2.0, 0.0), scale=1.0, size=(per_class, 2))
    x = np.concatenate([x0, x1])
    y = np.concatenate([np.zeros(per_class, np.int64), np.ones(per_class, np.int64)])
    order = rng.permutation(x.shape[0])
    x, y = x[order], y[order]
    n_train = max(1, int(round(0.8 * x.shape[0])))
    return ToyDataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:])


@dataclass
class Network:
    """Dense classifier; ``weights`` are the full-precision masters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, layer_sizes: tuple[int, ...], rng: np.random.Generator) -> "Network":
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def num_layers(self) -> int:
        return len(self.weights)


def _project_weights(w: np.ndarray, b: int, n: int, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Project a master weight matrix onto the codebook levels under a
    per-tensor symmetric scale; returns (projected, level set)."""
    peak = float(np.max(np.abs(w)))
    book = gen_codebook(b, n, mode)
    if peak == 0.0:
        return w.copy(), np.zeros(1)
    params = QuantParams(-peak, peak, b, symmetric=True)
    signs, idx = project_array(w.ravel(), book, params)
    mags = np.asarray(book.magnitudes, dtype=np.float64)
    levels = np.concatenate([-mags[::-1], mags]) * params.scale
    wq = (signs.astype(np.float64) * mags[idx] * params.scale).reshape(w.shape)
    return wq, levels


@dataclass
class _ActRange:
    lo: float = 0.0
    hi: float = 0.0
    ready: bool = False

    def update(self, batch: np.ndarray, decay: float) -> None:
        b_lo, b_hi = float(batch.min()), float(batch.max())
        if not self.ready:
            self.lo, self.hi, self.ready = b_lo, b_hi, True
        else:
            self.lo = decay * self.lo + (1.0 - decay) * b_lo
            self.hi = decay * self.hi + (1.0 - decay) * b_hi


def _forward(net, x, cfg, stage, act_ranges, collect_ema, check_members=False):
    """One forward pass; returns (logits, caches) where caches hold what the
    backward pass needs per layer."""
    quant_weights = stage == 2 and cfg.weight_mode is not None and cfg.weight_bits is not None
    a = x
    caches = []
    for l in range(net.num_layers):
        w_master = net.weights[l]
        if quant_weights:
            w_used, levels = _project_weights(
                w_master, cfg.weight_bits, cfg.weight_terms, cfg.weight_mode
            )
            if check_members:
                assert np.isin(w_used.ravel(), levels).all(), "forward weight off-codebook"
        else:
            w_used = w_master
        z = a @ w_used + net.biases[l]
        last = l == net.num_layers - 1
        if last:
            caches.append({"a_in": a, "w_used": w_used, "z": z})
            return z, caches
        h = np.maximum(z, 0.0)
        if cfg.act_bits is not None:
            rng_l = act_ranges[l]
            if collect_ema:
                rng_l.update(h, cfg.ema_decay)
            if rng_l.ready and rng_l.hi > rng_l.lo:
                p = QuantParams(rng_l.lo, rng_l.hi, cfg.act_bits, symmetric=False)
                hq = uniform_quantize(h, p)
                ste_mask = (h >= p.lower) & (h <= p.upper)
            else:
                hq, ste_mask = h, np.ones_like(h, dtype=bool)
        else:
            hq, ste_mask = h, None
        caches.append({"a_in": a, "w_used": w_used, "z": z, "ste_mask": ste_mask})
        a = hq
    raise AssertionError("unreachable")


def _loss_and_grads(net, x, y, cfg, stage, act_ranges, collect_ema, check_members):
    logits, caches = _forward(net, x, cfg, stage, act_ranges, collect_ema, check_members)
    n = x.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * net.num_layers
    grads_b = [None] * net.num_layers
    for l in range(net.num_layers - 1, -1, -1):
        cache = caches[l]
        grads_w[l] = cache["a_in"].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ cache["w_used"].T
            prev = caches[l - 1]
            if prev["ste_mask"] is not None:
                delta = delta * prev["ste_mask"]
            delta = delta * (prev["z"] > 0.0)
    return loss, grads_w, grads_b


def _evaluate(net, x, y, cfg, stage, act_ranges) -> float:
    logits, _ = _forward(net, x, cfg, stage, act_ranges, collect_ema=False)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train_two_stage(net: Network, data: ToyDataset, config: TrainConfig,
                    check_invariants: bool = True) -> tuple[Network, list[dict]]:
    """Run the two-stage schedule; returns the trained net and a per-epoch
    metrics log ({epoch, stage, lr, train_loss, test_accuracy})."""
    if data.x_train.size == 0:
        raise ValueError("training data is empty")
    rng = np.random.default_rng(config.seed)
    act_ranges = [_ActRange() for _ in range(net.num_layers - 1)]
    log: list[dict] = []
    n_train = data.x_train.shape[0]
    for epoch in range(1, config.epochs_total + 1):
        stage = 1 if epoch <= config.epochs_warmup else 2
        # activation ranges freeze when stage 2 begins, unless there never
        # was a stage 1 to calibrate them
        collect_ema = stage == 1 or config.epochs_warmup == 0
        if stage == 2 and config.restart_cosine:
            lr = cosine_lr(epoch - config.epochs_warmup - 1, config.lr_initial,
                           config.cosine_period)
        else:
            lr = cosine_lr(epoch - 1, config.lr_initial, config.cosine_period)
        order = rng.permutation(n_train)
        if config.minibatches_per_epoch is not None:
            order = order[: config.minibatches_per_epoch * config.batch_size]
        losses = []
        for start in range(0, order.size, config.batch_size):
            idx = order[start: start + config.batch_size]
            loss, gw, gb = _loss_and_grads(
                net, data.x_train[idx], data.y_train[idx], config, stage,
                act_ranges, collect_ema, check_members=check_invariants and stage == 2,
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            losses.append(loss)
            for l in range(net.num_layers):
                net.weights[l] -= lr * (gw[l] + config.weight_decay * net.weights[l])
                net.biases[l] -= lr * gb[l]
        acc = _evaluate(net, data.x_test, data.y_test, config, stage, act_ranges)
        log.append({
            "epoch": epoch,
            "stage": stage,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "test_accuracy": acc,
        })
    return net, log


def train_single_stage(net: Network, data: ToyDataset, config: TrainConfig,
                       check_invariants: bool = True) -> tuple[Network, list[dict]]:
    """Ablation path: both quantizers active from epoch 1."""
    cfg = dataclasses.replace(config, epochs_warmup=0)
    return train_two_stage(net, data, cfg, check_invariants=check_invariants)


def quantized_weights(net: Network, config: TrainConfig) -> list[np.ndarray]:
    """Final shift-term-projected view of the master weights."""
    if config.weight_mode is None or config.weight_bits is None:
        return [w.copy() for w in net.weights]
    return [
        _project_weights(w, config.weight_bits, config.weight_terms, config.weight_mode)[0]
        for w in net.weights
    ]

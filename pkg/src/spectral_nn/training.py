"""Losses, Adam and the seeded BPTT training loop for the synthetic tasks."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .flops import FlopCounter
from .layers import RnnCell, rnn_backward_through_time, rnn_forward
from .oracle import jacobi_svd
from .svd_param import dumps_spectral, parse_spectral, spectral_margin
from .tasks import N_SYMBOLS, gen_addition, gen_copy

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"loss became {loss} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


# ------------------------------------------------------------------ losses


def mse_loss(pred, target):
    """Mean squared error over every entry; returns ``(loss, dloss/dpred)``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def log_softmax(logits, axis=0):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def cross_entropy_loss(logits, targets):
    """Mean negative log-softmax of the target class.

    ``logits`` has classes on axis 0 (shape ``(C, ...)``), ``targets`` the
    remaining shape. Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets)
    if logits.shape[1:] != targets.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs targets {targets.shape}")
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, targets[None, ...], axis=0)[0]
    count = targets.size
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[None, ...],
                      np.take_along_axis(grad, targets[None, ...], axis=0) - 1.0, axis=0)
    return float(-picked.sum() / count), grad / count


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict, lr=1e-3, beta1=0.9,
              beta2=0.999, eps=1e-8) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for key in sorted(params):
        g = grads[key]
        if np.shape(g) != np.shape(state.m[key]):
            raise ValueError(f"gradient for {key} has shape {np.shape(g)}")
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def clip_gradients(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ------------------------------------------------------------------ config


@dataclass
class TrainConfig:
    task: str = "addition"          # addition | copy
    seq_len: int = 30               # addition: sequence length L
    lag: int = 50                   # copy: time lag T
    hidden: int = 32
    m1: int = 8
    m2: int = 8
    r: float = 0.01
    sigma_star: float = 1.0
    activation: str = "leaky_relu"
    lr: float = 1e-3
    decay: float = 1.0              # learning-rate factor per epoch
    epoch_iters: int = 1000
    batch: int = 50
    test_batch: int = 1000
    iters: int = 3000
    seed: int = 1
    model: str = "spectral_rnn"     # spectral_rnn | vanilla_rnn
    mode: str = "local"             # local | materialized (spectral only)
    record_every: int = 50
    clip: float = 0.0               # 0 disables clipping
    vanilla_scale: float = 1.0

    def __post_init__(self):
        if self.task not in ("addition", "copy"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.model in ("vanilla", "spectral"):
            self.model = f"{self.model}_rnn"
        if self.model not in ("spectral_rnn", "vanilla_rnn"):
            raise ValueError(f"unknown model {self.model!r}")
        for name in ("hidden", "batch", "test_batch", "epoch_iters", "record_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.model == "spectral_rnn" and not (0 <= self.m1 <= self.hidden
                                                 and 0 <= self.m2 <= self.hidden):
            raise ValueError("reflector counts must lie in [0, hidden]")
        if self.r < 0:
            raise ValueError("r must be nonnegative")

    @property
    def n_i(self) -> int:
        return 2 if self.task == "addition" else N_SYMBOLS

    @property
    def n_y(self) -> int:
        return 1 if self.task == "addition" else N_SYMBOLS

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


@dataclass
class MetricRecord:
    iter: int
    loss: float
    eval_metric: float
    grad_norm_h0: float
    spectral_margin: float
    flops: int
    seconds: float
    grad_norm_hL: float = float("nan")

    CSV_FIELDS = ("iter", "loss", "eval_metric", "grad_norm_h0", "spectral_margin",
                  "flops", "seconds")

    def csv_row(self) -> list:
        return [self.iter, repr(self.loss), repr(self.eval_metric), repr(self.grad_norm_h0),
                repr(self.spectral_margin), self.flops, f"{self.seconds:.3f}"]

    @property
    def grad_ratio(self) -> float:
        """``||dL/dh^(0)|| / ||dL/dh^(T)||``."""
        return self.grad_norm_h0 / self.grad_norm_hL if self.grad_norm_hL else float("nan")


# ------------------------------------------------------------------- model


def build_model(config: TrainConfig, rng) -> RnnCell:
    if config.model == "spectral_rnn":
        return RnnCell.spectral_random(config.hidden, config.n_i, config.n_y, config.m1, config.m2,
                                       config.r, config.sigma_star, config.activation, rng,
                                       config.mode)
    return RnnCell.vanilla_random(config.hidden, config.n_i, config.n_y, config.activation, rng,
                                  config.vanilla_scale)


def model_margin(cell: RnnCell) -> float:
    if cell.spectral:
        return spectral_margin(cell.W)
    s = jacobi_svd(cell.W)[1]
    return float(np.max(np.abs(s - 1.0)))


def batch_for(config: TrainConfig, size: int, rng):
    if config.task == "addition":
        return gen_addition(config.seq_len, size, rng)
    return gen_copy(config.lag, size, rng)


def task_loss(config: TrainConfig, ys, batch):
    """Loss and per-step dL/dy_hat (``None`` where a step has no loss)."""
    if config.task == "addition":
        pred = ys[-1][0]
        loss, g = mse_loss(pred, batch.targets)
        grads = [None] * (len(ys) - 1) + [g[None, :]]
        return loss, grads
    logits = np.stack(ys, axis=1)               # (C, T, B)
    targets = batch.targets.T                   # (T, B)
    loss, g = cross_entropy_loss(logits, targets)
    return loss, [g[:, t, :] for t in range(g.shape[1])]


def loss_and_grads(cell: RnnCell, config: TrainConfig, batch, counter=None):
    ys, tapes = rnn_forward(cell, batch.model_inputs(), counter=counter)
    loss, lgrads = task_loss(config, ys, batch)
    grads, norms = rnn_backward_through_time(cell, tapes, lgrads, counter)
    return loss, grads, norms


def evaluate(cell: RnnCell, config: TrainConfig, batch) -> float:
    ys, _ = rnn_forward(cell, batch.model_inputs())
    return task_loss(config, ys, batch)[0]


def train(config: TrainConfig, on_record=None, log_every: int = 0):
    """Run the seeded training loop.

    Returns ``(records, model)``. A record is taken at iteration 0 (before
    any update) and every ``record_every`` iterations after that, plus the
    last one. ``on_record(record, model)`` is called for each record.
    Raises :class:`DivergenceError` when the training loss stops being
    finite.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng, train_rng, test_rng = (np.random.default_rng(s) for s in seeds)
    cell = build_model(config, init_rng)
    test = batch_for(config, config.test_batch, test_rng)
    params = cell.parameters()
    state = AdamState.zeros_like(params)
    counter = FlopCounter()
    records = []
    start = time.perf_counter()

    def record(it, loss, norms):
        rec = MetricRecord(it, loss, evaluate(cell, config, test), float(norms[0]),
                           model_margin(cell), counter.total, time.perf_counter() - start,
                           float(norms[-1]))
        records.append(rec)
        if on_record is not None:
            on_record(rec, cell)
        if log_every and (it % log_every == 0 or it == config.iters):
            log.info("iter %d loss %.5f eval %.5f margin %.4g", it, rec.loss, rec.eval_metric,
                     rec.spectral_margin)

    for it in range(config.iters + 1):
        batch = batch_for(config, config.batch, train_rng)
        loss, grads, norms = loss_and_grads(cell, config, batch, counter)
        if not np.isfinite(loss):
            raise DivergenceError(it, loss)
        if it % config.record_every == 0 or it == config.iters:
            record(it, loss, norms)
        if it == config.iters:
            break
        if config.clip > 0:
            clip_gradients(grads, config.clip)
        lr = config.lr * config.decay ** (it // config.epoch_iters)
        adam_step(state, params, grads, lr)
    return records, cell


# -------------------------------------------------------------- checkpoints


def _dense_block(name: str, a: np.ndarray) -> list:
    a = np.atleast_2d(a) if a.ndim == 1 else a
    lines = [f"matrix {name} {a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in a]
    return lines


def dumps_model(cell: RnnCell) -> str:
    lines = ["rnn-checkpoint v1", f"kind {'spectral' if cell.spectral else 'vanilla'}",
             f"activation {cell.activation}", f"mode {cell.mode}"]
    text = "\n".join(lines) + "\n"
    if cell.spectral:
        text += dumps_spectral(cell.W)
    else:
        text += "\n".join(_dense_block("W", cell.W)) + "\n"
    blocks = _dense_block("M", cell.M) + _dense_block("Y", cell.Y) + _dense_block("b", cell.b[None, :])
    return text + "\n".join(blocks) + "\n"


def loads_model(text: str) -> RnnCell:
    lines = iter(text.splitlines())
    if next(lines).strip() != "rnn-checkpoint v1":
        raise ValueError("not an rnn checkpoint")
    header = {}
    for _ in range(3):
        key, value = next(lines).split(maxsplit=1)
        header[key] = value
    W = parse_spectral(lines) if header["kind"] == "spectral" else None
    mats = {}
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "matrix":
            raise ValueError(f"unexpected line {line!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        mats[name] = np.array([[float(x) for x in next(lines).split()] for _ in range(rows)])
        assert mats[name].shape == (rows, cols)
    if W is None:
        W = mats["W"]
    return RnnCell(W, mats["M"], mats["Y"], mats["b"][0], header["activation"], header["mode"])

"""Single-layer LSTM over frozen item embeddings, with hand-written backprop.

The model reads a sequence of item vectors and maps its final hidden state
through a linear projection back into embedding space::

    a_t = W_x x_t + W_h h_{t-1} + b          gates stacked [input, forget, candidate, output]
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)
    z   = P h_T

Batches are processed together by right-padding and masking: a masked step
copies the previous state unchanged, so every example sees exactly its own
recurrence.  Embeddings are only read; no gradient reaches the table.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import contrastive
from .contrastive import LossSpec, SamplingSpec
from .errors import (
    ConfigError,
    IndexOutOfRange,
    NonFiniteActivation,
    NonFiniteError,
    NonFiniteGradient,
)

log = logging.getLogger(__name__)

GATE_ORDER = ("input", "forget", "candidate", "output")
BLOCKS = ("W_x", "W_h", "b", "P")


@dataclass
class ModelParams:
    W_x: np.ndarray  # (4h, d)
    W_h: np.ndarray  # (4h, h)
    b: np.ndarray    # (4h,)
    P: np.ndarray    # (d, h)

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[1]

    @property
    def dim(self) -> int:
        return self.W_x.shape[1]

    def blocks(self):
        return [getattr(self, k) for k in BLOCKS]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.blocks()))

    def norm(self) -> float:
        return float(np.sqrt(sum((a * a).sum() for a in self.blocks())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.blocks())

    @classmethod
    def zeros(cls, dim: int, hidden_size: int) -> "ModelParams":
        h = hidden_size
        return cls(np.zeros((4 * h, dim)), np.zeros((4 * h, h)), np.zeros(4 * h), np.zeros((dim, h)))

    @classmethod
    def init(cls, dim: int, hidden_size: int, rng: np.random.Generator) -> "ModelParams":
        """Glorot-uniform input and projection weights, orthogonal recurrent
        blocks, forget-gate bias of one."""
        h = hidden_size
        lim_x = np.sqrt(6.0 / (dim + h))
        W_x = rng.uniform(-lim_x, lim_x, size=(4 * h, dim))
        W_h = np.vstack([_orthogonal(h, rng) for _ in range(4)])
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        lim_p = np.sqrt(6.0 / (dim + h))
        P = rng.uniform(-lim_p, lim_p, size=(dim, h))
        return cls(W_x, W_h, b, P)


def _orthogonal(n: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class ForwardTrace:
    """Everything backward needs.  Arrays carry a leading batch axis.

    ``gates`` holds post-activation gate values ``(B, T, 4h)``; ``c`` and
    ``h`` hold states ``(B, T+1, h)`` with the zero initial state at index 0.
    """

    x: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    gates: np.ndarray
    c: np.ndarray
    h: np.ndarray
    z: np.ndarray

    def __len__(self):
        return self.x.shape[1]

    @property
    def prediction(self) -> np.ndarray:
        return self.z[0] if self.z.shape[0] == 1 else self.z


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gather(table, seqs):
    mat = table.vectors if hasattr(table, "vectors") else np.asarray(table)
    n = mat.shape[0]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("every input sequence needs at least one item")
    T = int(lengths.max())
    idx = np.zeros((len(seqs), T), dtype=np.int64)
    for r, s in enumerate(seqs):
        idx[r, :len(s)] = s
    if idx.min() < 0 or idx.max() >= n:
        raise IndexOutOfRange(f"item index outside [0, {n})")
    mask = np.arange(T)[None, :] < lengths[:, None]
    return mat[idx].astype(np.float64), mask, lengths


def forward_batch(params: ModelParams, table, seqs) -> ForwardTrace:
    x, mask, lengths = _gather(table, seqs)
    B, T, _ = x.shape
    H = params.hidden_size
    gates = np.empty((B, T, 4 * H))
    c = np.zeros((B, T + 1, H))
    h = np.zeros((B, T + 1, H))
    xw = x @ params.W_x.T + params.b
    for t in range(T):
        a = xw[:, t] + h[:, t] @ params.W_h.T
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c[:, t] + i * g
        h_new = o * np.tanh(c_new)
        m = mask[:, t, None]
        c[:, t + 1] = np.where(m, c_new, c[:, t])
        h[:, t + 1] = np.where(m, h_new, h[:, t])
        gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = i, f, g, o
    z = h[:, T] @ params.P.T
    if not np.all(np.isfinite(z)):
        raise NonFiniteActivation("non-finite prediction")
    return ForwardTrace(x, mask, lengths, gates, c, h, z)


def forward(params: ModelParams, table, input_seq) -> ForwardTrace:
    return forward_batch(params, table, [input_seq])


def predict(params: ModelParams, table, input_seq) -> np.ndarray:
    return forward(params, table, input_seq).z[0]


def predict_batch(params: ModelParams, table, seqs, chunk: int = 512) -> np.ndarray:
    seqs = list(seqs)
    out = [forward_batch(params, table, seqs[s:s + chunk]).z for s in range(0, len(seqs), chunk)]
    return np.vstack(out) if out else np.empty((0, params.dim))


def backward(trace: ForwardTrace, params: ModelParams, dL_dz) -> ModelParams:
    """Gradients of a loss with respect to every parameter block, given dL/dz
    for each batch member (a single ``(d,)`` vector is accepted for B=1)."""
    dz = np.asarray(dL_dz, dtype=np.float64).reshape(trace.z.shape)
    H = params.hidden_size
    B, T, _ = trace.x.shape
    grads = ModelParams.zeros(params.dim, H)
    grads.P = dz.T @ trace.h[:, T]
    dh = dz @ params.P
    dc = np.zeros((B, H))
    da = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        m = trace.mask[:, t, None]
        dh_new = np.where(m, dh, 0.0)
        dc_new = np.where(m, dc, 0.0)
        gt = trace.gates[:, t]
        i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = np.tanh(trace.c[:, t + 1])
        dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
        da[:, :H] = dc_new * g * i * (1.0 - i)
        da[:, H:2 * H] = dc_new * trace.c[:, t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc_new * i * (1.0 - g * g)
        da[:, 3 * H:] = dh_new * tc * o * (1.0 - o)
        grads.W_x += da.T @ trace.x[:, t]
        grads.W_h += da.T @ trace.h[:, t]
        grads.b += da.sum(axis=0)
        dh = da @ params.W_h + np.where(m, 0.0, dh)
        dc = dc_new * f + np.where(m, 0.0, dc)
    if not grads.all_finite():
        raise NonFiniteGradient("non-finite gradient")
    return grads


def clip_gradients(grads: ModelParams, max_norm: float):
    """Rescale in place so the global norm is at most ``max_norm``; returns the
    norm before clipping."""
    total = grads.norm()
    if max_norm and total > max_norm:
        scale = max_norm / total
        for a in grads.blocks():
            a *= scale
    return total


# --------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 128
    batch_size: int = 128
    epochs: int = 20
    learning_rate: float = 3e-3
    gradient_clip_norm: float = 5.0
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.hidden_size < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("hidden_size and batch_size must be >= 1, epochs >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        for p, g in zip(params.blocks(), grads.blocks()):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        if self.m is None:
            self.m = [np.zeros_like(a) for a in params.blocks()]
            self.v = [np.zeros_like(a) for a in params.blocks()]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.blocks(), grads.blocks(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)


def check_config(config: TrainConfig, sampling: SamplingSpec) -> None:
    if sampling.strategy != "none" and config.batch_size < 2:
        raise ConfigError("in-batch negative sampling needs batch_size >= 2")


def train_epoch(params: ModelParams, table, examples, loss: LossSpec, sampling: SamplingSpec,
                config: TrainConfig, optimizer=None, epoch: int = 0):
    """One pass over ``examples`` in a seed- and epoch-determined order.

    Updates ``params`` in place and returns ``(params, mean_loss)``, the mean
    being taken over examples.
    """
    if not examples:
        raise ValueError("no training examples")
    check_config(config, sampling)
    contrastive.check_compatible(loss, sampling)
    optimizer = optimizer or make_optimizer(config)
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(examples))
    total = 0.0
    for bi, start in enumerate(range(0, len(order), config.batch_size)):
        batch = [examples[j] for j in order[start:start + config.batch_size]]
        try:
            trace = forward_batch(params, table, [ex.input_seq for ex in batch])
            losses, dz, _ = contrastive.batch_loss(trace.z, batch, table, loss, sampling, rng)
            grads = backward(trace, params, dz / len(batch))
        except NonFiniteError as exc:
            raise type(exc)(f"epoch {epoch}, batch {bi}: {exc}") from exc
        clip_gradients(grads, config.gradient_clip_norm)
        optimizer.step(params, grads)
        total += losses.sum()
    return params, total / len(examples)


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list = field(default_factory=list)


def fit(table, examples, loss: LossSpec = LossSpec(), sampling: SamplingSpec = SamplingSpec(),
        config: TrainConfig = TrainConfig(), params: ModelParams | None = None) -> TrainResult:
    check_config(config, sampling)
    contrastive.check_compatible(loss, sampling)
    if params is None:
        params = ModelParams.init(table.dim, config.hidden_size, np.random.default_rng(config.seed))
    opt = make_optimizer(config)
    result = TrainResult(params)
    for epoch in range(config.epochs):
        _, mean_loss = train_epoch(params, table, examples, loss, sampling, config, opt, epoch)
        result.epoch_losses.append(mean_loss)
        log.info("epoch %d loss %.6f", epoch, mean_loss)
    return result


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = b"DRCKPT\x00\x00"
_VERSION = 1


def save_checkpoint(path, params: ModelParams, config: dict | None = None) -> None:
    """Versioned header, h and d, the four blocks as little-endian float32,
    then a length-prefixed JSON echo of the training configuration."""
    echo = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, params.hidden_size, params.dim))
        for a in params.blocks():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(echo)))
        fh.write(echo)


def load_checkpoint(path):
    """Returns ``(params, config_echo)``; parameters come back as float64."""
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a checkpoint file")
    version, h, d = struct.unpack_from("<III", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 20
    shapes = [(4 * h, d), (4 * h, h), (4 * h,), (d, h)]
    blocks = []
    for shp in shapes:
        n = int(np.prod(shp))
        blocks.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64).reshape(shp))
        pos += 4 * n
    (ln,) = struct.unpack_from("<I", data, pos)
    echo = json.loads(data[pos + 4:pos + 4 + ln].decode("utf-8"))
    return ModelParams(*blocks), echo


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)

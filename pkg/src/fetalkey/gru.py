"""Recurrent frame-quality head: GRU -> dropout -> GRU -> dropout -> dense -> sigmoid.

Everything is plain numpy: forward pass, backpropagation through time,
AdamW (or SGD) updates, early stopping and a JSON weights file.

Gate equations (gates ordered reset, update, candidate)::

    r = sigmoid(W_r x + b_r + U_r h + c_r)
    z = sigmoid(W_z x + b_z + U_z h + c_z)
    n = tanh(W_n x + b_n + r * (U_n h + c_n))
    h' = (1 - z) * n + z * h

The hidden state starts at zero for every sequence (videos are
independent). Dropout acts on each GRU layer's output sequence, never
inside the recurrence, and uses inverted scaling.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import FEATURE_DIM
from .errors import (EmptyDataset, EmptySequence, FormatVersionMismatch,
                     LengthMismatch, ShapeMismatch, WeightsFileError)

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128
DROPOUT1 = 0.1
DROPOUT2 = 0.2
WEIGHTS_FORMAT = "fetalkey-gru-weights"
WEIGHTS_VERSION = 1


sigmoid = expit


@dataclass(eq=False)
class GruLayerWeights:
    W: np.ndarray  # (3, hidden, input)
    U: np.ndarray  # (3, hidden, hidden)
    b: np.ndarray  # (3, hidden) input-side biases
    c: np.ndarray  # (3, hidden) hidden-side biases

    def __post_init__(self):
        self.W, self.U, self.b, self.c = (np.asarray(a, dtype=np.float64)
                                          for a in (self.W, self.U, self.b, self.c))
        if self.W.ndim != 3 or self.W.shape[0] != 3:
            raise ShapeMismatch(f"W must be (3, hidden, input), got {self.W.shape}")
        h, i = self.W.shape[1:]
        for name, arr, shape in (("U", self.U, (3, h, h)), ("b", self.b, (3, h)),
                                 ("c", self.c, (3, h))):
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} must have shape {shape}, got {arr.shape}")
        for arr in (self.W, self.U, self.b, self.c):
            if not np.all(np.isfinite(arr)):
                raise ValueError("GRU weights must be finite")

    @property
    def input_dim(self):
        return self.W.shape[2]

    @property
    def hidden_dim(self):
        return self.W.shape[1]

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        return cls(np.zeros((3, hidden_dim, input_dim)), np.zeros((3, hidden_dim, hidden_dim)),
                   np.zeros((3, hidden_dim)), np.zeros((3, hidden_dim)))

    @classmethod
    def uniform(cls, input_dim, hidden_dim, rng):
        k = 1.0 / np.sqrt(hidden_dim)
        return cls(rng.uniform(-k, k, (3, hidden_dim, input_dim)),
                   rng.uniform(-k, k, (3, hidden_dim, hidden_dim)),
                   rng.uniform(-k, k, (3, hidden_dim)),
                   rng.uniform(-k, k, (3, hidden_dim)))


@dataclass(eq=False)
class GruHeadModel:
    layer1: GruLayerWeights
    layer2: GruLayerWeights
    dense_w: np.ndarray
    dense_b: float = 0.0
    dropout1: float = DROPOUT1
    dropout2: float = DROPOUT2

    output_activation = "sigmoid"

    def __post_init__(self):
        self.dense_w = np.asarray(self.dense_w, dtype=np.float64)
        self.dense_b = float(self.dense_b)
        if self.layer1.input_dim != FEATURE_DIM:
            raise ShapeMismatch(f"first GRU layer must take {FEATURE_DIM} inputs, "
                                f"got {self.layer1.input_dim}")
        if self.layer2.input_dim != self.layer1.hidden_dim:
            raise ShapeMismatch(f"second GRU layer input ({self.layer2.input_dim}) must equal "
                                f"first layer hidden size ({self.layer1.hidden_dim})")
        if self.dense_w.shape != (self.layer2.hidden_dim,):
            raise ShapeMismatch(f"dense weights must have shape ({self.layer2.hidden_dim},), "
                                f"got {self.dense_w.shape}")
        for d in (self.dropout1, self.dropout2):
            if not 0.0 <= d < 1.0:
                raise ValueError(f"dropout rate {d} outside [0, 1)")

    @property
    def hidden_dim(self):
        return self.layer2.hidden_dim

    @classmethod
    def init(cls, hidden=DEFAULT_HIDDEN, seed=0):
        rng = np.random.default_rng(seed)
        l1 = GruLayerWeights.uniform(FEATURE_DIM, hidden, rng)
        l2 = GruLayerWeights.uniform(hidden, hidden, rng)
        k = 1.0 / np.sqrt(hidden)
        return cls(l1, l2, rng.uniform(-k, k, hidden), float(rng.uniform(-k, k)))

    @classmethod
    def zeros(cls, hidden=DEFAULT_HIDDEN):
        return cls(GruLayerWeights.zeros(FEATURE_DIM, hidden),
                   GruLayerWeights.zeros(hidden, hidden), np.zeros(hidden), 0.0)

    def parameters(self):
        """Live references to every trainable array, in file order."""
        return {
            "layer1.W": self.layer1.W, "layer1.U": self.layer1.U,
            "layer1.b": self.layer1.b, "layer1.c": self.layer1.c,
            "layer2.W": self.layer2.W, "layer2.U": self.layer2.U,
            "layer2.b": self.layer2.b, "layer2.c": self.layer2.c,
            "dense.w": self.dense_w,
        }

    def copy(self):
        return copy.deepcopy(self)

    def equals(self, other):
        if not isinstance(other, GruHeadModel):
            return False
        a, b = self.parameters(), other.parameters()
        return (all(np.array_equal(a[k], b[k]) for k in a) and self.dense_b == other.dense_b
                and self.dropout1 == other.dropout1 and self.dropout2 == other.dropout2)


def gru_cell_step(x, h, w):
    """One GRU update ``h -> h'`` for input ``x``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape != (w.input_dim,) or h.shape != (w.hidden_dim,):
        raise ShapeMismatch(f"expected x ({w.input_dim},) and h ({w.hidden_dim},), "
                            f"got {x.shape} and {h.shape}")
    gx = np.einsum("ghi,i->gh", w.W, x) + w.b
    gh = np.einsum("ghk,k->gh", w.U, h) + w.c
    r = sigmoid(gx[0] + gh[0])
    z = sigmoid(gx[1] + gh[1])
    n = np.tanh(gx[2] + r * gh[2])
    return (1.0 - z) * n + z * h


def _layer_forward(w, X, dtype=np.float64):
    """Run one layer over a sequence; returns outputs (T, H) and a cache for BPTT."""
    T = X.shape[0]
    H = w.hidden_dim
    Wf = w.W.reshape(3 * H, -1).astype(dtype, copy=False)
    Uf = w.U.reshape(3 * H, H).astype(dtype, copy=False)
    cf = w.c.reshape(-1).astype(dtype, copy=False)
    gx = X @ Wf.T + w.b.reshape(-1).astype(dtype, copy=False)
    h = np.zeros(H, dtype=dtype)
    hs = np.empty((T, H), dtype=dtype)
    rs, zs, ns, ghn = (np.empty((T, H), dtype=dtype) for _ in range(4))
    for t in range(T):
        gh = Uf @ h + cf
        r = sigmoid(gx[t, :H] + gh[:H])
        z = sigmoid(gx[t, H:2 * H] + gh[H:2 * H])
        n = np.tanh(gx[t, 2 * H:] + r * gh[2 * H:])
        h = (1.0 - z) * n + z * h
        hs[t], rs[t], zs[t], ns[t], ghn[t] = h, r, z, n, gh[2 * H:]
    return hs, (X, rs, zs, ns, ghn, hs)


def _layer_backward(w, cache, dH, need_input_grad=True):
    """BPTT through one layer given dLoss/dh_t for every t."""
    X, rs, zs, ns, ghn, hs = cache
    T, H = hs.shape
    Uf = w.U.reshape(3 * H, H)
    h_prev_all = np.vstack((np.zeros((1, H)), hs[:-1]))
    dGX = np.empty((T, 3 * H))
    dGH = np.empty((T, 3 * H))
    dh_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        r, z, n = rs[t], zs[t], ns[t]
        dh = dH[t] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (h_prev_all[t] - n) * z * (1.0 - z)
        dar = dan * ghn[t] * r * (1.0 - r)
        dGX[t, :H], dGX[t, H:2 * H], dGX[t, 2 * H:] = dar, daz, dan
        dGH[t, :2 * H] = dGX[t, :2 * H]
        dGH[t, 2 * H:] = dan * r
        dh_next = dh * z + Uf.T @ dGH[t]
    grads = {
        "W": (dGX.T @ X).reshape(3, H, -1),
        "U": (dGH.T @ h_prev_all).reshape(3, H, H),
        "b": dGX.sum(axis=0).reshape(3, H),
        "c": dGH.sum(axis=0).reshape(3, H),
    }
    dX = dGX @ w.W.reshape(3 * H, -1) if need_input_grad else None
    return dX, grads


def dropout_masks(model, length, seed):
    """Inverted-dropout masks (length, H) for both layers, drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    H1, H2 = model.layer1.hidden_dim, model.layer2.hidden_dim
    m1 = (rng.random((length, H1)) >= model.dropout1) / (1.0 - model.dropout1)
    m2 = (rng.random((length, H2)) >= model.dropout2) / (1.0 - model.dropout2)
    return m1, m2


def _check_seq(seq):
    X = np.asarray(seq, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        if X.ndim == 2 or X.size == 0:
            raise EmptySequence("feature sequence is empty")
        raise ShapeMismatch(f"feature sequence must be (T, {FEATURE_DIM}), got {X.shape}")
    if X.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"feature vectors must have length {FEATURE_DIM}, got {X.shape[1]}")
    return X


def _forward_cached(model, X, mode, seed, dtype=np.float64):
    X = X.astype(dtype, copy=False)
    h1, c1 = _layer_forward(model.layer1, X, dtype)
    if mode == "training":
        m1, m2 = dropout_masks(model, len(X), seed)
        a1 = h1 * m1
    else:
        m1 = m2 = None
        a1 = h1
    h2, c2 = _layer_forward(model.layer2, a1, dtype)
    a2 = h2 * m2 if m2 is not None else h2
    y = sigmoid(a2 @ model.dense_w.astype(dtype, copy=False) + dtype(model.dense_b))
    return y, (c1, c2, m1, m2, a2)


def forward(model, seq, mode="inference", seed=None, dtype=np.float64):
    """Per-frame quality predictions in (0, 1) for a ``(T, 1280)`` feature sequence.

    ``mode="training"`` applies dropout with masks drawn from ``seed``;
    inference is deterministic. Processing is causal: output t only sees
    frames 0..t.
    """
    if mode not in ("inference", "training"):
        raise ValueError(f"mode must be 'inference' or 'training', got {mode!r}")
    X = _check_seq(seq)
    y, _ = _forward_cached(model, X, mode, seed, dtype)
    return y


def loss(pred, target):
    """Mean squared error over frames."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def backward(model, seq, target, seed=None, mode="training"):
    """Exact gradients of the MSE loss w.r.t. every weight.

    Returns ``(loss_value, grads)`` where ``grads`` maps parameter names
    (see ``GruHeadModel.parameters``) to arrays plus ``"dense.b"`` to a
    float. The dropout masks are the ones ``forward`` would draw for the
    same seed.
    """
    X = _check_seq(seq)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (len(X),):
        raise LengthMismatch(f"target length {target.shape} does not match sequence length {len(X)}")
    y, (c1, c2, m1, m2, a2) = _forward_cached(model, X, mode, seed)
    T = len(X)
    dlogit = 2.0 * (y - target) / T * y * (1.0 - y)
    grads = {"dense.w": a2.T @ dlogit, "dense.b": float(dlogit.sum())}
    dh2 = np.outer(dlogit, model.dense_w)
    if m2 is not None:
        dh2 = dh2 * m2
    da1, g2 = _layer_backward(model.layer2, c2, dh2)
    dh1 = da1 * m1 if m1 is not None else da1
    _, g1 = _layer_backward(model.layer1, c1, dh1, need_input_grad=False)
    for k, v in g1.items():
        grads["layer1." + k] = v
    for k, v in g2.items():
        grads["layer2." + k] = v
    return loss(y, target), grads


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    max_epochs: int = 60
    early_stop_patience: int = 20
    seed: int = 0
    optimizer: str = "adamw"
    momentum: float = 0.0  # sgd only
    betas: tuple = (0.9, 0.999)  # adamw only
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive and weight decay non-negative")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience cannot exceed max_epochs")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def __len__(self):
        return len(self.val_loss)

    def as_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "stop_reason": self.stop_reason}


def evaluate(model, dataset):
    """Mean per-sequence inference MSE."""
    return float(np.mean([loss(forward(model, x), y) for x, y in dataset]))


def _all_params(model):
    params = model.parameters()
    # dense bias as a 0-d view so every optimizer treats it like the arrays
    params["dense.b"] = np.array(model.dense_b)
    return params


class SGD:
    """SGD with optional momentum and decoupled weight decay."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.velocity = {}

    def step(self, model, grads):
        lr, wd, mu = self.cfg.learning_rate, self.cfg.weight_decay, self.cfg.momentum
        params = _all_params(model)
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if mu:
                v = self.velocity.setdefault(name, np.zeros_like(p))
                v *= mu
                v += g
                g = v
            if wd:
                p *= 1.0 - lr * wd
            p -= lr * g
        model.dense_b = float(params["dense.b"])


class AdamW:
    """Adam with weight decay applied directly to the weights."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {}
        self.v = {}
        self.tmp = {}

    def step(self, model, grads):
        cfg = self.cfg
        b1, b2 = cfg.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        params = _all_params(model)
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.tmp[name] = np.empty_like(p)
            m, v, tmp = self.m[name], self.v[name], self.tmp[name]
            # in place throughout: the first-layer arrays hold ~0.5M entries
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            if cfg.weight_decay:
                p *= 1.0 - cfg.learning_rate * cfg.weight_decay
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(c2)
            tmp += cfg.eps
            np.divide(m, tmp, out=tmp)
            tmp *= cfg.learning_rate / c1
            p -= tmp
        model.dense_b = float(params["dense.b"])


def make_optimizer(cfg):
    return AdamW(cfg) if cfg.optimizer == "adamw" else SGD(cfg)


def train(model, train_set, val_set, cfg, progress=None):
    """Train on (features, targets) pairs, one sequence per update.

    After every epoch the validation loss is measured in inference mode;
    training ends after ``max_epochs`` or once ``early_stop_patience``
    epochs pass without a new best. Returns a new model holding the best
    epoch's weights, and the history. The input model is left untouched.
    """
    if not train_set or not val_set:
        raise EmptyDataset("training and validation sets must be non-empty")
    train_set = [(_check_seq(x), np.asarray(y, dtype=np.float64)) for x, y in train_set]
    val_set = [(_check_seq(x), np.asarray(y, dtype=np.float64)) for x, y in val_set]
    for x, y in train_set + val_set:
        if y.shape != (len(x),):
            raise LengthMismatch("every target sequence must match its feature sequence")

    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    opt = make_optimizer(cfg)
    best = model.copy()
    best_loss = np.inf
    history = TrainHistory()
    since_best = 0
    for epoch in range(cfg.max_epochs):
        losses = []
        for i in rng.permutation(len(train_set)):
            x, y = train_set[i]
            value, grads = backward(model, x, y, seed=int(rng.integers(2**63)))
            opt.step(model, grads)
            losses.append(value)
        val = evaluate(model, val_set)
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(val)
        if progress is not None:
            progress(epoch, history.train_loss[-1], val)
        if val < best_loss:
            best_loss, best, since_best = val, model.copy(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                history.stop_reason = "early_stop"
                break
    else:
        history.stop_reason = "max_epochs"
    log.info("training stopped (%s) after %d epochs; best epoch %d, val loss %.6g",
             history.stop_reason, len(history), history.best_epoch, best_loss)
    return best, history


# -- persistence ---------------------------------------------------------

def save_weights(model, path):
    """Write the model as a self-describing JSON document (see docs/formats.md)."""
    doc = {
        "format": WEIGHTS_FORMAT,
        "format_version": WEIGHTS_VERSION,
        "input_dim": model.layer1.input_dim,
        "hidden_dim": model.hidden_dim,
        "layers": [{"input_dim": l.input_dim, "hidden_dim": l.hidden_dim}
                   for l in (model.layer1, model.layer2)],
        "dropout1": model.dropout1,
        "dropout2": model.dropout2,
        "output_activation": "sigmoid",
        "weights": {name: arr.ravel().tolist() for name, arr in model.parameters().items()},
        "dense.b": model.dense_b,
    }
    try:
        Path(path).write_text(json.dumps(doc))
    except OSError as exc:
        raise WeightsFileError(f"cannot write weights to {path}: {exc}") from exc


def load_weights(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise WeightsFileError(f"cannot read weights file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WeightsFileError(f"{path} is truncated or not a weights file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != WEIGHTS_FORMAT:
        raise FormatVersionMismatch(f"{path} is not a {WEIGHTS_FORMAT} document")
    if doc.get("format_version") != WEIGHTS_VERSION:
        raise FormatVersionMismatch(f"{path} has format_version {doc.get('format_version')!r}, "
                                    f"expected {WEIGHTS_VERSION}")
    try:
        (l1, l2) = doc["layers"]
        w = doc["weights"]

        def layer(prefix, dims):
            i, h = int(dims["input_dim"]), int(dims["hidden_dim"])
            parts = {}
            for key, shape in (("W", (3, h, i)), ("U", (3, h, h)), ("b", (3, h)), ("c", (3, h))):
                flat = np.asarray(w[f"{prefix}.{key}"], dtype=np.float64)
                if flat.size != np.prod(shape):
                    raise ShapeMismatch(f"{prefix}.{key} has {flat.size} values, expected shape {shape}")
                parts[key] = flat.reshape(shape)
            return GruLayerWeights(**parts)

        model = GruHeadModel(layer("layer1", l1), layer("layer2", l2),
                             np.asarray(w["dense.w"], dtype=np.float64), doc["dense.b"],
                             doc["dropout1"], doc["dropout2"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ShapeMismatch):
            raise
        raise FormatVersionMismatch(f"{path}: malformed weights document ({exc})") from exc
    if model.layer1.input_dim != doc.get("input_dim") or model.hidden_dim != doc.get("hidden_dim"):
        raise ShapeMismatch(f"{path}: declared dims do not match the stored layers")
    return model

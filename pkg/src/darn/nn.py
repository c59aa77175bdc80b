"""Small fully connected network with hand-written forward/backward passes.

A model is split the usual way for adversarial adaptation: a shared feature
extractor, a label head on top of it, and one domain-classifier head per
source domain. Each part is a ``Stack`` of dense layers with ReLU between
layers. Gradients are plain lists of arrays laid out like
``ModelParams.arrays()``.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DivergenceError, InvalidInputError, StaleCacheError
from .sparse import SparseRows


def relu(x):
    return np.maximum(x, 0.0)


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    def __init__(self, W, b):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise InvalidInputError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def shape(self):
        return self.W.shape

    def matmul(self, x):
        if isinstance(x, SparseRows):
            if x.n_cols != self.W.shape[0]:
                raise InvalidInputError(f"input has {x.n_cols} columns, layer expects {self.W.shape[0]}")
            return _kernels.csr_matmul(x.indptr, x.indices, x.values, self.W) + self.b
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise InvalidInputError(f"input shape {x.shape} does not fit layer {self.W.shape}")
        return x @ self.W + self.b


class Stack:
    """Dense layers with ReLU between them (and after the last one if
    ``final_relu``). Inverted dropout on every layer input in train mode."""

    def __init__(self, layers, final_relu=False, dropout=0.0):
        for a, b in zip(layers, layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise InvalidInputError(f"layer sizes do not chain: {a.shape} -> {b.shape}")
        if not 0.0 <= dropout < 1.0:
            raise InvalidInputError("dropout rate must be in [0, 1)")
        self.layers = list(layers)
        self.final_relu = final_relu
        self.dropout = dropout
        self.version = 0

    @classmethod
    def init(cls, sizes, rng, final_relu=False, dropout=0.0):
        layers = [Dense(glorot_uniform(rng, a, b), np.zeros(b)) for a, b in zip(sizes, sizes[1:])]
        return cls(layers, final_relu=final_relu, dropout=dropout)

    @property
    def sizes(self):
        return [self.layers[0].shape[0]] + [l.shape[1] for l in self.layers]

    def arrays(self):
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def _dropout(self, x, rng):
        keep = 1.0 - self.dropout
        if isinstance(x, SparseRows):
            mask = (rng.random(x.values.shape) < keep) / keep
            return x.with_values(x.values * mask), mask
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def forward(self, x, train=False, rng=None):
        use_dropout = train and self.dropout > 0
        if use_dropout and rng is None:
            raise InvalidInputError("dropout in train mode needs an rng")
        inputs, pre, masks = [], [], []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            mask = None
            if use_dropout:
                h, mask = self._dropout(h, rng)
            inputs.append(h)
            masks.append(mask)
            a = layer.matmul(h)
            pre.append(a)
            h = relu(a) if (i < last or self.final_relu) else a
        cache = {"stack": self, "version": self.version, "inputs": inputs, "pre": pre, "masks": masks}
        return h, cache

    def backward(self, cache, dout, need_dx=True):
        if cache["stack"] is not self or cache["version"] != self.version:
            raise StaleCacheError("cache was built from different or since-updated parameters")
        grads = [None] * (2 * len(self.layers))
        d = np.asarray(dout, dtype=np.float64)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if i < last or self.final_relu:
                d = d * (cache["pre"][i] > 0)
            x = cache["inputs"][i]
            if isinstance(x, SparseRows):
                grads[2 * i] = _kernels.csr_t_matmul(x.indptr, x.indices, x.values, d, x.n_cols)
            else:
                grads[2 * i] = x.T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            if i == 0 and (not need_dx or isinstance(x, SparseRows)):
                return grads, None
            d = d @ self.layers[i].W.T
            if cache["masks"][i] is not None:
                d = d * cache["masks"][i]
        dx = d
        return grads, dx


@dataclass
class ModelParams:
    feature_extractor: Stack
    label_head: Stack
    domain_heads: list = field(default_factory=list)

    def stacks(self):
        return [self.feature_extractor, self.label_head, *self.domain_heads]

    def arrays(self):
        out = []
        for s in self.stacks():
            out += s.arrays()
        return out

    def offsets(self):
        """Start index of each stack's arrays inside ``arrays()``."""
        offs, pos = [], 0
        for s in self.stacks():
            offs.append(pos)
            pos += 2 * len(s.layers)
        return offs

    def bump(self):
        for s in self.stacks():
            s.version += 1

    def zero_grads(self):
        return [np.zeros_like(a) for a in self.arrays()]

    def copy(self):
        def cp(s):
            return Stack([Dense(l.W.copy(), l.b.copy()) for l in s.layers], s.final_relu, s.dropout)

        return ModelParams(cp(self.feature_extractor), cp(self.label_head), [cp(d) for d in self.domain_heads])

    def describe(self):
        return {
            "feature_extractor": self.feature_extractor.sizes,
            "label_head": self.label_head.sizes,
            "domain_heads": [d.sizes for d in self.domain_heads],
            "dropout": self.feature_extractor.dropout,
        }


def init_model(input_dim, feature_sizes, n_outputs, n_domains, domain_hidden=(), label_hidden=(), dropout=0.0, seed=0):
    rng = np.random.default_rng(seed)
    fe = Stack.init([input_dim, *feature_sizes], rng, final_relu=True, dropout=dropout)
    feat = fe.sizes[-1]
    head = Stack.init([feat, *label_hidden, n_outputs], rng, dropout=dropout)
    domain = [Stack.init([feat, *domain_hidden, 1], rng) for _ in range(n_domains)]
    return ModelParams(fe, head, domain)


def forward(params, x, mode="eval", seed=None):
    """Label path ``h_y(h_fea(x))``; returns (output, cache)."""
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    train = mode == "train"
    rng = np.random.default_rng(seed) if train else None
    feats, c_fe = params.feature_extractor.forward(x, train, rng)
    out, c_y = params.label_head.forward(feats, train, rng)
    return out, {"params": params, "fe": c_fe, "y": c_y}


def backward(cache, loss_grad):
    """Gradients of the label path, congruent with ``params.arrays()``
    (domain heads get zeros)."""
    params = cache["params"]
    grads = params.zero_grads()
    offs = params.offsets()
    g_y, dfeat = params.label_head.backward(cache["y"], loss_grad)
    g_fe, _ = params.feature_extractor.backward(cache["fe"], dfeat, need_dx=False)
    grads[offs[1] : offs[1] + len(g_y)] = g_y
    grads[offs[0] : offs[0] + len(g_fe)] = g_fe
    return grads


# -- losses: each returns (mean loss, d loss / d input) ---------------------


def softmax_cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def logistic_loss(logits, targets):
    """Binary cross-entropy on raw logits (targets in {0, 1})."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64).reshape(x.shape)
    n = x.size
    loss = np.maximum(x, 0) - t * x + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float(loss.mean()), (sig - t) / n


def squared_loss(pred, y):
    pred = np.asarray(pred, dtype=np.float64)
    r = pred - np.asarray(y, dtype=np.float64).reshape(pred.shape)
    return float(np.mean(r * r)), 2.0 * r / r.size


# -- gradient reversal --------------------------------------------------------


class GradReversal:
    """Identity forward, negated gradient backward."""

    @staticmethod
    def forward(x):
        return x

    @staticmethod
    def backward(upstream):
        return -upstream


grad_reversal = GradReversal.backward


# -- optimisers ---------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "sgd_momentum"
    lr: float = 0.01
    momentum: float = 0.9
    rho: float = 0.95
    eps: float = 1e-6
    slots: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adadelta"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")


def make_optimizer(kind, arrays, **hyper):
    state = OptimizerState(kind=kind, **hyper)
    if kind == "sgd_momentum":
        state.slots = [np.zeros_like(a) for a in arrays]
    else:
        state.slots = [(np.zeros_like(a), np.zeros_like(a)) for a in arrays]
    return state


def optimizer_step(state, arrays, grads):
    """Update ``arrays`` in place."""
    if len(grads) != len(arrays) or len(state.slots) != len(arrays):
        raise InvalidInputError("optimizer state, parameters and gradients are not congruent")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    if state.kind == "sgd_momentum":
        for p, g, v in zip(arrays, grads, state.slots):
            v *= state.momentum
            v -= state.lr * g
            p += v
    else:
        rho, eps = state.rho, state.eps
        for p, g, (eg2, edx2) in zip(arrays, grads, state.slots):
            eg2 *= rho
            eg2 += (1 - rho) * g * g
            dx = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
            edx2 *= rho
            edx2 += (1 - rho) * dx * dx
            p += state.lr * dx
    return arrays, state


# -- checkpoint ---------------------------------------------------------------
# One JSON header line (UTF-8, LF-terminated), then every parameter array as
# little-endian float64 in ``ModelParams.arrays()`` order.

_MAGIC = "darn-checkpoint-v1"


def save_checkpoint(path, params, seeds=None, optimizer=None):
    arrays = params.arrays()
    header = {
        "format": _MAGIC,
        "layers": params.describe(),
        "seeds": seeds or {},
        "optimizer": optimizer,
        "shapes": [list(a.shape) for a in arrays],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != _MAGIC:
            raise InvalidInputError(f"{path}: not a checkpoint")
        blob = f.read()
    L = header["layers"]
    rng = np.random.default_rng(0)
    params = ModelParams(
        Stack.init(L["feature_extractor"], rng, final_relu=True, dropout=L["dropout"]),
        Stack.init(L["label_head"], rng, dropout=L["dropout"]),
        [Stack.init(s, rng) for s in L["domain_heads"]],
    )
    pos = 0
    for a, shape in zip(params.arrays(), header["shapes"]):
        if list(a.shape) != shape:
            raise InvalidInputError(f"{path}: shape mismatch {a.shape} vs {shape}")
        nbytes = a.size * 8
        if pos + nbytes > len(blob):
            raise InvalidInputError(f"{path}: truncated parameter block")
        a[...] = np.frombuffer(blob, dtype="<f8", count=a.size, offset=pos).reshape(a.shape)
        pos += nbytes
    if pos != len(blob):
        raise InvalidInputError(f"{path}: {len(blob) - pos} trailing bytes")
    return params, header


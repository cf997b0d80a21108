"""Small convolutional binary detector, implemented from first principles.

The stock architecture takes a (31, 20) feature matrix through three
valid 2x2 convolutions interleaved with max pooling, then two dense
layers down to a single sigmoid output. Forward, reverse-mode gradients
and the Adam training loop are hand-rolled in numpy; training is
bit-deterministic given (seed, data, config) since the seed drives both
the He-uniform init and the per-epoch batch shuffles and every reduction
order is fixed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledFeatureSet
from .dsp import FRAMES_PER_BLOCK
from .errors import EmptySet, ShapeMismatch
from .filterbanks import NUM_CEPS

INPUT_SHAPE = (FRAMES_PER_BLOCK, NUM_CEPS)  # (31, 20)

# (kind, args...) rows; changing this without updating the dense width
# trips the static shape check below.
DEFAULT_ARCHITECTURE = (
    ("conv", 1, 64, (2, 2)),
    ("relu",),
    ("maxpool", (1, 3)),
    ("conv", 64, 64, (2, 2)),
    ("relu",),
    ("maxpool", (1, 1)),
    ("conv", 64, 32, (2, 2)),
    ("relu",),
    ("maxpool", (2, 2)),
    ("flatten",),
    ("dense", 896, 128),
    ("relu",),
    ("dense", 128, 1),
    ("sigmoid",),
)

BCE_CLAMP = 1e-7


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("TrainConfig values must be positive")


def architecture_shapes(input_shape=INPUT_SHAPE, architecture=DEFAULT_ARCHITECTURE):
    """Chain of (channels, height, width) after each layer; flatten gives an int."""
    c, h, w = 1, input_shape[0], input_shape[1]
    flat = False
    shapes = []
    for spec in architecture:
        kind = spec[0]
        if kind == "conv":
            _, c_in, c_out, (kh, kw) = spec
            if c_in != c:
                raise ShapeMismatch(f"conv expects {c_in} channels, chain has {c}")
            c, h, w = c_out, h - kh + 1, w - kw + 1
        elif kind == "maxpool":
            (kh, kw) = spec[1]
            h, w = h // kh, w // kw
        elif kind == "flatten":
            c, h, w = c * h * w, 1, 1
            flat = True
        elif kind == "dense":
            _, n_in, n_out = spec
            if n_in != c:
                raise ShapeMismatch(f"dense expects width {n_in}, chain has {c}")
            c = n_out
        elif kind not in ("relu", "sigmoid"):
            raise ValueError(f"unknown layer kind {kind!r}")
        if h < 1 or w < 1 or c < 1:
            raise ShapeMismatch(f"layer {spec} collapses the input to {c}x{h}x{w}")
        shapes.append(c if flat else (c, h, w))
    return shapes


def architecture_hash(architecture=DEFAULT_ARCHITECTURE) -> str:
    blob = json.dumps(architecture, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class Conv2d:
    """Valid 2D convolution (no padding), stride 1.

    Activations are laid out channels-last, (batch, height, width,
    channels), so each kernel offset reduces to one (B*H*W, C) @ (C, O)
    matrix product.
    """

    def __init__(self, in_channels, out_channels, kernel, rng):
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        bound = np.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-bound, bound, size=(kh, kw, in_channels, out_channels))
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def forward(self, x):
        kh, kw, c_in, c_out = self.w.shape
        n, h, w, _ = x.shape
        ho, wo = h - kh + 1, w - kw + 1
        out = np.zeros((n * ho * wo, c_out))
        for di in range(kh):
            for dj in range(kw):
                patch = x[:, di : di + ho, dj : dj + wo, :].reshape(-1, c_in)
                out += patch @ self.w[di, dj]
        out += self.b
        self._x = x
        return out.reshape(n, ho, wo, c_out)

    def backward(self, g):
        x = self._x
        kh, kw, c_in, c_out = self.w.shape
        n, ho, wo, _ = g.shape
        g2 = g.reshape(-1, c_out)
        self.db = g2.sum(axis=0)
        dx = np.zeros_like(x)
        for di in range(kh):
            for dj in range(kw):
                patch = x[:, di : di + ho, dj : dj + wo, :].reshape(-1, c_in)
                self.dw[di, dj] = patch.T @ g2
                dx[:, di : di + ho, dj : dj + wo, :] += (g2 @ self.w[di, dj].T).reshape(
                    n, ho, wo, c_in
                )
        return dx


class MaxPool2d:
    """Max pooling with stride equal to the window; trailing rows/cols
    that do not fill a window are dropped (floor division of sizes).
    Ties go to the first element in row-major window order."""

    def __init__(self, kernel):
        self.kh, self.kw = kernel

    def params(self):
        return []

    def grads(self):
        return []

    def _windows(self, x):
        n, h, w, c = x.shape
        ho, wo = h // self.kh, w // self.kw
        xc = x[:, : ho * self.kh, : wo * self.kw, :]
        win = xc.reshape(n, ho, self.kh, wo, self.kw, c)
        return win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, self.kh * self.kw)

    def forward(self, x):
        win = self._windows(x)
        self._arg = win.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        n, h, w, c = self._in_shape
        ho, wo = h // self.kh, w // self.kw
        onehot = self._arg[..., None] == np.arange(self.kh * self.kw)
        win_grad = onehot * g[..., None]
        dxc = (
            win_grad.reshape(n, ho, wo, c, self.kh, self.kw)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, ho * self.kh, wo * self.kw, c)
        )
        if dxc.shape == self._in_shape:
            return dxc
        dx = np.zeros(self._in_shape)
        dx[:, : ho * self.kh, : wo * self.kw, :] = dxc
        return dx


class ReLU:
    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return np.where(self._mask, g, 0.0)


class Flatten:
    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense:
    def __init__(self, n_in, n_out, rng):
        bound = np.sqrt(6.0 / n_in)
        self.w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, g):
        self.dw = self._x.T @ g
        self.db = g.sum(axis=0)
        return g @ self.w.T


class Sigmoid:
    """Numerically stable sigmoid, clipped into the open interval (0, 1)."""

    _LO = np.nextafter(0.0, 1.0)
    _HI = np.nextafter(1.0, 0.0)

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, z):
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        self._p = np.clip(out, self._LO, self._HI)
        return self._p

    def backward(self, g):
        return g * self._p * (1.0 - self._p)


def bce_loss(p, y):
    """Binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))


def bce_grad(p, y):
    """d(bce)/dp, zero where the clamp is active (the loss is flat there)."""
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    return np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)


class CnnDetector:
    """The stock detector plus its input standardization statistics."""

    def __init__(self, seed: int = 0, rng: np.random.Generator | None = None,
                 architecture=DEFAULT_ARCHITECTURE):
        if rng is None:
            rng = np.random.default_rng(seed)
        self.architecture = architecture
        self.shapes = architecture_shapes(INPUT_SHAPE, architecture)
        self.layers = []
        for spec in architecture:
            kind = spec[0]
            if kind == "conv":
                self.layers.append(Conv2d(spec[1], spec[2], spec[3], rng))
            elif kind == "maxpool":
                self.layers.append(MaxPool2d(spec[1]))
            elif kind == "relu":
                self.layers.append(ReLU())
            elif kind == "flatten":
                self.layers.append(Flatten())
            elif kind == "dense":
                self.layers.append(Dense(spec[1], spec[2], rng))
            elif kind == "sigmoid":
                self.layers.append(Sigmoid())
        self.norm_mean = np.zeros(NUM_CEPS)
        self.norm_std = np.ones(NUM_CEPS)
        self.feature_name = ""
        self.config: TrainConfig | None = None
        self.history: list[dict] = []

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def standardize(self, features) -> np.ndarray:
        """Per-coefficient z-score with training-set statistics."""
        x = np.asarray(features, dtype=np.float64)
        return (x - self.norm_mean) / self.norm_std

    def forward_batch(self, x) -> np.ndarray:
        """Probabilities for a standardized (n, 31, 20) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != INPUT_SHAPE:
            raise ShapeMismatch(f"expected (n, 31, 20) input, got {x.shape}")
        h = x[:, :, :, None]  # single input channel, channels-last
        for layer in self.layers:
            h = layer.forward(h)
        return h.reshape(-1)

    def forward(self, features) -> float:
        """Probability of one standardized (31, 20) feature matrix."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape != INPUT_SHAPE:
            raise ShapeMismatch(f"expected (31, 20) input, got {x.shape}")
        return float(self.forward_batch(x[None])[0])

    def backward(self, x, y) -> tuple[float, list[np.ndarray]]:
        """Mean BCE over a standardized batch and its parameter gradients."""
        y = np.asarray(y, dtype=np.float64)
        p = self.forward_batch(x)
        loss = float(np.mean(bce_loss(p, y)))
        g = (bce_grad(p, y) / p.size).reshape(-1, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return loss, [gr.copy() for gr in self.grads]

    def state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def load_state(self, state) -> None:
        for p, s in zip(self.params, state):
            p[...] = s


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        c = self.cfg
        self.t += 1
        correct1 = 1.0 - c.adam_beta1**self.t
        correct2 = 1.0 - c.adam_beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.adam_beta1
            m += (1.0 - c.adam_beta1) * g
            v *= c.adam_beta2
            v += (1.0 - c.adam_beta2) * np.square(g)
            p -= c.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + c.adam_eps)


def _mean_loss(model: CnnDetector, x, y, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, len(y), batch_size):
        p = model.forward_batch(x[start : start + batch_size])
        total += float(np.sum(bce_loss(p, y[start : start + batch_size])))
    return total / len(y)


def train(train_set: LabeledFeatureSet, val_set: LabeledFeatureSet, cfg: TrainConfig) -> CnnDetector:
    """Fit the detector; returns the weights of the best-validation epoch.

    The config seed drives the He-uniform init and every epoch's batch
    shuffle. Early stopping triggers after `patience` epochs without a
    validation-loss improvement.
    """
    if not len(train_set) or not len(val_set):
        raise EmptySet("train and validation sets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    model = CnnDetector(rng=rng)
    model.config = cfg

    mean = train_set.features.mean(axis=(0, 1))
    std = train_set.features.std(axis=(0, 1))
    model.norm_mean = mean
    model.norm_std = np.where(std > 1e-8, std, 1.0)

    x_train = model.standardize(train_set.features)
    y_train = train_set.labels.astype(np.float64)
    x_val = model.standardize(val_set.features)
    y_val = val_set.labels.astype(np.float64)

    adam = Adam(model.params, cfg)
    best_val = np.inf
    best_state = model.state()
    epochs_since_best = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(y_train))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model.backward(x_train[idx], y_train[idx])
            adam.step(model.params, grads)
            running += loss * len(idx)
        train_loss = running / len(order)
        val_loss = _mean_loss(model, x_val, y_val)
        model.history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.state()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    model.load_state(best_state)
    return model


def predict_scores(model: CnnDetector, feature_set: LabeledFeatureSet) -> list[tuple[float, int]]:
    """Deterministic (score, label) pairs in the set's order."""
    if not len(feature_set):
        return []
    x = model.standardize(feature_set.features)
    scores = []
    for start in range(0, len(feature_set), 256):
        scores.extend(model.forward_batch(x[start : start + 256]).tolist())
    return list(zip(scores, feature_set.labels.tolist()))


# --- checkpoints ---
#
# Binary: magic, header length, JSON header (architecture hash, feature
# name, config, seed, array names/shapes), then the raw little-endian
# float64 arrays: normalization stats first, parameters after.

CHECKPOINT_MAGIC = b"ADCN"


def save_checkpoint(model: CnnDetector, path) -> None:
    arrays = [("norm_mean", model.norm_mean), ("norm_std", model.norm_std)]
    arrays += [(f"param_{i}", p) for i, p in enumerate(model.params)]
    header = {
        "version": 1,
        "architecture_hash": architecture_hash(model.architecture),
        "feature_name": model.feature_name,
        "config": asdict(model.config) if model.config else None,
        "seed": model.config.seed if model.config else None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    history_path = Path(str(path) + ".history.json")
    history_path.write_text(json.dumps(model.history, indent=1))


def load_checkpoint(path) -> CnnDetector:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a detector checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + hlen])
    if header["architecture_hash"] != architecture_hash():
        raise ValueError(f"{path}: architecture hash mismatch")
    model = CnnDetector(seed=0)
    model.feature_name = header["feature_name"]
    if header["config"]:
        model.config = TrainConfig(**header["config"])
    offset = 8 + hlen
    loaded = []
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        loaded.append(arr.copy())
    model.norm_mean, model.norm_std = loaded[0], loaded[1]
    model.load_state(loaded[2:])
    history_path = Path(str(path) + ".history.json")
    if history_path.exists():
        model.history = json.loads(history_path.read_text())
    return model

"""Small feed-forward classifier in numpy, with ReLU or k-winners-take-all units.

The network is the base classifier that every defense wraps and every attack
targets. Everything runs in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from randaudit.rng import StreamSeed, fisher_yates

RELU = "relu"
KWTA = "kwta"

MODEL_MAGIC = b"RANDAUDIT-MODEL"
MODEL_VERSION = 1


class TrainingDiverged(ArithmeticError):
    pass


def kwta_count(gamma: float, m: int) -> int:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    # round away float noise such as 0.1 * 30 = 3.0000000000000004
    return max(1, math.ceil(round(gamma * m, 9)))


def kwta_mask(v: np.ndarray, gamma: float) -> np.ndarray:
    """Boolean mask of the winners along the last axis (lower index wins ties)."""
    v = np.asarray(v, dtype=np.float64)
    m = v.shape[-1]
    k = kwta_count(gamma, m)
    mask = np.zeros(v.shape, dtype=bool)
    if k >= m:
        mask[...] = True
        return mask
    order = np.argsort(-v, axis=-1, kind="stable")[..., :k]
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def kwta_activate(v: np.ndarray, gamma: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(kwta_mask(v, gamma), v, 0.0)


@dataclass
class Network:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]  # weights[i] has shape (layer_dims[i+1], layer_dims[i])
    biases: List[np.ndarray]
    activation: str = RELU
    gamma: float = 0.1

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer dims {self.layer_dims}")
        if self.activation not in (RELU, KWTA):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == KWTA:
            kwta_count(self.gamma, 1)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match layer dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: expected W{shape}, got W{w.shape} b{b.shape}")

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], activation: str = RELU, gamma: float = 0.1):
        dims = tuple(layer_dims)
        ws = [np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)]
        bs = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(dims, ws, bs, activation, gamma)

    @classmethod
    def init(cls, layer_dims: Sequence[int], stream: StreamSeed,
             activation: str = RELU, gamma: float = 0.1) -> "Network":
        """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
        dims = tuple(layer_dims)
        ws, bs = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            w = stream.gaussians(fan_in * fan_out).reshape(fan_out, fan_in) / math.sqrt(fan_in)
            ws.append(w)
            bs.append(np.zeros(fan_out))
        return cls(dims, ws, bs, activation, gamma)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "Network":
        return Network(self.layer_dims, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.activation, self.gamma)

    def params_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)

    def same_params(self, other: "Network") -> bool:
        return (self.layer_dims == other.layer_dims
                and self.activation == other.activation
                and self.gamma == other.gamma
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    def _activate(self, pre: np.ndarray):
        if self.activation == RELU:
            mask = pre > 0
        else:
            mask = kwta_mask(pre, self.gamma)
        return np.where(mask, pre, 0.0), mask

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[-1]}")
        return x

    def _forward_cached(self, x: np.ndarray):
        """Returns logits, hidden-unit masks and the input of every layer."""
        h = x
        masks, inputs = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            pre = h @ w.T + b
            if i == last:
                return pre, masks, inputs
            h, mask = self._activate(pre)
            masks.append(mask)

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Logits for one point ``(D,)`` or a batch ``(m, D)``."""
        x = self._check_input(x)
        single = x.ndim == 1
        out = self._forward_cached(np.atleast_2d(x))[0]
        return out[0] if single else out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Hard labels; lowest class index on tied logits."""
        return np.argmax(self.logits(x), axis=-1)

    def _backward(self, x: np.ndarray, y: np.ndarray, want_params: bool):
        logits, masks, acts = self._forward_cached(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        rows = np.arange(len(y))
        loss = -logp[rows, y]
        delta = np.exp(logp)
        delta[rows, y] -= 1.0

        gws, gbs = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            if want_params:
                gws.append(delta.T @ acts[i])
                gbs.append(delta.sum(axis=0))
            delta = delta @ self.weights[i]
            if i > 0:
                delta = np.where(masks[i - 1], delta, 0.0)
        return loss, delta, gws[::-1], gbs[::-1]

    def loss_and_input_grad(self, x: np.ndarray, y) -> Tuple[np.ndarray, np.ndarray]:
        """Per-row cross-entropy and its gradient with respect to the input."""
        x = self._check_input(x)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        y2 = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(x2),))
        loss, gx, _, _ = self._backward(x2, y2, want_params=False)
        return (loss[0], gx[0]) if single else (loss, gx)

    def input_gradient(self, x: np.ndarray, y) -> np.ndarray:
        return self.loss_and_input_grad(x, y)[1]

    def loss(self, x: np.ndarray, y) -> np.ndarray:
        return self.loss_and_input_grad(x, y)[0]


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    return net.logits(x)


def input_gradient(net: Network, x: np.ndarray, y: int) -> np.ndarray:
    return net.input_gradient(x, y)


# datasets


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) != len(self.labels):
            raise ValueError("points must be (N, D) with one label per row")
        if len(self.points) == 0:
            raise ValueError("dataset is empty")
        if np.any(self.points < 0) or np.any(self.points > 1) or not np.all(np.isfinite(self.points)):
            raise ValueError("dataset points must lie in [0, 1]")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    d: int = 32
    classes: int = 4
    n_per_class: int = 250
    noise: float = 0.1


def gen_dataset(spec: DatasetSpec, seed: StreamSeed, split: str = "train") -> Dataset:
    """Synthetic data in the unit cube.

    ``blobs``: Gaussian clusters around centers drawn from ``seed`` (the same
    centers for every split) and placed in [0.2, 0.8]^d.
    ``rings``: concentric annuli around (0.5, 0.5) in the first two coordinates,
    class c in radius band c; other coordinates uniform within ``noise`` of 0.5.
    """
    if spec.kind not in ("blobs", "rings"):
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    if spec.d < 2 or spec.classes < 2:
        raise ValueError("need d >= 2 and classes >= 2")
    if spec.n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if spec.noise < 0:
        raise ValueError("noise must be nonnegative")
    n = spec.n_per_class * spec.classes
    labels = np.repeat(np.arange(spec.classes), spec.n_per_class)
    draws = seed.child(("split", 0 if split == "train" else 1))
    if spec.kind == "blobs":
        centers = 0.2 + 0.6 * seed.child(("centers", 0)).uniforms(spec.classes * spec.d)
        centers = centers.reshape(spec.classes, spec.d)
        pts = centers[labels] + spec.noise * draws.gaussians(n * spec.d).reshape(n, spec.d)
    else:
        band = 0.45 / spec.classes
        u = draws.uniforms(3 * n).reshape(n, 3)
        # radius stays strictly inside its band; min separation 0.1 * band
        radius = band * (labels + 0.05 + 0.9 * u[:, 0])
        angle = 2.0 * np.pi * u[:, 1]
        pts = np.empty((n, spec.d))
        pts[:, 0] = 0.5 + radius * np.cos(angle)
        pts[:, 1] = 0.5 + radius * np.sin(angle)
        if spec.d > 2:
            rest = draws.uniforms(n * (spec.d - 2)).reshape(n, spec.d - 2)
            pts[:, 2:] = 0.5 + spec.noise * (2.0 * rest - 1.0)
    return Dataset(np.clip(pts, 0.0, 1.0), labels, spec.classes, split)


def load_dataset_csv(path, num_classes: Optional[int] = None, split: str = "train") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if not header or header[0] != "label":
            raise ValueError(f"{path}: header must start with 'label'")
        rows = [r for r in reader if r]
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    points = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != len(header) - 1:
        raise ValueError(f"{path}: ragged rows")
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(points, labels, classes, split)


def save_dataset_csv(data: Dataset, path, comments: Sequence[str] = ()) -> None:
    """Write ``label,f0,...``; optional ``#`` comment lines go first."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write("# " + line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(data.dim)])
        for label, row in zip(data.labels, data.points):
            writer.writerow([int(label)] + [f"{v:.17g}" for v in row])


# training


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    noise_sigma: float = 0.0  # Gaussian augmentation, as for a smoothing base classifier

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"bad training hyperparameters: {self}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class History:
    epoch: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    test_acc: List[Optional[float]] = field(default_factory=list)


def accuracy(net: Network, data: Dataset) -> float:
    return float(np.mean(net.predict(data.points) == data.labels))


def train(net: Network, data: Dataset, hp: TrainParams, seed: StreamSeed,
          test: Optional[Dataset] = None) -> Tuple[Network, History]:
    """Minibatch SGD with momentum on cross-entropy.

    ``net`` supplies the architecture; its parameters are re-initialized from
    ``seed`` so the result depends only on (shape, data, hp, seed).
    """
    if data.dim != net.input_dim:
        raise ValueError(f"data dim {data.dim} != network input dim {net.input_dim}")
    net = Network.init(net.layer_dims, seed.child(("init", 0)), net.activation, net.gamma)
    hist = History()
    if hp.epochs == 0:
        return net, hist
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    n = len(data)
    # divergence is detected below; numpy overflow warnings add nothing
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            order = fisher_yates(seed.child(("shuffle", epoch)), n)
            noise = seed.child(("noise", epoch))
            total = 0.0
            for start in range(0, n, hp.batch_size):
                idx = order[start:start + hp.batch_size]
                xb = data.points[idx]
                if hp.noise_sigma > 0:
                    xb = np.clip(xb + noise.gaussians(xb.size, hp.noise_sigma).reshape(xb.shape), 0.0, 1.0)
                loss, _, gws, gbs = net._backward(xb, data.labels[idx], want_params=True)
                total += float(loss.sum())
                scale = 1.0 / len(idx)
                for i in range(len(net.weights)):
                    vel_w[i] = hp.momentum * vel_w[i] - hp.learning_rate * scale * gws[i]
                    vel_b[i] = hp.momentum * vel_b[i] - hp.learning_rate * scale * gbs[i]
                    net.weights[i] += vel_w[i]
                    net.biases[i] += vel_b[i]
            mean_loss = total / n
            if not math.isfinite(mean_loss) or not net.params_finite():
                raise TrainingDiverged(f"non-finite loss or parameters at epoch {epoch}")
            hist.epoch.append(epoch + 1)
            hist.loss.append(mean_loss)
            hist.train_acc.append(accuracy(net, data))
            hist.test_acc.append(accuracy(net, test) if test is not None else None)
    return net, hist


# model files
#
# Layout: one ASCII line "RANDAUDIT-MODEL <version>\n", one line of compact
# JSON holding the header, then every weight matrix (row-major) followed by its
# bias vector, layer by layer, as little-endian float64.


def model_to_bytes(net: Network, meta: Optional[dict] = None) -> bytes:
    header = {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "gamma": net.gamma,
        "dtype": "<f8",
    }
    if meta is not None:
        header["meta"] = meta
    parts = [MODEL_MAGIC + b" " + str(MODEL_VERSION).encode() + b"\n",
             json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"]
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(blob: bytes) -> Tuple[Network, dict]:
    first, rest = blob.split(b"\n", 1)
    magic, _, version = first.partition(b" ")
    if magic != MODEL_MAGIC:
        raise ValueError("not a model file")
    if int(version) != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version!r}")
    header_line, payload = rest.split(b"\n", 1)
    header = json.loads(header_line)
    dims = header["layer_dims"]
    flat = np.frombuffer(payload, dtype="<f8")
    expected = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    if flat.size != expected:
        raise ValueError(f"model payload has {flat.size} values, expected {expected}")
    ws, bs, pos = [], [], 0
    for i in range(len(dims) - 1):
        size = dims[i] * dims[i + 1]
        ws.append(flat[pos:pos + size].reshape(dims[i + 1], dims[i]).astype(np.float64))
        pos += size
        bs.append(flat[pos:pos + dims[i + 1]].astype(np.float64))
        pos += dims[i + 1]
    net = Network(tuple(dims), ws, bs, header["activation"], header["gamma"])
    return net, header.get("meta", {})


def save_model(net: Network, path, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(model_to_bytes(net, meta))


def load_model(path) -> Network:
    return model_from_bytes(Path(path).read_bytes())[0]

"""Scaled-down residual regression network with reverse-mode gradients.

Architecture: stem conv + max pool, a chain of residual blocks (two 3x3
convolutions each, stride-2 projection shortcut when the channel count
changes), then two fully connected layers. All activations are ReLU; no
batch norm, no dropout. The head emits 3 values per landmark laid out as
(x, y, v) per triplet.

Parameters and momentum buffers live in plain name->array dicts; forward
and backward are pure in the parameters, sgd_step is the only mutation
point.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DataError, NumericError
from .losses import LossConfig, batch_loss_and_grad

CHECKPOINT_MAGIC = b"VMNET\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    landmark_count: int = 5
    input_size: int = 32
    stem_channels: int = 8
    block_channels: tuple[int, ...] = (8, 16, 32)
    fc_hidden: int = 64
    stem_kernel: int = 5

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        if self.landmark_count < 1:
            raise DataError("landmark_count must be >= 1")
        widths = (self.stem_channels, self.fc_hidden, *self.block_channels)
        if any(w < 1 for w in widths):
            raise DataError("all layer widths must be >= 1")
        if self.input_size < 8:
            raise DataError("input_size must be >= 8")
        if self.stem_kernel % 2 != 1:
            raise DataError("stem_kernel must be odd")

    @property
    def output_count(self) -> int:
        return 3 * self.landmark_count


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 10
    schedule: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "schedule",
                           tuple((int(e), float(lr)) for e, lr in self.schedule))
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


class _Conv:
    def __init__(self, name: str, in_ch: int, out_ch: int, k: int, stride: int, pad: int):
        self.name = name
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad

    def shapes(self):
        return {f"{self.name}.w": (self.out_ch, self.in_ch, self.k, self.k),
                f"{self.name}.b": (self.out_ch,)}

    def init(self, params, rng):
        fan_in = self.in_ch * self.k * self.k
        params[f"{self.name}.w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=(self.out_ch, self.in_ch, self.k, self.k))
        params[f"{self.name}.b"] = np.zeros(self.out_ch)

    def forward(self, params, x):
        y = kernels.conv2d_forward(x, params[f"{self.name}.w"],
                                   params[f"{self.name}.b"], self.stride, self.pad)
        return y, x

    def backward(self, params, cache, dy, grads):
        dx, dw, db = kernels.conv2d_backward(cache, params[f"{self.name}.w"],
                                             dy, self.stride, self.pad)
        grads[f"{self.name}.w"] += dw
        grads[f"{self.name}.b"] += db
        return dx


class _Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int):
        self.name, self.in_dim, self.out_dim = name, in_dim, out_dim

    def shapes(self):
        return {f"{self.name}.w": (self.out_dim, self.in_dim),
                f"{self.name}.b": (self.out_dim,)}

    def init(self, params, rng):
        params[f"{self.name}.w"] = rng.normal(
            0.0, np.sqrt(2.0 / self.in_dim), size=(self.out_dim, self.in_dim))
        params[f"{self.name}.b"] = np.zeros(self.out_dim)

    def forward(self, params, x):
        return x @ params[f"{self.name}.w"].T + params[f"{self.name}.b"], x

    def backward(self, params, cache, dy, grads):
        grads[f"{self.name}.w"] += dy.T @ cache
        grads[f"{self.name}.b"] += dy.sum(axis=0)
        return dy @ params[f"{self.name}.w"]


class _ResBlock:
    """conv3x3 -> relu -> conv3x3, added to a shortcut, then relu.

    Changing the channel count switches the first convolution to stride 2
    and the shortcut to a 1x1 stride-2 projection; otherwise the shortcut
    is the identity.
    """

    def __init__(self, name: str, in_ch: int, out_ch: int):
        self.name = name
        stride = 2 if out_ch != in_ch else 1
        self.stride = stride
        self.conv1 = _Conv(f"{name}.conv1", in_ch, out_ch, 3, stride, 1)
        self.conv2 = _Conv(f"{name}.conv2", out_ch, out_ch, 3, 1, 1)
        self.proj = _Conv(f"{name}.proj", in_ch, out_ch, 1, stride, 0) if stride != 1 else None

    def convs(self):
        out = [self.conv1, self.conv2]
        if self.proj is not None:
            out.append(self.proj)
        return out

    def shapes(self):
        merged = {}
        for conv in self.convs():
            merged.update(conv.shapes())
        return merged

    def init(self, params, rng):
        for conv in self.convs():
            conv.init(params, rng)

    def forward(self, params, x):
        a1, c1 = self.conv1.forward(params, x)
        r1 = np.maximum(a1, 0.0)
        a2, c2 = self.conv2.forward(params, r1)
        if self.proj is not None:
            short, cp = self.proj.forward(params, x)
        else:
            short, cp = x, None
        z = a2 + short
        y = np.maximum(z, 0.0)
        return y, (c1, a1, c2, cp, z)

    def backward(self, params, cache, dy, grads):
        c1, a1, c2, cp, z = cache
        dz = dy * (z > 0.0)
        dr1 = self.conv2.backward(params, c2, dz, grads)
        da1 = dr1 * (a1 > 0.0)
        dx = self.conv1.backward(params, c1, da1, grads)
        if self.proj is not None:
            dx = dx + self.proj.backward(params, cp, dz, grads)
        else:
            dx = dx + dz
        return dx


class MicroNet:
    def __init__(self, cfg: NetConfig, params: dict[str, np.ndarray] | None = None,
                 momentum: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.stem = _Conv("stem", 1, cfg.stem_channels,
                          cfg.stem_kernel, 1, cfg.stem_kernel // 2)
        size = cfg.input_size           # stem is same-padded
        size = size // 2                # 2x2 max pool
        self.blocks = []
        in_ch = cfg.stem_channels
        for i, out_ch in enumerate(cfg.block_channels):
            block = _ResBlock(f"block{i}", in_ch, out_ch)
            self.blocks.append(block)
            if block.stride == 2:
                size = _conv_out(size, 3, 2, 1)
            in_ch = out_ch
        if size < 1:
            raise DataError("input_size too small for this block chain")
        self.feature_dim = in_ch * size * size
        self.feature_side = size
        self.fc1 = _Dense("fc1", self.feature_dim, cfg.fc_hidden)
        self.fc2 = _Dense("fc2", cfg.fc_hidden, cfg.output_count)

        self.param_shapes: dict[str, tuple[int, ...]] = {}
        for layer in [self.stem, *self.blocks, self.fc1, self.fc2]:
            self.param_shapes.update(layer.shapes())

        if params is None:
            params = {}
        if momentum is None:
            momentum = {name: np.zeros(shape) for name, shape in self.param_shapes.items()}
        self.params = params
        self.momentum = momentum

    # --- lifecycle -----------------------------------------------------

    @classmethod
    def init(cls, cfg: NetConfig, seed: int) -> "MicroNet":
        net = cls(cfg)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        for layer in [net.stem, *net.blocks, net.fc1, net.fc2]:
            layer.init(net.params, rng)
        net._check_state()
        return net

    def _check_state(self):
        for name, shape in self.param_shapes.items():
            if name not in self.params or self.params[name].shape != tuple(shape):
                raise DataError(f"parameter {name} missing or mis-shaped")
            if not np.isfinite(self.params[name]).all():
                raise NumericError(f"parameter {name} contains non-finite values")

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros(shape) for name, shape in self.param_shapes.items()}

    # --- forward / backward ---------------------------------------------

    def _prep(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.cfg.input_size or x.shape[2] != self.cfg.input_size:
            raise DataError(f"expected (N, {self.cfg.input_size}, {self.cfg.input_size}) "
                            f"images, got {x.shape}")
        return x[:, None, :, :]

    def _forward_cache(self, images: np.ndarray):
        x = self._prep(images)
        caches = []
        a, c = self.stem.forward(self.params, x)
        caches.append(c)
        r = np.maximum(a, 0.0)
        caches.append(a)
        p, arg = kernels.maxpool2_forward(r)
        caches.append((arg, r.shape[2], r.shape[3]))
        h = p
        for block in self.blocks:
            h, c = block.forward(self.params, h)
            caches.append(c)
        flat_shape = h.shape
        flat = h.reshape(h.shape[0], -1)
        f1, c1 = self.fc1.forward(self.params, flat)
        caches.append((c1, flat_shape))
        r1 = np.maximum(f1, 0.0)
        caches.append(f1)
        out, c2 = self.fc2.forward(self.params, r1)
        caches.append(c2)
        if not np.isfinite(out).all():
            raise NumericError("non-finite network output (corrupt state?)")
        return out, caches

    def forward(self, images: np.ndarray) -> np.ndarray:
        """Batch of images in [0, 1] -> (N, 3*L) outputs, triplet layout."""
        out, _ = self._forward_cache(images)
        return out

    def predict_triplets(self, images: np.ndarray) -> np.ndarray:
        """(N, L, 3) view of forward()."""
        out = self.forward(images)
        return out.reshape(out.shape[0], self.cfg.landmark_count, 3)

    def _backward(self, caches, dout: np.ndarray) -> dict[str, np.ndarray]:
        grads = self.zero_grads()
        c2 = caches.pop()
        d = self.fc2.backward(self.params, c2, dout, grads)
        f1 = caches.pop()
        d = d * (f1 > 0.0)
        c1, flat_shape = caches.pop()
        d = self.fc1.backward(self.params, c1, d, grads)
        d = d.reshape(flat_shape)
        for block in reversed(self.blocks):
            d = block.backward(self.params, caches.pop(), d, grads)
        arg, ph, pw = caches.pop()
        d = kernels.maxpool2_backward(d, arg, ph, pw)
        a = caches.pop()
        d = d * (a > 0.0)
        self.stem.backward(self.params, caches.pop(), d, grads)
        return grads

    def loss_and_gradients(self, images: np.ndarray, gt: np.ndarray, loss_cfg: LossConfig):
        """Returns (batch loss, per-sample losses, parameter gradients)."""
        out, caches = self._forward_cache(images)
        n = out.shape[0]
        pred = out.reshape(n, self.cfg.landmark_count, 3)
        loss, per_sample, dpred = batch_loss_and_grad(pred, gt, loss_cfg)
        grads = self._backward(caches, dpred.reshape(n, -1))
        return loss, per_sample, grads


def sgd_step(net: MicroNet, grads: dict[str, np.ndarray], optim: OptimConfig,
             lr: float | None = None) -> None:
    """Momentum SGD with weight decay folded into the gradient:
    g = grad + wd*w; buf = m*buf + g; w -= lr*buf. Mutates net in place."""
    step = optim.learning_rate if lr is None else lr
    for name, p in net.params.items():
        g = grads[name] + optim.weight_decay * p
        buf = net.momentum[name]
        buf *= optim.momentum
        buf += g
        p -= step * buf


# --- checkpoints -------------------------------------------------------------

def _write_tensor(fh, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, count: int, path) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise DataError(f"{path}: truncated checkpoint")
    return blob


def _read_tensor(fh, path):
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
    name = _read_exact(fh, name_len, path).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4, path))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4, path))[0] for _ in range(ndim))
    size = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(fh, 8 * size, path), dtype="<f8").reshape(shape)
    return name, arr.astype(np.float64)


def save_checkpoint(net: MicroNet, path) -> None:
    cfg = net.cfg
    config_blob = json.dumps({
        "landmark_count": cfg.landmark_count,
        "input_size": cfg.input_size,
        "stem_channels": cfg.stem_channels,
        "block_channels": list(cfg.block_channels),
        "fc_hidden": cfg.fc_hidden,
        "stem_kernel": cfg.stem_kernel,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        names = list(net.param_shapes)
        fh.write(struct.pack("<I", 2 * len(names)))
        for name in names:
            _write_tensor(fh, name, net.params[name])
        for name in names:
            _write_tensor(fh, "mom." + name, net.momentum[name])


def load_checkpoint(path) -> MicroNet:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a validmark checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
        cfg_dict = json.loads(_read_exact(fh, cfg_len, path).decode("utf-8"))
        cfg_dict["block_channels"] = tuple(cfg_dict["block_channels"])
        cfg = NetConfig(**cfg_dict)
        net = MicroNet(cfg)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
        for _ in range(count):
            name, arr = _read_tensor(fh, path)
            target = net.momentum if name.startswith("mom.") else net.params
            key = name[4:] if name.startswith("mom.") else name
            if key not in net.param_shapes:
                raise DataError(f"{path}: unexpected tensor {name!r}")
            if arr.shape != tuple(net.param_shapes[key]):
                raise DataError(f"{path}: tensor {name!r} has shape {arr.shape}, "
                                f"expected {net.param_shapes[key]}")
            target[key] = arr
    net._check_state()
    return net

"""Shallow 1-D convolutional classifier and the loss terms both phases use.

Three strided conv+relu blocks pool into a 64-dim feature vector z (the
"semantic" representation the distance penalty acts on), followed by an
affine head.  Weights live as plain numpy arrays on the model; a forward
pass lifts them onto the active tape on demand, so the same model object
serves gradient steps, frozen adversarial generation, and inference.
"""

from __future__ import annotations

import struct

import numpy as np

from .signal import TimeSeries
from .tensor import (
    Tensor,
    op_conv1d,
    op_exp,
    op_gather,
    op_log,
    op_matmul,
    op_max_reduce,
    op_mul,
    op_relu,
    op_reshape,
    op_sub,
    op_sum,
)

__all__ = [
    "Classifier",
    "forward",
    "softmax",
    "loss_ce",
    "entropy",
    "semantic_distance",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"TADA1"
CHECKPOINT_VERSION = 1

FEATURE_DIM = 64
_CONV_CHANNELS = (16, 32, FEATURE_DIM)
_KERNEL_WIDTH = 5
_STRIDE = 2


class Classifier:
    """conv(C->16)-relu-conv(16->32)-relu-conv(32->64)-relu-GAP-affine.

    All convs use width 5, stride 2, same-style padding.  Construction is
    deterministic in (in_channels, n_classes, seed).
    """

    def __init__(self, in_channels: int, n_classes: int, seed: int = 0):
        if in_channels < 1 or n_classes < 2:
            raise ValueError(f"need in_channels >= 1 and n_classes >= 2, "
                             f"got {in_channels}, {n_classes}")
        self.in_channels = int(in_channels)
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weights: dict[str, np.ndarray] = {}
        prev = self.in_channels
        for idx, ch in enumerate(_CONV_CHANNELS, start=1):
            fan_in = prev * _KERNEL_WIDTH
            bound = np.sqrt(6.0 / fan_in)
            self.weights[f"conv{idx}.k"] = rng.uniform(-bound, bound, size=(ch, prev, _KERNEL_WIDTH))
            self.weights[f"conv{idx}.b"] = np.zeros(ch)
            prev = ch
        head_bound = np.sqrt(6.0 / FEATURE_DIM)
        self.weights["head.w"] = rng.uniform(-head_bound, head_bound,
                                             size=(self.n_classes, FEATURE_DIM))
        self.weights["head.b"] = np.zeros(self.n_classes)

    @property
    def param_names(self) -> list[str]:
        return list(self.weights.keys())

    def num_params(self) -> int:
        return sum(w.size for w in self.weights.values())

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Lift current weights to tensors (one fresh Tensor per array)."""
        return {name: Tensor(w, requires_grad=requires_grad)
                for name, w in self.weights.items()}

    def frozen_copy(self) -> "Classifier":
        clone = Classifier(self.in_channels, self.n_classes, self.seed)
        clone.weights = {name: w.copy() for name, w in self.weights.items()}
        return clone

    def apply_gradients(self, params: dict[str, Tensor], lr: float) -> None:
        """SGD step theta <- theta - lr * grad over the lifted tensors."""
        for name, tensor in params.items():
            if tensor.grad is not None:
                self.weights[name] = self.weights[name] - lr * tensor.grad


def forward(model: Classifier, x, params: dict[str, Tensor] | None = None):
    """Run the network; returns (z: Tensor[64], logits: Tensor[n_classes]).

    ``params`` substitutes lifted weight tensors (how training gets weight
    gradients); omitted, weights enter as constants and only the input
    stays differentiable.
    """
    values = x.values if isinstance(x, TimeSeries) else x
    if not isinstance(values, Tensor):
        values = Tensor(np.asarray(values, dtype=np.float64))
    if values.data.ndim != 2 or values.data.shape[0] != model.in_channels:
        raise ValueError(f"input shape {values.data.shape} does not match "
                         f"{model.in_channels} input channels")
    if params is None:
        params = model.tensors(requires_grad=False)

    h = values
    for idx in range(1, len(_CONV_CHANNELS) + 1):
        h = op_relu(op_conv1d(h, params[f"conv{idx}.k"], stride=_STRIDE,
                              bias=params[f"conv{idx}.b"]))
    t = h.data.shape[1]
    pool = Tensor(np.full((t, 1), 1.0 / t))
    z = op_reshape(op_matmul(h, pool), (FEATURE_DIM,))
    logits = op_reshape(op_matmul(params["head.w"], op_reshape(z, (FEATURE_DIM, 1))),
                        (model.n_classes,)) + params["head.b"]
    return z, logits


def softmax(logits: Tensor) -> Tensor:
    """Max-shifted softmax; stays finite for any logit magnitude."""
    shifted = op_sub(logits, op_max_reduce(logits))
    e = op_exp(shifted)
    return e / op_sum(e)


def loss_ce(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy -log softmax(logits)[label], computed in log space."""
    n = logits.data.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    shifted = op_sub(logits, op_max_reduce(logits))
    log_norm = op_log(op_sum(op_exp(shifted)))
    return op_sub(log_norm, op_gather(shifted, np.asarray(label)))


def entropy(logits: Tensor) -> Tensor:
    """Predictive entropy H = -sum_k p_k log p_k of softmax(logits)."""
    shifted = op_sub(logits, op_max_reduce(logits))
    e = op_exp(shifted)
    norm = op_sum(e)
    # H = log Z - sum p * shifted, avoiding log of near-zero probabilities
    return op_sub(op_log(norm), op_sum(op_mul(e / norm, shifted)))


def semantic_distance(z_a: Tensor, z_b: Tensor) -> Tensor:
    """Squared Euclidean distance between two feature vectors."""
    if z_a.data.shape != z_b.data.shape:
        raise ValueError(f"feature dims differ: {z_a.data.shape} vs {z_b.data.shape}")
    diff = op_sub(z_a, z_b)
    return op_sum(op_mul(diff, diff))


def save_checkpoint(model: Classifier, path) -> None:
    """Write magic, version, architecture ints, then every weight array as
    (name, shape, little-endian float64 payload) in a fixed order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIq", CHECKPOINT_VERSION, model.in_channels,
                             model.n_classes, model.seed))
        fh.write(struct.pack("<I", len(model.weights)))
        for name, arr in model.weights.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    version, in_channels, n_classes, seed = struct.unpack_from("<IIIq", blob, offset)
    offset += struct.calcsize("<IIIq")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    model = Classifier(in_channels, n_classes, seed)
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        n_bytes = 8 * int(np.prod(shape)) if ndim else 8
        arr = np.frombuffer(blob[offset:offset + n_bytes], dtype="<f8").reshape(shape)
        offset += n_bytes
        loaded[name] = np.ascontiguousarray(arr, dtype=np.float64)
    if set(loaded) != set(model.weights):
        raise ValueError(f"{path}: checkpoint layers {sorted(loaded)} do not match "
                         f"architecture layers {sorted(model.weights)}")
    for name, arr in loaded.items():
        if arr.shape != model.weights[name].shape:
            raise ValueError(f"{path}: layer {name} has shape {arr.shape}, "
                             f"expected {model.weights[name].shape}")
    model.weights = loaded
    return model

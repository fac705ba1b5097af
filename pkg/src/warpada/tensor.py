"""Dense float64 tensors with reverse-mode differentiation on a dynamic tape.

Every operation here computes its result eagerly with numpy and, when a tape
is active and an input wants gradients, appends a node holding the backward
rule.  The tape is rebuilt on every forward pass (define-by-run), so graph
topology may depend on runtime shapes.  A tape and the tensors recorded on it
belong to one thread; separate threads use separate tapes.

Elementwise binary ops require equal shapes or a rank-0 operand; there is no
general broadcasting.  All data is float64.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "active_tape",
    "set_checked",
    "checked",
    "op_add",
    "op_sub",
    "op_mul",
    "op_div",
    "op_matmul",
    "op_conv1d",
    "op_relu",
    "op_cos",
    "op_sin",
    "op_exp",
    "op_log",
    "op_abs",
    "op_sum",
    "op_mean",
    "op_min_reduce",
    "op_max_reduce",
    "op_cumsum",
    "op_gather",
    "op_concat",
    "op_reshape",
    "finite_diff_check",
]

_tls = threading.local()

# Checked mode validates tensor contents (finiteness, div-by-zero, log domain)
# at construction / op time.  Global, not per-tape; toggling it mid-run from
# another thread is not supported.
_checked = True


def set_checked(flag: bool) -> bool:
    """Enable or disable checked mode; returns the previous setting."""
    global _checked
    previous = _checked
    _checked = bool(flag)
    return previous


def checked() -> bool:
    return _checked


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A contiguous float64 array plus gradient bookkeeping.

    ``grad`` is populated by ``Tape.backward`` for tensors with
    ``requires_grad``; it is overwritten (never accumulated) across separate
    backward calls.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if _checked and arr.size and not np.isfinite(arr).all():
            raise ValueError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detached(self) -> "Tensor":
        """A copy that shares no history and takes no gradients."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; scalars are lifted to constant rank-0 tensors.
    def __add__(self, other):
        return op_add(self, other)

    def __radd__(self, other):
        return op_add(other, self)

    def __sub__(self, other):
        return op_sub(self, other)

    def __rsub__(self, other):
        return op_sub(other, self)

    def __mul__(self, other):
        return op_mul(self, other)

    def __rmul__(self, other):
        return op_mul(other, self)

    def __truediv__(self, other):
        return op_div(self, other)

    def __rtruediv__(self, other):
        return op_div(other, self)

    def __neg__(self):
        return op_mul(self, -1.0)

    def __matmul__(self, other):
        return op_matmul(self, other)


class TapeNode:
    """One recorded operation: the output tensor and, per differentiable
    input, a rule mapping the output gradient to that input's contribution."""

    __slots__ = ("out", "rules")

    def __init__(self, out: Tensor, rules: list[tuple[Tensor, Callable[[np.ndarray], np.ndarray]]]):
        self.out = out
        self.rules = rules


class Tape:
    """Append-only record of operations, in execution (= topological) order.

    Use as a context manager around a forward pass, then call ``backward``
    on the scalar result.  Ops executed while no tape is active record
    nothing, which is the cheap path for inference.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate gradients of ``root`` with respect to every tensor on
        the tape.

        Visits nodes exactly once, in reverse recording order.  Returns a map
        from tensor to gradient array and also stores each requires_grad
        tensor's gradient on ``tensor.grad``.  Buffers are freshly allocated,
        so repeating an identical forward+backward reproduces gradients
        bitwise.
        """
        if root.data.shape != ():
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        if not self.nodes:
            raise ValueError("backward on an empty tape")
        grads: dict[Tensor, np.ndarray] = {root: np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            out_grad = grads.get(node.out)
            if out_grad is None:
                continue
            for tensor, rule in node.rules:
                contribution = rule(out_grad)
                existing = grads.get(tensor)
                if existing is None:
                    grads[tensor] = contribution
                else:
                    grads[tensor] = existing + contribution
        for tensor, grad in grads.items():
            if tensor.requires_grad:
                tensor.grad = grad
        return grads


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _record(out: Tensor, rules: list[tuple[Tensor, Callable[[np.ndarray], np.ndarray]]]) -> Tensor:
    if rules:
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(TapeNode(out, rules))
    return out


def _binary_shapes(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ValueError(f"{name}: shape mismatch {a.data.shape} vs {b.data.shape} "
                         "(shapes must match, or one operand must be a scalar)")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo rank-0 broadcasting: a scalar operand receives the summed gradient.
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=np.float64)


def op_add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("add", a, b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)
    rules = []
    if a.requires_grad:
        rules.append((a, lambda g, s=a.data.shape: _reduce_to(g, s)))
    if b.requires_grad:
        rules.append((b, lambda g, s=b.data.shape: _reduce_to(g, s)))
    return _record(out, rules)


def op_sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("sub", a, b)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)
    rules = []
    if a.requires_grad:
        rules.append((a, lambda g, s=a.data.shape: _reduce_to(g, s)))
    if b.requires_grad:
        rules.append((b, lambda g, s=b.data.shape: _reduce_to(-g, s)))
    return _record(out, rules)


def op_mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("mul", a, b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)
    rules = []
    if a.requires_grad:
        rules.append((a, lambda g, other=b.data, s=a.data.shape: _reduce_to(g * other, s)))
    if b.requires_grad:
        rules.append((b, lambda g, other=a.data, s=b.data.shape: _reduce_to(g * other, s)))
    return _record(out, rules)


def op_div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("div", a, b)
    if _checked and np.any(b.data == 0.0):
        raise ValueError("div: divisor contains zero")
    out = Tensor(a.data / b.data, requires_grad=a.requires_grad or b.requires_grad)
    rules = []
    if a.requires_grad:
        rules.append((a, lambda g, den=b.data, s=a.data.shape: _reduce_to(g / den, s)))
    if b.requires_grad:
        rules.append((b, lambda g, num=a.data, den=b.data, s=b.data.shape:
                      _reduce_to(-g * num / (den * den), s)))
    return _record(out, rules)


def op_matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: operands must be rank-2, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree, {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)
    rules = []
    if a.requires_grad:
        rules.append((a, lambda g, bt=b.data: g @ bt.T))
    if b.requires_grad:
        rules.append((b, lambda g, at=a.data: at.T @ g))
    return _record(out, rules)


def op_conv1d(x, kernels, stride: int = 1, pad: int | None = None, bias=None) -> Tensor:
    """1-D cross-correlation of (C_in, N) with kernels (C_out, C_in, W).

    ``pad=None`` applies (W-1)//2 zeros each side ("same" length at stride 1).
    ``bias`` is an optional (C_out,) tensor added per output channel.
    """
    x, kernels = _lift(x), _lift(kernels)
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ValueError(f"conv1d: expected (C_in, N) input and (C_out, C_in, W) kernels, "
                         f"got {x.data.shape} and {kernels.data.shape}")
    c_in, n = x.data.shape
    c_out, kc_in, width = kernels.data.shape
    if kc_in != c_in:
        raise ValueError(f"conv1d: kernel expects {kc_in} input channels, input has {c_in}")
    if stride < 1:
        raise ValueError(f"conv1d: stride must be positive, got {stride}")
    if pad is None:
        pad = (width - 1) // 2
    if width > n + 2 * pad:
        raise ValueError(f"conv1d: kernel width {width} exceeds padded length {n + 2 * pad}")

    xp = np.pad(x.data, ((0, 0), (pad, pad))) if pad else x.data
    n_out = (n + 2 * pad - width) // stride + 1
    # im2col: cols[ci*W + w, t] = xp[ci, t*stride + w]
    gather_idx = (np.arange(n_out) * stride)[None, :] + np.arange(width)[:, None]
    cols = xp[:, gather_idx].reshape(c_in * width, n_out)
    kmat = kernels.data.reshape(c_out, c_in * width)
    out_data = kmat @ cols

    bias_t = None
    if bias is not None:
        bias_t = _lift(bias)
        if bias_t.data.shape != (c_out,):
            raise ValueError(f"conv1d: bias shape {bias_t.data.shape} != ({c_out},)")
        out_data = out_data + bias_t.data[:, None]

    requires = x.requires_grad or kernels.requires_grad or (bias_t is not None and bias_t.requires_grad)
    out = Tensor(out_data, requires_grad=requires)
    rules = []
    if kernels.requires_grad:
        rules.append((kernels, lambda g, c=cols, sh=kernels.data.shape: (g @ c.T).reshape(sh)))
    if x.requires_grad:
        def _dx(g, km=kmat, idx=gather_idx, ci=c_in, w=width, npad=pad, nlen=n):
            dcols = (km.T @ g).reshape(ci, w, -1)
            dxp = np.zeros((ci, nlen + 2 * npad))
            np.add.at(dxp, (slice(None), idx), dcols)
            return dxp[:, npad:npad + nlen] if npad else dxp
        rules.append((x, _dx))
    if bias_t is not None and bias_t.requires_grad:
        rules.append((bias_t, lambda g: g.sum(axis=1)))
    return _record(out, rules)


def op_relu(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.maximum(x.data, 0.0), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        # subgradient 0 at exactly 0
        rules.append((x, lambda g, mask=(x.data > 0.0): g * mask))
    return _record(out, rules)


def op_cos(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.cos(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, d=-np.sin(x.data): g * d))
    return _record(out, rules)


def op_sin(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.sin(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, d=np.cos(x.data): g * d))
    return _record(out, rules)


def op_exp(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.exp(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, d=out.data: g * d))
    return _record(out, rules)


def op_log(x) -> Tensor:
    x = _lift(x)
    if _checked and np.any(x.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, d=x.data: g / d))
    return _record(out, rules)


def op_abs(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.abs(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        # subgradient 0 at exactly 0
        rules.append((x, lambda g, s=np.sign(x.data): g * s))
    return _record(out, rules)


def op_sum(x) -> Tensor:
    x = _lift(x)
    out = Tensor(x.data.sum(), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, sh=x.data.shape: np.full(sh, float(g))))
    return _record(out, rules)


def op_mean(x) -> Tensor:
    x = _lift(x)
    if x.data.size == 0:
        raise ValueError("mean of empty tensor")
    out = Tensor(x.data.mean(), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, sh=x.data.shape, n=x.data.size: np.full(sh, float(g) / n)))
    return _record(out, rules)


def _extremum(x, pick) -> Tensor:
    x = _lift(x)
    if x.data.size == 0:
        raise ValueError("extremum of empty tensor")
    flat_index = int(pick(x.data))  # first attaining index, row-major
    out = Tensor(x.data.flat[flat_index], requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        def _route(g, sh=x.data.shape, i=flat_index):
            grad = np.zeros(sh)
            grad.flat[i] = float(g)
            return grad
        rules.append((x, _route))
    return _record(out, rules)


def op_min_reduce(x) -> Tensor:
    """Minimum over all elements; gradient routes to the first attaining index."""
    return _extremum(x, np.argmin)


def op_max_reduce(x) -> Tensor:
    """Maximum over all elements; gradient routes to the first attaining index."""
    return _extremum(x, np.argmax)


def op_cumsum(x) -> Tensor:
    x = _lift(x)
    if x.data.ndim != 1:
        raise ValueError(f"cumsum: expected rank-1 tensor, got shape {x.data.shape}")
    if x.data.size == 0:
        raise ValueError("cumsum of empty tensor")
    out = Tensor(np.cumsum(x.data), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g: np.cumsum(g[::-1])[::-1]))
    return _record(out, rules)


def op_gather(x, indices) -> Tensor:
    """Index a rank-1 tensor with an integer array; output takes the index shape.

    Backward scatter-adds, so repeated indices accumulate.
    """
    x = _lift(x)
    if x.data.ndim != 1:
        raise ValueError(f"gather: expected rank-1 source, got shape {x.data.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"gather: indices must be integers, got dtype {idx.dtype}")
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"gather: index out of range for length {n}")
    out = Tensor(x.data[idx], requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        def _scatter(g, i=idx, m=n):
            grad = np.zeros(m)
            np.add.at(grad, i, g)
            return grad
        rules.append((x, _scatter))
    return _record(out, rules)


def op_concat(parts: Sequence) -> Tensor:
    """Concatenate rank-1 tensors."""
    tensors = [_lift(p) for p in parts]
    if not tensors:
        raise ValueError("concat of no tensors")
    for t in tensors:
        if t.data.ndim != 1:
            raise ValueError(f"concat: expected rank-1 parts, got shape {t.data.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors]),
                 requires_grad=any(t.requires_grad for t in tensors))
    rules = []
    offset = 0
    for t in tensors:
        if t.requires_grad:
            rules.append((t, lambda g, lo=offset, hi=offset + t.data.size: g[lo:hi]))
        offset += t.data.size
    return _record(out, rules)


def op_reshape(x, shape: tuple[int, ...] | list[int]) -> Tensor:
    x = _lift(x)
    shape = tuple(int(s) for s in shape)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)
    rules = []
    if x.requires_grad:
        rules.append((x, lambda g, sh=x.data.shape: g.reshape(sh)))
    return _record(out, rules)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and a
    central finite difference with step ``h``.

    The relative error per coordinate is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).  ``f`` must map a tensor to a scalar
    tensor and be evaluable at every probed point.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        grads = tape.backward(y)
    analytic = grads.get(probe)
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(probe.data.shape)

    numeric = np.zeros_like(probe.data)
    flat_numeric = numeric.ravel()
    for i in range(probe.data.size):
        forward = probe.data.copy()
        forward.flat[i] += h
        backward = probe.data.copy()
        backward.flat[i] -= h
        f_plus = float(f(Tensor(forward)).data)
        f_minus = float(f(Tensor(backward)).data)
        flat_numeric[i] = (f_plus - f_minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))

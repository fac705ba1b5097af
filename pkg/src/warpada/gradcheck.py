"""Finite-difference audit of every gradient path the trainer relies on.

Each item builds a scalar function of one probe tensor, takes its tape
gradient once, and compares against central differences at up to a fixed
number of probe coordinates.  Ops are looked up through their defining
module at call time, so a test can swap one out (the sign-flip fixture)
and watch the corresponding row fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as _model
from . import signal as _signal
from . import tensor as _tensor
from . import warp as _warp
from .model import Classifier
from .signal import TimeSeries
from .tensor import Tape, Tensor

__all__ = ["CheckResult", "run_checks", "format_table",
           "THRESHOLD", "STEP", "POINTS"]

THRESHOLD = 1e-4
STEP = 1e-5
POINTS = 20


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_err: float
    threshold: float = THRESHOLD

    @property
    def ok(self) -> bool:
        return self.rel_err < self.threshold


def _max_rel_err(f: Callable[[Tensor], Tensor], x0: np.ndarray,
                 h: float, points: int, rng: np.random.Generator) -> float:
    """Worst |analytic - central difference| / max(|a|, |n|, 1e-8) over a
    sample of coordinates (all of them when the input is small)."""
    probe = Tensor(np.array(x0, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        grads = tape.backward(y)
    analytic = grads.get(probe)
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(probe.data.shape)

    size = probe.data.size
    if points >= size:
        coords = np.arange(size)
    else:
        coords = rng.choice(size, size=points, replace=False)
    worst = 0.0
    for i in coords:
        plus = probe.data.copy()
        minus = probe.data.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        numeric = (float(f(Tensor(plus)).data)
                   - float(f(Tensor(minus)).data)) / (2.0 * h)
        ana = float(analytic.flat[i])
        worst = max(worst, abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8))
    return worst


def _away_from_zero(rng, n, lo=0.2, hi=1.0):
    return rng.uniform(lo, hi, size=n) * rng.choice(np.array([-1.0, 1.0]), size=n)


def _items(rng: np.random.Generator):
    """(name, scalar function, probe start) triples covering every op plus
    the composed paths the optimizer differentiates."""
    items: list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]] = []

    def add(name, f, x0):
        items.append((name, f, np.asarray(x0, dtype=np.float64)))

    idx_lo = np.arange(3)
    idx_hi = np.arange(3, 6)

    def halves(x):
        return _tensor.op_gather(x, idx_lo), _tensor.op_gather(x, idx_hi)

    def binary(op):
        def f(x):
            a, b = halves(x)
            return _tensor.op_sum(op(a, b))
        return f

    add("add", binary(_tensor.op_add), rng.uniform(-1, 1, 6))
    add("sub", binary(_tensor.op_sub), rng.uniform(-1, 1, 6))
    add("mul", binary(_tensor.op_mul), rng.uniform(-1, 1, 6))
    # denominator half stays clear of zero
    add("div", binary(_tensor.op_div),
        np.concatenate([rng.uniform(-1, 1, 3), _away_from_zero(rng, 3, 0.5)]))

    m_right = Tensor(rng.uniform(-1, 1, (4, 2)))
    m_left = Tensor(rng.uniform(-1, 1, (2, 3)))

    def f_matmul(x):
        m = _tensor.op_reshape(x, (3, 4))
        lhs = _tensor.op_sum(_tensor.op_matmul(m, m_right))
        rhs = _tensor.op_sum(_tensor.op_matmul(m_left, m))
        return _tensor.op_add(lhs, rhs)

    add("matmul", f_matmul, rng.uniform(-1, 1, 12))

    k_fixed = Tensor(rng.uniform(-1, 1, (3, 2, 3)))
    b_fixed = Tensor(rng.uniform(-1, 1, 3))
    img_fixed = Tensor(rng.uniform(-1, 1, (2, 9)))

    def f_conv_input(x):
        img = _tensor.op_reshape(x, (2, 9))
        return _tensor.op_sum(_tensor.op_conv1d(img, k_fixed, bias=b_fixed))

    def f_conv_weights(x):
        k = _tensor.op_reshape(_tensor.op_gather(x, np.arange(18)), (3, 2, 3))
        b = _tensor.op_gather(x, np.arange(18, 21))
        return _tensor.op_sum(_tensor.op_conv1d(img_fixed, k, stride=2, bias=b))

    add("conv1d_input", f_conv_input, rng.uniform(-1, 1, 18))
    add("conv1d_weights", f_conv_weights, rng.uniform(-1, 1, 21))

    def unary(op):
        return lambda x: _tensor.op_sum(op(x))

    add("relu", unary(_tensor.op_relu), _away_from_zero(rng, 8))
    add("cos", unary(_tensor.op_cos), rng.uniform(-1, 1, 8))
    add("sin", unary(_tensor.op_sin), rng.uniform(-1, 1, 8))
    add("exp", unary(_tensor.op_exp), rng.uniform(-1, 1, 8))
    add("log", unary(_tensor.op_log), rng.uniform(0.5, 1.5, 8))
    add("abs", unary(_tensor.op_abs), _away_from_zero(rng, 8))
    add("sum", _tensor.op_sum, rng.uniform(-1, 1, 8))
    add("mean", _tensor.op_mean, rng.uniform(-1, 1, 8))
    add("min_reduce", _tensor.op_min_reduce, rng.uniform(-1, 1, 8))
    add("max_reduce", _tensor.op_max_reduce, rng.uniform(-1, 1, 8))

    w8 = Tensor(rng.uniform(-1, 1, 8))
    add("cumsum",
        lambda x: _tensor.op_sum(_tensor.op_mul(_tensor.op_cumsum(x), w8)),
        rng.uniform(-1, 1, 8))

    repeats = np.array([0, 2, 2, 5, 7, 0])
    w6 = Tensor(rng.uniform(-1, 1, 6))
    add("gather",
        lambda x: _tensor.op_sum(
            _tensor.op_mul(_tensor.op_gather(x, repeats), w6)),
        rng.uniform(-1, 1, 8))

    def f_concat(x):
        a, b = halves(x)
        return _tensor.op_sum(_tensor.op_mul(_tensor.op_concat([a, b]), w6))

    add("concat", f_concat, rng.uniform(-1, 1, 6))

    w24 = Tensor(rng.uniform(-1, 1, (2, 4)))
    add("reshape",
        lambda x: _tensor.op_sum(_tensor.op_mul(_tensor.op_reshape(x, (2, 4)), w24)),
        rng.uniform(-1, 1, 8))

    w32 = Tensor(rng.uniform(-1, 1, 32))

    def f_path_chain(x):
        path = _warp.make_path(x, 5.0)
        return _tensor.op_sum(_tensor.op_mul(path.displacements, w32))

    add("warp_path_chain", f_path_chain, rng.uniform(-1, 1, 32))

    clf = Classifier(1, 3, seed=7)
    base = (np.sin(2 * np.pi * 3 * np.arange(64) / 64)
            + 0.1 * rng.normal(size=64))
    x_fixed = TimeSeries(Tensor(base.copy()), label=1)

    def f_loss_phi(phi):
        path = _warp.make_path(phi, 8.0, 10)
        warped = _signal.warp_apply(x_fixed, path, 10)
        _, logits = _model.forward(clf, warped)
        return _model.loss_ce(logits, x_fixed.label)

    add("loss_grad_phi", f_loss_phi, rng.uniform(-1, 1, 64))

    fixed_path = _warp.make_path(Tensor(rng.uniform(-1, 1, 64)), 8.0, 10)

    def f_loss_input(xt):
        series = TimeSeries(xt, label=1)
        warped = _signal.warp_apply(series, fixed_path, 10)
        _, logits = _model.forward(clf, warped)
        return _model.loss_ce(logits, 1)

    add("loss_grad_input", f_loss_input, base.copy())

    return items


def run_checks(seed: int = 0, h: float = STEP, points: int = POINTS,
               threshold: float = THRESHOLD) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [CheckResult(name, _max_rel_err(f, x0, h, points, rng), threshold)
            for name, f, x0 in _items(rng)]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'item'.ljust(width)}  max rel err  status"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {r.rel_err:11.3e}  "
                     f"{'ok' if r.ok else 'FAIL'}")
    worst = max(results, key=lambda r: r.rel_err)
    lines.append(f"worst: {worst.name} at {worst.rel_err:.3e} "
                 f"(threshold {results[0].threshold:g})")
    return "\n".join(lines)

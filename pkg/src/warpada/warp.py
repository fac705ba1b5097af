"""Differentiable construction of admissible warping paths.

Free parameters phi are pushed through three maps: a cumulative-sum step
that makes the path monotone, a normalization that pins both endpoints to
zero displacement, and a global rescale that bounds the sup-norm by
phi_max.  Because the constraints are built into the construction, no
gradient-ascent trajectory over phi can leave the admissible set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    op_abs,
    op_concat,
    op_cumsum,
    op_gather,
    op_max_reduce,
    op_min_reduce,
    op_sub,
)

__all__ = ["WarpParams", "WarpPath", "h1_monotone", "h2_boundary", "h3_clip", "make_path"]

DEGENERATE_EPS = 1e-12


@dataclass
class WarpParams:
    """Unconstrained per-index parameters the ascent optimizes."""

    phi: Tensor

    def __post_init__(self):
        if not isinstance(self.phi, Tensor):
            self.phi = Tensor(np.asarray(self.phi, dtype=np.float64), requires_grad=True)
        if self.phi.data.ndim != 1:
            raise ValueError(f"phi must be a vector, got shape {self.phi.data.shape}")


@dataclass
class WarpPath:
    """Per-index displacements: entry i moves index i to i + displacements_i."""

    displacements: Tensor

    def __post_init__(self):
        if not isinstance(self.displacements, Tensor):
            self.displacements = Tensor(np.asarray(self.displacements, dtype=np.float64))
        if self.displacements.data.ndim != 1:
            raise ValueError(f"displacements must be a vector, "
                             f"got shape {self.displacements.data.shape}")

    def __len__(self) -> int:
        return self.displacements.data.shape[0]

    def violations(self, phi_max: float) -> dict[str, float]:
        """Worst-case breach of each path condition (all ~0 for valid paths).

        Keys: 'monotone' (largest decrease of i + d_i), 'boundary' (larger
        endpoint magnitude), 'bound' (sup-norm excess over phi_max).
        """
        d = self.displacements.data
        warped = np.arange(d.shape[0]) + d
        mono = float(max(0.0, np.max(-np.diff(warped)))) if d.shape[0] > 1 else 0.0
        boundary = float(max(abs(d[0]), abs(d[-1]))) if d.shape[0] else 0.0
        bound = float(max(0.0, np.max(np.abs(d)) - phi_max)) if d.shape[0] else 0.0
        return {"monotone": mono, "boundary": boundary, "bound": bound}


def _as_phi(params) -> Tensor:
    phi = getattr(params, "phi", params)
    if not isinstance(phi, Tensor):
        phi = Tensor(np.asarray(phi, dtype=np.float64))
    if phi.data.ndim != 1:
        raise ValueError(f"phi must be a vector, got shape {phi.data.shape}")
    return phi


def h1_monotone(phi: Tensor) -> Tensor:
    """Nondecreasing cumulative path: out_t = sum_{i<=t} (phi_i - min(phi)).

    Every increment is nonnegative after the min subtraction, so the output
    is monotone for any input.
    """
    phi = _as_phi(phi)
    if phi.data.shape[0] < 2:
        raise ValueError(f"need at least 2 entries, got {phi.data.shape[0]}")
    return op_cumsum(op_sub(phi, op_min_reduce(phi)))


def h2_boundary(cum: Tensor) -> Tensor:
    """Normalize a monotone cumulative path onto [0, N-1] and convert to
    displacements: out_i = (cum_i - min) / (max - min) * (N-1) - i.

    Both endpoints land exactly on 0 and N-1, so both boundary
    displacements are zero.  A flat input (max - min below 1e-12) would
    divide by zero; it maps to the identity path instead.
    """
    cum = _as_phi(cum)
    n = cum.data.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 entries, got {n}")
    lo = op_min_reduce(cum)
    hi = op_max_reduce(cum)
    if float(hi.data - lo.data) < DEGENERATE_EPS:
        return Tensor(np.zeros(n))
    warped = (cum - lo) * float(n - 1) / op_sub(hi, lo)
    return warped - Tensor(np.arange(n, dtype=np.float64))


def h3_clip(delta: Tensor, phi_max: float) -> WarpPath:
    """Globally rescale so the sup-norm is at most phi_max:
    out = delta * min(phi_max / max|delta|, 1).

    One shared scale preserves monotonicity and boundary zeros; a
    per-element clamp would break monotonicity and kill gradients at the
    bound.  Zero input keeps scale 1.
    """
    delta = _as_phi(delta)
    phi_max = float(phi_max)
    if phi_max <= 0:
        raise ValueError(f"phi_max must be positive, got {phi_max}")
    # max(|delta|, phi_max) in one reduce; dividing phi_max by it gives
    # min(phi_max/max|delta|, 1) with a well-defined gradient either side.
    cap = op_max_reduce(op_concat([op_abs(delta), Tensor([phi_max])]))
    scale = Tensor(phi_max) / cap
    return WarpPath(delta * scale)


def make_path(params, phi_max: float, half_width: int | None = None) -> WarpPath:
    """Full chain phi -> monotone cumulative -> boundary-pinned -> bounded.

    Mathematically this is h3_clip(h2_boundary(h1_monotone(phi))), but the
    normalization only ever uses cumulative DIFFERENCES, so the composition
    here accumulates the tail increments (indices 1..N-1) directly.  That
    makes the cancellation of phi_0's uniform contribution exact in floating
    point: when index 0 is not the argmin, the output is bitwise independent
    of phi_0, matching the true zero derivative instead of leaving ~1e-16
    residue that finite-difference checks amplify.

    ``half_width`` (when given) checks that phi_max leaves one sample of
    headroom inside the analysis window, so fractional displacements stay
    on segment support.
    """
    phi = _as_phi(params)
    n = phi.data.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 entries, got {n}")
    if half_width is not None and float(phi_max) > half_width - 1:
        raise ValueError(f"phi_max {phi_max} exceeds half-width headroom {half_width - 1}")
    if float(phi_max) <= 0:
        raise ValueError(f"phi_max must be positive, got {phi_max}")
    increments = op_sub(phi, op_min_reduce(phi))
    tail = op_cumsum(op_gather(increments, np.arange(1, n)))
    spread = op_gather(tail, np.asarray(n - 2))  # rank-0: the last (largest) entry
    if float(spread.data) < DEGENERATE_EPS:
        return WarpPath(Tensor(np.zeros(n)))
    warped = op_concat([Tensor([0.0]), tail * float(n - 1) / spread])
    delta = warped - Tensor(np.arange(n, dtype=np.float64))
    return h3_clip(delta, phi_max)

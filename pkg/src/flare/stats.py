"""Streaming statistics shared by both schedulers.

Everything here is a pure function of its inputs: absolute loss
differences, windowed sample standard deviation, empirical CDFs, and the
two-sample Kolmogorov-Smirnov statistic used for confidence monitoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

__all__ = [
    "ConfidenceSample",
    "LossWindow",
    "abs_loss_diff",
    "window_std",
    "empirical_cdf",
    "ks_statistic",
]


def abs_loss_diff(train_losses, val_losses) -> np.ndarray:
    """Elementwise |train - val| of two equal-length loss arrays."""
    a = np.asarray(train_losses, dtype=float)
    b = np.asarray(val_losses, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ContractError(
            f"loss arrays must be 1-D and equal length, got {a.shape} and {b.shape}"
        )
    return np.abs(a - b)


def window_std(deltas) -> float:
    """Sample standard deviation (Bessel-corrected) of a loss-difference window.

    Computed as sqrt(sum((d - mean)^2) / (n - 1)); requires n >= 2.
    """
    d = np.asarray(deltas, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise ContractError(f"window must hold at least 2 values, got {d.size}")
    mu = d.mean()
    return float(np.sqrt(np.sum((d - mu) ** 2) / (d.size - 1)))


@dataclass(frozen=True)
class LossWindow:
    """Paired train/validation losses over one scheduler window."""

    train_losses: np.ndarray
    val_losses: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train_losses, dtype=float)
        va = np.asarray(self.val_losses, dtype=float)
        if tr.shape != va.shape or tr.ndim != 1 or tr.size < 2:
            raise ContractError(
                f"loss window needs two equal 1-D arrays of length >= 2, "
                f"got {tr.shape} and {va.shape}"
            )
        if not (np.isfinite(tr).all() and np.isfinite(va).all()):
            raise ContractError("loss window contains non-finite values")
        if (tr < 0).any() or (va < 0).any():
            raise ContractError("losses must be non-negative")
        object.__setattr__(self, "train_losses", tr)
        object.__setattr__(self, "val_losses", va)

    @property
    def window_len(self) -> int:
        return self.train_losses.size

    @property
    def deltas(self) -> np.ndarray:
        return abs_loss_diff(self.train_losses, self.val_losses)

    @property
    def mean_delta(self) -> float:
        return float(self.deltas.mean())

    @property
    def std(self) -> float:
        return window_std(self.deltas)


@dataclass(frozen=True)
class ConfidenceSample:
    """A sorted sample of prediction confidences in (0, 1]."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size < 1:
            raise ContractError("confidence sample must be a non-empty 1-D array")
        if not np.isfinite(v).all() or v[0] <= 0.0 or v[-1] > 1.0:
            raise ContractError("confidences must lie in (0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def empirical_cdf(sample, x):
    """Right-continuous ECDF of `sample` evaluated at `x` (scalar or array).

    F(x) = (# values <= x) / n.
    """
    v = _sample_values(sample)
    v = np.sort(v)
    counts = np.searchsorted(v, x, side="right")
    out = counts / v.size
    return float(out) if np.isscalar(x) else out


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|.

    The supremum over all reals is attained at one of the merged sample
    points because both ECDFs are right-continuous step functions, so it
    is evaluated exactly there; no p-value is computed.
    """
    va = np.sort(_sample_values(a))
    vb = np.sort(_sample_values(b))
    merged = np.concatenate([va, vb])
    fa = np.searchsorted(va, merged, side="right") / va.size
    fb = np.searchsorted(vb, merged, side="right") / vb.size
    return float(np.max(np.abs(fa - fb)))


def _sample_values(sample) -> np.ndarray:
    v = sample.values if isinstance(sample, ConfidenceSample) else np.asarray(sample, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ContractError("sample must be a non-empty 1-D array")
    return v

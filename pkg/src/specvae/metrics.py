"""Classification F1 and the JEMMIG disentanglement suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import InvalidConfigError

DEFAULT_BINS = 20


@dataclass
class FactorCodeTable:
    """Paired ground-truth factors and inferred latent codes.

    Categorical factor columns (flagged in ``categorical``) are used as-is;
    continuous columns are discretized with equal-width bins.
    """

    factors: np.ndarray            # (N, F)
    codes: np.ndarray              # (N, D)
    factor_names: tuple[str, ...]
    categorical: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        if self.factors.shape[0] != self.codes.shape[0]:
            raise InvalidConfigError("factors and codes must have matching row counts")
        if len(self.factor_names) != self.factors.shape[1]:
            raise InvalidConfigError("one name per factor column required")
        if not self.categorical:
            self.categorical = tuple(False for _ in self.factor_names)


def f1_per_class(pred, truth, n_classes: int) -> tuple[np.ndarray, float]:
    """Per-class F1 = 2PR/(P+R), defined as 0 when P+R = 0.

    Classes absent from both predictions and truth score 0 and are excluded
    from the average.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    f1 = np.zeros(n_classes)
    present = np.zeros(n_classes, dtype=bool)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        present[c] = (tp + fp + fn) > 0
        if 2 * tp + fp + fn > 0:
            f1[c] = 2 * tp / (2 * tp + fp + fn)
    average = float(f1[present].mean()) if present.any() else 0.0
    return f1, average


def discretize(column: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width integer codes over the observed range; constant -> one bin."""
    if bins < 2:
        raise InvalidConfigError("bins must be >= 2")
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if hi == lo:
        return np.zeros(column.shape, dtype=np.int64)
    codes = np.floor((column - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(codes, bins - 1)


def _joint_counts(v: np.ndarray, z: np.ndarray) -> np.ndarray:
    if v.size == 0:
        raise ValueError("empty input")
    vi = np.unique(v, return_inverse=True)[1]
    zi = np.unique(z, return_inverse=True)[1]
    counts = np.zeros((vi.max() + 1, zi.max() + 1))
    np.add.at(counts, (vi, zi), 1.0)
    return counts / v.size


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def joint_entropy(v_disc: np.ndarray, z_disc: np.ndarray) -> float:
    """Plug-in joint entropy H(v, z) in nats."""
    return _entropy(_joint_counts(v_disc, z_disc).ravel())


def mutual_information(v_disc: np.ndarray, z_disc: np.ndarray) -> float:
    """Plug-in mutual information I(v, z) = H(v) + H(z) − H(v, z), in nats."""
    joint = _joint_counts(v_disc, z_disc)
    return _entropy(joint.sum(1)) + _entropy(joint.sum(0)) - _entropy(joint.ravel())


def jemmig(table: FactorCodeTable, factor_index: int, bins: int = DEFAULT_BINS) -> dict:
    """JEMMIG for one factor: joint entropy minus the mutual information gap.

    The two codes with the highest mutual information with the factor provide
    the gap; the normalized score 1 − JEMMIG/(H(v) + log bins) is clipped to
    [0, 1], higher is better.
    """
    if table.codes.shape[1] < 2:
        raise InvalidConfigError("jemmig needs at least two code dimensions")
    v = table.factors[:, factor_index]
    v_disc = v.astype(np.int64) if table.categorical[factor_index] else discretize(v, bins)
    codes_disc = [discretize(table.codes[:, j], bins) for j in range(table.codes.shape[1])]

    mi = np.array([mutual_information(v_disc, z) for z in codes_disc])
    order = np.argsort(mi)[::-1]
    z_star, z_circ = order[0], order[1]
    mig = float(mi[z_star] - mi[z_circ])
    h_joint = joint_entropy(v_disc, codes_disc[z_star])
    score = h_joint - mig
    h_v = _entropy(_joint_counts(v_disc, v_disc).sum(1))
    normalized = float(np.clip(1.0 - score / (h_v + np.log(bins)), 0.0, 1.0))
    return {
        "jemmig": score,
        "mig": mig,
        "joint_entropy": h_joint,
        "normalized": normalized,
        "best_code": int(z_star),
    }

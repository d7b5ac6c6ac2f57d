"""Model parameters, sparse feature containers, scoring, and losses.

The score of an instance is

    y = base + <bias_global, g> + <bias_user, u> + <bias_item, v>
        + (sum_j u_j * factor_user[j]) . (sum_j v_j * factor_item[j])

where g/u/v are the three sparse feature groups of the instance. An
activation maps y to the final prediction; the loss menu covers squared
error (identity activation), logistic log-likelihood (sigmoid), and a
smoothed hinge for binary margin problems (identity).

Scoring is safe to call concurrently; mutation is owned by the trainer
and requires exclusive access (no internal locking).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import DimensionMismatchError, InvalidLabelError

# Predicted probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before
# any logarithm; the log-likelihood is undefined at exactly 0 or 1.
PROB_EPS = 1e-16


class LossConfig(enum.Enum):
    """Activation + loss pairing."""

    L2_IDENTITY = "l2"
    LOGISTIC = "logistic"
    SMOOTHED_HINGE = "smoothed_hinge"

    @classmethod
    def from_string(cls, name: str) -> "LossConfig":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown loss {name!r} (expected one of: {valid})")


@dataclass(slots=True, eq=False)
class SparseVector:
    """Sparse features: strictly increasing indices with finite values.

    Direct construction trusts the caller; `from_pairs` validates and
    sorts arbitrary (index, value) input.
    """

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], *,
                   drop_zeros: bool = False) -> "SparseVector":
        pairs = [(int(i), float(v)) for i, v in pairs]
        if drop_zeros:
            pairs = [(i, v) for i, v in pairs if v != 0.0]
        pairs.sort()
        indices = np.array([i for i, _ in pairs], dtype=np.int64)
        values = np.array([v for _, v in pairs], dtype=np.float64)
        if indices.size:
            if indices[0] < 0:
                raise ValueError(f"negative feature index {indices[0]}")
            if np.any(indices[1:] == indices[:-1]):
                dup = int(indices[np.flatnonzero(indices[1:] == indices[:-1])[0]])
                raise ValueError(f"duplicate feature index {dup}")
            if not np.all(np.isfinite(values)):
                raise ValueError("non-finite feature value")
        return cls(indices, values)

    def __len__(self) -> int:
        return self.indices.size

    def __iter__(self) -> Iterator[tuple[int, float]]:
        return zip((int(i) for i in self.indices),
                   (float(v) for v in self.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))


EMPTY_VEC = SparseVector(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))


@dataclass(slots=True, eq=False)
class Instance:
    """One training or prediction example: label plus three feature groups."""

    label: float
    global_feats: SparseVector
    user_feats: SparseVector
    item_feats: SparseVector

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.label == other.label
                and self.global_feats == other.global_feats
                and self.user_feats == other.user_feats
                and self.item_feats == other.item_feats)


@dataclass(frozen=True, slots=True)
class ModelDims:
    """Sizes of the parameter blocks."""

    num_global: int
    num_user: int
    num_item: int
    num_factor: int

    def __post_init__(self):
        for name in ("num_global", "num_user", "num_item", "num_factor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(slots=True)
class Model:
    """All learned parameters held in double precision.

    `base_score` is a fixed constant (conventionally the mean training
    label, set at buffering time); it has no update rule.
    """

    dims: ModelDims
    base_score: float
    bias_global: np.ndarray
    bias_user: np.ndarray
    bias_item: np.ndarray
    factor_user: np.ndarray
    factor_item: np.ndarray

    @classmethod
    def zeros(cls, dims: ModelDims, base_score: float = 0.0) -> "Model":
        return cls(
            dims=dims,
            base_score=base_score,
            bias_global=np.zeros(dims.num_global),
            bias_user=np.zeros(dims.num_user),
            bias_item=np.zeros(dims.num_item),
            factor_user=np.zeros((dims.num_user, dims.num_factor)),
            factor_item=np.zeros((dims.num_item, dims.num_factor)),
        )

    def copy(self) -> "Model":
        return Model(
            dims=self.dims,
            base_score=self.base_score,
            bias_global=self.bias_global.copy(),
            bias_user=self.bias_user.copy(),
            bias_item=self.bias_item.copy(),
            factor_user=self.factor_user.copy(),
            factor_item=self.factor_item.copy(),
        )


class Prediction(NamedTuple):
    raw: float
    activated: float


def _check_bounds(vec: SparseVector, size: int, group: str) -> None:
    # Indices are sorted ascending, so the last one is the maximum.
    if vec.indices.size and vec.indices[-1] >= size:
        raise DimensionMismatchError(group, int(vec.indices[-1]), size)


def user_factor_sum(model: Model, instance: Instance) -> np.ndarray:
    """Weighted sum of user factor rows over the active user features."""
    vec = instance.user_feats
    _check_bounds(vec, model.dims.num_user, "user")
    return vec.values @ model.factor_user[vec.indices]


def item_factor_sum(model: Model, instance: Instance) -> np.ndarray:
    """Weighted sum of item factor rows over the active item features."""
    vec = instance.item_feats
    _check_bounds(vec, model.dims.num_item, "item")
    return vec.values @ model.factor_item[vec.indices]


def linear_score(model: Model, instance: Instance) -> float:
    """base_score plus the three bias contributions (no factor term)."""
    gf, uf, itf = instance.global_feats, instance.user_feats, instance.item_feats
    _check_bounds(gf, model.dims.num_global, "global")
    _check_bounds(uf, model.dims.num_user, "user")
    _check_bounds(itf, model.dims.num_item, "item")
    y = model.base_score
    if gf.indices.size:
        y += float(model.bias_global[gf.indices] @ gf.values)
    if uf.indices.size:
        y += float(model.bias_user[uf.indices] @ uf.values)
    if itf.indices.size:
        y += float(model.bias_item[itf.indices] @ itf.values)
    return y


def score(model: Model, instance: Instance) -> float:
    """Raw score y; equals linear_score + dot of the two factor sums."""
    return linear_score(model, instance) + float(
        user_factor_sum(model, instance) @ item_factor_sum(model, instance)
    )


def activate(config: LossConfig, y: float) -> float:
    """Map the raw score to the prediction scale."""
    if config is LossConfig.LOGISTIC:
        # Stable in both tails: never overflows, never underflows to 0
        # for representable y.
        if y >= 0.0:
            return 1.0 / (1.0 + math.exp(-y))
        e = math.exp(y)
        return e / (1.0 + e)
    return y


def predict(model: Model, instance: Instance, config: LossConfig) -> Prediction:
    y = score(model, instance)
    return Prediction(raw=y, activated=activate(config, y))


def _check_label(config: LossConfig, label: float) -> None:
    if config is not LossConfig.L2_IDENTITY and label not in (0.0, 1.0):
        raise InvalidLabelError(
            f"label {label!r} invalid for {config.value} (must be 0 or 1)"
        )


def _hinge(z: float) -> float:
    if z <= 0.0:
        return 0.5 - z
    if z < 1.0:
        return 0.5 * (1.0 - z) * (1.0 - z)
    return 0.0


def _hinge_slope(z: float) -> float:
    # Boundary points belong to the closed outer branches.
    if z <= 0.0:
        return -1.0
    if z < 1.0:
        return -(1.0 - z)
    return 0.0


def loss_value(config: LossConfig, label: float, pred: Prediction) -> float:
    """Per-instance loss, regularization excluded (applied inside updates)."""
    _check_label(config, label)
    if config is LossConfig.L2_IDENTITY:
        d = label - pred.activated
        return d * d
    if config is LossConfig.LOGISTIC:
        p = min(max(pred.activated, PROB_EPS), 1.0 - PROB_EPS)
        return -(label * math.log(p) + (1.0 - label) * math.log(1.0 - p))
    z = (2.0 * label - 1.0) * pred.raw
    return _hinge(z)


def gradient_scalar(config: LossConfig, label: float, pred: Prediction) -> float:
    """Error signal driving the additive update rules.

    Defined so that `param += eta * grad * feature` descends the loss:
    label minus prediction for squared error and logistic, and the
    negated margin slope for the smoothed hinge.
    """
    _check_label(config, label)
    if config is LossConfig.SMOOTHED_HINGE:
        sign = 2.0 * label - 1.0
        return -sign * _hinge_slope(sign * pred.raw)
    return label - pred.activated

"""Stochastic gradient training, including the grouped-feedback fast path.

A single thread owns the model during an epoch. Updates touch only the
parameters whose features are active in the current instance; the
regularization decay is likewise applied per active index.

When a contiguous range of user-feature indices is designated as
feedback features (one shared feature set per user, e.g. the set of
items a user interacted with), consecutive instances with an identical
feedback set form a block. The block is trained with the feedback
factor rows aggregated into a single running vector that stands in for
their weighted sum; per-sample work then no longer scales with the
feedback set size times the factor dimension. The accumulated change is
distributed back onto the individual rows once per block, which is
exact without factor regularization and a close approximation when
eta * lam_factor_user is small.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .core import (
    Instance,
    LossConfig,
    Model,
    ModelDims,
    Prediction,
    SparseVector,
    _check_bounds,
    activate,
    gradient_scalar,
    linear_score,
    loss_value,
)
from .errors import DivergenceError


@dataclass(slots=True)
class TrainConfig:
    """Optimizer hyperparameters.

    The five regularization strengths apply to, in order: user factors,
    item factors, global bias, user bias, item bias. `feedback_range`
    is a half-open [start, end) interval of user-feature indices
    treated as shared feedback factors.
    """

    eta: float
    lam_factor_user: float = 0.0
    lam_factor_item: float = 0.0
    lam_bias_global: float = 0.0
    lam_bias_user: float = 0.0
    lam_bias_item: float = 0.0
    num_factor: int = 0
    epochs: int = 1
    seed: int = 0
    init_sigma: float = 0.01
    feedback_range: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        for name in ("lam_factor_user", "lam_factor_item", "lam_bias_global",
                     "lam_bias_user", "lam_bias_item"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.feedback_range is not None:
            start, end = self.feedback_range
            if not 0 <= start <= end:
                raise ValueError(f"invalid feedback_range {self.feedback_range}")


@dataclass(slots=True)
class TrainReport:
    """Outcome of one epoch: mean pre-update loss, count, wall time."""

    loss_mean: float
    count: int
    seconds: float


@dataclass(slots=True)
class FeedbackBlock:
    """Maximal run of consecutive instances sharing one feedback set."""

    shared_feedback: SparseVector
    samples: list[Instance] = field(default_factory=list)


def init_model(dims: ModelDims, config: TrainConfig) -> Model:
    """Zero biases, Gaussian(0, init_sigma^2) factors from a seeded PCG64.

    `base_score` starts at 0; the caller sets it from buffer statistics
    or configuration.
    """
    model = Model.zeros(dims)
    if dims.num_factor > 0 and config.init_sigma > 0.0:
        rng = np.random.default_rng(config.seed)
        model.factor_user = rng.normal(
            0.0, config.init_sigma, (dims.num_user, dims.num_factor))
        model.factor_item = rng.normal(
            0.0, config.init_sigma, (dims.num_item, dims.num_factor))
    return model


def _diverged(ordinal: int | None) -> DivergenceError:
    return DivergenceError("non-finite value during update", ordinal=ordinal)


def sgd_step(model: Model, instance: Instance, config: TrainConfig,
             loss: LossConfig, *, ordinal: int | None = None) -> float:
    """Apply one stochastic gradient update in place.

    Both factor sums are snapshotted before any write, so the user- and
    item-factor updates see each other's pre-update state. Returns the
    pre-update loss of the instance.
    """
    gf = instance.global_feats
    uf = instance.user_feats
    itf = instance.item_feats
    _check_bounds(gf, model.dims.num_global, "global")
    _check_bounds(uf, model.dims.num_user, "user")
    _check_bounds(itf, model.dims.num_item, "item")

    fu, fi = model.factor_user, model.factor_item
    bg, bu, bi = model.bias_global, model.bias_user, model.bias_item
    u_idx, u_val = uf.indices, uf.values
    i_idx, i_val = itf.indices, itf.values
    g_idx, g_val = gf.indices, gf.values

    u_rows = fu[u_idx]
    i_rows = fi[i_idx]
    user_sum = u_val @ u_rows
    item_sum = i_val @ i_rows

    old_bg = bg[g_idx]
    old_bu = bu[u_idx]
    old_bi = bi[i_idx]
    # Same accumulation order as core.linear_score / core.score.
    y = model.base_score
    if g_idx.size:
        y += float(old_bg @ g_val)
    if u_idx.size:
        y += float(old_bu @ u_val)
    if i_idx.size:
        y += float(old_bi @ i_val)
    y += float(user_sum @ item_sum)

    pred = Prediction(y, activate(loss, y))
    ehat = gradient_scalar(loss, instance.label, pred)
    lval = loss_value(loss, instance.label, pred)

    eta = config.eta
    new_u = u_rows + eta * (np.outer(ehat * u_val, item_sum)
                            - config.lam_factor_user * u_rows)
    new_i = i_rows + eta * (np.outer(ehat * i_val, user_sum)
                            - config.lam_factor_item * i_rows)
    new_bg = old_bg + eta * (ehat * g_val - config.lam_bias_global * old_bg)
    new_bu = old_bu + eta * (ehat * u_val - config.lam_bias_user * old_bu)
    new_bi = old_bi + eta * (ehat * i_val - config.lam_bias_item * old_bi)

    # One scalar probe: any inf/nan in the updates makes the total non-finite.
    probe = (ehat + new_u.sum() + new_i.sum()
             + new_bg.sum() + new_bu.sum() + new_bi.sum())
    if not math.isfinite(probe):
        raise _diverged(ordinal)

    fu[u_idx] = new_u
    fi[i_idx] = new_i
    bg[g_idx] = new_bg
    bu[u_idx] = new_bu
    bi[i_idx] = new_bi
    return lval


def _feedback_span(vec: SparseVector, start: int, end: int) -> tuple[int, int]:
    lo = int(np.searchsorted(vec.indices, start, side="left"))
    hi = int(np.searchsorted(vec.indices, end, side="left"))
    return lo, hi


def group_blocks(data_stream: Iterable[Instance],
                 feedback_range: tuple[int, int] | None,
                 ) -> Iterator[FeedbackBlock]:
    """Group consecutive instances whose feedback features are identical.

    An empty range (or None) makes every instance its own block. A block
    ends as soon as the restriction of the user features to the range
    differs in either indices or values.
    """
    if feedback_range is None or feedback_range[0] == feedback_range[1]:
        for instance in data_stream:
            yield FeedbackBlock(EMPTY_FEEDBACK, [instance])
        return

    start, end = feedback_range
    block: FeedbackBlock | None = None
    for instance in data_stream:
        uf = instance.user_feats
        lo, hi = _feedback_span(uf, start, end)
        idx = uf.indices[lo:hi]
        val = uf.values[lo:hi]
        if block is not None:
            shared = block.shared_feedback
            if (np.array_equal(shared.indices, idx)
                    and np.array_equal(shared.values, val)):
                block.samples.append(instance)
                continue
            yield block
        block = FeedbackBlock(SparseVector(idx, val), [instance])
    if block is not None:
        yield block


EMPTY_FEEDBACK = SparseVector(np.empty(0, dtype=np.int64),
                              np.empty(0, dtype=np.float64))


def train_block(model: Model, block: FeedbackBlock, config: TrainConfig,
                loss: LossConfig, *, first_ordinal: int = 0,
                ) -> tuple[float, int]:
    """Train one feedback block with deferred feedback-factor updates.

    The weighted sum of the feedback factor rows is computed once,
    carried through the block in place of those rows' contribution to
    the user factor sum, advanced directly after each sample, and the
    net change is written back onto the rows at the end. Biases and all
    non-feedback parameters update eagerly exactly as in `sgd_step`.

    Returns (sum of pre-update losses, sample count).
    """
    fb = block.shared_feedback
    _check_bounds(fb, model.dims.num_user, "user")
    fb_idx, fb_val = fb.indices, fb.values
    sumsq = float(fb_val @ fb_val)
    has_feedback = sumsq > 0.0

    fu, fi = model.factor_user, model.factor_item
    bg, bu, bi = model.bias_global, model.bias_user, model.bias_item
    k = fu.shape[1]
    if has_feedback:
        agg = fb_val @ fu[fb_idx]
        agg_start = agg.copy()
    else:
        agg = np.zeros(k)
    if config.feedback_range is None:
        raise ValueError("train_block requires config.feedback_range")
    start, end = config.feedback_range

    eta = config.eta
    lam_fu = config.lam_factor_user
    loss_sum = 0.0
    for offset, instance in enumerate(block.samples):
        gf = instance.global_feats
        uf = instance.user_feats
        itf = instance.item_feats
        _check_bounds(gf, model.dims.num_global, "global")
        _check_bounds(uf, model.dims.num_user, "user")
        _check_bounds(itf, model.dims.num_item, "item")

        u_idx, u_val = uf.indices, uf.values
        i_idx, i_val = itf.indices, itf.values
        g_idx, g_val = gf.indices, gf.values
        lo, hi = _feedback_span(uf, start, end)
        pre_idx, pre_val = u_idx[:lo], u_val[:lo]
        post_idx, post_val = u_idx[hi:], u_val[hi:]

        pre_rows = fu[pre_idx]
        post_rows = fu[post_idx]
        i_rows = fi[i_idx]
        user_sum = pre_val @ pre_rows + post_val @ post_rows + agg
        item_sum = i_val @ i_rows

        old_bg = bg[g_idx]
        old_bu = bu[u_idx]
        old_bi = bi[i_idx]
        y = model.base_score
        if g_idx.size:
            y += float(old_bg @ g_val)
        if u_idx.size:
            y += float(old_bu @ u_val)
        if i_idx.size:
            y += float(old_bi @ i_val)
        y += float(user_sum @ item_sum)

        pred = Prediction(y, activate(loss, y))
        ehat = gradient_scalar(loss, instance.label, pred)
        loss_sum += loss_value(loss, instance.label, pred)

        new_pre = pre_rows + eta * (np.outer(ehat * pre_val, item_sum)
                                    - lam_fu * pre_rows)
        new_post = post_rows + eta * (np.outer(ehat * post_val, item_sum)
                                      - lam_fu * post_rows)
        new_i = i_rows + eta * (np.outer(ehat * i_val, user_sum)
                                - config.lam_factor_item * i_rows)
        new_bg = old_bg + eta * (ehat * g_val - config.lam_bias_global * old_bg)
        new_bu = old_bu + eta * (ehat * u_val - config.lam_bias_user * old_bu)
        new_bi = old_bi + eta * (ehat * i_val - config.lam_bias_item * old_bi)
        if has_feedback:
            agg = agg + eta * (ehat * sumsq * item_sum - lam_fu * agg)

        probe = (ehat + new_pre.sum() + new_post.sum() + new_i.sum()
                 + new_bg.sum() + new_bu.sum() + new_bi.sum() + agg.sum())
        if not math.isfinite(probe):
            raise _diverged(first_ordinal + offset)

        fu[pre_idx] = new_pre
        fu[post_idx] = new_post
        fi[i_idx] = new_i
        bg[g_idx] = new_bg
        bu[u_idx] = new_bu
        bi[i_idx] = new_bi

    if has_feedback:
        fu[fb_idx] += np.outer(fb_val / sumsq, agg - agg_start)
    return loss_sum, len(block.samples)


def train_epoch(model: Model, data_stream: Iterable[Instance],
                config: TrainConfig, loss: LossConfig, *,
                epoch: int | None = None) -> TrainReport:
    """One pass over the stream in order, via the block path if configured."""
    t0 = time.perf_counter()
    total = 0.0
    count = 0
    try:
        if config.feedback_range is not None:
            for block in group_blocks(data_stream, config.feedback_range):
                block_sum, block_count = train_block(
                    model, block, config, loss, first_ordinal=count)
                total += block_sum
                count += block_count
        else:
            for instance in data_stream:
                total += sgd_step(model, instance, config, loss, ordinal=count)
                count += 1
    except DivergenceError as exc:
        exc.epoch = epoch
        raise
    seconds = time.perf_counter() - t0
    return TrainReport(loss_mean=total / count if count else 0.0,
                       count=count, seconds=seconds)

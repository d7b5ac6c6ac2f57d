"""Encoders turning raw rating data into sparse training instances.

Each builder is a pure function from a rating record (plus whatever
side information the encoding needs) to an Instance; parallelizing over
records externally is safe. Zero-valued features are dropped: they
cannot change the score and only bloat the records.

Index layouts produced here:

* basic / baselines: user one-hot in the user group, item one-hot in
  the item group.
* pairwise: item group carries +1 for the preferred item and -1 for the
  other; train with the logistic loss and a high user-bias
  regularization so the stray user bias is pushed to zero.
* temporal: two user blocks of size n (number of users); index u holds
  the interpolation weight toward the start of the time window, index
  u + n the weight toward the end.
* neighborhood: one global feature per trainable item-item pair,
  valued |R(u)|^-1/2 * (r_uj - mean_u) for each co-rated neighbor j.
* hierarchical: item group holds the track one-hot plus the artist
  one-hot offset by the track count.
* feedback: user group holds the user one-hot plus one entry per rated
  item at feedback_start + item, valued |R(u)|^-1/2 (or centered and
  scaled by it for explicit feedback); identical for all of a user's
  instances so grouped training can share the set.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import EMPTY_VEC, Instance, SparseVector
from .errors import FeatureError

Taxonomy = Mapping[int, int]


@dataclass(slots=True)
class RatingRecord:
    user: int
    item: int
    rating: float
    timestamp: int | None = None

    def __post_init__(self):
        if self.user < 0 or self.item < 0:
            raise FeatureError(
                f"negative id in record ({self.user}, {self.item})")


@dataclass(frozen=True, slots=True)
class TemporalSpec:
    """Time window and user count for the interpolation encoding."""

    start: int
    end: int
    num_user: int

    def __post_init__(self):
        if self.end <= self.start:
            raise FeatureError("time window must satisfy end > start")
        if self.num_user <= 0:
            raise FeatureError("num_user must be positive")


@dataclass(slots=True)
class NeighborhoodSpec:
    """Trainable item-pair slots plus per-user rating history.

    pair_slots maps (target_item, rated_item) to its global feature
    index; rated maps user -> ((item, rating), ...); user_means holds
    each user's precomputed mean rating (training split only).
    """

    pair_slots: Mapping[tuple[int, int], int]
    rated: Mapping[int, Sequence[tuple[int, float]]]
    user_means: Mapping[int, float]

    @property
    def num_slots(self) -> int:
        return len(self.pair_slots)

    @classmethod
    def from_records(cls, records: Iterable[RatingRecord],
                     min_support: int = 2) -> "NeighborhoodSpec":
        """Candidate pairs are co-rated item pairs with enough support."""
        rated: dict[int, list[tuple[int, float]]] = defaultdict(list)
        for rec in records:
            rated[rec.user].append((rec.item, rec.rating))
        support: dict[tuple[int, int], int] = defaultdict(int)
        for items in rated.values():
            ids = sorted({item for item, _ in items})
            for a in ids:
                for b in ids:
                    if a != b:
                        support[(a, b)] += 1
        pairs = sorted(p for p, n in support.items() if n >= min_support)
        pair_slots = {pair: slot for slot, pair in enumerate(pairs)}
        user_means = {
            user: sum(r for _, r in items) / len(items)
            for user, items in rated.items()
        }
        return cls(pair_slots=pair_slots,
                   rated={u: tuple(items) for u, items in rated.items()},
                   user_means=user_means)


class BaselineVariant(enum.Enum):
    USER_MEAN = "user_mean"
    USER_ITEM_MEAN = "user_item_mean"


def _one_hot(index: int) -> SparseVector:
    return SparseVector.from_pairs([(index, 1.0)])


def _check_id(value: int, size: int, what: str) -> None:
    if not 0 <= value < size:
        raise FeatureError(f"{what} id {value} out of range [0, {size})")


def build_basic(record: RatingRecord, num_user: int, num_item: int) -> Instance:
    """Plain factorization encoding: user and item one-hots."""
    _check_id(record.user, num_user, "user")
    _check_id(record.item, num_item, "item")
    return Instance(label=record.rating,
                    global_feats=EMPTY_VEC,
                    user_feats=_one_hot(record.user),
                    item_feats=_one_hot(record.item))


def build_pairwise(user: int, preferred: int, other: int) -> Instance:
    """Ranking encoding: +1 on the preferred item, -1 on the other, label 1."""
    if preferred == other:
        raise FeatureError(f"degenerate pair: item {preferred} vs itself")
    return Instance(label=1.0,
                    global_feats=EMPTY_VEC,
                    user_feats=_one_hot(user),
                    item_feats=SparseVector.from_pairs(
                        [(preferred, 1.0), (other, -1.0)]))


def build_temporal(record: RatingRecord, spec: TemporalSpec) -> Instance:
    """Interpolate the user representation between window start and end."""
    if record.timestamp is None:
        raise FeatureError("temporal encoding needs a timestamp")
    t = record.timestamp
    if not spec.start <= t <= spec.end:
        raise FeatureError(
            f"timestamp {t} outside window [{spec.start}, {spec.end}]")
    _check_id(record.user, spec.num_user, "user")
    span = spec.end - spec.start
    w_start = (spec.end - t) / span
    w_end = (t - spec.start) / span
    user_feats = SparseVector.from_pairs(
        [(record.user, w_start), (record.user + spec.num_user, w_end)],
        drop_zeros=True)
    return Instance(label=record.rating,
                    global_feats=EMPTY_VEC,
                    user_feats=user_feats,
                    item_feats=_one_hot(record.item))


def build_neighborhood(record: RatingRecord, spec: NeighborhoodSpec) -> Instance:
    """Offset encoding from the user's other ratings of related items.

    The record's own rating is excluded from its history so the target
    never leaks into its own features.
    """
    if record.user not in spec.user_means:
        raise FeatureError(f"no mean rating available for user {record.user}")
    mean = spec.user_means[record.user]
    history = [(item, r) for item, r in spec.rated.get(record.user, ())
               if item != record.item]
    pairs = []
    if history:
        norm = 1.0 / math.sqrt(len(history))
        for item, r in history:
            slot = spec.pair_slots.get((record.item, item))
            if slot is not None:
                pairs.append((slot, norm * (r - mean)))
    return Instance(label=record.rating,
                    global_feats=SparseVector.from_pairs(pairs, drop_zeros=True),
                    user_feats=_one_hot(record.user),
                    item_feats=_one_hot(record.item))


def build_hierarchical(record: RatingRecord, taxonomy: Taxonomy,
                       num_tracks: int) -> Instance:
    """Track plus parent-artist encoding; artists live above the tracks."""
    if record.item not in taxonomy:
        raise FeatureError(f"track {record.item} missing from taxonomy")
    _check_id(record.item, num_tracks, "track")
    artist = taxonomy[record.item]
    return Instance(label=record.rating,
                    global_feats=EMPTY_VEC,
                    user_feats=_one_hot(record.user),
                    item_feats=SparseVector.from_pairs(
                        [(record.item, 1.0), (num_tracks + artist, 1.0)]))


def build_linear_baselines(record: RatingRecord, variant: BaselineVariant,
                           num_user: int, num_item: int) -> Instance:
    """Mean-effect baselines; train with num_factor=0 (pure linear model)."""
    _check_id(record.user, num_user, "user")
    if variant is BaselineVariant.USER_MEAN:
        item_feats = EMPTY_VEC
    else:
        _check_id(record.item, num_item, "item")
        item_feats = _one_hot(record.item)
    return Instance(label=record.rating,
                    global_feats=EMPTY_VEC,
                    user_feats=_one_hot(record.user),
                    item_feats=item_feats)


def build_feedback(records: Iterable[RatingRecord], *, explicit: bool,
                   num_user: int, num_item: int,
                   feedback_start: int | None = None) -> list[Instance]:
    """Encode per-user feedback features shared by all of a user's instances.

    Every instance of a user carries the identical feedback set, so a
    grouped trainer can aggregate it once per user. Explicit feedback
    centers each rated item's value on the user's mean rating.
    """
    if feedback_start is None:
        feedback_start = num_user
    if feedback_start < num_user:
        raise FeatureError(
            f"feedback_start {feedback_start} overlaps identity indices "
            f"[0, {num_user})")
    by_user: dict[int, list[RatingRecord]] = defaultdict(list)
    order: list[int] = []
    for rec in records:
        _check_id(rec.user, num_user, "user")
        _check_id(rec.item, num_item, "item")
        if rec.user not in by_user:
            order.append(rec.user)
        by_user[rec.user].append(rec)

    instances: list[Instance] = []
    for user in order:
        recs = by_user[user]
        norm = 1.0 / math.sqrt(len(recs))
        if explicit:
            mean = sum(r.rating for r in recs) / len(recs)
            fb_pairs = [(feedback_start + r.item, norm * (r.rating - mean))
                        for r in recs]
        else:
            fb_pairs = [(feedback_start + r.item, norm) for r in recs]
        user_feats = SparseVector.from_pairs(
            [(user, 1.0)] + fb_pairs, drop_zeros=True)
        for rec in recs:
            instances.append(Instance(label=rec.rating,
                                      global_feats=EMPTY_VEC,
                                      user_feats=user_feats,
                                      item_feats=_one_hot(rec.item)))
    return instances


def read_ratings(path) -> list[RatingRecord]:
    """Read `user item rating [timestamp]` lines (whitespace separated)."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) not in (3, 4):
                raise FeatureError(
                    f"line {lineno}: expected 'user item rating [timestamp]', "
                    f"got {len(parts)} fields")
            try:
                user, item = int(parts[0]), int(parts[1])
                rating = float(parts[2])
                ts = int(parts[3]) if len(parts) == 4 else None
            except ValueError as exc:
                raise FeatureError(f"line {lineno}: {exc}") from None
            records.append(RatingRecord(user, item, rating, ts))
    return records


def read_taxonomy(path) -> dict[int, int]:
    """Read `track artist` lines into a mapping."""
    taxonomy: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise FeatureError(
                    f"line {lineno}: expected 'track artist', got {stripped!r}")
            try:
                taxonomy[int(parts[0])] = int(parts[1])
            except ValueError as exc:
                raise FeatureError(f"line {lineno}: {exc}") from None
    return taxonomy

"""Text parsing, seeded shuffling, binary buffers, prefetch, model files.

Text instance format, one instance per line::

    label ng nu ni  i:v ... i:v

with ng global, then nu user, then ni item `index:value` tokens, all
space-separated. Lines starting with `#` and blank lines are skipped.
Feature lists may arrive unsorted; duplicate indices are rejected.

Binary buffer format (all little-endian)::

    magic  b"FMFB"
    u32    format version (currently 1)
    u64    instance count
    u32x3  dimensions: num_global, num_user, num_item
    f64    mean training label
    then per instance:
        f32    label
        u32x3  ng, nu, ni
        (u32 index, f32 value) pairs for global, user, item in order

Trailing bytes after the declared count are an error. Instance values
round-trip through 32-bit floats; in memory everything is held in
doubles.

Model file format (all little-endian)::

    magic  b"FMFM"
    u32    format version (currently 1)
    u32x4  num_global, num_user, num_item, num_factor
    u8     loss kind (0 = l2, 1 = logistic, 2 = smoothed_hinge)
    f64    base score
    f64[]  bias_global, bias_user, bias_item,
           factor_user (row-major), factor_item (row-major)
"""

from __future__ import annotations

import math
import struct
import sys
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import EMPTY_VEC, Instance, LossConfig, Model, ModelDims, SparseVector
from .errors import CorruptBufferError, DimensionMismatchError, ModelFileError, ParseError

BUFFER_MAGIC = b"FMFB"
BUFFER_VERSION = 1
MODEL_MAGIC = b"FMFM"
MODEL_VERSION = 1

_BUFFER_HEADER = struct.Struct("<4sIQIIId")
_RECORD_HEAD = struct.Struct("<fIII")
_MODEL_HEADER = struct.Struct("<4sIIIIIBd")
_PAIR_DTYPE = np.dtype([("i", "<u4"), ("v", "<f4")])

_LOSS_CODES = {LossConfig.L2_IDENTITY: 0,
               LossConfig.LOGISTIC: 1,
               LossConfig.SMOOTHED_HINGE: 2}
_LOSS_FROM_CODE = {code: loss for loss, code in _LOSS_CODES.items()}


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def parse_line(line: str, lineno: int | None = None) -> Instance:
    """Parse one instance line; raises ParseError with the line number."""
    tokens = line.split()
    if len(tokens) < 4:
        raise ParseError(f"expected at least 4 tokens, found {len(tokens)}", lineno)
    try:
        label = float(tokens[0])
    except ValueError:
        raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
    if not math.isfinite(label):
        raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
    counts = []
    for tok in tokens[1:4]:
        try:
            n = int(tok)
        except ValueError:
            raise ParseError(f"bad feature count {tok!r}", lineno) from None
        if n < 0:
            raise ParseError(f"negative feature count {tok!r}", lineno)
        counts.append(n)
    ng, nu, ni = counts
    feats = tokens[4:]
    if len(feats) != ng + nu + ni:
        raise ParseError(
            f"expected {ng + nu + ni} feature tokens, found {len(feats)}", lineno)

    def build(toks: list[str]) -> SparseVector:
        pairs = []
        for tok in toks:
            idx_s, _, val_s = tok.partition(":")
            if not val_s:
                raise ParseError(f"malformed feature token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            pairs.append((idx, val))
        try:
            return SparseVector.from_pairs(pairs)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None

    return Instance(label=label,
                    global_feats=build(feats[:ng]),
                    user_feats=build(feats[ng:ng + nu]),
                    item_feats=build(feats[ng + nu:]))


def _format_number(x: float) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_instance(instance: Instance) -> str:
    """Inverse of parse_line (canonical, index-sorted form)."""
    parts = [_format_number(instance.label),
             str(len(instance.global_feats)),
             str(len(instance.user_feats)),
             str(len(instance.item_feats))]
    for vec in (instance.global_feats, instance.user_feats, instance.item_feats):
        parts.extend(f"{i}:{_format_number(v)}" for i, v in vec)
    return " ".join(parts)


def iter_text_instances(path) -> Iterator[tuple[int, Instance]]:
    """Yield (lineno, instance) from a text file, skipping comments/blanks."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, parse_line(stripped, lineno)


# ---------------------------------------------------------------------------
# shuffling
# ---------------------------------------------------------------------------

def _fisher_yates(items: list, seed: int) -> None:
    # Classic in-place Fisher-Yates driven by numpy's PCG64 generator,
    # which is stable across platforms for a fixed seed.
    rng = np.random.default_rng(seed)
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        items[i], items[j] = items[j], items[i]


def shuffle_file(input_path, output_path, seed: int,
                 feedback_range: tuple[int, int] | None = None) -> None:
    """Write a seeded permutation of the input lines.

    Line bytes are preserved. Without a feedback range, single lines are
    permuted. With one, maximal runs of consecutive instances sharing an
    identical feedback feature set are kept contiguous in their original
    inner order and the runs are permuted instead, so grouped training
    data stays grouped.
    """
    with open(input_path, "rb") as handle:
        data = handle.read()
    had_final_newline = data.endswith(b"\n")
    lines = data.split(b"\n")
    if had_final_newline:
        lines = lines[:-1]

    if feedback_range is None:
        units = lines
    else:
        start, end = feedback_range
        units = []
        current_key = None
        for raw in lines:
            stripped = raw.strip()
            if not stripped or stripped.startswith(b"#"):
                # Comments travel with the run they follow (or open a new one).
                if units:
                    units[-1].append(raw)
                else:
                    units.append([raw])
                continue
            instance = parse_line(stripped.decode("utf-8"))
            uf = instance.user_feats
            lo = int(np.searchsorted(uf.indices, start, side="left"))
            hi = int(np.searchsorted(uf.indices, end, side="left"))
            key = (tuple(int(i) for i in uf.indices[lo:hi]),
                   tuple(float(v) for v in uf.values[lo:hi]))
            if key == current_key and units:
                units[-1].append(raw)
            else:
                units.append([raw])
                current_key = key

    _fisher_yates(units, seed)

    with open(output_path, "wb") as handle:
        if feedback_range is None:
            out = b"\n".join(units)
        else:
            out = b"\n".join(b"\n".join(unit) for unit in units)
        handle.write(out)
        if had_final_newline and (units or out):
            handle.write(b"\n")


# ---------------------------------------------------------------------------
# binary buffer
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class BufferInfo:
    """Header contents of a binary buffer."""

    count: int
    num_global: int
    num_user: int
    num_item: int
    label_mean: float

    def dims(self, num_factor: int = 0) -> ModelDims:
        return ModelDims(self.num_global, self.num_user, self.num_item, num_factor)


def _pack_instance(instance: Instance) -> bytes:
    gf, uf, itf = instance.global_feats, instance.user_feats, instance.item_feats
    total = len(gf) + len(uf) + len(itf)
    pairs = np.empty(total, dtype=_PAIR_DTYPE)
    pos = 0
    for vec in (gf, uf, itf):
        n = len(vec)
        pairs["i"][pos:pos + n] = vec.indices
        pairs["v"][pos:pos + n] = vec.values
        pos += n
    head = _RECORD_HEAD.pack(instance.label, len(gf), len(uf), len(itf))
    return head + pairs.tobytes()


def write_buffer(buffer_path, instances: Iterable[tuple[int | None, Instance]],
                 dims: ModelDims | None = None) -> BufferInfo:
    """Stream instances into a binary buffer file.

    `instances` yields (context, instance) pairs where context is a line
    number (or None) used in error messages. With explicit dims, every
    index is validated against them; otherwise dims are inferred as
    max index + 1 per group. The header is patched in at the end.
    """
    count = 0
    label_sum = 0.0
    max_idx = [-1, -1, -1]
    group_names = ("global", "user", "item")
    declared = None if dims is None else (dims.num_global, dims.num_user, dims.num_item)

    with open(buffer_path, "wb") as handle:
        handle.write(_BUFFER_HEADER.pack(BUFFER_MAGIC, BUFFER_VERSION, 0, 0, 0, 0, 0.0))
        for context, instance in instances:
            vecs = (instance.global_feats, instance.user_feats, instance.item_feats)
            for g, vec in enumerate(vecs):
                if len(vec) == 0:
                    continue
                top = int(vec.indices[-1])
                if declared is not None and top >= declared[g]:
                    where = f" (line {context})" if context is not None else ""
                    raise DimensionMismatchError(
                        group_names[g] + where, top, declared[g])
                if top > max_idx[g]:
                    max_idx[g] = top
            handle.write(_pack_instance(instance))
            label_sum += instance.label
            count += 1
        mean = label_sum / count if count else 0.0
        final = declared if declared is not None else tuple(m + 1 for m in max_idx)
        handle.seek(0)
        handle.write(_BUFFER_HEADER.pack(
            BUFFER_MAGIC, BUFFER_VERSION, count,
            final[0], final[1], final[2], mean))
    return BufferInfo(count, final[0], final[1], final[2], mean)


def make_buffer(text_path, buffer_path, dims: ModelDims | None = None) -> BufferInfo:
    """Parse a text instance file into a binary buffer."""
    return write_buffer(buffer_path, iter_text_instances(text_path), dims)


def read_buffer_header(buffer_path) -> BufferInfo:
    with open(buffer_path, "rb") as handle:
        head = handle.read(_BUFFER_HEADER.size)
    if len(head) < _BUFFER_HEADER.size:
        raise CorruptBufferError("buffer shorter than header")
    magic, version, count, ng, nu, ni, mean = _BUFFER_HEADER.unpack(head)
    if magic != BUFFER_MAGIC:
        raise CorruptBufferError(f"bad magic {magic!r} (expected {BUFFER_MAGIC!r})")
    if version != BUFFER_VERSION:
        raise CorruptBufferError(
            f"unsupported buffer version {version} (expected {BUFFER_VERSION})")
    return BufferInfo(count, ng, nu, ni, mean)


def read_buffer(buffer_path, *, chunk_size: int = 1 << 20) -> Iterator[Instance]:
    """Stream instances from a buffer; memory stays O(chunk), not O(file).

    Truncation raises after the last complete instance; bytes beyond the
    declared count are rejected.
    """
    info = read_buffer_header(buffer_path)
    bounds = (info.num_global, info.num_user, info.num_item)
    group_names = ("global", "user", "item")
    rec_size = _RECORD_HEAD.size
    unpack_head = _RECORD_HEAD.unpack_from

    with open(buffer_path, "rb") as handle:
        handle.seek(_BUFFER_HEADER.size)
        buf = b""
        off = 0

        def refill(need: int) -> bool:
            nonlocal buf, off
            if len(buf) - off >= need:
                return True
            chunk = handle.read(max(chunk_size, need))
            buf = buf[off:] + chunk
            off = 0
            return len(buf) >= need

        for _ in range(info.count):
            if not refill(rec_size):
                raise CorruptBufferError("truncated buffer: incomplete record header")
            label, ng, nu, ni = unpack_head(buf, off)
            off += rec_size
            total = ng + nu + ni
            if not refill(8 * total):
                raise CorruptBufferError("truncated buffer: incomplete feature data")
            pairs = np.frombuffer(buf, dtype=_PAIR_DTYPE, count=total, offset=off)
            off += 8 * total
            idx = pairs["i"].astype(np.int64)
            val = pairs["v"].astype(np.float64)
            splits = (0, ng, ng + nu, total)
            vecs = []
            for g in range(3):
                a, b = splits[g], splits[g + 1]
                if a == b:
                    vecs.append(EMPTY_VEC)
                    continue
                if idx[b - 1] >= bounds[g]:
                    raise CorruptBufferError(
                        f"{group_names[g]} feature index {int(idx[b - 1])} "
                        f"exceeds header dimension {bounds[g]}")
                vecs.append(SparseVector(idx[a:b], val[a:b]))
            yield Instance(float(label), vecs[0], vecs[1], vecs[2])

        if len(buf) - off > 0 or handle.read(1):
            raise CorruptBufferError("trailing bytes after declared instance count")


# ---------------------------------------------------------------------------
# prefetch pipeline
# ---------------------------------------------------------------------------

def _batch_size(capacity: int) -> int:
    return 1 if capacity < 128 else 64


_END = object()


class _ProducerFailure:
    __slots__ = ("exc",)

    def __init__(self, exc: BaseException):
        self.exc = exc


def prefetch(stream: Iterable[Instance], capacity: int = 4096,
             switch_interval: float | None = 0.02) -> Iterator[Instance]:
    """Decode ahead on a separate thread through a bounded FIFO queue.

    The consumer sees exactly the input sequence; at most `capacity`
    instances sit in the queue at any time. Items move in batches, and
    a refilling producer is only woken once the backlog has drained to
    half, so the two threads alternate in long bursts instead of
    thrashing the interpreter lock. `switch_interval`, when not None,
    coarsens the interpreter's thread switch interval (process-wide)
    while the pipeline runs, for the same reason; the previous value is
    restored on exit. Producer errors re-raise at the consumer at the
    position they occurred. Closing the generator stops the producer
    promptly.
    """
    if capacity < 1:
        raise ValueError("capacity must be at least 1")
    batch_len = _batch_size(capacity)
    max_batches = max(1, capacity // batch_len)
    low_water = max(1, max_batches // 2)
    items: deque = deque()
    lock = threading.Lock()
    not_full = threading.Condition(lock)
    not_empty = threading.Condition(lock)
    stop = threading.Event()

    def put(item) -> bool:
        with not_full:
            if len(items) >= max_batches:
                while len(items) > low_water:
                    if stop.is_set():
                        return False
                    not_full.wait(0.05)
            items.append(item)
            not_empty.notify()
            return True

    def produce() -> None:
        batch: list[Instance] = []
        try:
            for instance in stream:
                batch.append(instance)
                if len(batch) >= batch_len:
                    if not put(batch):
                        return
                    batch = []
            if batch:
                if not put(batch):
                    return
            put(_END)
        except BaseException as exc:  # surfaces at the consumer
            if batch:
                if not put(batch):
                    return
            put(_ProducerFailure(exc))

    previous_switch = sys.getswitchinterval()
    if switch_interval is not None:
        sys.setswitchinterval(switch_interval)
    worker = threading.Thread(target=produce, name="fmf-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            with not_empty:
                while not items:
                    not_empty.wait()
                got = items.popleft()
                if len(items) <= low_water:
                    not_full.notify()
            if got is _END:
                return
            if isinstance(got, _ProducerFailure):
                raise got.exc
            yield from got
    finally:
        stop.set()
        with lock:
            items.clear()
            not_full.notify()
        worker.join(timeout=5.0)
        if switch_interval is not None:
            sys.setswitchinterval(previous_switch)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def save_model(model: Model, path, loss: LossConfig) -> None:
    """Write all parameters losslessly at 64-bit precision."""
    dims = model.dims
    with open(path, "wb") as handle:
        handle.write(_MODEL_HEADER.pack(
            MODEL_MAGIC, MODEL_VERSION,
            dims.num_global, dims.num_user, dims.num_item, dims.num_factor,
            _LOSS_CODES[loss], model.base_score))
        for block in (model.bias_global, model.bias_user, model.bias_item,
                      model.factor_user, model.factor_item):
            handle.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_model(path) -> tuple[Model, LossConfig]:
    with open(path, "rb") as handle:
        head = handle.read(_MODEL_HEADER.size)
        if len(head) < _MODEL_HEADER.size:
            raise ModelFileError("model file shorter than header")
        magic, version, ng, nu, ni, k, loss_code, base = _MODEL_HEADER.unpack(head)
        if magic != MODEL_MAGIC:
            raise ModelFileError(f"bad magic {magic!r} (expected {MODEL_MAGIC!r})")
        if version != MODEL_VERSION:
            raise ModelFileError(
                f"unsupported model version {version} (expected {MODEL_VERSION})")
        if loss_code not in _LOSS_FROM_CODE:
            raise ModelFileError(f"unknown loss code {loss_code}")
        body = handle.read()
    expected = 8 * (ng + nu + ni + nu * k + ni * k)
    if len(body) != expected:
        raise ModelFileError(
            f"model body has {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    offsets = np.cumsum([0, ng, nu, ni, nu * k, ni * k])
    model = Model(
        dims=ModelDims(ng, nu, ni, k),
        base_score=base,
        bias_global=flat[offsets[0]:offsets[1]].copy(),
        bias_user=flat[offsets[1]:offsets[2]].copy(),
        bias_item=flat[offsets[2]:offsets[3]].copy(),
        factor_user=flat[offsets[3]:offsets[4]].reshape(nu, k).copy(),
        factor_item=flat[offsets[4]:offsets[5]].reshape(ni, k).copy(),
    )
    return model, _LOSS_FROM_CODE[loss_code]

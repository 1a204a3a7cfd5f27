"""
Replay Buffer v1.0
==================
Reservoir-sampled episodic memory for experience replay.

Each stored item carries the input, its label, the soft logits the model
produced when the item was inserted, and the id of the task it came from.
Logits are frozen at insertion and never refreshed.

Features:
- Reservoir sampling (every offered item resident with probability M/n)
- Uniform batch draws without replacement
- Versioned little-endian binary snapshots for checkpointing
"""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
import logging
import os
import struct

import numpy as np

from cl_errors import ConfigurationError, FormatError, InputError, ShapeError

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"RSVB"
SNAPSHOT_VERSION = 1
# magic, version, capacity, stream_count, item count, feature dim, class count
_SNAPSHOT_HEADER = struct.Struct("<4sIQQQQQ")


@dataclass(frozen=True)
class MemoryItem:
    """One buffer entry; x and z are read-only copies"""
    x: np.ndarray
    y: int
    z: np.ndarray
    task_id: int

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).ravel()
        z = np.array(self.z, dtype=np.float64).ravel()
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "task_id", int(self.task_id))


class MemoryBuffer:
    """
    Fixed-capacity reservoir.

    Example:
        buffer = MemoryBuffer(capacity=200, class_count=10)
        reservoir_offer(buffer, MemoryItem(x, y, z, task_id=0), rng)
        batch = sample_batch(buffer, 32, rng)
    """

    def __init__(self, capacity: int, class_count: int, feature_dim: Optional[int] = None):
        if int(capacity) < 1:
            raise ConfigurationError(f"buffer capacity must be >= 1, got {capacity}")
        if int(class_count) < 1:
            raise ConfigurationError(f"class_count must be >= 1, got {class_count}")
        self.capacity = int(capacity)
        self.class_count = int(class_count)
        self.feature_dim = None if feature_dim is None else int(feature_dim)
        self.items: list[MemoryItem] = []
        self.stream_count = 0

    def __len__(self) -> int:
        return len(self.items)

    @property
    def is_empty(self) -> bool:
        return not self.items

    @property
    def is_full(self) -> bool:
        return len(self.items) >= self.capacity

    def task_histogram(self) -> dict:
        """Resident item count per task id"""
        return dict(sorted(Counter(item.task_id for item in self.items).items()))

    def __repr__(self) -> str:
        return (f"MemoryBuffer(capacity={self.capacity}, resident={len(self.items)}, "
                f"stream_count={self.stream_count})")


def _validate_item(buffer: MemoryBuffer, item: MemoryItem) -> None:
    if item.z.size != buffer.class_count:
        raise InputError(
            f"soft-logit length {item.z.size} != buffer class count {buffer.class_count}"
        )
    if not 0 <= item.y < buffer.class_count:
        raise InputError(f"label {item.y} outside [0, {buffer.class_count})")
    if buffer.feature_dim is None:
        buffer.feature_dim = item.x.size
    elif item.x.size != buffer.feature_dim:
        raise ShapeError(f"input length {item.x.size} != buffer feature dim {buffer.feature_dim}")


def reservoir_offer(buffer: MemoryBuffer, item: MemoryItem, rng: np.random.Generator) -> bool:
    """
    Offer one stream item to the buffer.

    Args:
        buffer: target reservoir
        item: candidate entry
        rng: buffer generator

    Returns:
        True if the item is now resident
    """
    _validate_item(buffer, item)
    buffer.stream_count += 1

    if len(buffer.items) < buffer.capacity:
        buffer.items.append(item)
        return True

    slot = int(rng.integers(0, buffer.stream_count))
    if slot < buffer.capacity:
        buffer.items[slot] = item
        return True
    return False


def sample_batch(buffer: MemoryBuffer, k: int, rng: np.random.Generator) -> list:
    """min(k, resident) distinct items drawn uniformly; [] for an empty buffer."""
    resident = len(buffer.items)
    if resident == 0 or k <= 0:
        return []
    k = min(int(k), resident)
    picks = rng.choice(resident, size=k, replace=False)
    return [buffer.items[i] for i in picks]


def stack_items(items: Sequence[MemoryItem]) -> tuple:
    """(x, y, z, task_ids) arrays for a list of items."""
    if not items:
        raise InputError("cannot stack an empty item list")
    x = np.vstack([item.x for item in items])
    y = np.array([item.y for item in items], dtype=np.int64)
    z = np.vstack([item.z for item in items])
    task_ids = np.array([item.task_id for item in items], dtype=np.int64)
    return x, y, z, task_ids


def simulate_residency(capacity: int, stream_length: int, trials: int,
                       rng: np.random.Generator) -> np.ndarray:
    """
    Final residency frequency of every stream position over independent trials.

    Runs the same replacement rule as reservoir_offer(), vectorised across
    trials. Used to audit the uniform-reservoir guarantee at sample sizes
    where per-item Python calls would be too slow.
    """
    if capacity < 1 or stream_length < 0 or trials < 1:
        raise ConfigurationError("capacity and trials must be >= 1, stream_length >= 0")
    filled = min(capacity, stream_length)
    slots = np.tile(np.arange(filled), (trials, 1))
    for n in range(capacity + 1, stream_length + 1):
        picks = rng.integers(0, n, size=trials)
        hit = picks < capacity
        slots[hit, picks[hit]] = n - 1
    counts = np.bincount(slots.ravel(), minlength=stream_length)
    return counts / trials


def _record_dtype(feature_dim: int, class_count: int) -> np.dtype:
    return np.dtype([
        ("x", "<f8", (feature_dim,)),
        ("y", "<i8"),
        ("task_id", "<i8"),
        ("z", "<f8", (class_count,)),
    ])


def save_snapshot(buffer: MemoryBuffer, path) -> Path:
    """Write the buffer to a versioned binary file (atomic rename)."""
    path = Path(path)
    feature_dim = buffer.feature_dim or 0
    records = np.zeros(len(buffer.items), dtype=_record_dtype(feature_dim, buffer.class_count))
    for i, item in enumerate(buffer.items):
        records[i] = (item.x, item.y, item.task_id, item.z)

    header = _SNAPSHOT_HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, buffer.capacity, buffer.stream_count,
        len(buffer.items), feature_dim, buffer.class_count,
    )
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(records.tobytes())
    os.replace(tmp, path)
    logger.info(f"Saved buffer snapshot ({len(buffer.items)} items) to {path}")
    return path


def load_snapshot(path) -> MemoryBuffer:
    """Read a buffer written by save_snapshot()."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _SNAPSHOT_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")

    magic, version, capacity, stream_count, count, feature_dim, class_count = \
        _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"{path}: unsupported snapshot version {version}")

    dtype = _record_dtype(feature_dim, class_count)
    payload = data[_SNAPSHOT_HEADER.size:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {count * dtype.itemsize} "
            f"for {count} items"
        )

    buffer = MemoryBuffer(capacity, class_count, feature_dim or None)
    records = np.frombuffer(payload, dtype=dtype, count=count)
    buffer.items = [
        MemoryItem(x=r["x"], y=int(r["y"]), z=r["z"], task_id=int(r["task_id"]))
        for r in records
    ]
    buffer.stream_count = stream_count
    return buffer

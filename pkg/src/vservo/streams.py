"""Deterministic, splittable random streams.

Every stochastic component draws from its own stream, derived from a master
seed plus a tuple of labels (strings or ints).  Streams are backed by the
counter-based Philox generator, keyed with a blake2b hash of the labels, so

* the same (master_seed, labels) always yields the same sequence, on any
  platform, and
* sibling streams (e.g. per-sample streams of a dataset) are independent of
  the order in which they are consumed.

Label conventions used in this package:

    ("scene", aspect)            per-aspect scene randomization
    ("dataset", kind, index)     per-sample dataset draws
    ("train", *context)          batching, init, task sampling
    ("eval", *context)           evaluation scenes and start offsets
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "split_seed"]


def _label_bytes(label: int | str) -> bytes:
    if isinstance(label, (int, np.integer)):
        return b"i" + int(label).to_bytes(16, "little", signed=True)
    if isinstance(label, str):
        return b"s" + label.encode("utf-8")
    raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")


def _digest(master_seed: int, labels: tuple[int | str, ...]) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(master_seed).to_bytes(16, "little", signed=True))
    for label in labels:
        part = _label_bytes(label)
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    return h.digest()


def stream(master_seed: int, *labels: int | str) -> np.random.Generator:
    """Independent generator for (master_seed, labels)."""
    key = np.frombuffer(_digest(master_seed, labels), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def split_seed(master_seed: int, *labels: int | str) -> int:
    """64-bit child seed for components that take a plain seed."""
    return int.from_bytes(_digest(master_seed, labels)[:8], "little")

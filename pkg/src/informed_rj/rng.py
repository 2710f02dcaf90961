"""Counter-based random streams.

Every draw made by a sampler comes from a Philox stream whose key is
``(seed, chain)`` and whose counter encodes ``(purpose, replicate, model, iteration)``.
Streams are therefore independent of execution order: the N annealed
replicates of one iteration can run in any order, or in parallel, and still
consume exactly the same numbers.
"""

from __future__ import annotations

import hashlib
import threading
from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    CONTROL = 1      # model draw, acceptance, branch coin, replicate selection
    HMC = 2          # momentum and acceptance of parameter updates
    FORWARD = 3      # annealed paths from the current state
    REVERSE = 4      # reverse paths started at a proposed state
    NEIGHBOR_FWD = 5  # improved-proposal paths from the proposed state
    NEIGHBOR_REV = 6
    TUNING = 7       # HMC autotune and step-scale calibration
    ORACLE = 8


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, chain: int, iteration: int, purpose: Purpose,
           replicate: int = 0, model: int = 0) -> np.random.Generator:
    """Generator for one (iteration, purpose, replicate, model) cell."""
    if replicate >= 1 << 32:
        raise ValueError("replicate index must fit in 32 bits")
    key = np.array([seed & _MASK64, chain & _MASK64], dtype=np.uint64)
    counter = np.array([0, model & _MASK64, (int(purpose) << 32) | replicate,
                        iteration & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


_local = threading.local()
_EMPTY_BUFFER = np.zeros(4, dtype=np.uint64)


def scratch_stream(seed: int, chain: int, iteration: int, purpose: Purpose,
                   replicate: int = 0, model: int = 0) -> np.random.Generator:
    """Same draws as :func:`stream`, from one reused per-thread generator.

    The returned generator is only valid until the next call in the same
    thread; use it for draws that are consumed immediately.
    """
    if replicate >= 1 << 32:
        raise ValueError("replicate index must fit in 32 bits")
    gen = getattr(_local, "gen", None)
    if gen is None:
        gen = _local.gen = np.random.Generator(np.random.Philox(key=np.zeros(2, dtype=np.uint64)))
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array([0, model & _MASK64, (int(purpose) << 32) | replicate,
                                       iteration & _MASK64], dtype=np.uint64),
                  "key": np.array([seed & _MASK64, chain & _MASK64], dtype=np.uint64)},
        "buffer": _EMPTY_BUFFER, "buffer_pos": 4, "has_uint32": 0, "uinteger": 0,
    }
    return gen


def derived_seed(*parts) -> int:
    """Stable 64-bit seed from strings and integers (independent of hash randomization)."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")

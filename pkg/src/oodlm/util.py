"""Small shared helpers: seeding, hashing, atomic writes, distribution checks."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


class UnseenTokenError(ValueError):
    """Raised when a conditional distribution is requested for a token with no support."""


def check_dist(p, tol: float = 1e-9) -> np.ndarray:
    """Validate that ``p`` is a probability vector; return it as float64.

    Entries must be finite and non-negative and the total mass must be within
    ``tol`` of 1.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"distribution must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("distribution contains non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"distribution contains negative entries (min {p.min():g})")
    total = float(p.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"distribution mass {total!r} deviates from 1 by more than {tol:g}")
    return p


def normalize(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    total = p.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError(f"cannot normalize vector with mass {total!r}")
    return p / total


def derive_seed(master_seed: int, label: str) -> int:
    """Stable child seed from a master seed and a purpose label."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_atomic(path: str, data) -> None:
    """Write bytes or text to ``path`` via a temp file + rename in one step."""
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

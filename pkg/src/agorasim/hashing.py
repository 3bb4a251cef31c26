"""Canonical serialization and digest primitives.

All persisted artifacts go through canonical_json so that byte-identical
reruns are a property of the data alone: keys sorted, no insignificant
whitespace, UTF-8 with non-ASCII characters kept literal.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def canonical_json(obj) -> str:
    """Serialize to the canonical JSON form used for hashing and exports."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def stable_u64(*parts) -> int:
    """Derive a 64-bit integer from the given parts, stable across processes.

    Used to seed numpy generators; never uses Python's salted hash().
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

"""Canonical byte encodings shared by signing, hashing, and the chain file.

Every hash and signature in the system is computed over the output of
:func:`canonical_bytes`, so two processes that agree on a value always
agree on its digest.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from typing import Any


def canonical_bytes(obj: Any) -> bytes:
    """Serialize *obj* as canonical JSON: sorted keys, no insignificant whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    """sha256 hex digest of the canonical JSON encoding of *obj*."""
    return sha256_hex(canonical_bytes(obj))


def to_iso8601(ts: int) -> str:
    """Render a unix timestamp as an ISO-8601 UTC string (second precision)."""
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def from_iso8601(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def leading_zero_bits(hex_digest: str) -> int:
    """Number of leading zero bits in a 256-bit hex digest."""
    value = int(hex_digest, 16)
    return 256 - value.bit_length()

"""Canonical serialization helpers shared by artifact writers.

Artifacts that must be byte-reproducible (plans, manifests, reports,
scenario files) all go through :func:`canonical_json`: UTF-8, sorted
keys, compact separators, trailing newline.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_json(obj: Any) -> str:
    """Serialize ``obj`` deterministically: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_text(text: str) -> str:
    return sha256_hex(text.encode("utf-8"))

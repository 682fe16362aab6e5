"""File-backed result cache keyed by full numeric parameter tuples.

One JSON file per key under a cache directory.  Writes go through a
temporary file plus atomic rename, so concurrent writers of distinct keys
never corrupt each other.  Corrupt or mismatched entries are ignored with
a warning and the caller recomputes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping, Sequence

__all__ = ["ResultCache", "default_cache_path", "CACHE_ENV_VAR"]

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "RENYI_QKD_CACHE"


def default_cache_path() -> str | None:
    """Cache directory from the environment, or None when unset."""
    value = os.environ.get(CACHE_ENV_VAR, "").strip()
    return value or None


def _canonical(key: Sequence[Any]) -> str:
    # repr-roundtrip floats; sorted keys are irrelevant for a flat list but
    # keep the encoding deterministic across processes.
    return json.dumps(list(key), sort_keys=True, separators=(",", ":"))


class ResultCache:
    """Directory of JSON records, one per exact parameter tuple."""

    def __init__(self, path: str | os.PathLike[str]):
        self.root = Path(path)
        self.root.mkdir(parents=True, exist_ok=True)

    def _entry_path(self, canonical: str) -> Path:
        digest = hashlib.sha1(canonical.encode("utf-8")).hexdigest()
        return self.root / f"{digest}.json"

    def lookup(self, key: Sequence[Any]) -> dict[str, Any] | None:
        """Return the stored record for an exact-tuple hit, else None."""
        canonical = _canonical(key)
        path = self._entry_path(canonical)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        except OSError as exc:
            logger.warning("cache entry %s unreadable (%s); recomputing", path.name, exc)
            return None
        try:
            entry = json.loads(raw)
            stored_key = entry["key"]
            record = entry["record"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            logger.warning("cache entry %s corrupt (%s); recomputing", path.name, exc)
            return None
        if _canonical(stored_key) != canonical:
            # hash collision or tampering; fall through to recompute
            logger.warning("cache entry %s key mismatch; recomputing", path.name)
            return None
        if not isinstance(record, dict):
            logger.warning("cache entry %s record malformed; recomputing", path.name)
            return None
        return record

    def store(self, key: Sequence[Any], record: Mapping[str, Any]) -> None:
        """Persist a record atomically (write temp file, then rename)."""
        canonical = _canonical(key)
        path = self._entry_path(canonical)
        payload = json.dumps({"key": list(key), "record": dict(record)}, indent=1)
        fd, tmp_name = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(payload)
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.json"))

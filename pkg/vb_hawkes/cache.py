import json
import logging
import hashlib
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional
from datetime import datetime, timedelta

from .models import ModelFile


class Cache:
    """
    Directory of fitted models stored as JSON, one file per key

    File names are the md5 digest of the key. Each entry records the key,
    when it was saved and the payload, which for fits is ``ModelFile.to_dict()``.
    """

    INFINITE_TTL = -1

    def __init__(self, cache_dir: str, ttl: int = 86400):
        """
        Args:
            cache_dir: Directory holding the entries, created if missing
            ttl: Seconds an entry stays valid, or INFINITE_TTL
        """
        self.cache_dir = Path(cache_dir)
        self.ttl = ttl
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def entry_path(self, key: str) -> Path:
        return self.cache_dir / f"{hashlib.md5(key.encode()).hexdigest()}.json"

    def _expired(self, saved_at: Optional[str]) -> bool:
        if self.ttl == self.INFINITE_TTL:
            return False
        if not saved_at:
            return True
        try:
            age = datetime.now() - datetime.fromisoformat(saved_at)
        except ValueError:
            return True
        return age >= timedelta(seconds=self.ttl)

    @staticmethod
    def _read_entry(path: Path) -> Optional[Dict[str, Any]]:
        try:
            entry = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            logging.warning(f"Skipping unreadable cache entry {path.name}: {e}")
            return None
        return entry if isinstance(entry, dict) else None

    def get(self, key: str) -> Optional[Any]:
        """Payload stored under ``key``, or None when missing, unreadable or expired"""
        path = self.entry_path(key)
        if not path.exists():
            return None
        entry = self._read_entry(path)
        if entry is None or self._expired(entry.get('saved_at')):
            return None
        return entry.get('payload')

    def set(self, key: str, payload: Any):
        entry = {'key': key, 'saved_at': datetime.now().isoformat(), 'payload': payload}
        self.entry_path(key).write_text(json.dumps(entry))

    def get_or_fit(self, key: str, fit_fn: Callable[[], ModelFile]) -> ModelFile:
        """
        Model stored under ``key``; on a miss, run ``fit_fn`` and store its result

        Entries that no longer decode as a model file are refitted and overwritten.
        """
        payload = self.get(key)
        if payload is not None:
            try:
                model = ModelFile.from_dict(payload)
                logging.debug(f"Reusing cached fit {key[:80]}")
                return model
            except (KeyError, TypeError, ValueError) as e:
                logging.warning(f"Refitting, cached model is unreadable: {e}")

        model = fit_fn()
        self.set(key, model.to_dict())
        return model

    def list_cache_items(self, pattern: Optional[str] = None) -> List[Dict[str, Any]]:
        """
        Describe the stored entries

        Args:
            pattern: Only keep entries whose key contains this substring

        Returns:
            One dict per readable entry with key, hash, timestamp, size and is_expired
        """
        items = []
        for path in sorted(self.cache_dir.glob("*.json")):
            entry = self._read_entry(path)
            if entry is None:
                continue
            key = entry.get('key', 'unknown')
            if pattern and pattern not in key:
                continue
            items.append({
                'key': key,
                'hash': path.stem,
                'timestamp': entry.get('saved_at', 'unknown'),
                'size': path.stat().st_size,
                'is_expired': self._expired(entry.get('saved_at')),
            })
        return items

    def clear_expired(self) -> int:
        """Delete expired entries and return how many were removed"""
        stale = [item for item in self.list_cache_items() if item['is_expired']]
        for item in stale:
            (self.cache_dir / f"{item['hash']}.json").unlink(missing_ok=True)
        return len(stale)

    def clear_all(self) -> int:
        paths = list(self.cache_dir.glob("*.json"))
        for path in paths:
            path.unlink(missing_ok=True)
        return len(paths)

"""Field-definition context cache.

Keyed by (tenant, catalog version): a catalog edit changes the version
hash and misses naturally, without explicit invalidation. The cache only
ever stores the rendered block, so enabling it cannot change any response
body, only who pays the rendering cost.
"""

from __future__ import annotations

import threading
import time
from typing import Callable


class FieldDefCache:
    def __init__(self, ttl_seconds: float = 300.0, enabled: bool = True,
                 clock: Callable[[], float] = time.monotonic):
        self.ttl = ttl_seconds
        self.enabled = enabled
        self._clock = clock
        self._entries: dict[tuple[str, str], tuple[str, float]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    def get_or_render(self, tenant: str, catalog_version: str, render: Callable[[], str]) -> str:
        key = (tenant, catalog_version)
        now = self._clock()
        with self._lock:
            if self.enabled:
                entry = self._entries.get(key)
                if entry is not None and entry[1] > now:
                    self.hits += 1
                    return entry[0]
            self.misses += 1
        value = render()
        if self.enabled:
            with self._lock:
                self._entries[key] = (value, now + self.ttl)
        return value

    def counters(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses, "lookups": self.lookups}

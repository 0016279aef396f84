"""Field catalog: the column and computed-metric vocabulary of the query DSL."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterator

FIELD_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")

VALUE_TYPES = ("number", "string", "timestamp", "duration_seconds", "percentage")
AGG_FNS = ("avg", "sum", "min", "max", "count")

# Value types with a total order, usable with gte/lt filters.
ORDERED_VALUE_TYPES = frozenset({"number", "timestamp", "duration_seconds", "percentage"})
# Value types groupable as a dimension; timestamps bucket via time grains instead.
GROUPABLE_VALUE_TYPES = frozenset({"number", "string", "duration_seconds", "percentage"})


@dataclass(frozen=True)
class FieldDef:
    name: str
    kind: str  # column | computed
    value_type: str
    aggregatable_with: frozenset[str] = field(default_factory=frozenset)
    maskable: bool = False
    description: str = ""

    def __post_init__(self) -> None:
        if not FIELD_NAME_RE.match(self.name):
            raise ValueError(f"bad field name {self.name!r}")
        if self.kind not in ("column", "computed"):
            raise ValueError(f"bad field kind {self.kind!r}")
        if self.value_type not in VALUE_TYPES:
            raise ValueError(f"bad value_type {self.value_type!r}")
        object.__setattr__(self, "aggregatable_with", frozenset(self.aggregatable_with))
        bad = self.aggregatable_with - set(AGG_FNS)
        if bad:
            raise ValueError(f"unknown aggregation fns {sorted(bad)}")
        if self.kind == "computed" and self.aggregatable_with:
            raise ValueError(f"computed field {self.name} must have empty aggregatable_with")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "value_type": self.value_type,
            "aggregatable_with": sorted(self.aggregatable_with),
            "maskable": self.maskable,
            "description": self.description,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FieldDef":
        return cls(
            name=obj["name"],
            kind=obj["kind"],
            value_type=obj["value_type"],
            aggregatable_with=frozenset(obj.get("aggregatable_with", ())),
            maskable=bool(obj.get("maskable", False)),
            description=obj.get("description", ""),
        )


class Catalog:
    """Ordered set of FieldDefs with unique names."""

    def __init__(self, fields: list[FieldDef]):
        self._fields: dict[str, FieldDef] = {}
        for f in fields:
            if f.name in self._fields:
                raise ValueError(f"duplicate field name {f.name!r}")
            self._fields[f.name] = f

    def get(self, name: str) -> FieldDef | None:
        return self._fields.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._fields

    def __iter__(self) -> Iterator[FieldDef]:
        return iter(self._fields.values())

    def __len__(self) -> int:
        return len(self._fields)

    def columns(self) -> list[FieldDef]:
        return [f for f in self if f.kind == "column"]

    def computed(self) -> list[FieldDef]:
        return [f for f in self if f.kind == "computed"]

    def to_json(self) -> list[dict]:
        return [f.to_json() for f in self]

    @classmethod
    def from_json(cls, arr: list[dict]) -> "Catalog":
        return cls([FieldDef.from_json(o) for o in arr])

    def version(self) -> str:
        """Content hash; changes whenever any field definition changes."""
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

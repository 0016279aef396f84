"""Rule-based chart selection and chart-config generation with masking.

Chart generation is structured output, not free text: the selection rules
are a fixed decision order, every channel must name a real schema field,
and nothing is ever emitted for results under 3 rows. Masked categorical
identities are replaced by session-stable pseudonyms ("Group 1", ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dates import GRAINS
from .tables import NUMERIC_VALUE_TYPES, TabularResult

CHART_TYPES = ("bar", "line", "dot", "area", "heatmap", "donut")

MIN_ROWS = 3
MAX_DONUT_CATEGORIES = 12
MAX_DATA_POINTS = 500


class ChannelError(ValueError):
    """No viable field for a required channel (e.g. every numeric is masked)."""


@dataclass(frozen=True)
class Decline:
    reason: str


@dataclass
class Mark:
    type: str
    channels: dict[str, str]

    def to_json(self) -> dict:
        return {"type": self.type, "channels": dict(self.channels)}


@dataclass
class ChartConfig:
    data: list[dict]
    title: str
    marks: list[Mark]

    def to_json(self) -> dict:
        return {
            "data": [dict(row) for row in self.data],
            "config": {
                "title": self.title,
                "marks": [m.to_json() for m in self.marks],
            },
        }


class PseudonymTable:
    """Session-scoped stable mapping of masked identities to display labels."""

    def __init__(self) -> None:
        self._mapping: dict[str, str] = {}

    def assign(self, value: str) -> str:
        if value not in self._mapping:
            self._mapping[value] = f"Group {len(self._mapping) + 1}"
        return self._mapping[value]

    def known(self) -> dict[str, str]:
        return dict(self._mapping)


@dataclass
class MaskingPolicy:
    """What chart masking must hide for the current principal."""

    enabled: bool = False
    table: PseudonymTable = field(default_factory=PseudonymTable)
    masked_values: frozenset[str] = frozenset()
    pseudonym_columns: frozenset[str] = frozenset()


def _column_kinds(result: TabularResult) -> tuple[list[str], list[str], list[str]]:
    """(time_columns, categorical_columns, numeric_columns), masked ones excluded
    from numeric/categorical roles except id columns used for pseudonyms."""
    time_cols: list[str] = []
    cats: list[str] = []
    nums: list[str] = []
    for col in result.schema:
        name, vtype = col["name"], col["value_type"]
        if name in GRAINS or vtype == "timestamp":
            time_cols.append(name)
            continue
        if name in result.masked_columns:
            continue  # sentinel/null cells carry no signal for any channel
        if vtype in NUMERIC_VALUE_TYPES:
            nums.append(name)
        elif vtype == "string":
            cats.append(name)
    # Prefer human-readable categoricals; opaque ids go last.
    cats.sort(key=lambda n: (n.endswith("_id"), result.column_names.index(n)))
    return time_cols, cats, nums


def _donut_eligible(result: TabularResult, numeric: str) -> bool:
    values = [v for v in result.column(numeric) if v is not None]
    if not values:
        return False
    if any(not isinstance(v, (int, float)) or v < 0 for v in values):
        return False
    # Proportions need additive parts; treat integral values as countable.
    return all(abs(v - round(v)) < 1e-9 for v in values)


def _representable(result: TabularResult, chart_type: str) -> bool:
    if len(result.rows) < MIN_ROWS:
        return False
    time_cols, cats, nums = _column_kinds(result)
    if chart_type in ("line", "area"):
        return bool(time_cols and nums)
    if chart_type == "bar":
        return bool(cats and nums) or bool(time_cols and nums)
    if chart_type == "donut":
        return bool(cats and nums) and len(result.rows) <= MAX_DONUT_CATEGORIES
    if chart_type == "heatmap":
        return len(cats) >= 2 and bool(nums) or (bool(time_cols) and bool(cats) and bool(nums))
    if chart_type == "dot":
        return bool(nums) and bool(cats or time_cols or len(nums) >= 2)
    return False


def select_chart_type(result: TabularResult, user_pref: str | None = None) -> str | Decline:
    """Pick a chart type, or Decline with the blocking reason.

    Decision order: (1) a representable user preference wins; (2) fewer
    than 3 rows declines; (3) a time-bucketed x column means line; (4) one
    categorical with an additive numeric and at most 12 categories means
    donut; (5) one categorical plus numeric means bar; (6) two categoricals
    plus numeric means heatmap; (7) otherwise decline.
    """
    if user_pref is not None:
        if user_pref not in CHART_TYPES:
            return Decline(f"unknown chart type {user_pref!r}")
        if _representable(result, user_pref):
            return user_pref
        if len(result.rows) < MIN_ROWS:
            return Decline("charts need 3+ rows")
        return Decline(f"{user_pref} is not representable for this result")
    if len(result.rows) < MIN_ROWS:
        return Decline("charts need 3+ rows")
    time_cols, cats, nums = _column_kinds(result)
    if not nums:
        return Decline("no unmasked numeric column to plot")
    if time_cols:
        return "line"
    if len(cats) == 1:
        if len(result.rows) <= MAX_DONUT_CATEGORIES and _donut_eligible(result, nums[0]):
            return "donut"
        return "bar"
    if len(cats) >= 2:
        return "heatmap"
    return Decline("no categorical or temporal axis to plot against")


def _row_objects(result: TabularResult) -> list[dict]:
    names = result.column_names
    return [dict(zip(names, row)) for row in result.rows]


def _prettify(name: str) -> str:
    return name.replace("_", " ").strip()


def build_chart_config(result: TabularResult, chart_type: str) -> ChartConfig:
    """Assemble the chart config; channels only ever name schema fields."""
    if chart_type not in CHART_TYPES:
        raise ChannelError(f"unknown chart type {chart_type!r}")
    if len(result.rows) < MIN_ROWS:
        raise ChannelError("charts need 3+ rows")
    time_cols, cats, nums = _column_kinds(result)
    if not nums:
        raise ChannelError("no unmasked numeric column available for the y channel")
    y = nums[0]
    channels: dict[str, str]

    if chart_type in ("line", "area", "dot"):
        if time_cols:
            x = time_cols[0]
        elif chart_type == "dot" and (cats or len(nums) > 1):
            x = cats[0] if cats else nums[1]
        else:
            raise ChannelError(f"{chart_type} chart needs a temporal x column")
        channels = {"x": x, "y": y}
        if cats:
            channels["fill"] = cats[0]
    elif chart_type == "bar":
        if cats:
            x = cats[0]
        elif time_cols:
            x = time_cols[0]
        else:
            raise ChannelError("bar chart needs a categorical x column")
        channels = {"x": x, "y": y, "fill": x}
    elif chart_type == "donut":
        if not cats:
            raise ChannelError("donut chart needs a categorical column")
        channels = {"x": cats[0], "y": y, "fill": cats[0]}
    else:  # heatmap
        if len(cats) >= 2:
            x, fill_axis = cats[0], cats[1]
        elif time_cols and cats:
            x, fill_axis = time_cols[0], cats[0]
        else:
            raise ChannelError("heatmap needs two categorical axes")
        channels = {"x": x, "y": fill_axis, "fill": y}

    data = _row_objects(result)
    truncated = len(data) > MAX_DATA_POINTS
    data = data[:MAX_DATA_POINTS]

    scope = result.provenance.get("scope", "")
    window = result.provenance.get("window", "")
    title = f"{_prettify(y)} by {_prettify(channels['x'])}"
    if scope:
        title += f" — {scope}"
    if window:
        title += f" — {window}"
    if truncated:
        title += f" (first {MAX_DATA_POINTS} points)"

    config = ChartConfig(data=data, title=title, marks=[Mark(type=chart_type, channels=channels)])
    _check_channels(config)
    return config


def _check_channels(config: ChartConfig) -> None:
    if not config.data:
        raise ChannelError("no data rows")
    fields = set(config.data[0].keys())
    for mark in config.marks:
        for channel, name in mark.channels.items():
            if name not in fields:
                raise ChannelError(f"channel {channel} names missing field {name!r}")


def apply_chart_masking(config: ChartConfig, policy: MaskingPolicy) -> ChartConfig:
    """Pseudonymize masked identities; a disabled policy is the identity map."""
    if not policy.enabled:
        return config
    data = []
    for row in config.data:
        new_row = dict(row)
        for col in policy.pseudonym_columns:
            if col in new_row and isinstance(new_row[col], str):
                new_row[col] = policy.table.assign(new_row[col])
        for key, value in list(new_row.items()):
            if isinstance(value, str) and value in policy.masked_values:
                new_row[key] = policy.table.assign(value)
        data.append(new_row)
    title = config.title
    for value in sorted(policy.masked_values, key=len, reverse=True):
        if value and value in title:
            title = title.replace(value, policy.table.assign(value))
    return ChartConfig(data=data, title=title, marks=[Mark(m.type, dict(m.channels)) for m in config.marks])

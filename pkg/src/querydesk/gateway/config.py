"""Service configuration: strict loading with unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..orchestrator import DEFAULT_SESSION_TTL_SECONDS, DEFAULT_TZ
from ..targets import Org, Principal


class ConfigError(ValueError):
    """Configuration file is malformed or inconsistent."""


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class PrincipalSpec:
    user_id: str
    roots: list[str]
    capabilities: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, obj: dict, where: str) -> "PrincipalSpec":
        _check_keys(obj, {"user_id", "roots", "capabilities"}, where)
        if not obj.get("user_id") or not obj.get("roots"):
            raise ConfigError(f"{where}: user_id and roots are required")
        return cls(
            user_id=obj["user_id"],
            roots=list(obj["roots"]),
            capabilities=list(obj.get("capabilities", [])),
        )

    def build(self, org: Org) -> Principal:
        return Principal.for_subtrees(self.user_id, org, self.roots, self.capabilities)


@dataclass
class RemoteSettings:
    url: str = ""
    model: str = "default"
    timeout_seconds: float = 30.0
    retries_on_5xx: int = 2
    max_in_flight: int = 4

    @classmethod
    def from_json(cls, obj: dict) -> "RemoteSettings":
        _check_keys(
            obj,
            {"url", "model", "timeout_seconds", "retries_on_5xx", "max_in_flight"},
            "remote",
        )
        return cls(**obj)


@dataclass
class ServiceConfig:
    bundle_path: str
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    tz: str = DEFAULT_TZ
    session_ttl_seconds: float = DEFAULT_SESSION_TTL_SECONDS
    cache_ttl_seconds: float = 300.0
    cache_enabled: bool = True
    planner_backend: str = "rule"  # rule | remote
    remote: RemoteSettings = field(default_factory=RemoteSettings)
    auth_mode: str = "bearer"  # bearer | open
    tokens: dict[str, PrincipalSpec] = field(default_factory=dict)
    open_principal: PrincipalSpec | None = None

    def __post_init__(self) -> None:
        if self.planner_backend not in ("rule", "remote"):
            raise ConfigError(f"planner_backend must be rule|remote, got {self.planner_backend!r}")
        if self.auth_mode not in ("bearer", "open"):
            raise ConfigError(f"auth_mode must be bearer|open, got {self.auth_mode!r}")
        if self.auth_mode == "bearer" and not self.tokens:
            raise ConfigError("bearer auth requires a tokens section")
        if self.auth_mode == "open" and self.open_principal is None:
            raise ConfigError("open auth requires open_principal")
        if self.session_ttl_seconds <= 0 or self.cache_ttl_seconds <= 0:
            raise ConfigError("TTLs must be positive")

    @classmethod
    def from_json(cls, obj: dict) -> "ServiceConfig":
        _check_keys(
            obj,
            {
                "bundle_path", "listen_host", "listen_port", "tz",
                "session_ttl_seconds", "cache_ttl_seconds", "cache_enabled",
                "planner_backend", "remote", "auth_mode", "tokens", "open_principal",
            },
            "config",
        )
        if "bundle_path" not in obj:
            raise ConfigError("bundle_path is required")
        tokens = {
            token: PrincipalSpec.from_json(spec, f"tokens[{token!r}]")
            for token, spec in (obj.get("tokens") or {}).items()
        }
        open_principal = (
            PrincipalSpec.from_json(obj["open_principal"], "open_principal")
            if obj.get("open_principal")
            else None
        )
        return cls(
            bundle_path=obj["bundle_path"],
            listen_host=obj.get("listen_host", "127.0.0.1"),
            listen_port=int(obj.get("listen_port", 8080)),
            tz=obj.get("tz", DEFAULT_TZ),
            session_ttl_seconds=float(obj.get("session_ttl_seconds", DEFAULT_SESSION_TTL_SECONDS)),
            cache_ttl_seconds=float(obj.get("cache_ttl_seconds", 300.0)),
            cache_enabled=bool(obj.get("cache_enabled", True)),
            planner_backend=obj.get("planner_backend", "rule"),
            remote=RemoteSettings.from_json(obj.get("remote") or {}),
            auth_mode=obj.get("auth_mode", "bearer"),
            tokens=tokens,
            open_principal=open_principal,
        )


def load_config(path: str | Path) -> ServiceConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be an object")
    return ServiceConfig.from_json(obj)

"""Organizational hierarchy, principals, and permission-scoped target resolution.

Resolution fuzzy-matches a phrase against node names, aliases, and
unit-kind words, but only over nodes inside the caller's permitted set;
entities outside that scope are never surfaced except by Denied, which
echoes back only the exact name the caller already typed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

NODE_KINDS = ("office", "department", "team", "call_center", "agent_group")

# Generic unit words each kind answers to; lets "Seattle support team"
# match an agent_group without leaking a separate synonym system.
KIND_WORDS: dict[str, frozenset[str]] = {
    "office": frozenset({"office"}),
    "department": frozenset({"department", "dept"}),
    "team": frozenset({"team"}),
    "call_center": frozenset({"call", "center", "centre", "callcenter"}),
    "agent_group": frozenset({"agent", "group", "team"}),
}

RESOLVE_THRESHOLD = 0.75   # top score needed for an outright match
RESOLVE_LEAD = 0.15        # required gap to the runner-up
CANDIDATE_THRESHOLD = 0.5  # floor for appearing in an ambiguity list
MAX_CANDIDATES = 5

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_DETERMINERS = frozenset({"the", "a", "an"})


class UnknownTarget(KeyError):
    """Raised when a permission check names a node that does not exist."""


@dataclass(frozen=True)
class OrgNode:
    id: str
    tenant_id: str
    name: str
    kind: str
    parent_id: str | None = None
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise ValueError(f"bad node kind {self.kind!r}")
        object.__setattr__(self, "aliases", tuple(self.aliases))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "tenant_id": self.tenant_id,
            "name": self.name,
            "kind": self.kind,
            "parent_id": self.parent_id,
            "aliases": list(self.aliases),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OrgNode":
        return cls(
            id=obj["id"],
            tenant_id=obj["tenant_id"],
            name=obj["name"],
            kind=obj["kind"],
            parent_id=obj.get("parent_id"),
            aliases=tuple(obj.get("aliases", ())),
        )


class Org:
    """A forest of OrgNodes for one tenant; immutable after construction."""

    def __init__(self, nodes: Iterable[OrgNode]):
        self._nodes: dict[str, OrgNode] = {}
        for node in nodes:
            if node.id in self._nodes:
                raise ValueError(f"duplicate node id {node.id!r}")
            self._nodes[node.id] = node
        self._children: dict[str, list[str]] = {nid: [] for nid in self._nodes}
        tenants = {n.tenant_id for n in self._nodes.values()}
        if len(tenants) > 1:
            raise ValueError(f"org spans multiple tenants: {sorted(tenants)}")
        for node in self._nodes.values():
            if node.parent_id is not None:
                if node.parent_id not in self._nodes:
                    raise ValueError(f"node {node.id!r} has unknown parent {node.parent_id!r}")
                self._children[node.parent_id].append(node.id)
        # Reject cycles: every node must reach a root.
        for node in self._nodes.values():
            seen = set()
            cur: OrgNode | None = node
            while cur is not None:
                if cur.id in seen:
                    raise ValueError(f"cycle through node {cur.id!r}")
                seen.add(cur.id)
                cur = self._nodes.get(cur.parent_id) if cur.parent_id else None

    def get(self, node_id: str) -> OrgNode | None:
        return self._nodes.get(node_id)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __iter__(self) -> Iterator[OrgNode]:
        return iter(self._nodes.values())

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def tenant_id(self) -> str:
        return next(iter(self._nodes.values())).tenant_id if self._nodes else ""

    def children(self, node_id: str) -> list[str]:
        return list(self._children.get(node_id, ()))

    def descendants(self, node_id: str) -> set[str]:
        """node_id plus everything below it."""
        if node_id not in self._nodes:
            raise UnknownTarget(node_id)
        out = {node_id}
        stack = list(self._children[node_id])
        while stack:
            nid = stack.pop()
            out.add(nid)
            stack.extend(self._children[nid])
        return out

    def leaves(self) -> list[str]:
        return [nid for nid, kids in self._children.items() if not kids]

    def roots(self) -> list[str]:
        return [n.id for n in self if n.parent_id is None]

    def to_json(self) -> list[dict]:
        return [n.to_json() for n in self]

    @classmethod
    def from_json(cls, arr: list[dict]) -> "Org":
        return cls([OrgNode.from_json(o) for o in arr])


@dataclass(frozen=True)
class Principal:
    """A caller identity; permitted_target_ids is closed under descendants."""

    user_id: str
    tenant_id: str
    permitted_target_ids: frozenset[str]
    capabilities: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "permitted_target_ids", frozenset(self.permitted_target_ids))
        object.__setattr__(self, "capabilities", frozenset(self.capabilities))

    @classmethod
    def for_subtrees(
        cls,
        user_id: str,
        org: Org,
        roots: Iterable[str],
        capabilities: Iterable[str] = (),
    ) -> "Principal":
        """Build a principal whose scope is the union of the given subtrees."""
        permitted: set[str] = set()
        for root in roots:
            permitted |= org.descendants(root)
        return cls(
            user_id=user_id,
            tenant_id=org.tenant_id,
            permitted_target_ids=frozenset(permitted),
            capabilities=frozenset(capabilities),
        )

    @property
    def sees_unmasked(self) -> bool:
        return "unmasked" in self.capabilities

    def permitted_roots(self, org: Org) -> list[str]:
        """Minimal antichain covering the permitted set (parents outside it)."""
        out = []
        for nid in self.permitted_target_ids:
            node = org.get(nid)
            if node is None:
                continue
            if node.parent_id is None or node.parent_id not in self.permitted_target_ids:
                out.append(nid)
        return sorted(out)


# --- resolution outcomes -----------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    id: str
    name: str
    score: float


@dataclass(frozen=True)
class Resolved:
    ids: tuple[str, ...]


@dataclass(frozen=True)
class Ambiguous:
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class NotFound:
    pass


@dataclass(frozen=True)
class Denied:
    name: str


ResolutionOutcome = Union[Resolved, Ambiguous, NotFound, Denied]


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _within_one_edit(a: str, b: str) -> bool:
    if a == b:
        return True
    la, lb = len(a), len(b)
    if abs(la - lb) > 1:
        return False
    if la > lb:
        a, b, la, lb = b, a, lb, la
    # a is the shorter (or equal length) string; allow one edit.
    i = j = 0
    edited = False
    while i < la and j < lb:
        if a[i] == b[j]:
            i += 1
            j += 1
            continue
        if edited:
            return False
        edited = True
        if la == lb:
            i += 1
        j += 1
    return True


def _node_tokens(node: OrgNode) -> set[str]:
    toks = set(_tokens(node.name))
    for alias in node.aliases:
        toks |= set(_tokens(alias))
    toks |= KIND_WORDS[node.kind]
    return toks


def score_phrase(phrase_tokens: list[str], node: OrgNode) -> float:
    """Fraction of phrase tokens matched in the node's vocabulary.

    A token matches on equality or within edit distance 1.
    """
    if not phrase_tokens:
        return 0.0
    vocab = _node_tokens(node)
    matched = 0
    for tok in phrase_tokens:
        if tok in vocab or any(_within_one_edit(tok, v) for v in vocab):
            matched += 1
    return matched / len(phrase_tokens)


def resolve_targets(phrase: str, org: Org, principal: Principal) -> ResolutionOutcome:
    """Resolve a natural-language entity phrase inside the principal's scope.

    Resolved requires the top score >= 0.75 with a lead of >= 0.15 over the
    runner-up; otherwise any candidates scoring >= 0.5 produce Ambiguous.
    A phrase that exactly names an out-of-scope node yields Denied.
    """
    if not phrase or not phrase.strip():
        raise ValueError("phrase must be non-empty")
    if org.tenant_id and principal.tenant_id != org.tenant_id:
        raise ValueError("principal tenant does not match org tenant")
    ptoks = [t for t in _tokens(phrase) if t not in _DETERMINERS]
    scored: list[tuple[float, OrgNode]] = []
    if ptoks:
        for node in org:
            if node.id not in principal.permitted_target_ids:
                continue
            s = score_phrase(ptoks, node)
            if s > 0:
                scored.append((s, node))
    scored.sort(key=lambda pair: (-pair[0], pair[1].name))

    if scored:
        top_score, top_node = scored[0]
        runner_up = scored[1][0] if len(scored) > 1 else 0.0
        if top_score >= RESOLVE_THRESHOLD and top_score - runner_up >= RESOLVE_LEAD:
            return Resolved((top_node.id,))

    # Exact-name match outside scope: refuse rather than guess in scope.
    exact = " ".join(_tokens(phrase))
    for node in org:
        if node.id in principal.permitted_target_ids:
            continue
        names = [node.name] + list(node.aliases)
        if any(" ".join(_tokens(n)) == exact for n in names):
            return Denied(node.name)

    candidates = [
        Candidate(id=node.id, name=node.name, score=round(s, 4))
        for s, node in scored
        if s >= CANDIDATE_THRESHOLD
    ][:MAX_CANDIDATES]
    if candidates:
        return Ambiguous(tuple(candidates))
    return NotFound()


def check_permission(principal: Principal, target_id: str, org: Org) -> bool:
    """True iff target_id is inside the principal's permitted set.

    Raises UnknownTarget for ids that do not exist in the org.
    """
    if target_id not in org:
        raise UnknownTarget(target_id)
    return target_id in principal.permitted_target_ids

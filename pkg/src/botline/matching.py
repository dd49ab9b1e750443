"""Requirement/memory matching and the requirement lifecycle.

Pure functions over session-owned data: match a memory against a
requirement, turn slot evidence into bot-instance creation requests, retire
instances on cancellation, and convert unsatisfied requirements into
behavior instructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .neurons import MemoryRecord, RequirementRecord

SATISFIED = "satisfied"
MISSING = "missing"
CONFLICTING = "conflicting"

INQUIRE = "inquire"
CONFIRM = "confirm"
INFORM = "inform"


class NoServiceMatch(LookupError):
    """No registered service node is consistent with the evidence."""


@dataclass(frozen=True)
class ValueExpect:
    """Acceptable values for a requirement: anything, an exact value, a
    finite set, or an ordered range (inclusive)."""

    kind: str = "any"  # "any" | "exact" | "one_of" | "range"
    values: tuple[str, ...] = ()
    value_kind: str = "text"  # drives range comparison

    @classmethod
    def any(cls) -> "ValueExpect":
        return cls(kind="any")

    @classmethod
    def exact(cls, value: str, value_kind: str = "text") -> "ValueExpect":
        return cls(kind="exact", values=(value,), value_kind=value_kind)

    @classmethod
    def one_of(cls, values: Iterable[str], value_kind: str = "text") -> "ValueExpect":
        return cls(kind="one_of", values=tuple(values), value_kind=value_kind)

    @classmethod
    def range(cls, lo: str, hi: str, value_kind: str = "text") -> "ValueExpect":
        return cls(kind="range", values=(lo, hi), value_kind=value_kind)

    def _key(self, v: str):
        if self.value_kind == "year":
            try:
                return int(v)
            except ValueError:
                return v
        return v

    def contains(self, value: str) -> bool:
        if self.kind == "any":
            return bool(value)
        norm = value.strip().lower()
        if self.kind in ("exact", "one_of"):
            return norm in {x.strip().lower() for x in self.values}
        lo, hi = self.values
        try:
            return self._key(lo) <= self._key(value) <= self._key(hi)
        except TypeError:
            return False


@dataclass
class MatchResult:
    statuses: dict[str, str] = field(default_factory=dict)
    overall: str = "complete"  # "complete" | "incomplete"
    missing_mandatory: list[str] = field(default_factory=list)
    missing_optional: list[str] = field(default_factory=list)

    def status(self, attr: str) -> str:
        return self.statuses.get(attr, MISSING)


def match(memory, requirement: RequirementRecord) -> MatchResult:
    """Evaluate one requirement record against observed values.

    ``memory`` is a MemoryRecord or a plain attr->values mapping (the caller
    resolves device vs user scope and may merge both). An attribute is
    satisfied when at least one observed value lies inside its expectation
    (Any accepts any non-empty value set), missing when absent, conflicting
    when present but entirely outside a restricted expectation. Only
    mandatory (code 1) attributes drive completeness. The missing lists keep
    the requirement's declared order.
    """
    memory_values = memory.mems if isinstance(memory, MemoryRecord) else memory
    result = MatchResult()
    for attr, expect in requirement.reqs.items():
        code = requirement.codes.get(attr, 0)
        values = memory_values.get(attr) or set()
        if not values:
            result.statuses[attr] = MISSING
            (result.missing_mandatory if code == 1 else result.missing_optional).append(attr)
            continue
        if any(expect.contains(v) for v in values):
            result.statuses[attr] = SATISFIED
            continue
        # present but outside a restricted expectation
        result.statuses[attr] = CONFLICTING
        (result.missing_mandatory if code == 1 else result.missing_optional).append(attr)
    if any(result.statuses.get(a) in (MISSING, CONFLICTING)
           for a, c in requirement.codes.items() if c == 1):
        result.overall = "incomplete"
    return result


@dataclass
class CreateRequest:
    """One bot instance to create, with the evidence that produced it."""

    bot_id: str
    device_type: Optional[str]
    brand: Optional[str]
    phenomenon: Optional[str] = None
    sentence_index: int = 0


@dataclass
class Clarification:
    reason: str  # "no_service" | "ambiguous_cancel" | "nothing_to_cancel"
    detail: str = ""


def derive_requirements(intents, registry) -> tuple[list[CreateRequest], list[Clarification]]:
    """Resolve add intents to the deepest consistent catalog node: a leaf
    when type and brand are known, an interior node otherwise. One request
    per stated device instance."""
    requests: list[CreateRequest] = []
    problems: list[Clarification] = []
    for intent in intents:
        if intent.action != "add":
            continue
        try:
            bot_id = registry.resolve(device_type=intent.device_type, brand=intent.brand)
        except NoServiceMatch as exc:
            problems.append(Clarification(reason="no_service", detail=str(exc)))
            continue
        requests.append(CreateRequest(
            bot_id=str(bot_id),
            device_type=intent.device_type,
            brand=intent.brand,
            phenomenon=intent.phenomenon,
            sentence_index=intent.sentence_index,
        ))
    return requests, problems


def retire_requirements(instances, removals) -> tuple[list[str], list[Clarification]]:
    """Pick instances to drop for each remove intent.

    ``instances`` is a sequence of (instance_id, device_type, brand) views in
    queue order. Ambiguous evidence (several matches) or no match yields a
    clarification instead of a deletion; memories are never touched here.
    """
    to_remove: list[str] = []
    problems: list[Clarification] = []
    remaining = list(instances)
    for intent in removals:
        if intent.action != "remove":
            continue
        def hits(view):
            iid, dtype, brand = view
            if iid in to_remove:
                return False
            if intent.brand and (brand or "").lower() != intent.brand.lower():
                return False
            if intent.device_type and (dtype or "").lower() != intent.device_type.lower():
                return False
            return bool(intent.brand or intent.device_type)
        matches = [v for v in remaining if hits(v)]
        if not matches and not intent.brand and not intent.device_type and remaining:
            # anaphoric cancellation: most recent instance
            matches = [remaining[-1]]
        if not matches:
            problems.append(Clarification(reason="nothing_to_cancel"))
        elif len(matches) > 1:
            problems.append(Clarification(reason="ambiguous_cancel",
                                          detail=intent.brand or intent.device_type or ""))
        else:
            to_remove.append(matches[0][0])
    return to_remove, problems


@dataclass
class BehaviorInstruction:
    kind: str  # inquire | confirm | inform
    attr: str
    instance_id: str
    template_id: str = ""


def instructions_from_unsatisfied(
    results: list[tuple[str, RequirementRecord, MatchResult]],
    history: dict[str, set[str]],
    ask_counts: dict[str, int],
    max_optional_asks: int = 1,
) -> list[BehaviorInstruction]:
    """Unsatisfied requirements become behavior instructions.

    Missing attributes yield inquiries, except those with a historical value,
    which yield confirmations. Optional (code 0) attributes respect the
    session ask cap; mandatory ones never give up. Order follows the
    requirement declaration, instance by instance in queue order.
    """
    out: list[BehaviorInstruction] = []
    seen: set[tuple[str, str]] = set()
    for instance_id, requirement, result in results:
        for attr in requirement.reqs:
            if result.status(attr) not in (MISSING, CONFLICTING):
                continue
            code = requirement.codes.get(attr, 0)
            if code == 0 and ask_counts.get(attr, 0) >= max_optional_asks:
                continue
            kind = CONFIRM if history.get(attr) else INQUIRE
            key = (kind, attr)
            if key in seen:
                continue
            seen.add(key)
            out.append(BehaviorInstruction(kind=kind, attr=attr, instance_id=instance_id,
                                           template_id=f"{kind}:{attr}"))
    return out

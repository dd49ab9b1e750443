"""Information neurons: knowledge units bundling trigger phrases, an
attribute/parameter schema and declarative extraction rules.

A neuron is loaded from a versioned JSON document. Rules are ordered pattern
tables, not code plugins: trigger rules run against the sentence, strategy
rules then iterate over the assigned attributes until a full pass adds
nothing new. The iteration is bounded by schema size, so identification
always terminates.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from typing import Iterable, Optional

from . import nlu

VALUE_KINDS = ("text", "year", "datetime", "phone", "enum")

_PHONE_RE = re.compile(r"^1\d{10}$")
_YEAR_VALUE_RE = re.compile(r"^(?:19|20)\d{2}$")


class NeuronConfigError(ValueError):
    """A neuron document violates its schema (unknown attribute, bad kind)."""


class DuplicateNeuronError(ValueError):
    def __init__(self, neuron_id: str):
        super().__init__(f"duplicate neuron id: {neuron_id}")
        self.neuron_id = neuron_id


@dataclass(frozen=True)
class AttrSpec:
    name: str
    kind: str = "text"
    enum_values: tuple[str, ...] = ()
    multi: bool = False

    def validate_value(self, value: str) -> bool:
        if self.kind == "year":
            return bool(_YEAR_VALUE_RE.match(value))
        if self.kind == "phone":
            return bool(_PHONE_RE.match(value))
        if self.kind == "enum":
            return value in self.enum_values
        if self.kind == "datetime":
            try:
                datetime.strptime(value, "%Y-%m-%d %H:%M")
                return True
            except ValueError:
                return False
        return bool(value)


@dataclass(frozen=True)
class TriggerRule:
    """pattern -> attribute/parameter assignment.

    ``lexicon`` rules match the neuron's phrase lexicon (kept in sync with
    enterprise submissions) instead of a fixed pattern. ``transform`` names
    a registered value transform applied to the matched text.
    """

    attr: Optional[str] = None
    param: Optional[str] = None
    pattern: Optional[str] = None
    lexicon: bool = False
    value: Optional[str] = None
    group: int = 0
    transform: Optional[str] = None
    multi: bool = False
    requires_context_target: bool = False
    when_fsm_pending: bool = False


@dataclass(frozen=True)
class StrategyRule:
    """condition over assigned attrs/params -> derived assignment or signal."""

    when_attr: str = ""
    when_value: Optional[str] = None
    assign_attr: Optional[str] = None
    assign_value: Optional[str] = None
    emit_signal: Optional[str] = None
    reply_text: Optional[str] = None


@dataclass
class InformationNeuron:
    id: str
    name: str
    trigger_info: set[str] = field(default_factory=set)
    trigger_lexicon: dict[str, str] = field(default_factory=dict)
    attrs: list[AttrSpec] = field(default_factory=list)
    params: list[str] = field(default_factory=list)
    trigger_rules: list[TriggerRule] = field(default_factory=list)
    strategy_rules: list[StrategyRule] = field(default_factory=list)
    feeds: Optional[str] = None  # neuron name whose memories receive the values

    def attr_spec(self, name: str) -> Optional[AttrSpec]:
        for a in self.attrs:
            if a.name == name:
                return a
        return None

    def validate(self) -> None:
        seen = set()
        for a in self.attrs:
            if a.name in seen:
                raise NeuronConfigError(f"{self.id}: duplicate attribute {a.name}")
            if a.kind not in VALUE_KINDS:
                raise NeuronConfigError(f"{self.id}: unknown value kind {a.kind}")
            seen.add(a.name)
        for phrase in self.trigger_info:
            if not phrase.strip():
                raise NeuronConfigError(f"{self.id}: empty trigger phrase")
        known = {a.name for a in self.attrs}
        for rule in self.trigger_rules:
            if rule.attr and rule.attr not in known:
                raise NeuronConfigError(f"{self.id}: rule assigns unknown attribute {rule.attr}")
            if rule.param and rule.param not in self.params:
                raise NeuronConfigError(f"{self.id}: rule assigns unknown parameter {rule.param}")
            if not rule.lexicon and not rule.pattern:
                raise NeuronConfigError(f"{self.id}: rule without pattern or lexicon")
        for rule in self.strategy_rules:
            if rule.when_attr and rule.when_attr not in known and rule.when_attr not in self.params:
                raise NeuronConfigError(f"{self.id}: strategy condition on unknown {rule.when_attr}")
            if rule.assign_attr and rule.assign_attr not in known and rule.assign_attr not in self.params:
                raise NeuronConfigError(f"{self.id}: strategy assigns unknown {rule.assign_attr}")

    @classmethod
    def from_dict(cls, doc: dict) -> "InformationNeuron":
        attrs = [
            AttrSpec(
                name=a["name"],
                kind=a.get("kind", "text"),
                enum_values=tuple(a.get("values", ())),
                multi=bool(a.get("multi", False)),
            )
            for a in doc.get("attrs", [])
        ]
        t_rules = [TriggerRule(**{k: v for k, v in r.items()}) for r in doc.get("trigger_rules", [])]
        s_rules = [StrategyRule(**{k: v for k, v in r.items()}) for r in doc.get("strategy_rules", [])]
        neuron = cls(
            id=doc["id"],
            name=doc["name"],
            trigger_info={p.lower() for p in doc.get("trigger_info", [])},
            trigger_lexicon={k.lower(): v for k, v in doc.get("trigger_lexicon", {}).items()},
            attrs=attrs,
            params=list(doc.get("params", [])),
            trigger_rules=t_rules,
            strategy_rules=s_rules,
            feeds=doc.get("feeds"),
        )
        neuron.validate()
        return neuron

    def to_dict(self) -> dict:
        return {
            "schema_version": "v1",
            "id": self.id,
            "name": self.name,
            "trigger_info": sorted(self.trigger_info),
            "trigger_lexicon": dict(sorted(self.trigger_lexicon.items())),
            "attrs": [
                {"name": a.name, "kind": a.kind, "values": list(a.enum_values), "multi": a.multi}
                for a in self.attrs
            ],
            "params": list(self.params),
            "feeds": self.feeds,
        }


@dataclass
class MemoryRecord:
    """Attribute values observed for one concept instance."""

    neuron_id: str
    neuron_name: str
    mems: dict[str, set[str]] = field(default_factory=dict)
    param_values: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, int] = field(default_factory=dict)

    def values(self, attr: str) -> set[str]:
        return self.mems.get(attr, set())

    def put(self, attr: str, values: Iterable[str], turn: int, multi: bool) -> bool:
        """Write values; multi-value attrs append, single-value overwrite.
        Returns True when the stored set actually changed."""
        new = {v for v in values if v}
        if not new:
            return False
        before = set(self.mems.get(attr, set()))
        if multi:
            merged = before | new
        else:
            merged = new
        if merged == before:
            return False
        self.mems[attr] = merged
        self.provenance[attr] = turn
        return True


@dataclass
class RequirementRecord:
    """Expected values for one concept instance; codes flag mandatory slots."""

    neuron_id: str
    neuron_name: str
    reqs: dict[str, "object"] = field(default_factory=dict)  # attr -> ValueExpect
    codes: dict[str, int] = field(default_factory=dict)


class TriggerIndex:
    """Phrase index over neurons: token-boundary substring matching.

    Rebuilt, never patched, so stale phrases can never match; lookups on the
    old object stay consistent while a new index is swapped in.
    """

    def __init__(self, entries: list[tuple[str, str]]):
        # entries: (phrase, neuron_id)
        self._compiled: list[tuple[re.Pattern, str, str]] = []
        for phrase, nid in entries:
            pat = re.compile(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)")
            self._compiled.append((pat, phrase, nid))

    def lookup(self, text: str) -> set[str]:
        if not text:
            return set()
        hits = set()
        for pat, _phrase, nid in self._compiled:
            if pat.search(text):
                hits.add(nid)
        return hits

    def phrases(self) -> set[tuple[str, str]]:
        return {(p, nid) for _, p, nid in self._compiled}


def build_trigger_index(neurons: list[InformationNeuron]) -> TriggerIndex:
    seen_ids = set()
    seen_names = set()
    entries: list[tuple[str, str]] = []
    for n in neurons:
        if n.id in seen_ids:
            raise DuplicateNeuronError(n.id)
        if n.name in seen_names:
            raise NeuronConfigError(f"duplicate neuron name: {n.name}")
        seen_ids.add(n.id)
        seen_names.add(n.name)
        phrases = set(n.trigger_info) | set(n.trigger_lexicon)
        for p in sorted(phrases):
            entries.append((p, n.id))
    return TriggerIndex(entries)


@dataclass
class Assignment:
    neuron_id: str
    neuron_name: str
    attr: Optional[str]
    param: Optional[str]
    values: tuple[str, ...]
    span: tuple[int, int] = (0, 0)
    sentence_index: int = 0
    feeds: Optional[str] = None
    time_value: Optional[nlu.TimeValue] = None
    from_context: bool = False  # produced by a whole-sentence context-answer rule


@dataclass
class IdentifyContext:
    clock: datetime
    context_targets: set[str] = field(default_factory=set)  # neuron names
    fsm_pending: bool = False
    lexicons: Optional[nlu.Lexicons] = None


@dataclass
class IdentifyResult:
    assignments: list[Assignment] = field(default_factory=list)
    signals: list[str] = field(default_factory=list)
    replies: list[str] = field(default_factory=list)
    passes: int = 0


def _transform(name: str, text: str, ctx: IdentifyContext) -> tuple[list[str], Optional[nlu.TimeValue]]:
    lex = ctx.lexicons or nlu.default_lexicons()
    if name == "title_case":
        return [nlu.title_case_name(text)], None
    if name == "canonical_address":
        return [nlu.canonical_address(text, lex)], None
    if name == "digits":
        return [re.sub(r"\D", "", text)], None
    if name in ("year", "year_set", "relative_year", "clock_time", "time_window"):
        tv = nlu.resolve_time(text, ctx.clock, lex)
        if tv.kind in ("year", "year_set"):
            return [str(y) for y in sorted(tv.years)], tv
        if tv.kind == "moment":
            return [tv.moment.strftime("%Y-%m-%d %H:%M")], tv
        if tv.kind == "window":
            return [], tv
        return [], tv
    raise NeuronConfigError(f"unknown transform: {name}")


def identify(neuron: InformationNeuron, sentence: str, ctx: IdentifyContext) -> IdentifyResult:
    """Run the neuron's trigger rules, then iterate its strategy rules until
    a full pass assigns nothing new.

    Bounded by |attrs| + |params| + 1 passes: every non-final pass must add a
    value, and there are only that many slots to fill.
    """
    result = IdentifyResult()
    assigned: dict[str, set[str]] = {}
    params: dict[str, str] = {}

    def record(attr: Optional[str], param: Optional[str], values: list[str],
               span: tuple[int, int], tv: Optional[nlu.TimeValue]) -> bool:
        added = False
        if attr:
            spec = neuron.attr_spec(attr)
            values = [v for v in values if spec is None or spec.validate_value(v)]
            if not values:
                return False
            bucket = assigned.setdefault(attr, set())
            fresh = [v for v in values if v not in bucket]
            if fresh:
                bucket.update(fresh)
                added = True
                result.assignments.append(Assignment(
                    neuron_id=neuron.id, neuron_name=neuron.name, attr=attr,
                    param=None, values=tuple(values), span=span,
                    feeds=neuron.feeds, time_value=tv))
        elif param:
            if tv is not None and tv.kind == "window":
                # window expectations carry no scalar value, only the TimeValue
                key = f"{param}:{tv.window[0].isoformat()}"
                if params.get(key) != "1":
                    params[key] = "1"
                    added = True
                    result.assignments.append(Assignment(
                        neuron_id=neuron.id, neuron_name=neuron.name, attr=None,
                        param=param, values=(), span=span,
                        feeds=neuron.feeds, time_value=tv))
                return added
            val = values[0] if values else ""
            if val and params.get(param) != val:
                params[param] = val
                added = True
                result.assignments.append(Assignment(
                    neuron_id=neuron.id, neuron_name=neuron.name, attr=None,
                    param=param, values=(val,), span=span,
                    feeds=neuron.feeds, time_value=tv))
        return added

    # pass 1: trigger rules over the sentence
    result.passes = 1
    for rule in neuron.trigger_rules:
        if rule.requires_context_target and neuron.name not in ctx.context_targets:
            continue
        if rule.when_fsm_pending and not ctx.fsm_pending:
            continue
        before = len(result.assignments)
        if rule.lexicon:
            for phrase, canonical in sorted(neuron.trigger_lexicon.items()):
                for m in re.finditer(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", sentence):
                    record(rule.attr, rule.param, [canonical], m.span(), None)
        else:
            pat = re.compile(rule.pattern)
            matches = list(pat.finditer(sentence)) if rule.multi else \
                ([m] if (m := pat.search(sentence)) else [])
            for m in matches:
                text = m.group(rule.group) if rule.group else m.group(0)
                if rule.value is not None:
                    record(rule.attr, rule.param, [rule.value], m.span(), None)
                elif rule.transform:
                    values, tv = _transform(rule.transform, text, ctx)
                    if values or (tv is not None and tv.kind == "window"):
                        record(rule.attr, rule.param, values, m.span(), tv)
                else:
                    record(rule.attr, rule.param, [text], m.span(), None)
        if rule.requires_context_target:
            for a in result.assignments[before:]:
                a.from_context = True

    # strategy passes: iterate until stable
    bound = len(neuron.attrs) + len(neuron.params) + 1
    emitted_signals: set[str] = set()
    while result.passes < bound:
        result.passes += 1
        changed = False
        for rule in neuron.strategy_rules:
            have = assigned.get(rule.when_attr) or (
                {params[rule.when_attr]} if rule.when_attr in params else None)
            if not have:
                continue
            if rule.when_value is not None and not any(
                    re.search(rule.when_value, v) for v in have):
                continue
            if rule.assign_attr and rule.assign_value is not None:
                changed |= record(
                    rule.assign_attr if neuron.attr_spec(rule.assign_attr) else None,
                    rule.assign_attr if not neuron.attr_spec(rule.assign_attr) else None,
                    [rule.assign_value], (0, 0), None)
            if rule.emit_signal and rule.emit_signal not in emitted_signals:
                emitted_signals.add(rule.emit_signal)
                result.signals.append(rule.emit_signal)
            if rule.reply_text and rule.reply_text not in result.replies:
                result.replies.append(rule.reply_text)
        if not changed:
            break
    return result


class NeuronStore:
    """Read-mostly neuron inventory with its trigger index.

    Registration rebuilds the index and swaps it in atomically (a single
    attribute rebind), so concurrent readers never observe a partial index.
    """

    def __init__(self, neurons: Optional[list[InformationNeuron]] = None):
        self._by_id: dict[str, InformationNeuron] = {}
        self._by_name: dict[str, InformationNeuron] = {}
        self.index = TriggerIndex([])
        if neurons:
            for n in neurons:
                self._add(n)
            self.reindex()

    def _add(self, neuron: InformationNeuron) -> None:
        if neuron.id in self._by_id:
            raise DuplicateNeuronError(neuron.id)
        if neuron.name in self._by_name:
            raise NeuronConfigError(f"duplicate neuron name: {neuron.name}")
        neuron.validate()
        self._by_id[neuron.id] = neuron
        self._by_name[neuron.name] = neuron

    def add(self, neuron: InformationNeuron) -> None:
        self._add(neuron)
        self.reindex()

    def reindex(self) -> None:
        self.index = build_trigger_index(list(self._by_id.values()))

    def get(self, neuron_id: str) -> InformationNeuron:
        return self._by_id[neuron_id]

    def by_name(self, name: str) -> InformationNeuron:
        return self._by_name[name]

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def update_trigger_info(self, neuron_id: str, phrases: Iterable[str],
                            canonical: Optional[str] = None) -> InformationNeuron:
        """Union new phrases into a neuron's trigger info and rebuild the
        index. Idempotent for repeated submissions."""
        if neuron_id not in self._by_id:
            raise KeyError(f"unknown neuron id: {neuron_id}")
        neuron = self._by_id[neuron_id]
        cleaned = {nlu.preprocess(p) for p in phrases if nlu.preprocess(p)}
        changed = False
        for p in cleaned:
            if canonical is not None:
                if neuron.trigger_lexicon.get(p) != canonical:
                    neuron.trigger_lexicon[p] = canonical
                    changed = True
            if p not in neuron.trigger_info:
                neuron.trigger_info.add(p)
                changed = True
        if changed:
            self.reindex()
        return neuron

    def identify_sentence(self, sentence: str, ctx: IdentifyContext) -> IdentifyResult:
        """Trigger neurons for one sentence (index hits plus context targets)
        and run identification, following inter-neuron signals with a global
        pass budget equal to the neuron count."""
        total = IdentifyResult()
        triggered = self.index.lookup(sentence)
        for name in ctx.context_targets:
            if name in self._by_name:
                triggered.add(self._by_name[name].id)
        queue = sorted(triggered)
        processed: set[str] = set()
        budget = len(self._by_id)
        while queue and budget > 0:
            nid = queue.pop(0)
            if nid in processed:
                continue
            processed.add(nid)
            budget -= 1
            res = identify(self._by_id[nid], sentence, ctx)
            total.assignments.extend(res.assignments)
            total.replies.extend(res.replies)
            total.passes = max(total.passes, res.passes)
            for sig in res.signals:
                target = self._by_name.get(sig)
                if target and target.id not in processed:
                    queue.append(target.id)
                    total.signals.append(sig)
        return total


def load_neurons(path_or_doc) -> NeuronStore:
    """Load a neuron fixture document (schema v1): {"neurons": [...]}"""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc, "r", encoding="utf-8") as f:
            doc = json.load(f)
    if doc.get("schema_version") != "v1":
        raise NeuronConfigError("unsupported neuron fixture schema version")
    return NeuronStore([InformationNeuron.from_dict(d) for d in doc["neurons"]])


def default_neuron_store() -> NeuronStore:
    raw = resources.files("botline.fixtures").joinpath("neurons.json").read_text("utf-8")
    return load_neurons(json.loads(raw))

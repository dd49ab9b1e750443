"""Service catalog: coded bot tree with auto-generated ancestors.

Bots are enterprise-customized failure-report services named
"code1_code2_code3" (service type, device type, brand). Codes fill left to
right; 0 means "no code at this level". Leaves come from customization
documents, interior nodes are generated so partial evidence can still adapt
to a service.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .matching import NoServiceMatch, ValueExpect

DEVICE_ATTRS = {"type", "brand", "phenomenon", "purchase_time"}
USER_ATTRS = {"name", "phone", "address", "appointment_time"}
_ATTR_KINDS = {"purchase_time": "year", "appointment_time": "datetime", "phone": "phone"}


class ValidationError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message


@dataclass(frozen=True, order=True)
class BotId:
    code1: int = 0
    code2: int = 0
    code3: int = 0

    def __post_init__(self):
        codes = (self.code1, self.code2, self.code3)
        if any(c < 0 for c in codes):
            raise ValueError("codes are non-negative")
        # zero marks "no code"; codes fill left to right
        for i in range(2):
            if codes[i] == 0 and any(codes[i + 1:]):
                raise ValueError(f"invalid bot id {codes}: zero before non-zero")

    def __str__(self) -> str:
        return f"{self.code1}_{self.code2}_{self.code3}"

    @classmethod
    def parse(cls, rendered: str) -> "BotId":
        m = re.fullmatch(r"(\d+)_(\d+)_(\d+)", rendered)
        if not m:
            raise ValueError(f"malformed bot id: {rendered!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    @property
    def is_root(self) -> bool:
        return self.code1 == 0

    @property
    def is_leaf(self) -> bool:
        return self.code3 != 0

    @property
    def level(self) -> int:
        """Count of non-zero codes: 0 for the root, 3 for a leaf."""
        return sum(1 for c in (self.code1, self.code2, self.code3) if c != 0)

    def parent(self) -> Optional["BotId"]:
        """Zero the last non-zero code; the root has no parent."""
        if self.code3:
            return BotId(self.code1, self.code2, 0)
        if self.code2:
            return BotId(self.code1, 0, 0)
        if self.code1:
            return BotId(0, 0, 0)
        return None


ROOT = BotId(0, 0, 0)


@dataclass
class FaqEntry:
    pattern: str
    answer: str


@dataclass
class BotMetadata:
    warranty_years: int = 0
    visit_fee_text: str = ""
    in_warranty_fee_text: str = ""
    out_of_warranty_fee_text: str = ""
    provider_id: str = ""
    faq: list[FaqEntry] = field(default_factory=list)


@dataclass
class Requirement:
    attr: str
    code: int
    expect: ValueExpect = field(default_factory=ValueExpect.any)


@dataclass
class BotSpec:
    bot_id: BotId
    display_name: str
    trigger_phrases: set[str] = field(default_factory=set)
    requirements: list[Requirement] = field(default_factory=list)
    metadata: BotMetadata = field(default_factory=BotMetadata)
    origin: str = "enterprise"  # "enterprise" | "system"
    version: int = 1
    service_type: str = ""
    device_type: str = ""
    brand: str = ""


def _parse_expect(doc, attr: str, path: str) -> ValueExpect:
    kind = _ATTR_KINDS.get(attr, "text")
    if doc is None:
        return ValueExpect.any()
    if "exact" in doc:
        return ValueExpect.exact(str(doc["exact"]), kind)
    if "one_of" in doc:
        return ValueExpect.one_of([str(v) for v in doc["one_of"]], kind)
    if "range" in doc:
        lo, hi = doc["range"]
        return ValueExpect.range(str(lo), str(hi), kind)
    raise ValidationError(path, "unknown restriction form")


class BotRegistry:
    """The service tree plus the per-level name->code dictionaries.

    Registration is an exclusive update: the new node set, dictionaries and
    any neuron trigger updates land together before readers see them.
    """

    def __init__(self, neuron_store=None):
        self.neuron_store = neuron_store
        self.service_codes: dict[str, int] = {}
        self.type_codes: dict[str, int] = {}
        self.brand_codes: dict[str, int] = {}
        self.nodes: dict[str, BotSpec] = {}
        self.nodes[str(ROOT)] = BotSpec(bot_id=ROOT, display_name="service root", origin="system")

    # -- identifiers ---------------------------------------------------

    def _code_for(self, table: dict[str, int], name: str) -> int:
        key = name.strip().lower()
        if key not in table:
            table[key] = len(table) + 1
        return table[key]

    def allocate_bot_id(self, service_type: str, device_type: str, brand: str) -> BotId:
        """Stable first-come codes per level; same names, same id."""
        c1 = self._code_for(self.service_codes, service_type) if service_type else 0
        c2 = self._code_for(self.type_codes, device_type) if device_type else 0
        c3 = self._code_for(self.brand_codes, brand) if brand else 0
        return BotId(c1, c2, c3)

    def peek_bot_id(self, service_type: str, device_type: str, brand: str) -> Optional[BotId]:
        """The id this combination would get, without allocating codes."""
        c1 = self.service_codes.get(service_type.strip().lower())
        c2 = self.type_codes.get(device_type.strip().lower())
        c3 = self.brand_codes.get(brand.strip().lower())
        if c1 is None or c2 is None or c3 is None:
            return None
        return BotId(c1, c2, c3)

    def parent(self, bot_id: BotId) -> Optional[BotId]:
        return bot_id.parent()

    # -- registration --------------------------------------------------

    def _validate_submission(self, doc: dict) -> None:
        for key in ("service_type", "device_type", "brand"):
            if not str(doc.get(key, "")).strip():
                raise ValidationError(key, "required")
        known = DEVICE_ATTRS | USER_ATTRS
        for i, req in enumerate(doc.get("requirements", [])):
            attr = req.get("attr")
            if attr not in known:
                raise ValidationError(f"requirements[{i}].attr", f"unknown attribute {attr!r}")
            if req.get("code") not in (0, 1):
                raise ValidationError(f"requirements[{i}].code", "must be 0 or 1")
            if req.get("restrict") is not None:
                _parse_expect(req["restrict"], attr, f"requirements[{i}].restrict")

    def register_bot(self, doc: dict) -> list[BotId]:
        """Register a customization document.

        Creates the leaf (or replaces it, bumping the version) and every
        missing ancestor up to the root; pushes the submission's trigger
        phrases into the brand and device-type neurons. Returns the ids
        created by this call, leaf first.
        """
        self._validate_submission(doc)
        service = doc["service_type"]
        dtype = doc["device_type"]
        brand = doc["brand"]
        leaf_id = self.allocate_bot_id(service, dtype, brand)
        created: list[BotId] = []

        requirements = [
            Requirement(attr=r["attr"], code=int(r["code"]),
                        expect=_parse_expect(r.get("restrict"), r["attr"],
                                             f"requirements[{i}].restrict"))
            for i, r in enumerate(doc.get("requirements", []))
        ]
        meta_doc = doc.get("metadata", {})
        metadata = BotMetadata(
            warranty_years=int(meta_doc.get("warranty_years", 0)),
            visit_fee_text=meta_doc.get("visit_fee_text", ""),
            in_warranty_fee_text=meta_doc.get("in_warranty_fee_text", ""),
            out_of_warranty_fee_text=meta_doc.get("out_of_warranty_fee_text", ""),
            provider_id=meta_doc.get("provider_id", ""),
            faq=[FaqEntry(pattern=f["pattern"], answer=f["answer"])
                 for f in meta_doc.get("faq", [])],
        )
        spec = BotSpec(
            bot_id=leaf_id,
            display_name=doc.get("display_name") or f"{brand} {dtype} reports failure",
            trigger_phrases={p.lower() for p in doc.get("trigger_phrases", [])},
            requirements=requirements,
            metadata=metadata,
            origin="enterprise",
            service_type=service,
            device_type=dtype,
            brand=brand,
        )
        existing = self.nodes.get(str(leaf_id))
        if existing is not None:
            spec.version = existing.version + 1
        else:
            created.append(leaf_id)
        self.nodes[str(leaf_id)] = spec

        # auto-generate missing ancestors; their single requirement is the
        # child-bot selection over the next-level attribute
        node = leaf_id
        while (parent := node.parent()) is not None:
            if str(parent) not in self.nodes:
                self.nodes[str(parent)] = self._interior_spec(parent, doc)
                created.append(parent)
            node = parent

        if self.neuron_store is not None:
            brand_neuron = self.neuron_store.by_name("brand")
            self.neuron_store.update_trigger_info(
                brand_neuron.id, {brand, *spec.trigger_phrases}, canonical=brand)
            type_neuron = self.neuron_store.by_name("device type")
            type_phrases = set(doc.get("device_type_phrases", [])) | {dtype}
            self.neuron_store.update_trigger_info(type_neuron.id, type_phrases)
        return created

    def _interior_spec(self, bot_id: BotId, doc: dict) -> BotSpec:
        if bot_id.level == 2:
            name = doc.get("type_display_name") or f"{doc['device_type']} failure report"
            select_attr = "brand"
        elif bot_id.level == 1:
            name = f"{doc['service_type']} service"
            select_attr = "type"
        else:
            name = "service root"
            select_attr = "type"
        return BotSpec(
            bot_id=bot_id,
            display_name=name,
            requirements=[Requirement(attr=select_attr, code=1)],
            origin="system",
            service_type=doc.get("service_type", ""),
            device_type=doc.get("device_type", "") if bot_id.level >= 2 else "",
        )

    # -- queries -------------------------------------------------------

    def get(self, bot_id) -> BotSpec:
        key = str(bot_id)
        if key not in self.nodes:
            raise KeyError(f"unknown bot id: {key}")
        return self.nodes[key]

    def resolve(self, service_type: Optional[str] = None,
                device_type: Optional[str] = None,
                brand: Optional[str] = None) -> BotId:
        """Descend from the root along the coded levels present in the
        evidence and return the deepest existing node."""
        if not service_type and not device_type and not brand:
            return ROOT
        c1 = self.service_codes.get((service_type or "").strip().lower())
        if service_type is None:
            # failure reporting is the only served category; default to it
            c1 = 1 if self.service_codes else None
        if c1 is None or str(BotId(c1, 0, 0)) not in self.nodes:
            if device_type or brand:
                if device_type and device_type.strip().lower() not in self.type_codes:
                    raise NoServiceMatch(f"unknown device type: {device_type}")
            return ROOT
        node = BotId(c1, 0, 0)
        if device_type:
            c2 = self.type_codes.get(device_type.strip().lower())
            if c2 is None:
                raise NoServiceMatch(f"unknown device type: {device_type}")
            candidate = BotId(c1, c2, 0)
            if str(candidate) not in self.nodes:
                raise NoServiceMatch(f"no service for device type: {device_type}")
            node = candidate
            if brand:
                c3 = self.brand_codes.get(brand.strip().lower())
                if c3 is not None and str(BotId(c1, c2, c3)) in self.nodes:
                    node = BotId(c1, c2, c3)
        return node

    def children(self, bot_id) -> list[BotId]:
        parent = BotId.parse(str(bot_id))
        self.get(parent)
        out = [s.bot_id for s in self.nodes.values()
               if s.bot_id != parent and s.bot_id.parent() == parent]
        return sorted(out)

    def tree(self) -> list[BotSpec]:
        return [self.nodes[k] for k in sorted(self.nodes, key=lambda k: BotId.parse(k))]

    # -- persistence ---------------------------------------------------

    def to_snapshot(self) -> dict:
        def spec_doc(s: BotSpec) -> dict:
            return {
                "bot_id": str(s.bot_id),
                "display_name": s.display_name,
                "trigger_phrases": sorted(s.trigger_phrases),
                "requirements": [
                    {"attr": r.attr, "code": r.code,
                     "expect": {"kind": r.expect.kind, "values": list(r.expect.values),
                                "value_kind": r.expect.value_kind}}
                    for r in s.requirements
                ],
                "metadata": {
                    "warranty_years": s.metadata.warranty_years,
                    "visit_fee_text": s.metadata.visit_fee_text,
                    "in_warranty_fee_text": s.metadata.in_warranty_fee_text,
                    "out_of_warranty_fee_text": s.metadata.out_of_warranty_fee_text,
                    "provider_id": s.metadata.provider_id,
                    "faq": [{"pattern": f.pattern, "answer": f.answer} for f in s.metadata.faq],
                },
                "origin": s.origin,
                "version": s.version,
                "service_type": s.service_type,
                "device_type": s.device_type,
                "brand": s.brand,
            }
        return {
            "schema_version": "v1",
            "service_codes": self.service_codes,
            "type_codes": self.type_codes,
            "brand_codes": self.brand_codes,
            "nodes": [spec_doc(s) for s in self.tree()],
        }

    @classmethod
    def from_snapshot(cls, doc: dict, neuron_store=None) -> "BotRegistry":
        if doc.get("schema_version") != "v1":
            raise ValueError("unsupported registry snapshot version")
        reg = cls(neuron_store=neuron_store)
        reg.service_codes = dict(doc["service_codes"])
        reg.type_codes = dict(doc["type_codes"])
        reg.brand_codes = dict(doc["brand_codes"])
        for nd in doc["nodes"]:
            spec = BotSpec(
                bot_id=BotId.parse(nd["bot_id"]),
                display_name=nd["display_name"],
                trigger_phrases=set(nd.get("trigger_phrases", [])),
                requirements=[
                    Requirement(attr=r["attr"], code=r["code"],
                                expect=ValueExpect(kind=r["expect"]["kind"],
                                                   values=tuple(r["expect"]["values"]),
                                                   value_kind=r["expect"]["value_kind"]))
                    for r in nd.get("requirements", [])
                ],
                metadata=BotMetadata(
                    warranty_years=nd["metadata"]["warranty_years"],
                    visit_fee_text=nd["metadata"]["visit_fee_text"],
                    in_warranty_fee_text=nd["metadata"]["in_warranty_fee_text"],
                    out_of_warranty_fee_text=nd["metadata"]["out_of_warranty_fee_text"],
                    provider_id=nd["metadata"]["provider_id"],
                    faq=[FaqEntry(**f) for f in nd["metadata"].get("faq", [])],
                ),
                origin=nd.get("origin", "enterprise"),
                version=nd.get("version", 1),
                service_type=nd.get("service_type", ""),
                device_type=nd.get("device_type", ""),
                brand=nd.get("brand", ""),
            )
            reg.nodes[str(spec.bot_id)] = spec
        return reg


def load_bot_documents(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if isinstance(doc, dict):
        return doc.get("bots", [])
    return list(doc)

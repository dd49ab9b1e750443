"""Rule-based language layer: normalization, sentence splitting, four-way
sentence classification, polarity, service intents and time expressions.

Everything here is lexicon/regex driven and stateless; the lexicon tables are
versioned JSON documents shipped under ``botline/fixtures``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, time, timedelta
from importlib import resources
from typing import Optional

GREETING = "greeting"
CONFIRMATION = "information_confirmation"
STATEMENT = "information_statement"
INQUIRY = "inquiry"

ACCEPT = "accept"
REJECT = "reject"
NEUTRAL = "neutral"

_PUNCT_MAP = {
    "‘": "'", "’": "'", "“": '"', "”": '"',
    "，": ",", "。": ".", "？": "?", "！": "!",
    "：": ":", "；": ";", "–": "-", "—": "-",
}
_FULLWIDTH_DIGITS = {chr(0xFF10 + i): str(i) for i in range(10)}

# a digit glued to an am/pm marker gets a separating space ("3p.m." -> "3 p.m.")
_AMPM_GLUE_RE = re.compile(r"(\d)(a\.m\.|p\.m\.|am\b|pm\b)")

_TERMINATOR_RE = re.compile(r"[.!?]+")
# token (possibly dotted abbreviation) immediately before a period
_PRE_TOKEN_RE = re.compile(r"([a-z]+(?:\.[a-z]+)*|\w+)$")

_WORD_RE = re.compile(r"[a-z']+|\d+")


class Lexicons:
    """Lexicon tables for classification, polarity and intent cues."""

    def __init__(self, doc: dict):
        self.version = doc.get("schema_version", "v1")
        self.greetings = [p.lower() for p in doc["greetings"]]
        self.accept = set(doc["accept"])
        self.reject = set(doc["reject"])
        self.reject_phrases = doc.get("reject_phrases", [])
        self.interjections = set(doc["interjections"])
        self.ack_fillers = set(doc.get("ack_fillers", []))
        self.question_words = set(doc["question_words"])
        self.count_words = {k: int(v) for k, v in doc["count_words"].items()}
        self.cancel_patterns = [re.compile(p) for p in doc["cancel_patterns"]]
        self.repair_cues = [re.compile(p) for p in doc.get("repair_cues", [])]
        self.schedule_request_patterns = [
            re.compile(p) for p in doc["schedule_request_patterns"]
        ]
        self.dayparts = {
            k: (time.fromisoformat(a), time.fromisoformat(b))
            for k, (a, b) in doc["dayparts"].items()
        }
        self.city_aliases = {k.lower(): v for k, v in doc["city_aliases"].items()}
        self.abbreviations = set(doc.get("abbreviations", ["no", "p.m", "a.m"]))


_DEFAULT: Optional[Lexicons] = None


def default_lexicons() -> Lexicons:
    global _DEFAULT
    if _DEFAULT is None:
        raw = resources.files("botline.fixtures").joinpath("lexicons.json").read_text("utf-8")
        _DEFAULT = Lexicons(json.loads(raw))
    return _DEFAULT


def preprocess(raw: str) -> str:
    """Normalize user text: lowercase, straighten punctuation, collapse
    whitespace, split glued am/pm markers. No spelling correction."""
    out = []
    for ch in raw:
        out.append(_PUNCT_MAP.get(ch, _FULLWIDTH_DIGITS.get(ch, ch)))
    text = "".join(out).lower()
    text = _AMPM_GLUE_RE.sub(r"\1 \2", text)
    text = re.sub(r"\s+", " ", text).strip()
    return text


def split_sentences(text: str, lexicons: Optional[Lexicons] = None) -> list[str]:
    """Split normalized text on terminal punctuation, keeping the terminator.

    A period only ends a sentence when followed by whitespace or end of text
    and not attached to a known abbreviation ("no.128", "p.m.").
    """
    lex = lexicons or default_lexicons()
    sentences: list[str] = []
    start = 0
    for m in _TERMINATOR_RE.finditer(text):
        end = m.end()
        if end < len(text) and not text[end].isspace():
            continue
        if m.group().startswith("."):
            tok = _PRE_TOKEN_RE.search(text[: m.start()])
            if tok and tok.group(1) in lex.abbreviations:
                continue
        chunk = text[start:end].strip()
        if chunk:
            sentences.append(chunk)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def is_interjection(sentence: str, lexicons: Optional[Lexicons] = None) -> bool:
    lex = lexicons or default_lexicons()
    words = _WORD_RE.findall(sentence)
    return bool(words) and all(w in lex.interjections for w in words)


def _is_bare_ack(sentence: str, lex: Lexicons) -> bool:
    words = _WORD_RE.findall(sentence)
    if not words:
        return False
    cues = lex.accept | lex.reject
    if not any(w in cues for w in words):
        return False
    return all(w in cues or w in lex.ack_fillers for w in words)


def classify(sentence: str, awaiting_confirmation: bool = False,
             lexicons: Optional[Lexicons] = None) -> str:
    """Assign exactly one category to a sentence.

    Recognition priority: greeting, then confirmation (only a bare
    acknowledgment while the system awaits one), then inquiry cues
    (question word or trailing question mark), else statement.
    """
    lex = lexicons or default_lexicons()
    stripped = sentence.strip().rstrip(".!?").strip()
    words = _WORD_RE.findall(sentence)
    for phrase in lex.greetings:
        if stripped == phrase or stripped.startswith(phrase + " ") or stripped.endswith(" " + phrase):
            return GREETING
    if awaiting_confirmation and _is_bare_ack(sentence, lex):
        return CONFIRMATION
    if sentence.rstrip().endswith("?"):
        return INQUIRY
    if words and words[0] in lex.question_words:
        return INQUIRY
    return STATEMENT


def detect_polarity(sentence: str, lexicons: Optional[Lexicons] = None) -> str:
    """Lexicon polarity; reject cues dominate accept cues."""
    lex = lexicons or default_lexicons()
    words = set(_WORD_RE.findall(sentence))
    rejected = bool(words & lex.reject)
    if not rejected:
        rejected = any(p in sentence for p in lex.reject_phrases)
    if rejected:
        return REJECT
    if words & lex.accept:
        return ACCEPT
    return NEUTRAL


@dataclass
class Mention:
    """A slot value found in the turn, with enough position info to pair
    brands with device mentions by textual proximity."""

    attr: str
    value: str
    sentence_index: int
    start: int


@dataclass
class ServiceIntent:
    action: str  # "add" | "remove"
    device_type: Optional[str] = None
    brand: Optional[str] = None
    count: int = 1
    phenomenon: Optional[str] = None
    sentence_index: int = 0


def _count_before(sentence: str, type_start: int, lex: Lexicons) -> int:
    window = sentence[max(0, type_start - 24): type_start]
    words = _WORD_RE.findall(window)
    for w in reversed(words):
        if w in lex.count_words:
            return lex.count_words[w]
        if w.isdigit():
            return max(1, int(w))
    return 1


def detect_service_intents(sentences: list[str], mentions: list[Mention],
                           lexicons: Optional[Lexicons] = None) -> list[ServiceIntent]:
    """Derive add/remove service intents for one turn.

    A cancellation cue turns the sentence's brand/type evidence into a remove
    intent. Otherwise a device-type mention plus failure evidence (a
    phenomenon mention or an explicit repair cue) yields add intents, with
    count words honored and brand mentions paired in textual order.
    """
    lex = lexicons or default_lexicons()
    intents: list[ServiceIntent] = []
    by_sentence: dict[int, list[Mention]] = {}
    for m in mentions:
        by_sentence.setdefault(m.sentence_index, []).append(m)

    add_slots: list[ServiceIntent] = []
    brand_pool: list[Mention] = []
    for idx, sent in enumerate(sentences):
        ms = sorted(by_sentence.get(idx, []), key=lambda m: m.start)
        types = [m for m in ms if m.attr == "type"]
        brands = [m for m in ms if m.attr == "brand"]
        phenomena = [m for m in ms if m.attr == "phenomenon"]
        if any(p.search(sent) for p in lex.cancel_patterns):
            evidence = brands or types
            if evidence:
                for ev in (brands or [None]):
                    intents.append(ServiceIntent(
                        action="remove",
                        brand=ev.value if ev else None,
                        device_type=types[0].value if types else None,
                        sentence_index=idx,
                    ))
            else:
                intents.append(ServiceIntent(action="remove", sentence_index=idx))
            continue
        failure_here = bool(phenomena) or any(p.search(sent) for p in lex.repair_cues)
        for t in types:
            if not failure_here:
                continue
            count = _count_before(sent, t.start, lex)
            for _ in range(count):
                add_slots.append(ServiceIntent(
                    action="add",
                    device_type=t.value,
                    phenomenon=phenomena[0].value if phenomena else None,
                    sentence_index=idx,
                ))
        brand_pool.extend(brands)

    # pair brands with device slots in textual order; leftover slots stay brandless
    for slot, brand in zip(add_slots, brand_pool):
        slot.brand = brand.value
    intents.extend(add_slots)
    return intents


@dataclass
class TimeValue:
    """Resolved time expression: a year, a set of years, a concrete moment,
    a window, or unresolved."""

    kind: str  # "year" | "year_set" | "moment" | "window" | "unresolved"
    years: frozenset[int] = frozenset()
    moment: Optional[datetime] = None
    window: Optional[tuple[datetime, datetime]] = None

    @classmethod
    def unresolved(cls) -> "TimeValue":
        return cls(kind="unresolved")


_YEAR_RE = re.compile(r"\b((?:19|20)\d{2})\b")
_YEAR_ALT_RE = re.compile(r"\b(?:19|20)\d{2}(?:\s*(?:or|,)\s*(?:19|20)\d{2})+\b")
_CLOCK_RE = re.compile(
    r"(\d{1,2})(?::(\d{2}))?\s*(am|pm|a\.m\.|p\.m\.|o'clock)")
_DAY_RE = re.compile(r"\b(today|tomorrow|the day after tomorrow)\b")
_DAYPART_RE = re.compile(r"\b(morning|afternoon|evening)\b")


def _day_offset(word: str) -> int:
    return {"today": 0, "tomorrow": 1, "the day after tomorrow": 2}[word]


def resolve_time(expression: str, reference: datetime,
                 lexicons: Optional[Lexicons] = None) -> TimeValue:
    """Resolve a time expression against a reference clock.

    Handles relative years ("the year before last"), bare years and year
    alternatives, clock times with day words ("9am tomorrow") and day-part
    windows ("tomorrow morning"). Anything else is Unresolved: the slot
    stays open rather than guessing.
    """
    lex = lexicons or default_lexicons()
    text = expression.lower().strip()
    if "the year before last" in text:
        return TimeValue(kind="year", years=frozenset({reference.year - 2}))
    if "last year" in text:
        return TimeValue(kind="year", years=frozenset({reference.year - 1}))
    if "this year" in text:
        return TimeValue(kind="year", years=frozenset({reference.year}))
    if _YEAR_ALT_RE.search(text):
        years = frozenset(int(y) for y in _YEAR_RE.findall(text))
        return TimeValue(kind="year_set", years=years)

    day_m = _DAY_RE.search(text)
    part_m = _DAYPART_RE.search(text)
    clock_m = _CLOCK_RE.search(text)
    if clock_m and (day_m or part_m or "at" in text.split()):
        hour = int(clock_m.group(1))
        minute = int(clock_m.group(2) or 0)
        marker = clock_m.group(3)
        if marker in ("pm", "p.m.") and hour != 12:
            hour += 12
        if marker in ("am", "a.m.") and hour == 12:
            hour = 0
        day = reference.date() + timedelta(days=_day_offset(day_m.group(1)) if day_m else 0)
        return TimeValue(kind="moment", moment=datetime.combine(day, time(hour, minute)))
    if part_m:
        lo, hi = lex.dayparts[part_m.group(1)]
        day = reference.date() + timedelta(days=_day_offset(day_m.group(1)) if day_m else 0)
        return TimeValue(kind="window",
                         window=(datetime.combine(day, lo), datetime.combine(day, hi)))
    if day_m and not clock_m:
        day = reference.date() + timedelta(days=_day_offset(day_m.group(1)))
        return TimeValue(kind="window",
                         window=(datetime.combine(day, time(0, 0)),
                                 datetime.combine(day, time(23, 59))))

    year_m = _YEAR_RE.search(text)
    if year_m:
        return TimeValue(kind="year", years=frozenset({int(year_m.group(1))}))
    return TimeValue.unresolved()


def canonical_address(raw: str, lexicons: Optional[Lexicons] = None) -> str:
    """Canonicalize a street address: split the house number from the street,
    title-case words and expand city aliases from the gazetteer."""
    lex = lexicons or default_lexicons()
    raw = raw.strip().strip(".")
    segments = [s.strip() for s in raw.split(",") if s.strip()]
    if segments:
        head = segments[0]
        m = re.match(r"(no\.?\s*\d+)\s+(.+)", head)
        if m:
            segments[0:1] = [m.group(1).replace(" ", ""), m.group(2)]
    out = []
    for i, seg in enumerate(segments):
        if i == len(segments) - 1 and seg.lower() in lex.city_aliases:
            out.append(lex.city_aliases[seg.lower()])
            continue
        words = []
        for w in seg.split():
            if re.match(r"no\.?\d+", w):
                words.append("No." + re.sub(r"\D", "", w))
            else:
                words.append(w.capitalize())
        out.append(" ".join(words))
    return ", ".join(out)


def title_case_name(raw: str) -> str:
    return raw.strip().capitalize()

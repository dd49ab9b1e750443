"""The dialog object: per-user conversation state and the turn pipeline.

A turn runs: preprocess, split, classify, slot extraction through triggered
neurons, service-intent handling against the active-bot queue, memory
association, appointment FSM stepping, requirement matching, candidate
generation and priority reply composition. Everything is deterministic given
(session state, text, clock).
"""
from __future__ import annotations

import logging
import re
import secrets
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta
from typing import Optional

from . import nlu
from .matching import (CONFIRM, INQUIRE, MISSING, Clarification, MatchResult,
                       ValueExpect, derive_requirements, instructions_from_unsatisfied,
                       match, retire_requirements)
from .neurons import (Assignment, IdentifyContext, MemoryRecord, NeuronStore,
                      RequirementRecord)
from .registry import BotId, BotRegistry, BotSpec
from .storage import UserRecord, UserStore

log = logging.getLogger("botline.dialog")

GREETING_TEXT = "Hello, what can I do for you?"
CLOSING_OFFER_TEXT = "What else can I do for you?"
FAREWELL_TEXT = "Have a good life. Bye!"
ACK_TEXT = "OK."
ADDRESS_FIRST_TEXT = ("Please provide your address first, I'll check the schedule "
                      "of the maintenance personnel in this area, and then make an "
                      "appointment for your repair.")
KEEP_PHONE_OPEN_TEXT = ("Please keep your phone open {when}. The maintenance personnel "
                        "will contact you by phone before coming to the door.")
PROVIDERS_DIFFER_TEXT = ("Your {device} needs different service providers to provide "
                         "maintenance services.")

ATTR_NEURON = {
    "type": "device type",
    "brand": "brand",
    "phenomenon": "failure phenomenon",
    "purchase_time": "purchase time",
    "name": "name",
    "phone": "telephone number",
    "address": "address",
    "appointment_time": "appointment time",
}
ATTR_LABEL = {
    "phone": "contact number",
    "address": "address",
    "name": "name",
    "purchase_time": "purchase time",
    "phenomenon": "failure phenomenon",
}

DEVICE_ATTR_ORDER = ["type", "brand", "phenomenon", "purchase_time"]
USER_ATTR_ORDER = ["name", "phone", "address", "appointment_time"]

_CLASS_ORDER = {"A": 0, "B": 1, "C1": 2, "C2": 3, "C3": 4, "D": 5}


# ---------------------------------------------------------------------------
# appointment FSM

IDLE = "idle"
PRESENTED = "appointment_presented"
EXPECTATION = "expectation_presented"
DETERMINED = "determined"


@dataclass
class AppointmentState:
    phase: str = IDLE
    time: Optional[datetime] = None
    window: Optional[tuple[datetime, datetime]] = None
    proposed: list[datetime] = field(default_factory=list)


@dataclass
class FsmEvent:
    kind: str  # server_propose | user_counter | user_accept | user_reject
    time: Optional[datetime] = None
    window: Optional[tuple[datetime, datetime]] = None
    exclude: Optional[tuple[datetime, datetime]] = None
    question: bool = False


@dataclass
class FsmReply:
    text: str
    question: bool


def _pick_slot(slots: list[datetime], state: AppointmentState, clock: datetime,
               window: Optional[tuple[datetime, datetime]] = None,
               exclude: Optional[tuple[datetime, datetime]] = None) -> Optional[datetime]:
    for slot in slots:
        if slot <= clock or slot in state.proposed:
            continue
        if window and not (window[0] <= slot < window[1]):
            continue
        if exclude and exclude[0] <= slot < exclude[1]:
            continue
        return slot
    return None


def _nearest_slot(slots: list[datetime], state: AppointmentState, clock: datetime,
                  anchor: Optional[datetime]) -> Optional[datetime]:
    fresh = [s for s in slots if s > clock and s not in state.proposed]
    if not fresh:
        fresh = [s for s in slots if s > clock]
    if not fresh:
        return None
    pivot = anchor or clock
    return min(fresh, key=lambda s: (abs((s - pivot).total_seconds()), s))


def render_time_phrase(moment: datetime, clock: datetime) -> str:
    hour = moment.hour % 12 or 12
    ampm = "am" if moment.hour < 12 else "pm"
    clock_part = f"{hour}:{moment.minute:02d}{ampm}" if moment.minute else f"{hour}{ampm}"
    delta = (moment.date() - clock.date()).days
    if delta == 0:
        day = "today"
    elif delta == 1:
        day = "tomorrow"
    elif delta == 2:
        day = "the day after tomorrow"
    else:
        day = "on " + moment.strftime("%B %d").replace(" 0", " ")
    return f"{clock_part} {day}"


def render_day_part(moment: datetime, clock: datetime) -> str:
    delta = (moment.date() - clock.date()).days
    day = {0: "today", 1: "tomorrow", 2: "the day after tomorrow"}.get(
        delta, "on " + moment.strftime("%B %d").replace(" 0", " "))
    if moment.hour < 12:
        return f"{day} morning"
    if moment.hour < 18:
        return f"{day} afternoon"
    return f"{day} evening"


def step_appointment(state: AppointmentState, event: FsmEvent,
                     slots: list[datetime], clock: datetime
                     ) -> tuple[AppointmentState, Optional[FsmReply]]:
    """Advance the appointment negotiation.

    Determined is absorbing. A user counter with a window makes the engine
    immediately propose a slot inside it; when no slot fits, it apologizes
    with the nearest slot and the unhonorable window is dropped.
    """
    if state.phase == DETERMINED:
        return state, None

    def propose(t: datetime, template: str, question: bool) -> FsmReply:
        state.phase = PRESENTED
        state.time = t
        state.proposed.append(t)
        return FsmReply(template.format(t=render_time_phrase(t, clock)), question)

    if event.kind == "server_propose":
        t = event.time or _pick_slot(slots, state, clock, state.window)
        if t is None:
            t = _nearest_slot(slots, state, clock, None)
            state.window = None
            if t is None:
                return state, FsmReply(
                    "Sorry, there is no time slot available at the moment.", False)
            return state, propose(t, "Sorry, the schedule is full then. Is it OK at {t}?", True)
        return state, propose(t, "Is it OK to make an appointment at {t}?", True)

    if event.kind == "user_accept":
        if state.phase == PRESENTED and state.time is not None:
            state.phase = DETERMINED
        return state, None

    if event.kind == "user_counter":
        if event.time is not None:
            # the user presented a concrete time; accept it when the schedule has it
            if any(s == event.time for s in slots) and event.time > clock:
                state.phase = DETERMINED
                state.time = event.time
                state.window = None
                return state, FsmReply(
                    f"OK, see you at {render_time_phrase(event.time, clock)}.", False)
            state.window = None
            t = _nearest_slot(slots, state, clock, event.time)
            if t is None:
                return state, FsmReply(
                    "Sorry, there is no time slot available at the moment.", False)
            return state, propose(t, "Sorry, that time is taken. Is it OK at {t}?", True)
        if event.window is not None:
            state.phase = EXPECTATION
            state.window = event.window
            t = _pick_slot(slots, state, clock, event.window)
            if t is None:
                state.window = None
                t = _nearest_slot(slots, state, clock, event.window[0])
                if t is None:
                    return state, FsmReply(
                        "Sorry, there is no time slot available at the moment.", False)
                return state, propose(
                    t, "Sorry, the schedule is full then. Is it OK at {t}?", True)
            if event.question:
                return state, propose(t, "Is it ok at {t}?", True)
            return state, propose(t, "OK, it's {t}.", False)
        return state, None

    if event.kind == "user_reject":
        t = _pick_slot(slots, state, clock, state.window, event.exclude)
        if t is None and state.window is not None:
            # the standing expectation window has no free slot left
            state.window = None
            t = _pick_slot(slots, state, clock, None, event.exclude)
        if t is None:
            state.window = None
            t = _nearest_slot(slots, state, clock, None)
            if t is None:
                return state, FsmReply(
                    "Sorry, there is no time slot available at the moment.", False)
        return state, propose(t, "Is it ok at {t}?", True)

    return state, None


# ---------------------------------------------------------------------------
# session state

@dataclass
class CandidateReply:
    text: str
    cls: str  # A | B | C1 | C2 | C3 | D
    kind: str  # answer | greeting | proposal | notification | inquiry | confirm | closing | clarify
    question: bool = False
    terminal: bool = False
    target_attrs: tuple[str, ...] = ()
    instance_ids: tuple[str, ...] = ()
    order: int = 0


@dataclass
class LastAct:
    kind: str = "none"
    targets: tuple[str, ...] = ()
    awaiting: bool = False
    awaiting_kind: Optional[str] = None  # proposal | confirm | closing
    confirm_attr: Optional[str] = None
    fsm_provider: Optional[str] = None


@dataclass
class BotInstance:
    instance_id: str
    bot_id: BotId
    device_memory_id: int
    created_turn: int
    fee_notified: bool = False


@dataclass
class Sentence:
    index: int
    text: str
    category: str
    polarity: str


@dataclass
class DialogSession:
    session_id: str
    user_id: str
    clock: datetime
    active_bots: list[BotInstance] = field(default_factory=list)
    device_memories: list[MemoryRecord] = field(default_factory=list)
    user_memory: MemoryRecord = field(
        default_factory=lambda: MemoryRecord(neuron_id="n.user", neuron_name="user"))
    historical: dict[str, set[str]] = field(default_factory=dict)
    appointments: dict[str, AppointmentState] = field(default_factory=dict)
    last_act: LastAct = field(default_factory=LastAct)
    closing: str = "open"  # open | closing_offered | closed
    transcript: list[dict] = field(default_factory=list)
    turn: int = 0
    ask_counts: dict[str, int] = field(default_factory=dict)
    pending_schedule: bool = False
    keep_open_notified: bool = False
    focus_instance: Optional[str] = None
    instance_seq: int = 0
    last_activity: Optional[datetime] = None

    def instance(self, instance_id: str) -> Optional[BotInstance]:
        for inst in self.active_bots:
            if inst.instance_id == instance_id:
                return inst
        return None

    def memory_of(self, inst: BotInstance) -> MemoryRecord:
        return self.device_memories[inst.device_memory_id]


class SessionClosed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# engine

class Engine:
    """Shared read-mostly services (neurons, registry, schedule, store) plus
    the per-session turn pipeline. Sessions are single-threaded state
    machines; distinct sessions may run in parallel."""

    def __init__(self, neuron_store: NeuronStore, registry: BotRegistry,
                 user_store: Optional[UserStore] = None,
                 schedule: Optional[dict] = None,
                 lexicons: Optional[nlu.Lexicons] = None,
                 max_optional_asks: int = 1,
                 closing_timeout_s: int = 120):
        self.neurons = neuron_store
        self.registry = registry
        self.user_store = user_store
        self.schedule = schedule or {}
        self.lexicons = lexicons or nlu.default_lexicons()
        self.max_optional_asks = max_optional_asks
        self.closing_timeout_s = closing_timeout_s

    # -- session lifecycle ----------------------------------------------

    def open_session(self, user_id: str, clock: datetime) -> tuple[DialogSession, str]:
        """Create the dialog object, load history and greet."""
        session = DialogSession(
            session_id=secrets.token_urlsafe(12), user_id=user_id, clock=clock,
            last_activity=clock)
        if self.user_store is not None:
            try:
                record = self.user_store.load(user_id)
            except Exception:
                log.warning("history unavailable for %s; opening with empty history",
                            user_id, exc_info=True)
                record = None
            if record is not None:
                for attr in ("name", "phone", "address"):
                    vals = record.profile.get(attr)
                    if vals:
                        session.historical[attr] = set(vals)
        greeting = GREETING_TEXT
        session.transcript.append({"who": "system", "text": greeting})
        session.last_act = LastAct(kind="greeting")
        return session, greeting

    def provider_slots(self, provider_id: str) -> list[datetime]:
        days = self.schedule.get(provider_id, {})
        out: list[datetime] = []
        for day in sorted(days):
            for t in days[day]:
                hh, mm = t.split(":")
                out.append(datetime.fromisoformat(day).replace(hour=int(hh), minute=int(mm)))
        return out

    # -- turn pipeline ----------------------------------------------------

    def handle_turn(self, session: DialogSession, text: str) -> str:
        if session.closing == "closed":
            raise SessionClosed(session.session_id)
        session.turn += 1
        session.last_activity = session.clock + timedelta(seconds=session.turn)
        session.transcript.append({"who": "user", "text": text})
        try:
            reply = self._pipeline(session, text)
        except Exception:
            log.exception("turn pipeline failed; sending safe clarification")
            reply = "Sorry, something went wrong. Could you say that again?"
        session.transcript.append({"who": "system", "text": reply})
        return reply

    def _pipeline(self, session: DialogSession, text: str) -> str:
        norm = nlu.preprocess(text)
        raw_sentences = nlu.split_sentences(norm, self.lexicons)
        kept = [s for s in raw_sentences if not nlu.is_interjection(s, self.lexicons)]
        awaiting = session.last_act.awaiting
        sentences = [
            Sentence(i, s, nlu.classify(s, awaiting, self.lexicons),
                     nlu.detect_polarity(s, self.lexicons))
            for i, s in enumerate(kept)
        ]

        assignments = self._extract(session, sentences)
        mentions = [
            nlu.Mention(attr=a.attr, value=a.values[0], sentence_index=a.sentence_index,
                        start=a.span[0])
            for a in assignments
            if a.attr in ("type", "brand", "phenomenon") and a.values
        ]
        intents = nlu.detect_service_intents(
            [s.text for s in sentences], mentions, self.lexicons)
        intents.extend(self._leaf_answer_intents(session, sentences, assignments, intents))

        # a turn while closing was offered either declines or reopens
        if session.closing == "closing_offered":
            has_content = bool(assignments) or any(i.action == "add" for i in intents) or any(
                s.category == nlu.INQUIRY for s in sentences)
            bare = [s for s in sentences if s.category == nlu.CONFIRMATION]
            if not has_content and bare:
                self._persist(session)
                session.closing = "closed"
                session.last_act = LastAct(kind="farewell")
                return FAREWELL_TEXT
            if not has_content and not sentences:
                return CLOSING_OFFER_TEXT
            session.closing = "open"

        answers: list[CandidateReply] = []
        clarifications: list[Clarification] = []

        fsm_parts = self._step_fsms(session, sentences, assignments)
        consumed = self._update_queue(session, intents, sentences, clarifications)
        statement_content = self._associate(session, assignments, consumed, sentences)
        statement_content |= any(
            sentences[i.sentence_index].category == nlu.STATEMENT
            for i in intents if i.sentence_index < len(sentences))

        self._handle_confirmations(session, sentences)
        answers.extend(self._answer_inquiries(session, sentences, fsm_parts))
        answers.extend(self._greeting_answers(sentences))
        for c in clarifications:
            answers.append(self._clarify_candidate(c))

        candidates = self._generate_candidates(session, answers, fsm_parts)
        if not candidates:
            return self._try_end(session, statement_content)
        reply, used = self._compose(session, candidates, statement_content)
        self._after_emit(session, used)
        return reply

    # -- extraction -------------------------------------------------------

    def _extract(self, session: DialogSession, sentences: list[Sentence]) -> list[Assignment]:
        fsm_pending = any(st.phase in (PRESENTED, EXPECTATION)
                          for st in session.appointments.values())
        out: list[Assignment] = []
        for s in sentences:
            if s.category not in (nlu.STATEMENT, nlu.INQUIRY):
                continue
            targets = set()
            if s.category == nlu.STATEMENT:
                targets = {ATTR_NEURON[a] for a in session.last_act.targets if a in ATTR_NEURON}
            ctx = IdentifyContext(clock=session.clock, context_targets=targets,
                                  fsm_pending=fsm_pending, lexicons=self.lexicons)
            res = self.neurons.identify_sentence(s.text, ctx)
            # whole-sentence context captures (bare answers to the last inquiry)
            # only count when the sentence yielded nothing more specific
            specific = [a for a in res.assignments if not a.from_context]
            sentence_assignments = res.assignments if not specific else specific
            for a in sentence_assignments:
                a.sentence_index = s.index
                out.append(a)
        return out

    def _leaf_answer_intents(self, session, sentences, assignments, intents):
        """A bare brand statement answering a leaf-confirmation question is an
        add intent for the awaiting interior instance's device type."""
        interior = [i for i in session.active_bots if not i.bot_id.is_leaf]
        if not interior or "brand" not in session.last_act.targets:
            return []
        taken = {i.brand for i in intents if i.action == "add" and i.brand}
        removed = {i.brand for i in intents if i.action == "remove" and i.brand}
        target = interior[-1]
        dtype = next(iter(session.memory_of(target).values("type")), None)
        extra = []
        brand_order = sorted(
            (a for a in assignments if a.attr == "brand" and a.values),
            key=lambda a: (a.sentence_index, a.span[0]))
        for a in brand_order:
            if sentences[a.sentence_index].category != nlu.STATEMENT:
                continue
            if a.values[0] in taken or a.values[0] in removed:
                continue
            taken.add(a.values[0])
            extra.append(nlu.ServiceIntent(action="add", device_type=dtype,
                                           brand=a.values[0],
                                           sentence_index=a.sentence_index))
        return extra

    # -- FSM --------------------------------------------------------------

    def _fsm_event_from_turn(self, state: AppointmentState, sentences,
                             assignments) -> Optional[FsmEvent]:
        moments = []
        windows_ok = []
        windows_no = []
        comparative = None
        for a in assignments:
            if a.neuron_name != "appointment time":
                continue
            s = sentences[a.sentence_index]
            if a.param == "comparative" and comparative is None:
                comparative = (a.values[0], s.category == nlu.INQUIRY)
                continue
            if a.time_value is None:
                continue
            if a.time_value.kind == "moment":
                moments.append((a.time_value.moment, s.category == nlu.INQUIRY))
            elif a.time_value.kind == "window":
                if s.polarity == nlu.REJECT:
                    windows_no.append(a.time_value.window)
                else:
                    windows_ok.append((a.time_value.window, s.category == nlu.INQUIRY))
        if moments:
            t, q = moments[0]
            return FsmEvent(kind="user_counter", time=t, question=q)
        if windows_ok:
            w, q = windows_ok[0]
            return FsmEvent(kind="user_counter", window=w, question=q)
        if comparative and state.time is not None:
            word, q = comparative
            day = state.time.replace(hour=0, minute=0)
            if word == "earlier":
                return FsmEvent(kind="user_counter", window=(day, state.time), question=q)
            return FsmEvent(kind="user_counter",
                            window=(state.time + timedelta(minutes=1),
                                    day + timedelta(days=1)),
                            question=q)
        if windows_no:
            return FsmEvent(kind="user_reject", exclude=windows_no[0])
        for s in sentences:
            if s.category == nlu.CONFIRMATION:
                if s.polarity == nlu.ACCEPT:
                    return FsmEvent(kind="user_accept")
                if s.polarity == nlu.REJECT:
                    return FsmEvent(kind="user_reject")
        return None

    def _step_fsms(self, session, sentences, assignments) -> list[FsmReply]:
        parts: list[FsmReply] = []
        if session.last_act.awaiting_kind != "proposal":
            return parts
        provider = session.last_act.fsm_provider
        state = session.appointments.get(provider)
        if state is None or state.phase not in (PRESENTED, EXPECTATION):
            return parts
        event = self._fsm_event_from_turn(state, sentences, assignments)
        if event is None:
            return parts
        slots = self.provider_slots(provider)
        state, part = step_appointment(state, event, slots, session.clock)
        session.appointments[provider] = state
        if state.phase == DETERMINED and state.time is not None:
            session.user_memory.put("appointment_time",
                                    [state.time.strftime("%Y-%m-%d %H:%M")],
                                    session.turn, multi=False)
        if part is not None:
            parts.append(part)
        return parts

    # -- queue ------------------------------------------------------------

    def _update_queue(self, session, intents, sentences, clarifications) -> set:
        """Apply remove then add intents; returns consumed mention keys
        (attr, sentence_index) so association skips them."""
        consumed: set[tuple[str, int]] = set()
        removals = [i for i in intents if i.action == "remove"]
        if removals:
            views = [(inst.instance_id,
                      next(iter(session.memory_of(inst).values("type")), None),
                      next(iter(session.memory_of(inst).values("brand")), None))
                     for inst in session.active_bots]
            gone, problems = retire_requirements(views, removals)
            clarifications.extend(problems)
            # instance removal never deletes the linked device memory
            session.active_bots = [i for i in session.active_bots
                                   if i.instance_id not in gone]
            for r in removals:
                consumed.add(("brand", r.sentence_index))
                consumed.add(("type", r.sentence_index))

        adds = [i for i in intents if i.action == "add"]
        requests, problems = derive_requirements(adds, self.registry)
        clarifications.extend(problems)
        for req in requests:
            consumed.add(("type", req.sentence_index))
            consumed.add(("phenomenon", req.sentence_index))
            if req.brand:
                consumed.add(("brand", req.sentence_index))
            bot_id = BotId.parse(req.bot_id)
            refined = False
            if bot_id.is_leaf:
                for inst in session.active_bots:
                    mem = session.memory_of(inst)
                    if (not inst.bot_id.is_leaf
                            and not mem.values("brand")
                            and _same_type(mem, req.device_type)):
                        inst.bot_id = bot_id
                        self._seed_memory(session, mem, req)
                        session.focus_instance = inst.instance_id
                        refined = True
                        break
            else:
                for inst in session.active_bots:
                    mem = session.memory_of(inst)
                    if (not inst.bot_id.is_leaf and _same_type(mem, req.device_type)
                            and not req.brand):
                        self._seed_memory(session, mem, req)
                        session.focus_instance = inst.instance_id
                        refined = True
                        break
            if refined:
                continue
            memory = MemoryRecord(neuron_id="n.device", neuron_name="device")
            self._seed_memory(session, memory, req)
            session.device_memories.append(memory)
            session.instance_seq += 1
            inst = BotInstance(
                instance_id=f"i{session.instance_seq}",
                bot_id=bot_id,
                device_memory_id=len(session.device_memories) - 1,
                created_turn=session.turn,
            )
            session.active_bots.append(inst)
            session.focus_instance = inst.instance_id
        self._upgrade_interior(session)
        return consumed

    def _seed_memory(self, session, memory: MemoryRecord, req) -> None:
        if req.device_type:
            memory.put("type", [req.device_type], session.turn, multi=False)
        if req.brand:
            memory.put("brand", [req.brand], session.turn, multi=False)
        if req.phenomenon:
            memory.put("phenomenon", [req.phenomenon], session.turn, multi=False)

    def _upgrade_interior(self, session) -> None:
        """An interior instance whose memory gained a brand resolves to the
        matching leaf (the leaf-confirmation answer arrived)."""
        for inst in session.active_bots:
            if inst.bot_id.is_leaf:
                continue
            mem = session.memory_of(inst)
            brand = next(iter(mem.values("brand")), None)
            dtype = next(iter(mem.values("type")), None)
            if brand and dtype:
                try:
                    resolved = self.registry.resolve(device_type=dtype, brand=brand)
                except Exception:
                    continue
                if resolved.is_leaf:
                    inst.bot_id = resolved

    # -- association --------------------------------------------------------

    def _associate(self, session, assignments, consumed, sentences) -> bool:
        """Route leftover slot values: user attrs to the user memory, device
        attrs to the instance whose brand is mentioned nearest in the
        sentence, else the in-focus instance. Returns True when a statement
        sentence changed a memory."""
        changed = False
        brand_spans: dict[int, list[tuple[int, str]]] = {}
        for a in assignments:
            if a.attr == "brand":
                brand_spans.setdefault(a.sentence_index, []).append((a.span[0], a.values[0]))
        for a in assignments:
            if a.feeds == "user":
                if a.neuron_name == "appointment time":
                    continue  # appointment flows through the FSM
                is_statement = sentences[a.sentence_index].category == nlu.STATEMENT
                if a.param:
                    if session.user_memory.param_values.get(a.param) != a.values[0]:
                        session.user_memory.param_values[a.param] = a.values[0]
                        changed |= is_statement
                    continue
                spec = self.neurons.by_name("user").attr_spec(a.attr)
                if session.user_memory.put(a.attr, list(a.values), session.turn,
                                           multi=bool(spec and spec.multi)):
                    changed |= is_statement
                continue
            if a.feeds != "device" or a.attr is None or a.attr == "brand":
                continue
            if (a.attr, a.sentence_index) in consumed:
                continue
            target = self._route_device(session, a, brand_spans.get(a.sentence_index, []))
            if target is None:
                continue
            spec = self.neurons.by_name("device").attr_spec(a.attr)
            if target.put(a.attr, list(a.values), session.turn,
                          multi=bool(spec and spec.multi)):
                changed |= sentences[a.sentence_index].category == nlu.STATEMENT
                for inst in session.active_bots:
                    if session.memory_of(inst) is target:
                        session.focus_instance = inst.instance_id
                        break
        return changed

    def _route_device(self, session, assignment, brands) -> Optional[MemoryRecord]:
        instances = session.active_bots
        if not instances:
            return None
        if brands:
            nearest = min(brands, key=lambda b: abs(b[0] - assignment.span[0]))[1]
            owners = [i for i in instances
                      if nearest.lower() in {v.lower() for v in
                                             session.memory_of(i).values("brand")}]
            if len(owners) == 1:
                return session.memory_of(owners[0])
            if owners:
                focus = [i for i in owners if i.instance_id == session.focus_instance]
                return session.memory_of((focus or owners[-1:])[0])
        if len(instances) == 1:
            return session.memory_of(instances[0])
        focus = session.instance(session.focus_instance) if session.focus_instance else None
        if focus is not None:
            return session.memory_of(focus)
        return None

    # -- confirmations, inquiries, greetings --------------------------------

    def _handle_confirmations(self, session, sentences) -> None:
        act = session.last_act
        if not act.awaiting or act.awaiting_kind != "confirm" or not act.confirm_attr:
            return
        for s in sentences:
            if s.category != nlu.CONFIRMATION:
                continue
            attr = act.confirm_attr
            if s.polarity == nlu.ACCEPT and attr in session.historical:
                spec = self.neurons.by_name("user").attr_spec(attr)
                session.user_memory.put(attr, sorted(session.historical[attr]),
                                        session.turn, multi=bool(spec and spec.multi))
            elif s.polarity == nlu.REJECT:
                session.historical.pop(attr, None)
            return

    def _answer_inquiries(self, session, sentences, fsm_parts) -> list[CandidateReply]:
        out: list[CandidateReply] = []
        fsm_consumed = bool(fsm_parts)
        for s in sentences:
            if s.category != nlu.INQUIRY:
                continue
            if any(p.search(s.text) for p in self.lexicons.schedule_request_patterns):
                out.extend(self._schedule_request(session, s))
                continue
            faq = self._faq_answer(session, s.text)
            if faq is not None:
                out.append(CandidateReply(text=faq, cls="B", kind="answer", order=s.index))
                continue
            if fsm_consumed:
                continue  # the counter-question is handled by the FSM reply
            out.append(CandidateReply(
                text="Sorry, I am not sure about that.", cls="B", kind="answer",
                order=s.index))
        return out

    def _schedule_request(self, session, sentence) -> list[CandidateReply]:
        determined = [st for st in session.appointments.values()
                      if st.phase == DETERMINED and st.time]
        if determined:
            when = render_time_phrase(determined[0].time, session.clock)
            return [CandidateReply(
                text=f"The maintenance personnel will come at {when}.",
                cls="B", kind="answer", order=sentence.index)]
        if session.user_memory.values("address"):
            session.pending_schedule = True
            return []  # the proposal candidate is generated with the others
        session.pending_schedule = True
        return [CandidateReply(text=ADDRESS_FIRST_TEXT, cls="B", kind="answer",
                               terminal=True, order=sentence.index,
                               target_attrs=("address",))]

    def _faq_answer(self, session, text: str) -> Optional[str]:
        seen_providers = set()
        for inst in session.active_bots:
            spec = self.registry.get(inst.bot_id)
            provider = spec.metadata.provider_id or str(inst.bot_id)
            if provider in seen_providers:
                continue
            seen_providers.add(provider)
            for entry in spec.metadata.faq:
                if re.search(entry.pattern, text):
                    return entry.answer
            if spec.metadata.visit_fee_text and re.search(
                    r"how much|what.*(?:fee|cost|charge)|\bfees?\b|\bcost\b", text):
                return spec.metadata.visit_fee_text
        return None

    def _greeting_answers(self, sentences) -> list[CandidateReply]:
        return [CandidateReply(text=GREETING_TEXT, cls="B", kind="greeting",
                               question=True, order=s.index)
                for s in sentences if s.category == nlu.GREETING]

    def _clarify_candidate(self, c: Clarification) -> CandidateReply:
        if c.reason == "no_service":
            text = "Sorry, we do not serve that device yet."
        elif c.reason == "ambiguous_cancel":
            text = "Which of your devices do you mean?"
        else:
            text = "Sorry, I could not find that service to cancel."
        return CandidateReply(text=text, cls="B", kind="clarify",
                              question=text.endswith("?"), order=99)

    # -- matching and candidates --------------------------------------------

    def _requirement_for(self, spec: BotSpec) -> RequirementRecord:
        rec = RequirementRecord(neuron_id=str(spec.bot_id), neuron_name=spec.display_name)
        for r in spec.requirements:
            rec.reqs[r.attr] = r.expect
            rec.codes[r.attr] = r.code
        return rec

    def match_instance(self, session, inst: BotInstance) -> tuple[RequirementRecord, MatchResult]:
        spec = self.registry.get(inst.bot_id)
        requirement = self._requirement_for(spec)
        merged: dict[str, set[str]] = dict(session.memory_of(inst).mems)
        for attr, values in session.user_memory.mems.items():
            merged.setdefault(attr, values)
        return requirement, match(merged, requirement)

    def _generate_candidates(self, session, answers, fsm_parts) -> list[CandidateReply]:
        out: list[CandidateReply] = list(answers)
        for part in fsm_parts:
            out.append(CandidateReply(text=part.text, cls="B", kind="proposal",
                                      question=part.question,
                                      target_attrs=("appointment_time",)))

        # leaf confirmation for interior instances
        for inst in session.active_bots:
            if inst.bot_id.is_leaf:
                continue
            dtype = next(iter(session.memory_of(inst).values("type")), None)
            if dtype:
                text = f"What brand is the {dtype}?"
            else:
                text = "What type of device needs service?"
            out.append(CandidateReply(text=text, cls="A", kind="inquiry", question=True,
                                      target_attrs=("brand",) if dtype else ("type",),
                                      instance_ids=(inst.instance_id,)))

        out.extend(self._fee_notifications(session))
        out.extend(self._keep_open_notification(session))

        results = []
        leafs = [i for i in session.active_bots if i.bot_id.is_leaf]
        for inst in leafs:
            requirement, res = self.match_instance(session, inst)
            results.append((inst.instance_id, requirement, res))
        instructions = instructions_from_unsatisfied(
            results, session.historical, session.ask_counts, self.max_optional_asks)
        out.extend(self._instruction_candidates(session, instructions, results))

        # a fresh proposal belongs with the candidates when scheduling is due
        out.extend(self._proposal_candidate(session, results, fsm_parts))
        return out

    def _fee_notifications(self, session) -> list[CandidateReply]:
        due = []
        for inst in session.active_bots:
            if not inst.bot_id.is_leaf or inst.fee_notified:
                continue
            mem = session.memory_of(inst)
            years = [int(y) for y in mem.values("purchase_time") if y.isdigit()]
            if not years:
                continue
            spec = self.registry.get(inst.bot_id)
            if not (spec.metadata.in_warranty_fee_text or spec.metadata.out_of_warranty_fee_text):
                continue
            # latest possible purchase year is the most favorable reading
            in_warranty = max(years) + spec.metadata.warranty_years >= session.clock.year
            line = (spec.metadata.in_warranty_fee_text if in_warranty
                    else spec.metadata.out_of_warranty_fee_text)
            if line:
                due.append((inst, spec, line))
        if not due:
            return []
        providers = {spec.metadata.provider_id or str(spec.bot_id) for _, spec, _ in due}
        parts = []
        if len(providers) > 1:
            types = {next(iter(session.memory_of(i).values("type")), "device")
                     for i, _, _ in due}
            device = types.pop() if len(types) == 1 else "devices"
            parts.append(PROVIDERS_DIFFER_TEXT.format(device=device))
        parts.extend(line for _, _, line in due)
        return [CandidateReply(text=" ".join(parts), cls="B", kind="notification",
                               terminal=True,
                               instance_ids=tuple(i.instance_id for i, _, _ in due))]

    def _keep_open_notification(self, session) -> list[CandidateReply]:
        if session.keep_open_notified or not session.user_memory.values("phone"):
            return []
        determined = [st for st in session.appointments.values()
                      if st.phase == DETERMINED and st.time]
        if not determined:
            return []
        when = render_day_part(determined[0].time, session.clock)
        return [CandidateReply(text=KEEP_PHONE_OPEN_TEXT.format(when=when),
                               cls="B", kind="notification", terminal=True,
                               instance_ids=("keep_open",))]

    def _instruction_candidates(self, session, instructions, results) -> list[CandidateReply]:
        out = []
        contact = [i for i in instructions
                   if i.kind == INQUIRE and i.attr in ("phone", "address")]
        contact_attrs = tuple(i.attr for i in contact)
        emitted_contact = False
        for ins in instructions:
            if ins.attr == "appointment_time":
                continue  # scheduling goes through the FSM proposal path
            if ins.kind == CONFIRM:
                value = ", ".join(sorted(session.historical.get(ins.attr, set())))
                label = ATTR_LABEL.get(ins.attr, ins.attr)
                out.append(CandidateReply(
                    text=f"Is your {label} still {value}?", cls="C2", kind="confirm",
                    question=True, target_attrs=(ins.attr,)))
                continue
            if ins.attr in ("phone", "address"):
                if emitted_contact:
                    continue
                emitted_contact = True
                if contact_attrs == ("phone", "address"):
                    text = "Please provide your contact number and address."
                elif contact_attrs == ("phone",):
                    text = "Please provide your contact number."
                else:
                    text = "Please provide your address."
                out.append(CandidateReply(text=text, cls="C3", kind="inquiry",
                                          question=True, target_attrs=contact_attrs))
                continue
            covered = [iid for iid, req, res in results
                       if res.status(ins.attr) == MISSING]
            text = self._slot_question(session, ins.attr, covered)
            cls = "C1" if ins.attr == "phenomenon" else "C3"
            out.append(CandidateReply(text=text, cls=cls, kind="inquiry", question=True,
                                      target_attrs=(ins.attr,),
                                      instance_ids=tuple(covered)))
        return out

    def _slot_question(self, session, attr: str, covered: list[str]) -> str:
        dtype = None
        for iid in covered:
            inst = session.instance(iid)
            if inst:
                dtype = next(iter(session.memory_of(inst).values("type")), None)
                if dtype:
                    break
        device = dtype or "device"
        plural = device + "s" if len(covered) > 1 else device
        if attr == "purchase_time":
            return f"When did you buy your {plural}?"
        if attr == "phenomenon":
            return f"What is the problem with your {plural}?"
        if attr == "name":
            return "May I have your name?"
        if attr == "brand":
            return f"What brand is the {device}?"
        if attr == "type":
            return "What type of device needs service?"
        return f"Please provide your {ATTR_LABEL.get(attr, attr)}."

    def _proposal_candidate(self, session, results, fsm_parts) -> list[CandidateReply]:
        if fsm_parts:
            return []
        needs = [(iid, req) for iid, req, res in results
                 if "appointment_time" in req.reqs and res.status("appointment_time") == MISSING]
        if not needs:
            return []
        if not session.user_memory.values("address"):
            return []  # proposals require a known address
        inst = session.instance(needs[0][0])
        spec = self.registry.get(inst.bot_id)
        provider = spec.metadata.provider_id or str(inst.bot_id)
        state = session.appointments.setdefault(provider, AppointmentState())
        if state.phase == DETERMINED:
            return []
        if state.phase in (PRESENTED, EXPECTATION) and state.time is not None:
            text = f"Is it OK to make an appointment at {render_time_phrase(state.time, session.clock)}?"
            cls = "B" if session.pending_schedule else "C3"
            return [CandidateReply(text=text, cls=cls, kind="proposal", question=True,
                                   target_attrs=("appointment_time",))]
        slots = self.provider_slots(provider)
        state, part = step_appointment(state, FsmEvent(kind="server_propose"),
                                       slots, session.clock)
        session.appointments[provider] = state
        if part is None:
            return []
        cls = "B" if session.pending_schedule else "C3"
        session.pending_schedule = False
        return [CandidateReply(text=part.text, cls=cls, kind="proposal",
                               question=part.question,
                               target_attrs=("appointment_time",))]

    # -- composition ---------------------------------------------------------

    def _compose(self, session, candidates: list[CandidateReply],
                 statement_content: bool) -> tuple[str, list[CandidateReply]]:
        """Assemble the reply: reactive answers first (sentence order), then
        the FSM part, then notifications (terminal), then at most one
        question by priority class. The acknowledgment prefix applies when a
        statement carried content and the reply does not open reactively."""
        used: list[CandidateReply] = []
        question_emitted = False
        terminal = False

        answers = sorted([c for c in candidates if c.kind in ("answer", "greeting", "clarify")],
                         key=lambda c: c.order)
        for a in answers:
            used.append(a)
            question_emitted |= a.question
            terminal |= a.terminal

        if not terminal:
            proposals = [c for c in candidates if c.kind == "proposal"]
            if proposals and not question_emitted:
                best = min(proposals, key=lambda c: _CLASS_ORDER[c.cls])
                used.append(best)
                question_emitted |= best.question

        if not terminal:
            notes = [c for c in candidates if c.kind == "notification"]
            if notes:
                used.extend(notes)
                terminal = True

        if not terminal and not question_emitted:
            fsm_statement = any(c.kind == "proposal" and not c.question for c in used)
            used_ids = {id(c) for c in used}
            indexed = [(i, c) for i, c in enumerate(candidates)
                       if c.question and id(c) not in used_ids and c.kind != "proposal"]
            indexed.sort(key=lambda pair: (_CLASS_ORDER[pair[1].cls], pair[0]))
            questions = [c for _, c in indexed]
            if fsm_statement:
                # light filler next to a scheduling statement: never-asked slots only
                questions = [q for q in questions
                             if all(session.ask_counts.get(t, 0) == 0 for t in q.target_attrs)]
            if questions:
                used.append(questions[0])

        text = " ".join(c.text for c in used)
        if statement_content and used and used[0].kind not in ("answer", "greeting", "proposal"):
            text = f"{ACK_TEXT} {text}"
        return text, used

    def _after_emit(self, session, used: list[CandidateReply]) -> None:
        act = LastAct(kind="answer")
        targets: list[str] = []
        for c in used:
            if c.kind == "notification":
                if c.instance_ids == ("keep_open",):
                    session.keep_open_notified = True
                else:
                    for iid in c.instance_ids:
                        inst = session.instance(iid)
                        if inst:
                            inst.fee_notified = True
                act.kind = "notification"
            elif c.kind == "proposal":
                act.kind = "proposal"
                act.awaiting = True
                act.awaiting_kind = "proposal"
                provider = None
                for inst in session.active_bots:
                    if inst.bot_id.is_leaf:
                        spec = self.registry.get(inst.bot_id)
                        p = spec.metadata.provider_id or str(inst.bot_id)
                        if p in session.appointments and \
                                session.appointments[p].phase in (PRESENTED, EXPECTATION):
                            provider = p
                            break
                act.fsm_provider = provider
                targets.extend(c.target_attrs)
            elif c.kind == "confirm":
                act.kind = "confirm"
                act.awaiting = True
                act.awaiting_kind = "confirm"
                act.confirm_attr = c.target_attrs[0] if c.target_attrs else None
                targets.extend(c.target_attrs)
            elif c.kind == "inquiry":
                if act.kind in ("answer", "none"):
                    act.kind = "inquiry"
                targets.extend(c.target_attrs)
                for attr in c.target_attrs:
                    session.ask_counts[attr] = session.ask_counts.get(attr, 0) + 1
            elif c.kind == "answer" and c.terminal:
                targets.extend(c.target_attrs)
        act.targets = tuple(dict.fromkeys(targets))
        session.last_act = act

    # -- closing ---------------------------------------------------------------

    def _try_end(self, session, statement_content: bool) -> str:
        if session.closing == "open":
            session.closing = "closing_offered"
            session.last_act = LastAct(kind="closing", awaiting=True, awaiting_kind="closing")
            if statement_content:
                return f"{ACK_TEXT} {CLOSING_OFFER_TEXT}"
            return CLOSING_OFFER_TEXT
        session.last_act = LastAct(kind="closing", awaiting=True, awaiting_kind="closing")
        return CLOSING_OFFER_TEXT

    def maybe_timeout(self, session, now: datetime) -> Optional[str]:
        """Close a dialog whose closing offer went unanswered too long."""
        if session.closing != "closing_offered" or session.last_activity is None:
            return None
        if (now - session.last_activity).total_seconds() >= self.closing_timeout_s:
            self._persist(session)
            session.closing = "closed"
            return FAREWELL_TEXT
        return None

    def close_session(self, session) -> None:
        if session.closing != "closed":
            self._persist(session)
            session.closing = "closed"

    def _persist(self, session) -> None:
        if self.user_store is None:
            return
        try:
            record = self.user_store.load(session.user_id) or UserRecord(user_id=session.user_id)
        except Exception:
            log.warning("reloading user record failed; starting fresh", exc_info=True)
            record = UserRecord(user_id=session.user_id)
        for attr in ("name", "phone", "address"):
            values = session.user_memory.values(attr)
            if values:
                record.profile[attr] = sorted(values)
        standby = session.user_memory.param_values.get("standby")
        if standby:
            record.profile["standby"] = [standby]
        try:
            self.user_store.save(record)
        except Exception:
            log.warning("saving user record failed; reply already sent", exc_info=True)
            return
        # one report per provider visit, covering every device it serves
        by_provider: dict[str, list[BotInstance]] = {}
        for inst in session.active_bots:
            if not inst.bot_id.is_leaf:
                continue
            spec = self.registry.get(inst.bot_id)
            provider = spec.metadata.provider_id or str(inst.bot_id)
            by_provider.setdefault(provider, []).append(inst)
        for provider, instances in sorted(by_provider.items()):
            state = session.appointments.get(provider)
            if state is None or state.phase != DETERMINED or state.time is None:
                continue
            when = state.time.strftime("%Y-%m-%d %H:%M")
            report = {
                "report_id": f"{session.session_id}:{provider}:{state.time:%Y%m%d%H%M}",
                "provider_id": provider,
                "appointment_time": when,
                "created_at": session.clock.strftime("%Y-%m-%d %H:%M"),
                "devices": [
                    {"bot_id": str(i.bot_id),
                     "attrs": render_memory(session.memory_of(i))}
                    for i in instances
                ],
            }
            try:
                self.user_store.append_report(session.user_id, report)
            except Exception:
                log.warning("appending report failed; queued for retry", exc_info=True)

    # -- snapshot ----------------------------------------------------------------

    def snapshot(self, session) -> dict:
        return {
            "session_id": session.session_id,
            "user_id": session.user_id,
            "clock": session.clock.strftime("%Y-%m-%d %H:%M"),
            "active_bots": [self.registry.get(i.bot_id).display_name
                            for i in session.active_bots],
            "active_bot_ids": [str(i.bot_id) for i in session.active_bots],
            "device_memories": [render_memory(m) for m in session.device_memories],
            "user_memory": render_memory(session.user_memory),
            "appointments": {
                p: {"phase": st.phase,
                    "time": st.time.strftime("%Y-%m-%d %H:%M") if st.time else None}
                for p, st in sorted(session.appointments.items())
            },
            "closing_state": session.closing,
        }


def _same_type(memory: MemoryRecord, device_type: Optional[str]) -> bool:
    if not device_type:
        return False
    return device_type.lower() in {v.lower() for v in memory.values("type")}


def render_memory(memory: MemoryRecord) -> dict:
    """Project a memory record for snapshots: single-value attrs as strings,
    multi-value attrs as sorted lists; standby phones carry their marker."""
    order = DEVICE_ATTR_ORDER if memory.neuron_name == "device" else USER_ATTR_ORDER
    multi = {"purchase_time", "phone"}
    out: dict = {}
    standby = memory.param_values.get("standby")
    for attr in order:
        values = memory.values(attr)
        if not values:
            continue
        if attr in multi:
            rendered = sorted(values)
            if attr == "phone" and standby in values:
                rendered = sorted(v if v != standby else f"{v} (standby)" for v in values)
            out[attr] = rendered
        else:
            out[attr] = sorted(values)[0]
    return out

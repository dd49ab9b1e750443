"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line. Runtime budgets are asserted where stated."""
import itertools
import json
import random
import time
from datetime import datetime

from botline import nlu
from botline.dialog import (DETERMINED, PRESENTED, AppointmentState, FsmEvent,
                            step_appointment)
from botline.matching import SATISFIED, ValueExpect, match
from botline.neurons import (IdentifyContext, InformationNeuron,
                             RequirementRecord, identify)
from botline.registry import ROOT, BotId, BotRegistry
from botline.replay import InProcessClient, build_engine, golden_script, run_script

CLOCK = datetime(2019, 10, 14, 10, 0)


def report(name: str, ok: bool, detail: str = "") -> None:
    mark = "PASS" if ok else "FAIL"
    line = f"[{mark}] {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, f"{name}: {detail}"


class TestGoldenReplay:
    def test_golden_replay(self, tmp_path):
        """Replaying the published dialogue reproduces every reply and all
        five state snapshots, in under a second."""
        started = time.monotonic()
        engine = build_engine(store_path=tmp_path / "store")
        client = InProcessClient(engine)
        result = run_script(client, golden_script(), check=True)
        elapsed = time.monotonic() - started

        failures = result.failures()
        report("golden replay: reply and snapshot conformance",
               result.ok, "; ".join(failures[:3]))

        # the snapshot facts asserted directly, independent of the script file
        session = client.session
        snap = engine.snapshot(session)
        report("golden replay: final queue holds the same leaf twice",
               snap["active_bots"] == ["Hisense air conditioner reports failure"] * 2,
               str(snap["active_bots"]))
        mems = snap["device_memories"]
        report("golden replay: three device memories survive",
               len(mems) == 3, str(len(mems)))
        report("golden replay: purchase times 2017 and {2011, 2012}",
               mems[0]["purchase_time"] == ["2017"]
               and mems[1]["purchase_time"] == ["2011", "2012"], str(mems))
        user = snap["user_memory"]
        report("golden replay: user memory (name, address, phones, appointment)",
               user.get("name") == "Xie"
               and user.get("address") == "No.128, Beijing Road, Qingdao City"
               and user.get("phone") == ["12345678910", "12345678911 (standby)"]
               and user.get("appointment_time") == "2019-10-15 09:00", str(user))

        record = engine.user_store.load("golden-user")
        report("golden replay: exactly one persisted report",
               record is not None and len(record.reports) == 1)
        report("golden replay: runtime under 1 s", elapsed < 1.0, f"{elapsed:.3f}s")

    def test_proposal_times_satisfy_user_windows_monotonically(self, tmp_path):
        """S15/S17/S19: each successive proposal honors the latest window."""
        engine = build_engine(store_path=tmp_path / "store")
        session, _ = engine.open_session("windows", CLOCK)
        engine.handle_turn(session, "My Hisense air conditioner is not cooled.")
        engine.handle_turn(session, "When can maintenance personnel come to repair?")
        r1 = engine.handle_turn(session, "My address is No.128 Beijing Road, Qingdao.")
        r2 = engine.handle_turn(session, "I have something to do tomorrow afternoon. "
                                         "Tomorrow morning is ok.")
        r3 = engine.handle_turn(session, "Could you be earlier?")
        state = session.appointments["hisense-service"]
        proposals = state.proposed
        ok = ("3pm" in r1 and "11am" in r2 and "9am" in r3
              and proposals == [datetime(2019, 10, 15, 15, 0),
                                datetime(2019, 10, 15, 11, 0),
                                datetime(2019, 10, 15, 9, 0)]
              and datetime(2019, 10, 15, 8, 0) <= proposals[1] < datetime(2019, 10, 15, 12, 0)
              and proposals[2] < proposals[1])
        report("golden replay: proposals monotonically satisfy user windows",
               ok, f"{r1!r} / {r2!r} / {r3!r}")


class TestBotTreeSuite:
    def test_table1_and_random_ids(self):
        started = time.monotonic()
        from importlib import resources
        docs = json.loads(resources.files("botline.fixtures")
                          .joinpath("bots_table1.json").read_text("utf-8"))["bots"]
        registry = BotRegistry()
        for doc in docs:
            registry.register_bot(doc)
        leaves = [s for s in registry.tree() if s.bot_id.is_leaf]
        type_nodes = [s for s in registry.tree() if s.bot_id.level == 2]
        service_nodes = [s for s in registry.tree() if s.bot_id.level == 1]
        report("bot tree: Table-1 catalogue shape (9 leaves, 3 + 1 interiors)",
               len(leaves) == 9 and len(type_nodes) == 3 and len(service_nodes) == 1
               and str(ROOT) in registry.nodes,
               f"{len(leaves)} leaves, {len(type_nodes)}+{len(service_nodes)} interiors")

        rng = random.Random(424242)
        ok = True
        for _ in range(1000):
            level = rng.randint(0, 3)
            codes = [rng.randint(1, 9) if i < level else 0 for i in range(3)]
            node = BotId(*codes)
            steps = 0
            while node.parent() is not None:
                node = node.parent()
                steps += 1
                cs = (node.code1, node.code2, node.code3)
                if any(cs[i] == 0 and any(cs[i + 1:]) for i in range(2)):
                    ok = False
            if steps > 3 or node != ROOT:
                ok = False
        report("bot tree: 1,000 random ids reach root in <= 3 steps, zero-suffix rule", ok)
        elapsed = time.monotonic() - started
        report("bot tree: runtime under 1 s", elapsed < 1.0, f"{elapsed:.3f}s")


class TestMatcherOracle:
    def test_exhaustive_equivalence(self):
        """match vs a brute-force evaluator over all memory subsets and all
        expectation forms on a 4-attribute fixture; zero mismatches."""
        domains = {"brand": ["Hisense", "Haier"],
                   "purchase_time": ["2012", "2018"],
                   "phenomenon": ["no cooling", "leaking"],
                   "phone": ["12345678910", "12345678911"]}
        forms = ["any", "exact", "one_of", "range"]

        def make_expect(form, attr):
            kind = "year" if attr == "purchase_time" else "text"
            if form == "any":
                return ValueExpect.any()
            if form == "exact":
                return ValueExpect.exact(domains[attr][0], kind)
            if form == "one_of":
                return ValueExpect.one_of(domains[attr], kind)
            if attr == "purchase_time":
                return ValueExpect.range("2010", "2015", "year")
            return ValueExpect.range("A", "zz", "text")

        def oracle(values, expect):
            if not values:
                return "missing"
            for v in values:
                if expect.kind == "any" and v:
                    return SATISFIED
                if expect.kind in ("exact", "one_of"):
                    if any(v.lower() == w.lower() for w in expect.values):
                        return SATISFIED
                if expect.kind == "range":
                    lo, hi = expect.values
                    if expect.value_kind == "year":
                        if int(lo) <= int(v) <= int(hi):
                            return SATISFIED
                    elif lo <= v <= hi:
                        return SATISFIED
            return "conflicting"

        attrs = list(domains)
        subsets = [(), (0,), (1,), (0, 1)]
        mismatches = 0
        cases = 0
        for form in forms:
            rec = RequirementRecord(neuron_id="x", neuron_name="x")
            for attr in attrs:
                rec.reqs[attr] = make_expect(form, attr)
                rec.codes[attr] = 1 if attr in ("brand", "phone") else 0
            for combo in itertools.product(subsets, repeat=4):
                memory = {a: {domains[a][i] for i in picks}
                          for a, picks in zip(attrs, combo) if picks}
                res = match(memory, rec)
                for attr in attrs:
                    if res.status(attr) != oracle(memory.get(attr, set()), rec.reqs[attr]):
                        mismatches += 1
                cases += 1
        report("matcher oracle: exhaustive equivalence",
               mismatches == 0 and cases == 1024,
               f"{cases} cases, {mismatches} mismatches")


class TestFsmSuite:
    SLOTS = [datetime(2019, 10, 15, 15, 0), datetime(2019, 10, 15, 11, 0),
             datetime(2019, 10, 15, 9, 0), datetime(2019, 10, 16, 10, 0)]
    WINDOWS = [
        (datetime(2019, 10, 15, 8, 0), datetime(2019, 10, 15, 12, 0)),
        (datetime(2019, 10, 15, 12, 0), datetime(2019, 10, 15, 18, 0)),
        (datetime(2019, 10, 16, 8, 0), datetime(2019, 10, 16, 12, 0)),
        (datetime(2019, 10, 21, 8, 0), datetime(2019, 10, 21, 12, 0)),
    ]

    def test_ten_thousand_random_sequences(self):
        rng = random.Random(20191015)
        violations = []
        for seq in range(10000):
            state = AppointmentState()
            determined = False
            for _ in range(rng.randint(1, 8)):
                kind = rng.choice(["server_propose", "user_accept", "user_reject",
                                   "user_counter", "user_counter_time"])
                if kind == "user_counter":
                    event = FsmEvent(kind="user_counter", window=rng.choice(self.WINDOWS),
                                     question=rng.random() < 0.5)
                elif kind == "user_counter_time":
                    event = FsmEvent(kind="user_counter", time=rng.choice(self.SLOTS),
                                     question=True)
                else:
                    event = FsmEvent(kind=kind)
                pending = state.phase == PRESENTED
                state, _ = step_appointment(state, event, self.SLOTS, CLOCK)
                if determined and state.phase != DETERMINED:
                    violations.append((seq, "determined not absorbing"))
                if state.phase == DETERMINED and not determined:
                    determined = True
                    accepted = (event.kind == "user_accept" and pending) or (
                        event.kind == "user_counter" and event.time is not None)
                    if not accepted:
                        violations.append((seq, "determined without acceptance"))
                    if state.window is not None and not (
                            state.window[0] <= state.time < state.window[1]):
                        violations.append((seq, "determined outside window"))
        report("fsm: 10,000 random event sequences hold all invariants",
               not violations, str(violations[:3]))

    def test_published_trace(self):
        state = AppointmentState()
        state, _ = step_appointment(state, FsmEvent(kind="server_propose"),
                                    self.SLOTS, CLOCK)
        state, _ = step_appointment(
            state, FsmEvent(kind="user_counter", window=self.WINDOWS[0], question=False),
            self.SLOTS, CLOCK)
        earlier = (datetime(2019, 10, 15, 0, 0), state.time)
        state, _ = step_appointment(
            state, FsmEvent(kind="user_counter", window=earlier, question=True),
            self.SLOTS, CLOCK)
        state, _ = step_appointment(state, FsmEvent(kind="user_accept"),
                                    self.SLOTS, CLOCK)
        report("fsm: negotiation trace ends determined at 2019-10-15 09:00",
               state.phase == DETERMINED and state.time == datetime(2019, 10, 15, 9, 0),
               f"{state.phase} {state.time}")


class TestClassificationTable:
    def test_transcript_sentences(self):
        """>= 12 transcript sentences, 100% agreement with expected labels."""
        table = [
            ("hello, what can i do for you?", False, nlu.GREETING),
            ("air conditioner is not cooled.", False, nlu.STATEMENT),
            ("there are two air conditioners out of refrigeration.", False, nlu.STATEMENT),
            ("one is hisense and the other is haier.", False, nlu.STATEMENT),
            ("hisense was bought the year before last.", False, nlu.STATEMENT),
            ("haier won't apply for repair, i'll buy a new one.", False, nlu.STATEMENT),
            ("is the same maintenance service provider only charge for one visit?",
             False, nlu.INQUIRY),
            ("can you repair it by the way?", False, nlu.INQUIRY),
            ("when can maintenance personnel come to repair?", False, nlu.INQUIRY),
            ("my address is no.128 beijing road, qingdao.", False, nlu.STATEMENT),
            ("i have something to do tomorrow afternoon.", True, nlu.STATEMENT),
            ("tomorrow morning is ok.", True, nlu.STATEMENT),
            ("my name is xie.", True, nlu.STATEMENT),
            ("could you be earlier?", True, nlu.INQUIRY),
            ("ok.", True, nlu.CONFIRMATION),
            ("12345678910.", False, nlu.STATEMENT),
            ("no.", True, nlu.CONFIRMATION),
        ]
        wrong = [(s, nlu.classify(s, awaiting), want)
                 for s, awaiting, want in table
                 if nlu.classify(s, awaiting) != want]
        report(f"classification table: {len(table)} transcript sentences agree",
               len(table) >= 12 and not wrong, str(wrong[:3]))


class TestTerminationDeterminism:
    def test_fuzzed_neurons_respect_bound(self):
        rng = random.Random(77)
        worst = 0
        ok = True
        for _ in range(500):
            n = rng.randint(1, 8)
            attrs = [{"name": f"a{i}"} for i in range(n)]
            rules = [{"pattern": rf"\bw{i}\b", "attr": f"a{i}", "value": f"v{i}"}
                     for i in range(n)]
            strategy = [{"when_attr": f"a{rng.randrange(n)}",
                         "assign_attr": f"a{rng.randrange(n)}",
                         "assign_value": f"s{rng.randrange(n)}"}
                        for _ in range(rng.randint(0, 2 * n))]
            neuron = InformationNeuron.from_dict({
                "id": "n.f", "name": "f", "trigger_info": ["w0"],
                "attrs": attrs, "trigger_rules": rules, "strategy_rules": strategy})
            sentence = " ".join(f"w{i}" for i in range(n))
            res = identify(neuron, sentence, IdentifyContext(clock=CLOCK))
            bound = len(neuron.attrs) + len(neuron.params) + 1
            worst = max(worst, res.passes)
            if res.passes > bound:
                ok = False
        report("termination: fuzzed neurons never exceed the iteration bound",
               ok, f"worst {worst} passes")

    def test_replay_twice_identical(self, tmp_path):
        script = golden_script()
        a = run_script(InProcessClient(build_engine(store_path=tmp_path / "a")), script)
        b = run_script(InProcessClient(build_engine(store_path=tmp_path / "b")), script)
        report("determinism: two replays produce identical transcripts",
               a.transcript() == b.transcript())


class TestPersistence:
    def test_round_trip_and_single_report(self, tmp_path):
        from botline.storage import UserRecord, UserStore
        store = UserStore(tmp_path / "users")
        record = UserRecord(user_id="u", profile={"name": ["Xie"]},
                            reports=[{"report_id": "r", "provider_id": "p",
                                      "appointment_time": "t", "created_at": "c",
                                      "devices": []}])
        store.save(record)
        round_trip = store.load("u").to_dict() == record.to_dict()
        report("persistence: save/load round-trip identity", round_trip)

        engine = build_engine(store_path=tmp_path / "golden")
        result = run_script(InProcessClient(engine), golden_script(), check=False)
        rec = engine.user_store.load("golden-user")
        report("persistence: golden session persists exactly one report",
               rec is not None and len(rec.reports) == 1
               and rec.reports[0]["appointment_time"] == "2019-10-15 09:00"
               and sorted(rec.profile.get("phone", [])) == ["12345678910", "12345678911"],
               str(rec.to_dict() if rec else None))

import copy

import numpy as np
import pytest

from smallvoice import assistant as asst
from smallvoice import models as mdl
from smallvoice import tensorcore as tc
from smallvoice.assistant import DialogState as S

from conftest import make_feature


def fresh(number_length=9):
    return asst.DialogSession(number_length=number_length)


def cls(category, language=None):
    return asst.find_class(category, language)


def clone_store(store):
    out = asst.ContactStore(number_length=store.number_length)
    out._contacts = dict(store._contacts)
    return out


def session_in(state, number_length=2, found="Mamadou", pending="add"):
    """Direct construction of a session snapshot for a given state."""
    s = asst.DialogSession(number_length=number_length)
    if state == S.IDLE:
        return s
    s.language = "susu"
    s.state = state
    if state in (S.ADD_CONFIRM_NAME, S.ADD_AWAIT_DIGITS):
        s.draft_name = "Fatoumata"
    if state == S.ADD_CONFIRM:
        s.draft_name = "Fatoumata"
        s.digits = "1" * number_length
        s.pending = pending
        if pending in ("update", "delete"):
            s.found = found
    if state in (S.FOUND_MENU, S.UPDATE_AWAIT_DIGITS):
        s.found = found
    if state in asst.FINAL_STATES:
        s.language = None if state in asst.FINAL_STATES else s.language
        s.reset()
        s.state = state  # forced final snapshot; vocabulary must be empty
    return s


class TestClassTable:
    def test_exactly_105_classes(self):
        assert len(asst.ALL_CLASSES) == 105
        assert [c.class_id for c in asst.ALL_CLASSES] == list(range(105))

    def test_category_counts(self):
        from collections import Counter
        counts = Counter(c.category for c in asst.ALL_CLASSES)
        assert counts["wake_word"] == 4
        for command in ("add", "search", "update", "delete", "call", "yes", "no"):
            assert counts[command] == 4
        for d in range(10):
            assert counts[f"digit_{d}"] == 4
        assert counts["mom"] == 4 and counts["dad"] == 4
        assert sum(v for k, v in counts.items() if k.startswith("name_")) == 25

    def test_id_layout_matches_corpus_table(self):
        assert asst.class_by_id(0).category == "wake_word"
        assert asst.class_by_id(0).language == "francais"
        assert asst.class_by_id(3).language == "susu"
        assert asst.class_by_id(4).category == "add"
        assert asst.class_by_id(31).category == "no"
        assert asst.class_by_id(32).category == "digit_0"
        assert asst.class_by_id(71).category == "digit_9"
        assert asst.class_by_id(72).category == "mom"
        assert asst.class_by_id(79).category == "dad"
        assert asst.class_by_id(80).display_text == "Fatoumata"
        assert asst.class_by_id(104).display_text == "Djenabou"
        for c in asst.ALL_CLASSES[80:]:
            assert c.language == asst.LANGUAGE_INDEPENDENT

    def test_utterance_ids_use_name_prefix_5(self):
        for c in asst.ALL_CLASSES:
            if c.category.startswith("name_"):
                assert c.utterance_id.startswith("5")
            else:
                assert not c.utterance_id.startswith("5")


class TestActiveVocabulary:
    def test_idle_exactly_four_wake_words(self):
        vocab = asst.active_vocabulary(fresh())
        assert len(vocab) == 4
        assert all(asst.class_by_id(i).category == "wake_word" for i in vocab)

    def test_main_menu_two_commands_in_session_language(self):
        s = fresh()
        asst.transition(s, cls("wake_word", "susu"), asst.ContactStore())
        vocab = asst.active_vocabulary(s)
        assert len(vocab) == 2
        for i in vocab:
            c = asst.class_by_id(i)
            assert c.category in ("add", "search")
            assert c.language == "susu"

    def test_await_name_has_27_classes(self):
        s = session_in(S.ADD_AWAIT_NAME)
        vocab = asst.active_vocabulary(s)
        assert len(vocab) == 27

    def test_digit_states_have_ten_digits(self):
        for state in (S.ADD_AWAIT_DIGITS, S.UPDATE_AWAIT_DIGITS):
            vocab = asst.active_vocabulary(session_in(state))
            assert len(vocab) == 10
            assert all(asst.class_by_id(i).category.startswith("digit_")
                       for i in vocab)

    def test_confirm_states_yes_no(self):
        for state in (S.ADD_CONFIRM, S.ADD_CONFIRM_NAME):
            vocab = asst.active_vocabulary(session_in(state))
            cats = {asst.class_by_id(i).category for i in vocab}
            assert cats == {"yes", "no"}

    def test_found_menu(self):
        vocab = asst.active_vocabulary(session_in(S.FOUND_MENU))
        cats = {asst.class_by_id(i).category for i in vocab}
        assert cats == {"call", "update", "delete", "no"}

    def test_final_states_empty(self):
        for state in asst.FINAL_STATES:
            assert asst.active_vocabulary(session_in(state)) == set()


class TestDialogFlows:
    def test_table_dialog_replay(self):
        store = asst.ContactStore()
        s = fresh()
        states = []
        effects = []

        def turn(c):
            r = asst.transition(s, c, store)
            states.append(int(r.state))
            if r.side_effect:
                effects.append(r.side_effect)
            return r

        turn(cls("wake_word", "susu"))
        turn(cls("add", "susu"))
        turn(asst.name_class("Fatoumata"))
        for d in "698332529":
            turn(cls(f"digit_{d}", "susu"))
        turn(cls("yes", "susu"))

        dedup = [states[0]] + [b for a, b in zip(states, states[1:]) if b != a]
        assert dedup == [1, 2, 4, 5, 6]
        assert len(effects) == 1
        assert effects[0].type == "add_contact"
        assert effects[0].name == "Fatoumata"
        assert effects[0].phone == "698332529"
        found = store.find("Fatoumata")
        assert found is not None and found.phone == "698332529"
        assert s.state == S.IDLE and s.language is None

    def test_digit_in_main_menu_rejected(self):
        store = asst.ContactStore()
        s = fresh()
        asst.transition(s, cls("wake_word", "pular"), store)
        with pytest.raises(asst.NotInVocabulary):
            asst.transition(s, cls("digit_3", "pular"), store)

    def test_search_then_call(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Mamadou", "611111111"))
        s = fresh()
        seq = [
            cls("wake_word", "maninka"),
            cls("search", "maninka"),
            asst.name_class("Mamadou"),
            cls("call", "maninka"),
        ]
        states = []
        last = None
        for c in seq:
            last = asst.transition(s, c, store)
            states.append(int(last.state))
        assert states == [1, 7, 8, 9]
        assert last.side_effect.type == "dial"
        assert last.side_effect.phone == "611111111"
        assert s.state == S.IDLE

    def test_search_unknown_name_reprompts(self):
        store = asst.ContactStore()
        s = fresh()
        asst.transition(s, cls("wake_word", "susu"), store)
        asst.transition(s, cls("search", "susu"), store)
        r = asst.transition(s, asst.name_class("Hawa"), store)
        assert r.state == S.SEARCH_AWAIT_NAME
        assert s.state == S.SEARCH_AWAIT_NAME

    def test_update_flow_with_confirmation(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Oumou", "622222222"))
        s = fresh()
        for c in (cls("wake_word", "susu"), cls("search", "susu")):
            asst.transition(s, c, store)
        asst.transition(s, asst.name_class("Oumou"), store)
        asst.transition(s, cls("update", "susu"), store)
        for d in "633333333":
            r = asst.transition(s, cls(f"digit_{d}", "susu"), store)
        assert r.state == S.ADD_CONFIRM
        r = asst.transition(s, cls("yes", "susu"), store)
        assert r.state == S.MUTATE_COMMIT
        assert r.side_effect.type == "update_contact"
        assert store.find("Oumou").phone == "633333333"

    def test_update_declined_returns_to_found_menu(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Oumou", "622222222"))
        s = fresh()
        for c in (cls("wake_word", "susu"), cls("search", "susu")):
            asst.transition(s, c, store)
        asst.transition(s, asst.name_class("Oumou"), store)
        asst.transition(s, cls("update", "susu"), store)
        for d in "633333333":
            asst.transition(s, cls(f"digit_{d}", "susu"), store)
        r = asst.transition(s, cls("no", "susu"), store)
        assert r.state == S.FOUND_MENU
        assert store.find("Oumou").phone == "622222222"

    def test_delete_requires_confirmation(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Sekou", "644444444"))
        s = fresh()
        for c in (cls("wake_word", "francais"), cls("search", "francais")):
            asst.transition(s, c, store)
        asst.transition(s, asst.name_class("Sekou"), store)
        r = asst.transition(s, cls("delete", "francais"), store)
        assert r.state == S.ADD_CONFIRM
        assert store.find("Sekou") is not None
        r = asst.transition(s, cls("yes", "francais"), store)
        assert r.state == S.MUTATE_COMMIT
        assert r.side_effect.type == "delete_contact"
        assert store.find("Sekou") is None

    def test_found_menu_no_resets(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Alpha", "655555555"))
        s = fresh()
        for c in (cls("wake_word", "susu"), cls("search", "susu")):
            asst.transition(s, c, store)
        asst.transition(s, asst.name_class("Alpha"), store)
        r = asst.transition(s, cls("no", "susu"), store)
        assert r.state == S.IDLE
        assert s.language is None

    def test_add_declined_restarts_name(self):
        store = asst.ContactStore()
        s = fresh(number_length=2)
        asst.transition(s, cls("wake_word", "susu"), store)
        asst.transition(s, cls("add", "susu"), store)
        asst.transition(s, asst.name_class("Fanta"), store)
        asst.transition(s, cls("digit_1", "susu"), store)
        asst.transition(s, cls("digit_2", "susu"), store)
        assert s.state == S.ADD_CONFIRM
        r = asst.transition(s, cls("no", "susu"), store)
        assert r.state == S.ADD_AWAIT_NAME
        assert s.draft_name is None and s.digits == ""
        assert store.list() == []

    def test_low_confidence_name_confirmation(self):
        store = asst.ContactStore()
        s = fresh()
        asst.transition(s, cls("wake_word", "susu"), store)
        asst.transition(s, cls("add", "susu"), store)
        r = asst.transition(s, asst.name_class("Mariama"), store, confidence=0.6)
        assert r.state == S.ADD_CONFIRM_NAME
        r = asst.transition(s, cls("yes", "susu"), store)
        assert r.state == S.ADD_AWAIT_DIGITS
        assert s.draft_name == "Mariama"

    def test_low_confidence_name_denied(self):
        store = asst.ContactStore()
        s = fresh()
        asst.transition(s, cls("wake_word", "susu"), store)
        asst.transition(s, cls("add", "susu"), store)
        asst.transition(s, asst.name_class("Mariama"), store, confidence=0.2)
        r = asst.transition(s, cls("no", "susu"), store)
        assert r.state == S.ADD_AWAIT_NAME
        assert s.draft_name is None

    def test_confident_name_skips_confirmation(self):
        store = asst.ContactStore()
        s = fresh()
        asst.transition(s, cls("wake_word", "susu"), store)
        asst.transition(s, cls("add", "susu"), store)
        r = asst.transition(s, asst.name_class("Mariama"), store, confidence=0.9)
        assert r.state == S.ADD_AWAIT_DIGITS


class TestContactStore:
    def test_add_then_find(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Hawa", "688888888"))
        assert store.find("Hawa").phone == "688888888"

    def test_delete_then_find(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Hawa", "688888888"))
        store.delete("Hawa")
        assert store.find("Hawa") is None
        with pytest.raises(asst.NotFound):
            store.delete("Hawa")

    def test_duplicate_rejected(self):
        store = asst.ContactStore()
        store.add(asst.Contact("Hawa", "688888888"))
        with pytest.raises(asst.DuplicateName):
            store.add(asst.Contact("Hawa", "600000000"))

    def test_invalid_phone(self):
        store = asst.ContactStore()
        with pytest.raises(asst.InvalidPhone):
            store.add(asst.Contact("Hawa", "12345"))
        with pytest.raises(asst.InvalidPhone):
            store.add(asst.Contact("Hawa", "68888888x"))

    def test_list_is_name_sorted(self):
        store = asst.ContactStore()
        for name in ("Moussa", "Adama", "Hawa"):
            store.add(asst.Contact(name, "600000000"))
        assert [c.name for c in store.list()] == ["Adama", "Hawa", "Moussa"]

    def test_persistence_roundtrip(self, tmp_path):
        path = tmp_path / "contacts.json"
        store = asst.ContactStore(path)
        store.add(asst.Contact("Marie", "677777777"))
        store.update("Marie", "611111111")
        reloaded = asst.ContactStore(path)
        assert reloaded.find("Marie").phone == "611111111"
        store.delete("Marie")
        assert asst.ContactStore(path).list() == []


class TestClassifyInState:
    def test_masked_softmax_matches_subset_oracle(self, rng):
        logits = rng.normal(size=105)
        vocab = sorted(rng.choice(105, size=12, replace=False).tolist())
        probs = asst.masked_probabilities(logits, vocab)
        oracle = np.exp(logits[vocab]) / np.exp(logits[vocab]).sum()
        assert np.abs(probs - oracle).max() < 1e-12
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_singleton_vocab_gives_certainty(self, rng):
        probs = asst.masked_probabilities(rng.normal(size=105), [42])
        assert probs.shape == (1,)
        assert probs[0] == 1.0

    def test_top_class_outside_set_falls_to_best_inset(self, rng):
        logits = rng.normal(size=105)
        logits[99] = 50.0  # global winner, but not in vocabulary
        vocab = [0, 1, 2, 3]
        best_in_set = vocab[int(np.argmax(logits[vocab]))]
        probs = asst.masked_probabilities(logits, vocab)
        assert vocab[int(np.argmax(probs))] == best_in_set

    def test_classify_against_model(self, rng):
        model = mdl.build(mdl.asr_config(8), seed=0)
        s = fresh()
        fs = make_feature(rng, 20, 8)
        rec = asst.classify_in_state(s, fs, model, threshold=0.0)
        assert rec.class_id in asst.active_vocabulary(s)
        assert 0.0 <= rec.confidence <= 1.0
        assert rec.accepted

    def test_final_state_raises(self, rng):
        model = mdl.build(mdl.asr_config(8), seed=0)
        s = session_in(S.ADD_COMMIT)
        with pytest.raises(asst.EmptyVocabulary):
            asst.classify_in_state(s, make_feature(rng, 20, 8), model)


def machine_snapshot(s):
    return (int(s.state), s.language, s.draft_name, len(s.digits),
            s.pending, s.found)


def explore_machine(number_length=2):
    """Graph search over the live transition table from a fresh session.

    Returns (visited snapshots, dialog states touched, snapshot edges).
    """
    base_store = asst.ContactStore(number_length=number_length)
    base_store.add(asst.Contact("Mamadou", "1" * number_length))

    start = fresh(number_length)
    seen = {machine_snapshot(start)}
    reached_states = {int(start.state)}
    frontier = [(start, base_store)]
    edges = {}

    while frontier:
        session, store = frontier.pop()
        key = machine_snapshot(session)
        for class_id in sorted(asst.active_vocabulary(session)):
            # explore both the confident and the low-confidence routes
            # (the latter drives names through the confirmation state)
            for confidence in (None, 0.5):
                s2 = copy.deepcopy(session)
                st2 = clone_store(store)
                try:
                    result = asst.transition(s2, class_id, st2,
                                             confidence=confidence)
                except (asst.DuplicateName, asst.NotFound):
                    continue  # store conflict: edge not available here
                reached_states.add(int(result.state))
                reached_states.add(int(s2.state))
                edges.setdefault(key, set()).add(machine_snapshot(s2))
                if machine_snapshot(s2) not in seen:
                    seen.add(machine_snapshot(s2))
                    frontier.append((s2, st2))
    return seen, reached_states, edges


class TestMachineProperties:
    def _bfs(self, number_length=2):
        return explore_machine(number_length)

    def test_all_states_reachable(self):
        _, reached_states, _ = self._bfs()
        assert reached_states == set(range(12))

    def test_no_dead_ends(self):
        seen, _, edges = self._bfs()
        # from every reachable snapshot there is a path back to Idle
        for origin in seen:
            frontier = [origin]
            visited = {origin}
            found_idle = origin[0] == int(S.IDLE)
            while frontier and not found_idle:
                node = frontier.pop()
                for nxt in edges.get(node, ()):
                    if nxt[0] == int(S.IDLE):
                        found_idle = True
                        break
                    if nxt not in visited:
                        visited.add(nxt)
                        frontier.append(nxt)
            assert found_idle, f"no path back to Idle from {origin}"

    def test_vocabulary_soundness_exhaustive(self):
        states = list(S)
        assert len(states) == 12
        for state in states:
            for pending in (("add", "update", "delete") if state == S.ADD_CONFIRM
                            else (None,)):
                store = asst.ContactStore(number_length=2)
                store.add(asst.Contact("Mamadou", "11"))
                base = (session_in(state, pending=pending) if pending
                        else session_in(state))
                vocab = asst.active_vocabulary(base)
                for class_id in range(105):
                    s2 = copy.deepcopy(base)
                    st2 = clone_store(store)
                    if class_id in vocab:
                        asst.transition(s2, class_id, st2)  # must not raise
                    else:
                        with pytest.raises(asst.NotInVocabulary):
                            asst.transition(s2, class_id, st2)

    def test_language_lock(self, rng):
        store = asst.ContactStore()
        store.add(asst.Contact("Mamadou", "677777777"))
        for trial in range(20):
            s = fresh()
            r = np.random.default_rng(trial)
            lock = None
            for _ in range(40):
                vocab = sorted(asst.active_vocabulary(s))
                class_id = int(r.choice(vocab))
                c = asst.class_by_id(class_id)
                if s.state == S.IDLE:
                    lock = c.language
                else:
                    assert c.language in (lock, asst.LANGUAGE_INDEPENDENT)
                try:
                    result = asst.transition(s, class_id, store)
                except (asst.DuplicateName, asst.NotFound):
                    break
                if result.state in asst.FINAL_STATES or s.state == S.IDLE:
                    lock = None

    def test_side_effects_only_in_commit_states(self):
        store = asst.ContactStore(number_length=2)
        s = fresh(number_length=2)
        turns = [cls("wake_word", "susu"), cls("add", "susu"),
                 asst.name_class("Fanta"), cls("digit_1", "susu"),
                 cls("digit_2", "susu"), cls("yes", "susu")]
        for c in turns:
            r = asst.transition(s, c, store)
            if r.side_effect is not None:
                assert r.state in asst.FINAL_STATES

    def test_transcript_replay_reproduces_store(self):
        store = asst.ContactStore(number_length=2)
        s = fresh(number_length=2)
        class_sequence = [
            cls("wake_word", "susu").class_id, cls("add", "susu").class_id,
            asst.name_class("Fanta").class_id, cls("digit_4", "susu").class_id,
            cls("digit_2", "susu").class_id, cls("yes", "susu").class_id,
            cls("wake_word", "susu").class_id, cls("search", "susu").class_id,
            asst.name_class("Fanta").class_id, cls("update", "susu").class_id,
            cls("digit_9", "susu").class_id, cls("digit_9", "susu").class_id,
            cls("yes", "susu").class_id,
        ]
        for class_id in class_sequence:
            asst.transition(s, class_id, store)

        replay_store = asst.ContactStore(number_length=2)
        replay = fresh(number_length=2)
        for class_id in class_sequence:
            asst.transition(replay, class_id, replay_store)

        assert [(c.name, c.phone) for c in store.list()] == \
               [(c.name, c.phone) for c in replay_store.list()]
        assert replay.transcript == s.transcript

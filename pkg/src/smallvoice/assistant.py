"""Contact-management dialog engine.

A 12-state machine drives the assistant: a wake word locks the session
language, every state exposes only a small active vocabulary, phone
numbers are entered digit by digit, and committing states (6, 9, 11)
invoke the contact store and reset the session. Classification against
the 105-class speech-command model is restricted to the active
vocabulary via a masked softmax.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import tensorcore as tc
from .dsp import FeatureSequence
from .models import Model, forward

LANGUAGES = ("francais", "maninka", "pular", "susu")
LANGUAGE_INDEPENDENT = "language_independent"

NAMES = (
    "Fatoumata", "Mamadou", "Mariama", "Mohamed", "Kadiatou", "Ibrahima",
    "Aissatou", "Aminata", "Alpha", "Thierno", "Abdoulaye", "Aboubacar",
    "Amadou", "Fanta", "Mariame", "Oumou", "Ousmane", "Adama", "Marie",
    "Moussa", "Aissata", "Hawa", "Sekou", "Hadja", "Djenabou",
)

DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven",
               "eight", "nine")

NAME_CONFIRM_THRESHOLD = 0.75
DEFAULT_REJECT_THRESHOLD = 0.5
DEFAULT_NUMBER_LENGTH = 9


class NotInVocabulary(ValueError):
    """Utterance class is not accepted in the current state."""


class EmptyVocabulary(ValueError):
    """Final states accept no utterances."""


class DuplicateName(ValueError):
    """Contact already exists."""


class NotFound(KeyError):
    """No contact with that name."""


class InvalidPhone(ValueError):
    """Phone must be digits of the configured length."""


@dataclass(frozen=True)
class UtteranceClass:
    class_id: int
    category: str
    language: str
    utterance_id: str
    display_text: str


def _build_classes() -> tuple[UtteranceClass, ...]:
    classes: list[UtteranceClass] = []

    def add_block(category, utterance_id, display):
        for lang in LANGUAGES:
            classes.append(UtteranceClass(len(classes), category, lang,
                                          utterance_id, display))

    add_block("wake_word", "101_wake_word", "Wake word")
    add_block("add", "201_add_contact", "Add a contact")
    add_block("search", "202_search_contact", "Search a contact")
    add_block("update", "203_update_contact", "Update that")
    add_block("delete", "204_delete_contact", "Delete that")
    add_block("call", "205_call_contact", "Call that")
    add_block("yes", "206_yes", "Yes")
    add_block("no", "207_no", "No")
    for digit in range(10):
        add_block(f"digit_{digit}", f"{301 + digit}_{DIGIT_WORDS[digit]}", str(digit))
    add_block("mom", "401_mom", "Mom")
    add_block("dad", "402_dad", "Dad")
    for i, name in enumerate(NAMES, start=1):
        classes.append(UtteranceClass(len(classes), f"name_{i}",
                                      LANGUAGE_INDEPENDENT,
                                      f"{500 + i}_{name.lower()}", name))
    assert len(classes) == 105
    return tuple(classes)


ALL_CLASSES: tuple[UtteranceClass, ...] = _build_classes()


def class_by_id(class_id: int) -> UtteranceClass:
    if not 0 <= class_id < len(ALL_CLASSES):
        raise KeyError(f"no utterance class {class_id}")
    return ALL_CLASSES[class_id]


def find_class(category: str, language: Optional[str] = None) -> UtteranceClass:
    for c in ALL_CLASSES:
        if c.category == category and (language is None or c.language == language):
            return c
    raise KeyError(f"no class for category={category} language={language}")


def name_class(name: str) -> UtteranceClass:
    for c in ALL_CLASSES:
        if c.category.startswith("name_") and c.display_text.lower() == name.lower():
            return c
    raise KeyError(f"no name class for {name!r}")


class DialogState(IntEnum):
    IDLE = 0
    MAIN_MENU = 1
    ADD_AWAIT_NAME = 2
    ADD_CONFIRM_NAME = 3
    ADD_AWAIT_DIGITS = 4
    ADD_CONFIRM = 5  # doubles as the update/delete confirmation gate
    ADD_COMMIT = 6
    SEARCH_AWAIT_NAME = 7
    FOUND_MENU = 8
    CALL_COMMIT = 9
    UPDATE_AWAIT_DIGITS = 10
    MUTATE_COMMIT = 11


FINAL_STATES = (DialogState.ADD_COMMIT, DialogState.CALL_COMMIT,
                DialogState.MUTATE_COMMIT)

INITIAL_PROMPT = "Say the wake word to begin."


@dataclass
class Contact:
    name: str
    phone: str


@dataclass
class SideEffect:
    type: str  # add_contact | update_contact | delete_contact | dial
    name: str
    phone: Optional[str] = None


@dataclass
class TurnResult:
    state: DialogState  # the state this turn reached (commit states included)
    prompt: str
    side_effect: Optional[SideEffect] = None


@dataclass
class Recognition:
    class_id: int
    confidence: float
    accepted: bool


class ContactStore:
    """Name -> phone store persisted as JSON, written atomically."""

    def __init__(self, path: Optional[Union[str, Path]] = None,
                 number_length: int = DEFAULT_NUMBER_LENGTH):
        self.path = Path(path) if path is not None else None
        self.number_length = number_length
        self._lock = threading.Lock()
        self._contacts: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            with open(self.path) as f:
                doc = json.load(f)
            if doc.get("version") != 1:
                raise ValueError(f"contact store version {doc.get('version')!r}")
            self._contacts = {c["name"]: c["phone"] for c in doc["contacts"]}

    def _persist(self):
        if self.path is None:
            return
        doc = {
            "version": 1,
            "contacts": [{"name": n, "phone": p}
                         for n, p in sorted(self._contacts.items())],
        }
        fd, tmp = tempfile.mkstemp(dir=str(self.path.parent), suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(doc, f, indent=2)
            os.replace(tmp, self.path)
        except BaseException:
            os.unlink(tmp)
            raise

    def _check_phone(self, phone: str):
        if not phone.isdigit() or len(phone) != self.number_length:
            raise InvalidPhone(
                f"phone must be {self.number_length} digits, got {phone!r}"
            )

    def add(self, contact: Contact):
        self._check_phone(contact.phone)
        if not contact.name:
            raise ValueError("contact name must be non-empty")
        with self._lock:
            if contact.name in self._contacts:
                raise DuplicateName(f"contact {contact.name!r} already exists")
            self._contacts[contact.name] = contact.phone
            self._persist()

    def find(self, name: str) -> Optional[Contact]:
        with self._lock:
            phone = self._contacts.get(name)
        return Contact(name, phone) if phone is not None else None

    def update(self, name: str, phone: str):
        self._check_phone(phone)
        with self._lock:
            if name not in self._contacts:
                raise NotFound(f"no contact named {name!r}")
            self._contacts[name] = phone
            self._persist()

    def delete(self, name: str):
        with self._lock:
            if name not in self._contacts:
                raise NotFound(f"no contact named {name!r}")
            del self._contacts[name]
            self._persist()

    def list(self) -> list[Contact]:
        with self._lock:
            return [Contact(n, p) for n, p in sorted(self._contacts.items())]


@dataclass
class DialogSession:
    """Mutable dialog state for one user; language is locked by the wake word."""

    state: DialogState = DialogState.IDLE
    language: Optional[str] = None
    draft_name: Optional[str] = None
    digits: str = ""
    pending: Optional[str] = None  # add | update | delete
    found: Optional[str] = None
    transcript: list = field(default_factory=list)
    number_length: int = DEFAULT_NUMBER_LENGTH
    last_prompt: str = INITIAL_PROMPT

    def reset(self):
        self.state = DialogState.IDLE
        self.language = None
        self.draft_name = None
        self.digits = ""
        self.pending = None
        self.found = None


def _ids(classes) -> set[int]:
    return {c.class_id for c in classes}


def active_vocabulary(session: DialogSession) -> set[int]:
    """Class ids the assistant will accept in the session's current state."""
    lang = session.language
    by = lambda *cats: _ids(c for c in ALL_CLASSES
                            if c.category in cats and c.language == lang)
    names = _ids(c for c in ALL_CLASSES if c.category.startswith("name_"))

    s = session.state
    if s == DialogState.IDLE:
        return _ids(c for c in ALL_CLASSES if c.category == "wake_word")
    if s == DialogState.MAIN_MENU:
        return by("add", "search")
    if s in (DialogState.ADD_AWAIT_NAME, DialogState.SEARCH_AWAIT_NAME):
        return names | by("mom", "dad")
    if s in (DialogState.ADD_AWAIT_DIGITS, DialogState.UPDATE_AWAIT_DIGITS):
        return by(*[f"digit_{d}" for d in range(10)])
    if s in (DialogState.ADD_CONFIRM, DialogState.ADD_CONFIRM_NAME):
        return by("yes", "no")
    if s == DialogState.FOUND_MENU:
        return by("call", "update", "delete", "no")
    return set()  # final states


def masked_probabilities(logits: np.ndarray, vocab: Sequence[int]) -> np.ndarray:
    """Softmax restricted to vocab: out-of-set logits masked to -inf,
    then renormalized over the remaining classes."""
    masked = np.full(len(logits), -np.inf)
    masked[list(vocab)] = np.asarray(logits, dtype=np.float64)[list(vocab)]
    finite = masked[list(vocab)]
    z = finite - finite.max()
    e = np.exp(z)
    return e / e.sum()


def classify_in_state(session: DialogSession, fs: FeatureSequence, model: Model,
                      threshold: float = DEFAULT_REJECT_THRESHOLD) -> Recognition:
    """Masked softmax over the active vocabulary; reject below threshold."""
    vocab = sorted(active_vocabulary(session))
    if not vocab:
        raise EmptyVocabulary(f"state {session.state.name} accepts no utterances")
    logits = forward(model, fs).values
    probs = masked_probabilities(logits, vocab)
    best = int(np.argmax(probs))
    confidence = float(probs[best])
    return Recognition(class_id=vocab[best], confidence=confidence,
                       accepted=confidence >= threshold)


def transition(session: DialogSession, utterance: Union[UtteranceClass, int],
               store: ContactStore,
               confidence: Optional[float] = None) -> TurnResult:
    """Apply one accepted utterance; returns the state reached and prompt.

    Commit states perform their side effect and auto-reset the session to
    Idle so it stays reusable. `confidence` routes low-confidence names
    through the confirmation state.
    """
    cls = utterance if isinstance(utterance, UtteranceClass) else class_by_id(utterance)
    if cls.class_id not in active_vocabulary(session):
        raise NotInVocabulary(
            f"class {cls.class_id} ({cls.category}) not accepted in state "
            f"{session.state.name}"
        )

    session.transcript.append(("user", cls.display_text))
    result = _apply(session, cls, store, confidence)
    session.last_prompt = result.prompt
    session.transcript.append(("assistant", result.prompt))
    return result


def _phone_prompt(session: DialogSession) -> str:
    got = len(session.digits)
    if got == 0:
        return "What is their phone number?"
    return f"Got {got} of {session.number_length} digits."


def _apply(session: DialogSession, cls: UtteranceClass, store: ContactStore,
           confidence: Optional[float]) -> TurnResult:
    s = session.state
    S = DialogState

    if s == S.IDLE:
        session.state = S.MAIN_MENU
        session.language = cls.language
        return TurnResult(S.MAIN_MENU, "Yes, what would you like to do?")

    if s == S.MAIN_MENU:
        if cls.category == "add":
            session.state = S.ADD_AWAIT_NAME
            return TurnResult(S.ADD_AWAIT_NAME, "What is the name of the contact?")
        session.state = S.SEARCH_AWAIT_NAME
        return TurnResult(S.SEARCH_AWAIT_NAME, "What is the name of the contact?")

    if s == S.ADD_AWAIT_NAME:
        session.draft_name = cls.display_text
        if confidence is not None and confidence < NAME_CONFIRM_THRESHOLD:
            session.state = S.ADD_CONFIRM_NAME
            return TurnResult(S.ADD_CONFIRM_NAME,
                              f"Did you say {session.draft_name}?")
        session.state = S.ADD_AWAIT_DIGITS
        session.digits = ""
        return TurnResult(S.ADD_AWAIT_DIGITS, "What is their phone number?")

    if s == S.ADD_CONFIRM_NAME:
        if cls.category == "yes":
            session.state = S.ADD_AWAIT_DIGITS
            session.digits = ""
            return TurnResult(S.ADD_AWAIT_DIGITS, "What is their phone number?")
        session.draft_name = None
        session.state = S.ADD_AWAIT_NAME
        return TurnResult(S.ADD_AWAIT_NAME, "What is the name of the contact?")

    if s in (S.ADD_AWAIT_DIGITS, S.UPDATE_AWAIT_DIGITS):
        session.digits += cls.category.removeprefix("digit_")
        if len(session.digits) < session.number_length:
            return TurnResult(s, _phone_prompt(session))
        if s == S.ADD_AWAIT_DIGITS:
            session.pending = "add"
            session.state = S.ADD_CONFIRM
            return TurnResult(S.ADD_CONFIRM,
                              f"Are you sure to add {session.draft_name}?")
        session.pending = "update"
        session.state = S.ADD_CONFIRM
        return TurnResult(S.ADD_CONFIRM, f"Are you sure to update {session.found}?")

    if s == S.ADD_CONFIRM:
        if cls.category == "yes":
            return _commit(session, store)
        # declined: add restarts from the name, mutations return to the menu
        if session.pending == "add":
            session.draft_name = None
            session.digits = ""
            session.pending = None
            session.state = S.ADD_AWAIT_NAME
            return TurnResult(S.ADD_AWAIT_NAME, "What is the name of the contact?")
        session.digits = ""
        session.pending = None
        session.state = S.FOUND_MENU
        return TurnResult(S.FOUND_MENU, _found_prompt(store, session.found))

    if s == S.SEARCH_AWAIT_NAME:
        contact = store.find(cls.display_text)
        if contact is None:
            return TurnResult(S.SEARCH_AWAIT_NAME,
                              f"No contact named {cls.display_text}. "
                              "What is the name of the contact?")
        session.found = contact.name
        session.state = S.FOUND_MENU
        return TurnResult(S.FOUND_MENU, _found_prompt(store, contact.name))

    if s == S.FOUND_MENU:
        if cls.category == "call":
            return _commit_call(session, store)
        if cls.category == "update":
            session.state = S.UPDATE_AWAIT_DIGITS
            session.digits = ""
            return TurnResult(S.UPDATE_AWAIT_DIGITS, "What is the new phone number?")
        if cls.category == "delete":
            session.pending = "delete"
            session.state = S.ADD_CONFIRM
            return TurnResult(S.ADD_CONFIRM,
                              f"Are you sure to delete {session.found}?")
        session.reset()
        return TurnResult(S.IDLE, "Goodbye. " + INITIAL_PROMPT)

    raise NotInVocabulary(f"state {s.name} accepts no utterances")


def _found_prompt(store: ContactStore, name: str) -> str:
    contact = store.find(name)
    phone = contact.phone if contact else "unknown"
    return f"{name}'s number is {phone}. What would you like to do?"


def _commit(session: DialogSession, store: ContactStore) -> TurnResult:
    pending = session.pending
    if pending == "add":
        effect = SideEffect("add_contact", session.draft_name, session.digits)
        store.add(Contact(session.draft_name, session.digits))
        reached = DialogState.ADD_COMMIT
    elif pending == "update":
        effect = SideEffect("update_contact", session.found, session.digits)
        store.update(session.found, session.digits)
        reached = DialogState.MUTATE_COMMIT
    else:
        effect = SideEffect("delete_contact", session.found)
        store.delete(session.found)
        reached = DialogState.MUTATE_COMMIT
    session.reset()
    return TurnResult(reached, "OK. Done. " + INITIAL_PROMPT, effect)


def _commit_call(session: DialogSession, store: ContactStore) -> TurnResult:
    contact = store.find(session.found)
    phone = contact.phone if contact else None
    effect = SideEffect("dial", session.found, phone)
    name = session.found
    session.reset()
    return TurnResult(DialogState.CALL_COMMIT, f"Calling {name}. " + INITIAL_PROMPT,
                      effect)

"""HTTP facade over assistant sessions.

A thin adapter: every state change observable through the API is produced
by the assistant module. Sessions are kept in memory behind per-session
locks and expire after an idle timeout. Audio bodies may be WAV
(featurized server-side) or prefeaturized NLF1.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import assistant as asst
from . import dsp
from . import models as mdl
from . import tensorcore as tc

MAX_AUDIO_BYTES = 10 * 1024 * 1024
DEFAULT_SESSION_TIMEOUT_S = 15 * 60


@dataclass
class ServiceSettings:
    contacts_path: Optional[str] = None
    asr_model_path: Optional[str] = None
    langid_model_path: Optional[str] = None
    number_length: int = asst.DEFAULT_NUMBER_LENGTH
    session_timeout_s: float = DEFAULT_SESSION_TIMEOUT_S
    reject_threshold: float = asst.DEFAULT_REJECT_THRESHOLD
    static_dir: Optional[str] = None


@dataclass
class SessionHandle:
    session_id: str
    created_at: float
    session: asst.DialogSession
    last_access: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionRegistry:
    def __init__(self, timeout_s: float):
        self.timeout_s = timeout_s
        self._sessions: dict[str, SessionHandle] = {}
        self._lock = threading.Lock()

    def create(self, number_length: int) -> SessionHandle:
        now = time.monotonic()
        handle = SessionHandle(
            session_id=uuid.uuid4().hex,
            created_at=now,
            session=asst.DialogSession(number_length=number_length),
            last_access=now,
        )
        with self._lock:
            self._sessions[handle.session_id] = handle
        return handle

    def get(self, session_id: str) -> Optional[SessionHandle]:
        now = time.monotonic()
        with self._lock:
            handle = self._sessions.get(session_id)
            if handle is None:
                return None
            if now - handle.last_access > self.timeout_s:
                del self._sessions[session_id]
                return None
            handle.last_access = now
            return handle

    def drop(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None


def _vocab_entries(session: asst.DialogSession) -> list[dict]:
    entries = []
    for class_id in sorted(asst.active_vocabulary(session)):
        c = asst.class_by_id(class_id)
        entries.append({
            "class_id": c.class_id,
            "category": c.category,
            "language": c.language,
            "display_text": c.display_text,
        })
    return entries


def _session_view(handle: SessionHandle) -> dict:
    s = handle.session
    return {
        "session_id": handle.session_id,
        "state": int(s.state),
        "state_label": s.state.name,
        "language": s.language,
        "prompt": s.last_prompt,
        "active_vocabulary": _vocab_entries(s),
        "transcript": [{"role": r, "text": t} for r, t in s.transcript],
    }


def _error(status: int, reason: str, detail: str = "") -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": reason, "detail": detail})


def create_app(settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings()
    app = FastAPI(title="smallvoice assistant", version="1")

    store = asst.ContactStore(settings.contacts_path,
                              number_length=settings.number_length)
    registry = SessionRegistry(settings.session_timeout_s)
    loaded: dict[str, Optional[mdl.Model]] = {
        "asr": mdl.load(settings.asr_model_path) if settings.asr_model_path else None,
        "langid": mdl.load(settings.langid_model_path) if settings.langid_model_path else None,
    }
    app.state.store = store
    app.state.registry = registry
    app.state.models = loaded

    def featurize_body(body: bytes, content_type: str, input_dim: int):
        if content_type.startswith("application/x-nlf1"):
            fs = dsp.read_features(body)
        elif content_type.startswith("audio/wav") or content_type.startswith("audio/x-wav"):
            w = dsp.preprocess(dsp.load_wav(body))
            if input_dim != 128:
                raise mdl.DimMismatch(
                    "model expects encoder features; upload NLF1 instead of WAV"
                )
            fs = dsp.mel_spectrogram(w)
        else:
            raise ValueError(f"unsupported content type {content_type!r}")
        if fs.dim != input_dim:
            raise mdl.DimMismatch(f"features have dim {fs.dim}, model expects {input_dim}")
        return fs

    @app.post("/v1/sessions")
    def create_session():
        handle = registry.create(settings.number_length)
        return _session_view(handle)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        handle = registry.get(session_id)
        if handle is None:
            return _error(404, "unknown_session", session_id)
        with handle.lock:
            return _session_view(handle)

    @app.delete("/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        if not registry.drop(session_id):
            return _error(404, "unknown_session", session_id)
        return Response(status_code=204)

    @app.post("/v1/sessions/{session_id}/utterance")
    async def post_utterance(session_id: str, request: Request):
        handle = registry.get(session_id)
        if handle is None:
            return _error(404, "unknown_session", session_id)

        content_type = request.headers.get("content-type", "application/json")
        body = await request.body()
        if len(body) > MAX_AUDIO_BYTES:
            return _error(413, "audio_too_large", f"{len(body)} bytes")

        session = handle.session
        with handle.lock:
            expected_state = None
            recognition = None
            if content_type.startswith("application/json"):
                try:
                    import json as _json
                    doc = _json.loads(body or b"{}")
                    class_id = int(doc["class_id"])
                    expected_state = doc.get("expected_state")
                    confidence = doc.get("confidence")
                except (KeyError, TypeError, ValueError) as exc:
                    return _error(400, "malformed_body", str(exc))
            else:
                model = loaded["asr"]
                if model is None:
                    return _error(400, "no_asr_model",
                                  "service started without --asr-model")
                try:
                    fs = featurize_body(body, content_type, model.config.input_dim)
                except (dsp.BadMagic, dsp.TruncatedFile, dsp.VersionUnsupported,
                        dsp.CorruptHeader, dsp.UnsupportedFormat, dsp.EmptyAudio,
                        dsp.AudioTooShort, mdl.DimMismatch, ValueError) as exc:
                    return _error(400, "bad_audio", str(exc))
                try:
                    recognition = asst.classify_in_state(
                        session, fs, model, settings.reject_threshold)
                except asst.EmptyVocabulary as exc:
                    return _error(409, "final_state", str(exc))
                except tc.InputTooShort as exc:
                    return _error(400, "bad_audio", str(exc))
                if not recognition.accepted:
                    return {
                        "rejected": True,
                        "confidence": recognition.confidence,
                        "state": int(session.state),
                        "state_label": session.state.name,
                        "prompt": session.last_prompt,
                    }
                class_id = recognition.class_id
                confidence = recognition.confidence

            if expected_state is not None and int(expected_state) != int(session.state):
                return _error(409, "stale_state",
                              f"session is in state {int(session.state)}")
            try:
                result = asst.transition(session, class_id, store,
                                         confidence=confidence)
            except KeyError as exc:
                return _error(400, "unknown_class", str(exc))
            except asst.NotInVocabulary as exc:
                return _error(400, "not_in_vocabulary", str(exc))
            except (asst.DuplicateName, asst.NotFound, asst.InvalidPhone) as exc:
                return _error(409, "store_conflict", str(exc))

            response = {
                "recognized": {
                    "class_id": class_id,
                    "confidence": confidence if confidence is not None else 1.0,
                },
                "state": int(result.state),
                "state_label": result.state.name,
                "session_state": int(session.state),
                "prompt": result.prompt,
                "active_vocabulary": _vocab_entries(session),
            }
            if result.side_effect is not None:
                response["side_effect"] = {
                    "type": result.side_effect.type,
                    "name": result.side_effect.name,
                    "phone": result.side_effect.phone,
                }
            return response

    @app.post("/v1/classify")
    async def classify(request: Request, model: str = "asr"):
        if model not in loaded:
            return _error(400, "unknown_model", model)
        net = loaded[model]
        if net is None:
            return _error(400, "model_not_configured", model)
        body = await request.body()
        if len(body) > MAX_AUDIO_BYTES:
            return _error(413, "audio_too_large", f"{len(body)} bytes")
        content_type = request.headers.get("content-type", "application/octet-stream")
        try:
            fs = featurize_body(body, content_type, net.config.input_dim)
            probs = tc.softmax(mdl.forward(net, fs).values)
        except (dsp.BadMagic, dsp.TruncatedFile, dsp.VersionUnsupported,
                dsp.CorruptHeader, dsp.UnsupportedFormat, dsp.EmptyAudio,
                dsp.AudioTooShort, mdl.DimMismatch, tc.InputTooShort,
                ValueError) as exc:
            return _error(400, "bad_audio", str(exc))
        return {"model": model, "probs": [float(p) for p in probs]}

    @app.get("/v1/contacts")
    def contacts():
        return {"contacts": [{"name": c.name, "phone": c.phone}
                             for c in store.list()]}

    if settings.static_dir and Path(settings.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=settings.static_dir, html=True),
                  name="ui")

    return app

"""Newline-delimited JSON wire protocol exposing a learner to a remote teacher.

One session per connection, strictly alternating::

    teacher -> session_init {learner, params}
    teacher -> example {t, assignment}      learner -> prediction {t, label, explanation_id}
    teacher -> feedback {t, label, feature, polarity}  or  ack {t}
    ...
    teacher -> session_end {}               learner -> session_end {mistakes}

The first prediction has a null label; the teacher answers it with a
feedback frame carrying the true label and no feature.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, fields
from typing import Any, BinaryIO, Callable

from .core import Literal, Representation
from .learners import Round, Transcript, make_learner
from .world import Observation, StreamEvent, Teacher, TeacherFeedback

logger = logging.getLogger(__name__)

MAX_FRAME = 1 << 20


class DecodeError(ValueError):
    """A frame could not be parsed; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class ProtocolViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ExampleMsg:
    t: int
    assignment: tuple


@dataclass(frozen=True)
class PredictionMsg:
    t: int
    label: Any
    explanation_id: int | None


@dataclass(frozen=True)
class FeedbackMsg:
    t: int
    label: Any
    feature: int | None = None
    polarity: bool | None = None


@dataclass(frozen=True)
class Ack:
    t: int


@dataclass(frozen=True)
class SessionInit:
    learner: str
    params: dict


@dataclass(frozen=True)
class SessionEnd:
    mistakes: int | None = None
    error: str | None = None


TYPES = {
    "example": ExampleMsg,
    "prediction": PredictionMsg,
    "feedback": FeedbackMsg,
    "ack": Ack,
    "session_init": SessionInit,
    "session_end": SessionEnd,
}
TAGS = {cls: tag for tag, cls in TYPES.items()}


def encode(msg) -> bytes:
    doc = {"type": TAGS[type(msg)]}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if f.name == "assignment":
            value = [int(v) for v in value]
        doc[f.name] = value
    data = json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
    if len(data) > MAX_FRAME:
        raise ValueError(f"frame of {len(data)} bytes exceeds {MAX_FRAME}")
    return data


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check(cond: bool, message: str, offset: int) -> None:
    if not cond:
        raise DecodeError(message, offset)


def decode(frame: bytes):
    if len(frame) > MAX_FRAME:
        raise DecodeError("frame too large", MAX_FRAME)
    if not frame.endswith(b"\n"):
        raise DecodeError("truncated frame (no newline)", len(frame))
    body = frame[:-1]
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid UTF-8", exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(exc.msg, len(text[:exc.pos].encode("utf-8"))) from None
    end = len(body)
    _check(isinstance(doc, dict), "frame is not a JSON object", 0)
    cls = TYPES.get(doc.get("type"))
    _check(cls is not None, f"unknown message type {doc.get('type')!r}", 0)
    names = {f.name for f in fields(cls)}
    extra = set(doc) - names - {"type"}
    _check(not extra, f"unexpected fields {sorted(extra)}", end)
    kwargs = {k: v for k, v in doc.items() if k != "type"}
    try:
        msg = cls(**kwargs)
    except TypeError as exc:
        raise DecodeError(f"bad {TAGS[cls]} frame: {exc}", end) from None
    if cls is ExampleMsg:
        a = msg.assignment
        _check(isinstance(a, list) and all(v in (0, 1) and not isinstance(v, float) for v in a),
               "assignment must be a list of 0/1", end)
        msg = ExampleMsg(msg.t, tuple(bool(v) for v in a))
    if hasattr(msg, "t"):
        _check(_is_int(msg.t) and msg.t >= 0, "t must be a non-negative integer", end)
    if cls is PredictionMsg:
        _check(msg.explanation_id is None or _is_int(msg.explanation_id), "bad explanation_id", end)
    if cls is FeedbackMsg:
        _check((msg.feature is None) == (msg.polarity is None), "feature and polarity go together", end)
        _check(msg.feature is None or (_is_int(msg.feature) and msg.feature >= 0), "bad feature", end)
        _check(msg.polarity is None or isinstance(msg.polarity, bool), "bad polarity", end)
    if cls is SessionInit:
        _check(isinstance(msg.learner, str) and isinstance(msg.params, dict), "bad session_init", end)
    if cls is SessionEnd:
        _check(msg.mistakes is None or _is_int(msg.mistakes), "bad mistakes", end)
    return msg


class Channel:
    """Frame reader/writer over a pair of binary streams."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self.reader = reader
        self.writer = writer
        self.position = 0

    def send(self, msg) -> None:
        self.writer.write(encode(msg))
        self.writer.flush()

    def recv(self):
        """Next message, or ``None`` on a clean end of stream."""
        line = self.reader.readline(MAX_FRAME + 1)
        start = self.position
        self.position += len(line)
        if not line:
            return None
        try:
            return decode(line)
        except DecodeError as exc:
            raise DecodeError(str(exc).rsplit(" (byte", 1)[0], start + exc.offset) from None


@dataclass
class SessionSummary:
    mistakes: int
    rounds: int
    error: str | None = None


def default_factory(init: SessionInit):
    return make_learner({"name": init.learner, **init.params})


def serve_session(reader: BinaryIO, writer: BinaryIO,
                  factory: Callable[[SessionInit], Any] = default_factory) -> SessionSummary:
    """Run the learner side of one session until ``session_end`` or an error."""
    ch = Channel(reader, writer)
    mistakes = rounds = 0
    try:
        init = ch.recv()
        if not isinstance(init, SessionInit):
            raise ProtocolViolation("session must start with session_init")
        try:
            learner = factory(init)
        except (TypeError, ValueError) as exc:
            raise ProtocolViolation(f"cannot build learner: {exc}") from None
        last_t = -1
        started = False
        pending = None            # (observation, prediction) awaiting feedback or ack
        while True:
            msg = ch.recv()
            if msg is None:
                raise ProtocolViolation("connection closed before session_end")
            if isinstance(msg, SessionEnd):
                if pending is not None:
                    raise ProtocolViolation(f"round {pending[0].t} left without feedback")
                ch.send(SessionEnd(mistakes))
                return SessionSummary(mistakes, rounds)
            if isinstance(msg, ExampleMsg):
                if pending is not None:
                    raise ProtocolViolation(f"round {pending[0].t} left without feedback")
                if msg.t <= last_t:
                    raise ProtocolViolation(f"round index {msg.t} after {last_t}")
                last_t = msg.t
                obs = Observation(msg.t, msg.assignment)
                if not started:
                    pending = (obs, None)
                    ch.send(PredictionMsg(msg.t, None, None))
                else:
                    pred = learner.predict_one(obs)
                    pending = (obs, pred)
                    ch.send(PredictionMsg(msg.t, pred.label, pred.explanation_id))
                continue
            if isinstance(msg, (FeedbackMsg, Ack)):
                if pending is None or pending[0].t != msg.t:
                    raise ProtocolViolation(f"{TAGS[type(msg)]} for round {msg.t} without a prediction")
                obs, pred = pending
                pending = None
                rounds += 1
                if not started:
                    if not isinstance(msg, FeedbackMsg):
                        raise ProtocolViolation("first round needs a labeled feedback")
                    learner.start(obs, msg.label)
                    started = True
                elif isinstance(msg, Ack):
                    learner.absorb(obs, pred, None)
                else:
                    if msg.label == pred.label:
                        raise ProtocolViolation(f"round {msg.t}: feedback after a correct prediction")
                    lit = None if msg.feature is None else Literal(msg.feature, msg.polarity)
                    learner.absorb(obs, pred, TeacherFeedback(msg.label, lit))
                    mistakes += 1
                continue
            raise ProtocolViolation(f"unexpected {TAGS[type(msg)]} frame")
    except (DecodeError, ProtocolViolation) as exc:
        logger.info("session aborted: %s", exc)
        try:
            ch.send(SessionEnd(mistakes, str(exc)))
        except OSError:
            pass
        return SessionSummary(mistakes, rounds, str(exc))


# -- teacher side --------------------------------------------------------------

class RemoteSessionError(RuntimeError):
    pass


def teach_remote(reader: BinaryIO, writer: BinaryIO, learner_spec: dict, world: Representation,
                 events, teacher: Teacher | None = None) -> tuple[Transcript, SessionEnd]:
    """Play the teacher over a channel; returns the transcript and the final frame."""
    ch = Channel(reader, writer)
    teacher = teacher or Teacher(world)
    spec = dict(learner_spec)
    ch.send(SessionInit(spec.pop("name"), spec))
    transcript = Transcript()
    first = True
    for event in events:
        ch.send(ExampleMsg(event.t, event.x.values))
        reply = ch.recv()
        if isinstance(reply, SessionEnd):
            raise RemoteSessionError(reply.error or "learner ended the session")
        if not isinstance(reply, PredictionMsg) or reply.t != event.t:
            raise RemoteSessionError(f"expected prediction for round {event.t}, got {reply!r}")
        if first:
            y0 = teacher.label(event)
            fb = TeacherFeedback(y0)
            ch.send(FeedbackMsg(event.t, y0))
            transcript.rounds.append(Round(event.t, event.x.values, None, None, fb, False,
                                           event.hidden.exception, event.hidden.component))
            first = False
            continue
        fb = teacher.respond(event, reply.label, reply.explanation_id)
        if fb is None:
            ch.send(Ack(event.t))
        else:
            lit = fb.feature
            ch.send(FeedbackMsg(event.t, fb.label, None if lit is None else lit.feature,
                                None if lit is None else lit.polarity))
        transcript.rounds.append(Round(event.t, event.x.values, reply.label, reply.explanation_id, fb,
                                       fb is not None, event.hidden.exception, event.hidden.component))
    ch.send(SessionEnd())
    end = ch.recv()
    if not isinstance(end, SessionEnd):
        raise RemoteSessionError(f"expected session_end, got {end!r}")
    if end.error:
        raise RemoteSessionError(end.error)
    return transcript, end


def loopback_session(learner_spec: dict, world: Representation, events) -> tuple[Transcript, SessionEnd]:
    """Serve a learner on one end of a socket pair and teach it from the other."""
    a, b = socket.socketpair()
    with a, b:
        server = threading.Thread(target=_serve_socket, args=(a,), daemon=True)
        server.start()
        rf, wf = b.makefile("rb"), b.makefile("wb")
        try:
            return teach_remote(rf, wf, learner_spec, world, events)
        finally:
            rf.close()
            wf.close()
            b.shutdown(socket.SHUT_RDWR)
            server.join(5)


def _serve_socket(sock: socket.socket) -> None:
    rf, wf = sock.makefile("rb"), sock.makefile("wb")
    try:
        serve_session(rf, wf)
    finally:
        rf.close()
        wf.close()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        summary = serve_session(self.rfile, self.wfile, self.server.factory)
        logger.info("session from %s: %s", self.client_address, summary)


class SessionServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, factory=default_factory):
        self.factory = factory
        super().__init__(address, _Handler)


def serve_tcp(host: str, port: int, factory=default_factory) -> None:
    with SessionServer((host, port), factory) as server:
        logger.info("listening on %s:%d", *server.server_address[:2])
        server.serve_forever()

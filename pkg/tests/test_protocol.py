import io
import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from dfflab.harness import run_learner, bound_instance
from dfflab.learners import SRDFF, make_learner
from dfflab.protocol import (
    Ack,
    Channel,
    DecodeError,
    ExampleMsg,
    FeedbackMsg,
    PredictionMsg,
    SessionEnd,
    SessionInit,
    SessionServer,
    decode,
    encode,
    loopback_session,
    serve_session,
    teach_remote,
)

labels = st.one_of(st.text(max_size=8), st.integers(-5, 50))
rounds = st.integers(0, 10 ** 6)
json_values = st.recursive(
    st.one_of(st.none(), st.booleans(), st.integers(-100, 100), st.text(max_size=5)),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=4), inner, max_size=3),
    max_leaves=6,
)


def feedback_messages():
    plain = st.builds(FeedbackMsg, rounds, labels)
    with_feature = st.builds(FeedbackMsg, rounds, labels, st.integers(0, 10 ** 4), st.booleans())
    return plain | with_feature


messages = st.one_of(
    st.builds(ExampleMsg, rounds, st.lists(st.booleans(), max_size=40).map(tuple)),
    st.builds(PredictionMsg, rounds, st.one_of(st.none(), labels), st.one_of(st.none(), rounds)),
    feedback_messages(),
    st.builds(Ack, rounds),
    st.builds(SessionInit, st.text(max_size=10), st.dictionaries(st.text(max_size=6), json_values, max_size=4)),
    st.builds(SessionEnd, st.one_of(st.none(), st.integers(0, 1000)), st.one_of(st.none(), st.text(max_size=20))),
)


@settings(max_examples=10_000, deadline=None)
@given(messages)
def test_codec_round_trip(msg):
    frame = encode(msg)
    assert frame.endswith(b"\n") and frame.count(b"\n") == 1
    assert decode(frame) == msg


def test_feedback_round_trip_example():
    msg = FeedbackMsg(4, "B", 7, False)
    frame = encode(msg)
    assert frame == b'{"type":"feedback","t":4,"label":"B","feature":7,"polarity":false}\n'
    assert decode(frame) == msg


def test_truncated_frame_offset():
    frame = encode(FeedbackMsg(4, "B", 7, False))
    with pytest.raises(DecodeError) as err:
        decode(frame[:20])
    assert err.value.offset == 20
    with pytest.raises(DecodeError) as err:
        decode(frame[:20] + b"\n")
    # frame[:20] ends inside a string that opens at byte 19
    assert err.value.offset == 19


@pytest.mark.parametrize("frame", [
    b'[1,2]\n',
    b'{"type":"nope"}\n',
    b'{"type":"ack","t":-1}\n',
    b'{"type":"ack","t":true}\n',
    b'{"type":"ack"}\n',
    b'{"type":"ack","t":1,"x":2}\n',
    b'{"type":"example","t":1,"assignment":[0,2]}\n',
    b'{"type":"feedback","t":1,"label":"A","feature":3}\n',
    b'\xff\n',
])
def test_decode_rejects(frame):
    with pytest.raises(DecodeError):
        decode(frame)


def test_channel_offsets_are_stream_positions():
    good = encode(Ack(1))
    ch = Channel(io.BytesIO(good + b'{"type":"ack","t":x}\n'), io.BytesIO())
    assert ch.recv() == Ack(1)
    with pytest.raises(DecodeError) as err:
        ch.recv()
    assert err.value.offset == len(good) + len('{"type":"ack","t":')


def run_server(*msgs, raw=b""):
    out = io.BytesIO()
    data = b"".join(encode(m) for m in msgs) + raw
    summary = serve_session(io.BytesIO(data), out)
    replies = [decode(line + b"\n") for line in out.getvalue().split(b"\n") if line]
    return summary, replies


def test_zero_example_session():
    summary, replies = run_server(SessionInit("srdff", {"m": 2}), SessionEnd())
    assert replies == [SessionEnd(0)]
    assert summary.error is None and summary.mistakes == 0


def test_out_of_order_round_aborts():
    summary, replies = run_server(
        SessionInit("dff18", {}),
        ExampleMsg(3, (True,)), FeedbackMsg(3, "A"),
        ExampleMsg(2, (False,)),
    )
    assert "round index 2 after 3" in summary.error
    assert replies[-1].error == summary.error


def test_feedback_after_correct_prediction_aborts():
    summary, replies = run_server(
        SessionInit("dff18", {}),
        ExampleMsg(0, (True,)), FeedbackMsg(0, "A"),
        ExampleMsg(1, (True,)), FeedbackMsg(1, "A", 0, True),
    )
    assert replies[1] == PredictionMsg(1, "A", 0)
    assert "correct prediction" in summary.error


def test_truncated_line_aborts_cleanly():
    summary, replies = run_server(SessionInit("dff18", {}), raw=b'{"type":"example","t":0')
    assert "truncated" in summary.error
    assert isinstance(replies[-1], SessionEnd) and replies[-1].error


@pytest.mark.parametrize("msgs, fragment", [
    ((ExampleMsg(0, (True,)),), "session_init"),
    ((SessionInit("nope", {}),), "cannot build"),
    ((SessionInit("dff18", {}), ExampleMsg(0, (True,)), Ack(0)), "labeled feedback"),
    ((SessionInit("dff18", {}), ExampleMsg(0, (True,)), SessionEnd()), "without feedback"),
    ((SessionInit("dff18", {}), Ack(0)), "without a prediction"),
    ((SessionInit("dff18", {}), PredictionMsg(0, "A", None)), "unexpected prediction"),
    ((SessionInit("dff18", {}),), "closed"),
])
def test_violations(msgs, fragment):
    summary, _ = run_server(*msgs)
    assert fragment in summary.error


@pytest.mark.parametrize("name", ["srdff", "dff18", "unique_label", "pfrdff"])
def test_loopback_matches_in_process(name):
    for seed in range(10):
        spec = {"name": name}
        if name in ("srdff", "unique_label"):
            spec["m"] = 3
        if name == "unique_label":
            spec["seed"] = seed
        world, events = bound_instance(3, 2, seed, unique_labels=name == "unique_label")
        remote, end = loopback_session(spec, world, events)
        local = run_learner(make_learner(spec), world, events)
        assert remote.to_jsonl() == local.to_jsonl()
        assert end.mistakes == local.mistakes


def test_tcp_server_smoke():
    server = SessionServer(("127.0.0.1", 0))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        world, events = bound_instance(3, 1, 5)
        results = []
        for _ in range(2):
            with socket.create_connection(server.server_address[:2], timeout=10) as sock:
                rf, wf = sock.makefile("rb"), sock.makefile("wb")
                results.append(teach_remote(rf, wf, {"name": "srdff", "m": 3}, world, events))
                rf.close()
                wf.close()
        local = run_learner(SRDFF(3), world, events)
        for tr, end in results:
            assert tr.to_jsonl() == local.to_jsonl() and end.mistakes == local.mistakes
    finally:
        server.shutdown()
        server.server_close()

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcl_testbed.etp import Mode
from tcl_testbed.protocol import (
    PROTOCOL_VERSION,
    DecodeError,
    ErrorCode,
    ErrorFrame,
    FrameReader,
    Hello,
    HouseReport,
    OrderingError,
    Request,
    StateReport,
    StepAck,
    StepOrder,
    SwitchRequests,
    VerdictEntry,
    Verdicts,
    decode,
    encode,
)
from tcl_testbed.switching import Reason

finite = st.floats(allow_nan=False, allow_infinity=False)
ids = st.integers(0, 10_000)
steps = st.integers(0, 2**53)

house_reports = st.builds(HouseReport, ids, finite, finite, finite, st.sampled_from(Mode),
                          finite, finite, finite)
consistent_verdicts = st.sampled_from(Reason).map(
    lambda r: (r in (Reason.APPLIED, Reason.NO_CHANGE), r))
frames = st.one_of(
    st.builds(Hello, st.text(), st.integers(0, 10**6), finite),
    st.builds(StateReport, steps, st.lists(house_reports, max_size=5).map(tuple), finite),
    st.builds(SwitchRequests, steps,
              st.lists(st.builds(Request, ids, st.sampled_from(Mode)), max_size=8).map(tuple)),
    st.builds(Verdicts, steps,
              st.lists(st.tuples(ids, consistent_verdicts).map(
                  lambda t: VerdictEntry(t[0], *t[1])), max_size=8).map(tuple)),
    st.builds(StepAck, steps),
    st.builds(ErrorFrame, st.sampled_from(ErrorCode), st.text()),
)


@given(frames)
def test_round_trip(frame):
    data = encode(frame)
    assert data.endswith(b"\n") and data.count(b"\n") == 1
    assert decode(data) == frame
    assert encode(decode(data)) == data


def test_canonical_bytes():
    assert encode(StepAck(7)) == b'{"type":"STEP_ACK","step":7}\n'
    assert encode(Hello(PROTOCOL_VERSION, 20, 1.0)) == \
        b'{"type":"HELLO","version":"tcl-testbed/1","n_houses":20,"latch_dt":1.0}\n'
    assert encode(SwitchRequests(3, (Request(4, Mode.ON),))) == \
        b'{"type":"SWITCH_REQUESTS","step":3,"requests":[{"house_id":4,"desired_mode":"ON"}]}\n'
    assert encode(Verdicts(3, (VerdictEntry(4, False, Reason.LOCKOUT_ACTIVE),))) == (
        b'{"type":"VERDICTS","step":3,"verdicts":'
        b'[{"house_id":4,"accepted":false,"reason":"LOCKOUT_ACTIVE"}]}\n')


def test_empty_request_list():
    frame = decode(b'{"type":"SWITCH_REQUESTS","step":0,"requests":[]}\n')
    assert frame == SwitchRequests(0, ())


def test_non_ascii_text_survives():
    frame = ErrorFrame(ErrorCode.MALFORMED, "température ±0.5 °C")
    data = encode(frame)
    assert "°".encode() in data
    assert decode(data) == frame


def test_non_finite_cannot_be_encoded():
    with pytest.raises(ValueError):
        encode(Hello(PROTOCOL_VERSION, 1, float("nan")))


@pytest.mark.parametrize("line,offset", [
    (b'{"type":"STEP_ACK","step":1}', 28),                      # no terminator
    (b'{"type":"STEP_ACK","st\xffep":1}\n', 22),                # bad UTF-8
    (b'{"type":"STEP_ACK","step":}\n', 26),                     # bad JSON
    (b'{"type":"NOPE","step":1}\n', 0),                         # unknown type
    (b'{"type":"STEP_ACK","step":1,"extra":2}\n', 0),           # unknown field
    (b'{"type":"STEP_ACK"}\n', 0),                              # missing field
    (b'{"type":"STEP_ACK","step":"1"}\n', 0),                   # wrong type
    (b'{"type":"STEP_ACK","step":true}\n', 0),                  # bool is not int
    (b'{"type":"STEP_ACK","step":-1}\n', 0),                    # negative step
    (b'{"type":"HELLO","version":"x","n_houses":1,"latch_dt":NaN}\n', 0),
    (b'[1,2]\n', 0),
    (b'{"type":"VERDICTS","step":1,"verdicts":[{"house_id":1,"accepted":true,'
     b'"reason":"LOCKOUT_ACTIVE"}]}\n', 0),                     # inconsistent verdict
])
def test_decode_errors_name_offset(line, offset):
    with pytest.raises(DecodeError) as exc:
        decode(line, offset=1000)
    assert exc.value.offset == 1000 + offset
    assert f"byte offset {1000 + offset}" in str(exc.value)


def test_reader_splits_and_recovers():
    good = encode(StepAck(1)) + encode(StepAck(2))
    bad = b'{"type":"STEP_ACK"\xfe}\n'
    stream = good + bad + encode(StepAck(3))
    reader = FrameReader()
    out = []
    for k in range(0, len(stream), 5):  # dribble the bytes in
        out.extend(reader.feed(stream[k:k + 5]))
    assert out[0] == StepAck(1) and out[1] == StepAck(2) and out[3] == StepAck(3)
    assert isinstance(out[2], DecodeError)
    assert out[2].offset == len(good) + bad.index(b"\xfe")
    assert reader.close() is None


def test_reader_reports_truncated_tail():
    reader = FrameReader()
    assert list(reader.feed(encode(StepAck(1)) + b'{"type":')) == [StepAck(1)]
    err = reader.close()
    assert isinstance(err, DecodeError)
    assert err.offset == len(encode(StepAck(1))) + 8


def test_reader_line_limit():
    reader = FrameReader(max_line=16)
    out = list(reader.feed(b"x" * 40))
    assert len(out) == 1 and isinstance(out[0], DecodeError)


def test_step_order():
    order = StepOrder()
    order.check(SwitchRequests(1, ()))
    order.check(Verdicts(1, ()))  # tracked per frame type
    order.check(SwitchRequests(2, ()))
    with pytest.raises(OrderingError) as exc:
        order.check(SwitchRequests(0, ()))
    assert exc.value.code is ErrorCode.ORDERING
    with pytest.raises(OrderingError):
        order.check(SwitchRequests(2, ()))
    order.check(ErrorFrame(ErrorCode.BUSY, "x"))  # no step, never checked


def test_field_names_match_document():
    report = StateReport(0, (HouseReport(0, 23.0, 23.0, 23.0, Mode.OFF, 0.0, 180.0, 125.0),),
                         125.0)
    obj = json.loads(encode(report))
    assert list(obj) == ["type", "step", "houses", "aggregate_power"]
    assert list(obj["houses"][0]) == ["house_id", "t_therm", "t_a", "t_w", "mode",
                                      "time_in_mode", "time_since_off", "real_power"]

import io

import numpy as np
import pytest

from dlczsim import DetectionMode, Detector, ModelParams, SessionSpec, TrialSchedule
from dlczsim.event_sim import RecordStream
from dlczsim.records_io import (BINARY, CSV, RecordFormatError, read_records,
                                write_records)


def make_stream(n_records, rng, mode=DetectionMode.SINGLE):
    dets = ([int(Detector.D1), int(Detector.D2)] if mode is DetectionMode.SINGLE
            else [int(Detector.D1), int(Detector.D2A), int(Detector.D2B)])
    trials = np.sort(rng.integers(0, 10 ** 6, n_records).astype(np.uint64))
    return RecordStream(
        mode=mode, schedule=TrialSchedule(), n_trials=10 ** 6,
        trial_index=trials,
        detector_id=rng.choice(dets, n_records).astype(np.uint8),
        offset_ns=rng.integers(0, 2000, n_records).astype(np.uint32),
    )


def test_empty_binary_is_header_only():
    stream = RecordStream(mode=DetectionMode.SINGLE, schedule=TrialSchedule(), n_trials=0)
    buf = io.BytesIO()
    n = write_records(stream, buf, BINARY)
    assert n == 16
    assert buf.getvalue()[:4] == b"PDR1"


def test_csv_line_format():
    stream = RecordStream(mode=DetectionMode.SPLIT, schedule=TrialSchedule(), n_trials=10,
                          trial_index=np.array([5], np.uint64),
                          detector_id=np.array([int(Detector.D2A)], np.uint8),
                          offset_ns=np.array([300], np.uint32))
    buf = io.BytesIO()
    write_records(stream, buf, CSV)
    assert buf.getvalue().decode().splitlines() == ["trial_index,detector,offset_ns", "5,D2a,300"]


@pytest.mark.parametrize("fmt", [BINARY, CSV])
def test_round_trip(fmt, rng):
    stream = make_stream(100_000, rng, DetectionMode.SPLIT)
    buf = io.BytesIO()
    write_records(stream, buf, fmt)
    buf.seek(0)
    back = read_records(buf, schedule=stream.schedule, n_trials=stream.n_trials)
    assert np.array_equal(back.trial_index, stream.trial_index)
    assert np.array_equal(back.detector_id, stream.detector_id)
    assert np.array_equal(back.offset_ns, stream.offset_ns)
    assert back.mode is DetectionMode.SPLIT


def test_binary_record_is_13_bytes(rng):
    stream = make_stream(7, rng)
    buf = io.BytesIO()
    n = write_records(stream, buf, BINARY)
    assert n == 16 + 7 * 13


def test_truncated_binary_reports_offset(rng):
    stream = make_stream(10, rng)
    buf = io.BytesIO()
    write_records(stream, buf, BINARY)
    data = buf.getvalue()[:-5]
    with pytest.raises(RecordFormatError) as exc:
        read_records(io.BytesIO(data))
    assert exc.value.offset == len(data)


def test_bad_magic_falls_back_to_csv_and_fails():
    with pytest.raises(RecordFormatError) as exc:
        read_records(io.BytesIO(b"XXXX garbage bytes"))
    assert exc.value.offset == 0


def test_bad_csv_record():
    text = "trial_index,detector,offset_ns\n5,D9,300\n"
    with pytest.raises(RecordFormatError):
        read_records(io.BytesIO(text.encode()))


def test_mode_detected_from_ids(rng):
    stream = make_stream(50, rng, DetectionMode.SINGLE)
    buf = io.BytesIO()
    write_records(stream, buf, BINARY)
    buf.seek(0)
    assert read_records(buf).mode is DetectionMode.SINGLE

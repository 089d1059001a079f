import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambapupil.errors import DataError, EventFormatError
from mambapupil.events import (Event, EventStream, LabelTrack, align_labels, load_events, load_labels,
                               nearest_label_index, save_events, save_labels, window_count, window_stream)


def _stream(times, res=(8, 6)):
    return EventStream.from_events(res, [(t, 0, 0, 1) for t in times])


# -- loading ---------------------------------------------------------------

def test_load_two_events(tmp_path):
    f = tmp_path / "ev.csv"
    f.write_text("0,3,2,1\n10,4,2,-1\n")
    s = load_events(f, (8, 6))
    assert s.events == [Event(0, 3, 2, 1), Event(10, 4, 2, -1)]


def test_load_empty_file(tmp_path):
    f = tmp_path / "ev.csv"
    f.write_text("")
    assert len(load_events(f, (8, 6))) == 0


def test_out_of_range_x_reports_line(tmp_path):
    f = tmp_path / "ev.csv"
    f.write_text("0,1,1,1\n5,9,0,1\n")
    with pytest.raises(EventFormatError, match="x=9") as info:
        load_events(f, (8, 6))
    assert info.value.lineno == 2


@pytest.mark.parametrize("line, needle", [
    ("1,2,3", "expected 4 fields"),
    ("a,1,1,1", "invalid literal"),
    ("0,1,1,0", "polarity"),
    ("0,1,6,1", "y=6"),
])
def test_malformed_records(tmp_path, line, needle):
    f = tmp_path / "ev.csv"
    f.write_text(f"0,0,0,1\n{line}\n")
    with pytest.raises(EventFormatError, match=needle):
        load_events(f, (8, 6))


def test_unsorted_timestamps_rejected(tmp_path):
    f = tmp_path / "ev.csv"
    f.write_text("10,0,0,1\n\n5,0,0,1\n")
    with pytest.raises(EventFormatError) as info:
        load_events(f, (8, 6))
    assert info.value.lineno == 3


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_events(tmp_path / "nope.csv", (8, 6))


events_strategy = st.lists(
    st.tuples(st.integers(0, 10**9), st.integers(0, 7), st.integers(0, 5), st.sampled_from([-1, 1])),
    max_size=60,
).map(lambda evs: sorted(evs, key=lambda e: e[0]))


@settings(max_examples=40, deadline=None)
@given(events_strategy)
def test_event_file_round_trip(tmp_path_factory, evs):
    f = tmp_path_factory.mktemp("rt") / "ev.csv"
    s = EventStream.from_events((8, 6), evs)
    save_events(f, s)
    assert load_events(f, (8, 6)).events == s.events


def test_labels_normalised_and_round_trip(tmp_path):
    f = tmp_path / "lab.csv"
    f.write_text("0,40.0,30.0,0\n10000,80.0,0.0,1\n")
    track = load_labels(f, (80, 60))
    np.testing.assert_array_equal(track.cx, [0.5, 1.0])
    np.testing.assert_array_equal(track.cy, [0.5, 0.0])
    assert track.closed.tolist() == [False, True]
    g = tmp_path / "lab2.csv"
    save_labels(g, track, (80, 60))
    again = load_labels(g, (80, 60))
    np.testing.assert_allclose(again.cx, track.cx)
    assert again.closed.tolist() == track.closed.tolist()


def test_label_outside_frame(tmp_path):
    f = tmp_path / "lab.csv"
    f.write_text("0,81.0,30.0,0\n")
    with pytest.raises(EventFormatError, match="outside"):
        load_labels(f, (80, 60))


# -- windowing -------------------------------------------------------------

def test_windowing_example_counts():
    ws = window_stream(_stream([0, 40_000, 90_000]), 50_000, 50_000)
    assert [len(w) for w in ws] == [2, 1]
    assert [(w.t_start, w.t_end) for w in ws] == [(0, 50_000), (50_000, 100_000)]


def test_windowing_empty_stream():
    assert window_stream(EventStream.empty((8, 6)), 50_000, 50_000) == []


def test_event_at_window_end_goes_to_next_window():
    ws = window_stream(_stream([0, 50_000]), 50_000, 50_000)
    assert [len(w) for w in ws] == [1, 1]


def test_overlapping_windows_match_brute_force_membership():
    times = list(range(0, 100_001, 10_000))
    ws = window_stream(_stream(times), 50_000, 25_000)
    brute = [sum(1 for t in times if w.t_start <= t < w.t_end) for w in ws]
    assert [len(w) for w in ws] == brute
    # some event is shared between neighbours
    assert sum(brute) > len(times)
    # every event is in some window
    assert all(any(w.t_start <= t < w.t_end for w in ws) for t in times)


def test_t_stop_gives_whole_windows_only():
    ws = window_stream(_stream([0, 40_000, 90_000]), 50_000, 50_000, t_stop=149_999)
    assert len(ws) == 2
    ws = window_stream(_stream([0]), 50_000, 20_000, t_stop=100_000)
    assert len(ws) == (100_000 - 50_000) // 20_000 + 1


def test_window_origin_offsets_spans():
    ws = window_stream(_stream([0, 30_000, 60_000]), 20_000, 20_000, origin=10_000)
    assert ws[0].t_start == 10_000
    assert [w.events[0].t for w in ws if len(w)] == [30_000, 60_000]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2_000_000), max_size=80), st.integers(1, 300_000))
def test_conservation_with_hop_equal_window(times, window):
    times = sorted(times)
    ws = window_stream(_stream(times), window, window)
    assert sum(len(w) for w in ws) == len(times)
    for t in times:
        assert sum(w.t_start <= t < w.t_end for w in ws) == 1
    if times:
        assert len(ws) == window_count(times[-1], window, window)


# -- label alignment -------------------------------------------------------

def _track(n, rate=100):
    period = 1_000_000 // rate
    return LabelTrack(rate, np.arange(n) * period, np.linspace(0, 1, n), np.linspace(1, 0, n))


def test_align_20hz_from_100hz_picks_every_fifth():
    track = _track(101)
    ws = window_stream(_stream([0]), 50_000, 50_000, t_stop=1_000_000)
    out = align_labels(track, ws, 20)
    expected = [(track.cx[i], track.cy[i]) for i in range(5, 101, 5)]
    assert out == expected


def test_align_single_sample():
    track = LabelTrack(100, [50_000], [0.3], [0.4])
    ws = window_stream(_stream([0]), 50_000, 50_000)
    assert align_labels(track, ws, 100) == [(0.3, 0.4)]


def test_align_tie_goes_to_earlier_sample():
    track = _track(3)
    assert nearest_label_index(track, np.array([5_000])).tolist() == [0]
    assert nearest_label_index(track, np.array([15_000])).tolist() == [1]


def test_align_rate_must_divide():
    ws = window_stream(_stream([0]), 50_000, 50_000)
    with pytest.raises(ValueError):
        align_labels(_track(10), ws, 30)


def test_align_window_beyond_track():
    ws = window_stream(_stream([0]), 50_000, 50_000, t_stop=500_000)
    with pytest.raises(DataError):
        align_labels(_track(11), ws, 20)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1_000_000), min_size=1, max_size=40))
def test_alignment_is_monotone(times):
    times = np.sort(np.array(times))
    idx = nearest_label_index(_track(101), times)
    assert np.all(np.diff(idx) >= 0)

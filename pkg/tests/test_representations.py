import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambapupil.events import EventStream, Window, window_stream
from mambapupil.representations import (BinaRep, encode_bina_rep, encode_bina_rep_sequence, encode_frame,
                                        encode_voxel, read_bina_rep, write_bina_rep)

RES = (16, 12)


def _window(events, t0=0, t1=1000, res=RES):
    return Window.from_events(t0, t1, res, events)


def bina_oracle(events, t0, t1, bits, res, H, W):
    """Scalar loop: set bit i of a cell when any event of that polarity lands in sub-interval i."""
    grid = np.zeros((2, H, W))
    seen = set()
    for t, x, y, p in events:
        i = (t - t0) * bits // (t1 - t0)
        seen.add((0 if p > 0 else 1, y * H // res[1], x * W // res[0], i))
    for c, yy, xx, i in seen:
        grid[c, yy, xx] += 2 ** i
    return grid / (2 ** bits - 1)


def random_events(rng, n, t0, t1, res=RES):
    t = np.sort(rng.integers(t0, t1, n))
    return [(int(a), int(rng.integers(0, res[0])), int(rng.integers(0, res[1])), int(rng.choice([-1, 1])))
            for a in t]


# -- frames ---------------------------------------------------------------

def test_frame_counts_repeated_pixel():
    g = encode_frame(_window([(1, 3, 2, 1)] * 3), 12, 16).grid
    assert g[0, 2, 3] == 3 and g.sum() == 3


def test_frame_empty():
    assert not encode_frame(_window([]), 12, 16).grid.any()


def test_frame_matches_tally():
    rng = np.random.default_rng(0)
    evs = random_events(rng, 300, 0, 1000)
    g = encode_frame(_window(evs), 6, 8).grid
    ref = np.zeros((2, 6, 8))
    for _, x, y, p in evs:
        ref[0 if p > 0 else 1, y // 2, x // 2] += 1
    np.testing.assert_array_equal(g, ref)


# -- Bina-rep -------------------------------------------------------------

def test_bina_single_event_lowest_bit():
    g = encode_bina_rep(_window([(10, 3, 2, 1)]), 4, 12, 16).grid
    assert g[0, 2, 3] == pytest.approx(1 / 15)
    g[0, 2, 3] = 0
    assert not g.any()


def test_bina_saturates_when_every_subinterval_hit():
    evs = [(t, 5, 5, -1) for t in (0, 250, 500, 999)]
    g = encode_bina_rep(_window(evs), 4, 12, 16).grid
    assert g[1, 5, 5] == 1.0


def test_bina_most_recent_subinterval_is_msb():
    g = encode_bina_rep(_window([(999, 0, 0, 1)]), 4, 12, 16).grid
    assert g[0, 0, 0] == pytest.approx(8 / 15)


def test_bina_empty_and_bad_bits():
    assert not encode_bina_rep(_window([]), 3, 12, 16).grid.any()
    with pytest.raises(ValueError):
        encode_bina_rep(_window([]), 0, 12, 16)


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 8])
def test_bina_matches_oracle_with_downscaling(bits):
    rng = np.random.default_rng(bits)
    for _ in range(20):
        evs = random_events(rng, int(rng.integers(0, 40)), 100, 1100)
        g = encode_bina_rep(_window(evs, 100, 1100), bits, 6, 8).grid
        np.testing.assert_array_equal(g, bina_oracle(evs, 100, 1100, bits, RES, 6, 8))


def test_sequence_encoder_equals_per_window_encoding():
    rng = np.random.default_rng(3)
    evs = random_events(rng, 400, 0, 5000)
    stream = EventStream.from_events(RES, evs)
    seq = encode_bina_rep_sequence(stream, 500, 4, 1000, 4, 12, 16)
    ws = window_stream(stream, 1000, 1000, origin=500, t_stop=4500)
    for k, w in enumerate(ws):
        np.testing.assert_array_equal(seq[k], encode_bina_rep(w, 4, 12, 16).grid)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.lists(st.tuples(st.integers(0, 999), st.integers(0, 15), st.integers(0, 11),
                                             st.sampled_from([-1, 1])), max_size=30),
       st.tuples(st.integers(0, 999), st.integers(0, 15), st.integers(0, 11), st.sampled_from([-1, 1])))
def test_bina_properties(bits, evs, extra):
    evs = sorted(evs)
    g = encode_bina_rep(_window(evs), bits, 12, 16).grid
    scaled = g * (2 ** bits - 1)
    assert np.all(np.abs(scaled - np.round(scaled)) < 1e-9)
    assert g.min() >= 0 and g.max() <= 1
    # support coincides with the count frame
    frame = encode_frame(_window(evs), 12, 16).grid
    np.testing.assert_array_equal(g > 0, frame > 0)
    # adding an event never lowers any cell
    g2 = encode_bina_rep(_window(sorted(evs + [extra])), bits, 12, 16).grid
    assert np.all(g2 >= g)


@pytest.mark.parametrize("bits", [2, 4, 8])
def test_isolated_hit_weaker_than_persistent(bits):
    single = encode_bina_rep(_window([(999, 1, 1, 1)]), bits, 12, 16).grid[0, 1, 1]
    every = [(i * 1000 // bits, 1, 1, 1) for i in range(bits)]
    full = encode_bina_rep(_window(every), bits, 12, 16).grid[0, 1, 1]
    assert single <= 2 ** (bits - 1) / (2 ** bits - 1) < full


def test_brep_dump_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    evs = random_events(rng, 50, 0, 1000)
    rep = encode_bina_rep(_window(evs), 4, 12, 16)
    path = tmp_path / "w.brep"
    write_bina_rep(path, rep)
    raw = path.read_bytes()
    assert raw[:4] == b"BREP" and len(raw) == 16 + 4 * 2 * 12 * 16
    back = read_bina_rep(path)
    assert back.bits == 4
    np.testing.assert_array_equal(back.grid, rep.grid.astype(np.float32))


def test_brep_bad_magic(tmp_path):
    path = tmp_path / "w.brep"
    write_bina_rep(path, BinaRep(2, np.zeros((2, 3, 4))))
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError, match="magic"):
        read_bina_rep(path)


# -- voxel ----------------------------------------------------------------

def test_voxel_event_at_bin_centre():
    g = encode_voxel(_window([(300, 2, 2, 1)]), 5, 12, 16).grid  # centre of bin 1 is 300
    assert g[1, 2, 2] == 1.0 and g.sum() == 1.0


def test_voxel_event_between_centres_splits_evenly():
    g = encode_voxel(_window([(400, 2, 2, 1)]), 5, 12, 16).grid
    assert g[1, 2, 2] == 0.5 and g[2, 2, 2] == 0.5


def test_voxel_edges_clamped():
    g = encode_voxel(_window([(0, 0, 0, -1), (999, 1, 0, 1)]), 5, 12, 16).grid
    assert g[0, 0, 0] == -1.0 and g[4, 0, 1] == 1.0


def voxel_oracle(evs, t0, t1, n_bins, H, W):
    g = np.zeros((n_bins, H, W))
    dur = t1 - t0
    for t, x, y, p in evs:
        yy, xx = y * H // RES[1], x * W // RES[0]
        for b in range(n_bins):
            centre = t0 + (b + 0.5) * dur / n_bins
            dist = abs(t - centre) * n_bins / dur
            w = max(0.0, 1.0 - dist)
            if (b == 0 and t <= centre) or (b == n_bins - 1 and t >= centre):
                w = 1.0
            g[b, yy, xx] += p * w
    return g


def test_voxel_matches_oracle_and_conserves_mass():
    rng = np.random.default_rng(5)
    for n_bins in (1, 3, 5):
        evs = random_events(rng, 100, 0, 1000)
        g = encode_voxel(_window(evs), n_bins, 6, 8).grid
        np.testing.assert_allclose(g, voxel_oracle(evs, 0, 1000, n_bins, 6, 8), atol=1e-12)
        assert g.sum() == pytest.approx(sum(e[3] for e in evs))

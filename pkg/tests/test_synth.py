import numpy as np
import pytest

from mambapupil.synth import (EventEmitter, SceneModel, Trajectory, emit_events, generate_dataset,
                              preset_trajectories, render_log_intensity)

SMALL = SceneModel(resolution=(32, 24), pupil_radius=3.0, iris_radius=5.0)


# -- threshold model ------------------------------------------------------------

def _one_pixel_step(delta, C=0.2):
    a = np.zeros((1, 1))
    return EventEmitter(a, 0, C).step(a + delta * C, 1000)


def test_step_of_two_and_a_half_thresholds_gives_two_positive_events():
    ev = _one_pixel_step(2.5)
    assert len(ev) == 2 and np.all(ev[:, 3] == 1)
    assert np.all((ev[:, 0] > 0) & (ev[:, 0] <= 1000)) and np.all(np.diff(ev[:, 0]) >= 0)


def test_sub_threshold_step_is_silent():
    assert len(_one_pixel_step(0.9)) == 0
    assert len(_one_pixel_step(-0.9)) == 0


def test_negative_step_and_residual_carry_over():
    C = 0.2
    em = EventEmitter(np.zeros((1, 1)), 0, C)
    assert em.step(np.full((1, 1), -2.5 * C), 1000)[:, 3].tolist() == [-1, -1]
    # the residual sits at -2C, so a further -0.6C crosses once more
    assert em.step(np.full((1, 1), -3.1 * C), 2000)[:, 3].tolist() == [-1]


def test_event_timestamps_interpolate_crossings():
    C = 0.2
    ev = EventEmitter(np.zeros((1, 1)), 0, C).step(np.full((1, 1), 4 * C), 1000)
    assert ev[:, 0].tolist() == [250, 500, 750, 1000]


def test_static_scene_emits_nothing():
    img = render_log_intensity(SMALL, (16, 12))
    assert len(emit_events(SMALL, [(t, img) for t in range(0, 10_000, 1000)])) == 0


# -- rendering ------------------------------------------------------------------

def test_full_eyelid_gives_uniform_background():
    img = render_log_intensity(SMALL, (16, 12), eyelid=1.0)
    assert np.all(img == SMALL.background_log_intensity)


def test_disc_membership_oracle():
    scene = SceneModel(resolution=(32, 24), pupil_radius=4.0, iris_radius=None)
    img = render_log_intensity(scene, (16, 12))
    for y in range(24):
        for x in range(32):
            inside = (x + 0.5 - 16) ** 2 + (y + 0.5 - 12) ** 2 <= 16
            assert (img[y, x] != scene.background_log_intensity) == inside


def test_render_is_pure_and_rejects_outside_centre():
    np.testing.assert_array_equal(render_log_intensity(SMALL, (10.3, 7.1)), render_log_intensity(SMALL, (10.3, 7.1)))
    with pytest.raises(ValueError):
        render_log_intensity(SMALL, (40, 12))


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneModel(threshold=0)
    with pytest.raises(ValueError):
        SceneModel(resolution=(32, 24), pupil_radius=12.0, iris_radius=None)


# -- datasets ---------------------------------------------------------------------

def test_pure_fixation_is_silent_with_constant_labels():
    ev, lab = generate_dataset([Trajectory("fixation", 300_000, (16, 12))], SMALL, 100)
    assert len(ev) == 0
    assert np.all(lab.cx == lab.cx[0]) and np.all(lab.cy == lab.cy[0])
    assert len(lab) == 31


def test_pursuit_left_to_right_has_increasing_cx():
    _, lab = generate_dataset([Trajectory("smooth_pursuit", 500_000, (8, 12), (24, 12))], SMALL, 100)
    assert np.all(np.diff(lab.cx) > 0)


def test_generation_is_deterministic():
    scene = SceneModel(resolution=(32, 24), pupil_radius=3.0, iris_radius=5.0, noise_rate_hz=0.5)
    tr = preset_trajectories("mixed", 2.0, scene, np.random.default_rng(4))
    a = generate_dataset(tr, scene, 100, seed=3)
    b = generate_dataset(preset_trajectories("mixed", 2.0, scene, np.random.default_rng(4)), scene, 100, seed=3)
    for col in "txyp":
        np.testing.assert_array_equal(getattr(a[0], col), getattr(b[0], col))
    np.testing.assert_array_equal(a[1].cx, b[1].cx)
    np.testing.assert_array_equal(a[1].closed, b[1].closed)


def test_events_stay_near_the_pupil():
    tr = [Trajectory("saccade", 60_000, (8, 8), (24, 16)), Trajectory("smooth_pursuit", 400_000, (24, 16), (10, 14))]
    ev, _ = generate_dataset(tr, SMALL, 100)
    assert len(ev) > 0
    starts = np.cumsum([0, 60_000])
    for t, x, y in zip(ev.t, ev.x, ev.y):
        i = int(np.searchsorted(starts, t, side="right") - 1)
        c = tr[i].position(t - starts[i])
        # margin: the pixel-centre offset plus one simulation frame of travel
        assert np.hypot(x + 0.5 - c[0], y + 0.5 - c[1]) <= SMALL.outer_radius + 2.0


def test_closed_loop_motion_leaves_no_net_polarity():
    tr = [Trajectory("smooth_pursuit", 300_000, (10, 12), (22, 12)),
          Trajectory("smooth_pursuit", 300_000, (22, 12), (10, 12))]
    ev, _ = generate_dataset(tr, SMALL, 100)
    net = np.zeros((24, 32), dtype=np.int64)
    np.add.at(net, (ev.y, ev.x), ev.p)
    assert len(ev) > 0 and not net.any()


def test_blink_burst_dwarfs_fixation_baseline():
    scene = SceneModel(noise_rate_hz=0.02)
    pos = (80, 60)
    tr = [Trajectory("fixation", 500_000, pos),
          Trajectory("blink", 300_000, pos, params={"close_us": 90_000, "open_us": 120_000})]
    ev, lab = generate_dataset(tr, scene, 100, seed=1)
    fix = np.sum(ev.t < 500_000) / 10  # per 50 ms window
    closing = np.sum((ev.t >= 500_000) & (ev.t < 550_000))
    assert closing >= 10 * max(fix, 1)
    assert lab.closed.any() and not lab.closed[:50].any()


# -- presets ---------------------------------------------------------------------

def test_presets_tile_duration():
    scene = SceneModel()
    for name in ("fixation", "blink", "smooth_pursuit", "saccade", "random", "mixed"):
        tr = preset_trajectories(name, 3.0, scene, np.random.default_rng(1))
        assert sum(t.duration_us for t in tr) == 3_000_000
    with pytest.raises(ValueError):
        preset_trajectories("reading", 1.0, scene, np.random.default_rng(0))


def test_mixed_preset_separates_still_phases_and_stays_in_frame():
    scene = SceneModel()
    w, h = scene.resolution
    for seed in range(20):
        tr = preset_trajectories("mixed", 20.0, scene, np.random.default_rng(seed))
        kinds = [t.kind for t in tr[:-1]]  # the closing phase may be a truncation
        still = {"fixation", "blink"}
        assert not any(a in still and b in still for a, b in zip(kinds, kinds[1:]))
        for t in tr:
            pos = t.position(np.linspace(0, t.duration_us, 50))
            assert np.all((pos[:, 0] >= 0) & (pos[:, 0] <= w) & (pos[:, 1] >= 0) & (pos[:, 1] <= h))
    kinds = {t.kind for s in range(5) for t in preset_trajectories("mixed", 20.0, scene, np.random.default_rng(s))}
    assert {"fixation", "saccade", "smooth_pursuit", "blink"} <= kinds

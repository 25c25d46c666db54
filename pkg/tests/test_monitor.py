import inspect

import numpy as np
import pytest

from sensorsentry.core import Mode, default_risk_table
from sensorsentry.gshi import compute_gshi
from sensorsentry.monitor import (
    PRESENCE_THRESHOLD,
    CalibrationError,
    CalibrationTable,
    Transfer,
    calibrate,
    estimate,
    extract,
    fit_transfer,
    tile_mean,
)
from sensorsentry.scenes import make_scene

GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SIZE = (60, 80)


@pytest.fixture(scope="module")
def calib_set():
    sc = [make_scene(100 + k, SIZE) for k in range(10)]
    return [a for a, _ in sc], [b for _, b in sc]


@pytest.fixture(scope="module")
def table(calib_set):
    return calibrate(*calib_set, seed=3, grid=GRID)


def test_too_few_images():
    img, depth = make_scene(1, SIZE)
    with pytest.raises(CalibrationError):
        calibrate([img] * 9, [depth] * 9)


def test_depth_count_mismatch(calib_set):
    imgs, deps = calib_set
    with pytest.raises(CalibrationError):
        calibrate(imgs, deps[:-1])


def test_estimate_requires_calibration(scene):
    with pytest.raises(CalibrationError):
        estimate(scene[0], None)


def test_transfers_are_monotone(table):
    for m in Mode:
        t = table.transfers[m]
        assert list(t.xs) == sorted(t.xs)
        assert all(b >= a for a, b in zip(t.ys, t.ys[1:]))
        probe = np.linspace(t.offset - 1, t.offset + (t.xs[-1] if t.xs else 0) + 1, 200)
        vals = [t(v) for v in probe]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(0 <= v <= 1 for v in vals)


def test_calibration_is_deterministic(calib_set, table):
    again = calibrate(*calib_set, seed=3, grid=GRID)
    assert again.to_text() == table.to_text()


def test_text_round_trip(tmp_path, table):
    table.save(tmp_path / "c.txt")
    back = CalibrationTable.load(tmp_path / "c.txt")
    assert back.to_text() == table.to_text()
    assert back == table


@pytest.mark.parametrize(
    "text", ["", "hello\n", "sensorsentry-calibration v99\nseed 0\n", "sensorsentry-calibration v1\nseed 0\nfog x\n"]
)
def test_malformed_tables(text):
    with pytest.raises(CalibrationError):
        CalibrationTable.from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(CalibrationError):
        CalibrationTable.load(tmp_path / "none.txt")


def test_identity_transfer():
    stats = [g for g in np.linspace(0.1, 1.0, 10) for _ in range(3)]
    t = fit_transfer(stats, stats, clean_stats=[0.0])
    for v in np.linspace(0, 1, 21):
        assert t(v) == pytest.approx(v, abs=0.1)


def test_transfer_anchored_at_clean_offset():
    t = fit_transfer([0.5, 0.7, 0.9], [0.2, 0.5, 1.0], clean_stats=[0.1, 0.3])
    assert t.offset == 0.3 and t(0.3) == 0.0 and t(0.0) == 0.0 and t(5.0) == 1.0
    flat = fit_transfer([0.1], [0.5], clean_stats=[0.3])
    assert flat(10.0) == 0.0


def test_all_black_reads_as_low_light(table):
    out = estimate(np.zeros((60, 80, 3), np.uint8), table)
    assert out.severities[Mode.LOW_LIGHT] >= 0.9


def test_output_contract(table, calib_set):
    for img in calib_set[0][:3] + [make_scene(999, SIZE)[0]]:
        out = estimate(img, table)
        assert out.severities.shape == (12,) and out.presence.shape == (12,)
        assert np.array_equal(out.presence, (out.severities > PRESENCE_THRESHOLD).astype(float))
        assert out.health == pytest.approx(compute_gshi(out.severities, default_risk_table()), abs=1e-12)
        assert out.uncertainty.shape == img.shape[:2]
        assert out.uncertainty.min() >= 0 and out.uncertainty.max() <= 1


def test_calibration_images_score_clean(table, calib_set):
    for img in calib_set[0]:
        out = estimate(img, table)
        assert out.severities.max() == 0.0 and out.health == 1.0


def test_estimate_is_deterministic(table, scene):
    a, b = estimate(scene[0], table), estimate(scene[0], table)
    assert np.array_equal(a.severities, b.severities) and np.array_equal(a.uncertainty, b.uncertainty)


def test_monitor_sees_rgb_only():
    assert list(inspect.signature(estimate).parameters) == ["img", "calibration", "table"]
    assert list(inspect.signature(extract).parameters) == ["img"]


def test_heavy_fog_raises_fog_severity(table):
    from sensorsentry.synthesis import DegradationParams, apply

    img, depth = make_scene(555, SIZE)
    est = [estimate(apply(img, depth, DegradationParams(Mode.FOG, s, 7)).image, table).severities[Mode.FOG]
           for s in GRID]
    assert est == sorted(est) and est[-1] > 0.5


def test_tile_mean():
    a = np.arange(16.0).reshape(4, 4)
    t = tile_mean(a, 2)
    assert t[0, 0] == t[1, 1] == np.mean([0, 1, 4, 5])
    assert tile_mean(np.ones((5, 7)), 4).shape == (5, 7)


def test_transfer_call_without_points():
    assert Transfer((), (), 0.0)(3.0) == 0.0

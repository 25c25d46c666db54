import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensorsentry.core import (
    PUBLISHED_EXPONENTS,
    BoundingBox,
    DataError,
    Group,
    Mode,
    Regime,
    RiskWeightTable,
    as_unit_map,
    classify_regime,
    default_risk_table,
    read_depth,
    read_image,
    read_mask,
    severity_vector,
    write_depth,
    write_image,
    write_mask,
)


@pytest.mark.parametrize(
    "h, regime",
    [(0.95, Regime.HEALTHY), (0.90, Regime.HEALTHY), (0.8999, Regime.DEGRADED), (0.60, Regime.DEGRADED),
     (0.5999, Regime.CRITICAL), (0.0, Regime.CRITICAL), (1.0, Regime.HEALTHY)],
)
def test_regime_bands(h, regime):
    assert classify_regime(h) is regime


@given(st.floats(0, 1), st.floats(0, 1))
def test_regime_monotone(a, b):
    lo, hi = sorted((a, b))
    assert classify_regime(lo) <= classify_regime(hi)


def test_out_of_range_health_is_clamped():
    assert classify_regime(1.3) is Regime.HEALTHY
    assert classify_regime(-0.2) is Regime.CRITICAL
    with pytest.raises(ValueError):
        classify_regime(float("nan"))


def test_mode_ids_follow_table_order():
    assert [m.key for m in Mode] == [
        "fog", "rain", "snow", "low_light", "motion_blur", "defocus_blur", "glare", "vignetting",
        "sensor_noise", "exposure_shift", "jpeg_compression", "lens_occlusion",
    ]


@pytest.mark.parametrize(
    "text, mode",
    [("fog", Mode.FOG), ("Haze", Mode.FOG), ("LensOcclusion", Mode.LENS_OCCLUSION), ("jpeg", Mode.JPEG_COMPRESSION),
     ("low-light", Mode.LOW_LIGHT), ("MOTION_BLUR", Mode.MOTION_BLUR), ("7", Mode.VIGNETTING)],
)
def test_mode_parse(text, mode):
    assert Mode.parse(text) is mode


def test_mode_parse_rejects_unknown():
    with pytest.raises(ValueError):
        Mode.parse("smoke")


def test_default_table_effective_exponents():
    t = default_risk_table()
    assert t.exponent(Mode.FOG) == pytest.approx(1.30, abs=1e-12)
    assert t.exponent(Mode.LENS_OCCLUSION) == pytest.approx(1.84, abs=1e-12)
    assert t.base_weight[Mode.MOTION_BLUR] == 1.40 and t.scale(Mode.MOTION_BLUR) == 1.10
    assert t.exponent(Mode.MOTION_BLUR) == pytest.approx(1.54, abs=1e-12)
    for m, e in PUBLISHED_EXPONENTS.items():
        if m is Mode.SENSOR_NOISE:
            # 1.10 * 0.95 = 1.045, printed rounded to two places
            assert t.exponent(m) == pytest.approx(1.045, abs=1e-12)
            assert round(t.exponent(m) + 1e-9, 2) == e
        else:
            assert t.exponent(m) == pytest.approx(e, abs=1e-12), m


def test_default_table_covers_every_mode_once():
    t = default_risk_table()
    assert [r[0] for r in t.rows()] == list(Mode)
    assert len(set(t.base_weight)) == 12


def test_table_round_trip_is_bit_exact(tmp_path):
    t = default_risk_table()
    t.save(tmp_path / "w.ini")
    back = RiskWeightTable.load(tmp_path / "w.ini")
    assert back == t
    assert back.exponents().tobytes() == t.exponents().tobytes()


def test_table_rejects_bad_config():
    with pytest.raises(DataError):
        RiskWeightTable.from_config("[modes]\nfog = 1.0\n")
    bad = default_risk_table().to_config().replace("1.3\n", "-1.0\n", 1)
    with pytest.raises(DataError):
        RiskWeightTable.from_config(bad)


def test_table_requires_all_groups():
    base = dict(default_risk_table().base_weight)
    with pytest.raises(ValueError):
        RiskWeightTable(base, {Group.WEATHER: 1.0})


def test_severity_vector_validation():
    v = severity_vector({"fog": 0.4, Mode.RAIN: 0.1})
    assert v[0] == 0.4 and v[1] == 0.1 and v.sum() == pytest.approx(0.5)
    assert not v.flags.writeable
    for bad in ([0.1] * 11, [1.5] + [0] * 11, [float("nan")] * 12, [-0.1] + [0] * 11):
        with pytest.raises(ValueError):
            severity_vector(bad)


def test_bounding_box_validation():
    BoundingBox(0, 0, 4, 4).validate(4, 4)
    assert BoundingBox(1, 2, 4, 5).area == 9
    with pytest.raises(ValueError):
        BoundingBox(2, 0, 2, 4).validate(8, 8)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 9, 4).validate(8, 8)


def test_unit_map_checks():
    with pytest.raises(ValueError):
        as_unit_map(np.full((2, 2), 1.2))
    with pytest.raises(DataError):
        as_unit_map(np.zeros((2, 2)), shape=(3, 3))


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_image_round_trip(tmp_path, rng, suffix):
    img = rng.integers(0, 256, (7, 9, 3), dtype=np.uint8)
    write_image(tmp_path / f"a{suffix}", img)
    assert np.array_equal(read_image(tmp_path / f"a{suffix}"), img)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_depth_round_trip(tmp_path, rng, suffix):
    d = rng.random((5, 6))
    write_depth(tmp_path / f"d{suffix}", d)
    back = read_depth(tmp_path / f"d{suffix}")
    assert np.max(np.abs(back - d)) <= 0.5 / 65535 + 1e-12


def test_mask_round_trip_within_quantization(tmp_path, rng):
    m = rng.random((6, 6))
    write_mask(tmp_path / "m.png", m)
    assert np.max(np.abs(read_mask(tmp_path / "m.png") - m)) <= 0.5 / 255 + 1e-12


def test_unreadable_image_is_data_error(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        read_image(tmp_path / "x.png")

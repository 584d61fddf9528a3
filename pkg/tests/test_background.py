import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsatlink import background as bg
from qsatlink.atmosphere import default_table

H = 6.62607015e-34
C = 299792458.0


def test_downlink_zero_radiance():
    assert bg.downlink_background(bg.SkyBrightness(0, 0), bg.ReceiverView(0.25), 670) == 0


def test_downlink_area_scaling():
    sky = bg.SkyBrightness()
    a = bg.downlink_background(sky, bg.ReceiverView(0.1), 670)
    b = bg.downlink_background(sky, bg.ReceiverView(0.2), 670)
    assert b == pytest.approx(4 * a)


def test_downlink_hand_oracle():
    # (H_nat + H_art) * bandwidth * pi FOV^2 * pi r^2 / (h c / lambda)
    h_nat, h_art, fov, r, lam = 1.5e-7, 2.5e-7, 50e-6, 0.25, 670e-9
    oracle = (h_nat + h_art) * 1.0 * math.pi * fov**2 * math.pi * r**2 / (H * C / lam)
    got = bg.downlink_background(bg.SkyBrightness(h_nat, h_art), bg.ReceiverView(r), 670)
    assert got == pytest.approx(oracle, rel=0.05)
    assert got == pytest.approx(oracle, rel=1e-9)


def test_bandwidth_linearity():
    sky = bg.SkyBrightness()
    a = bg.downlink_background(sky, bg.ReceiverView(0.25, filter_bandwidth=1.0), 670)
    b = bg.downlink_background(sky, bg.ReceiverView(0.25, filter_bandwidth=3.0), 670)
    assert b == pytest.approx(3 * a)


def test_planck_peak_follows_wien():
    lam = np.linspace(300, 800, 50001)
    peak = lam[np.argmax(bg.planck_radiance(lam, 5778.0))]
    wien = 2.897771955e-3 / 5778.0 * 1e9
    assert peak == pytest.approx(wien, abs=0.05)
    assert 500 < peak < 503


def test_natural_background_linear_in_albedo():
    v = bg.ReceiverView(0.15)
    assert bg.uplink_natural_background(8e5, 0.9, v, 785, earth_albedo=0.0) == 0.0
    a = bg.uplink_natural_background(8e5, 0.9, v, 785, earth_albedo=0.15)
    b = bg.uplink_natural_background(8e5, 0.9, v, 785, earth_albedo=0.3)
    assert b == pytest.approx(2 * a)


def test_footprint_shrinks_toward_zenith():
    areas = [bg.footprint_area(600e3 / math.sin(math.radians(e)), math.radians(e), 50e-6)
             for e in (20, 45, 90)]
    assert areas[0] > areas[1] > areas[2]


def test_moon_albedo_table():
    assert bg.moon_albedo(0.0) == 0.0
    assert bg.moon_albedo(0.5) == pytest.approx(0.012)
    assert bg.moon_albedo(1.0) > bg.moon_albedo(0.75) > bg.moon_albedo(0.25)


def _uniform_grid(value):
    lat = np.linspace(44, 47, 31)
    lon = np.linspace(-77, -74, 31)
    return bg.LightPollutionGrid(lat, lon, np.full((31, 31), value))


def test_pollution_zero_grid():
    v = bg.ReceiverView(0.15)
    assert bg.uplink_pollution_background(_uniform_grid(0.0), bg.DEFAULT_SITE, 8e5, 0.9, v, 785) == 0


def test_pollution_uniform_grid_closed_form():
    L, d, el, r, lam, e_n = 3e-6, 8e5, 0.9, 0.15, 785, 0.6
    v = bg.ReceiverView(r)
    got = bg.uplink_pollution_background(_uniform_grid(L), bg.DEFAULT_SITE, d, el, v, lam, e_n)
    footprint = math.pi * (50e-6 * d) ** 2 / math.sin(el)
    omega = math.pi * r**2 / d**2
    oracle = e_n * L * footprint * omega / (H * C / (lam * 1e-9))
    assert got == pytest.approx(oracle, rel=0.01)


def test_footprint_outside_grid():
    with pytest.raises(ValueError):
        bg.uplink_pollution_background(_uniform_grid(1e-6), (50.0, -75.0), 8e5, 0.9,
                                       bg.ReceiverView(0.15), 785)


def test_total_is_sum():
    assert bg.total_background(0.0, 0.0) == 0
    assert bg.total_background(1.5, 2.25, 3.0) == 6.75


def test_default_scenario_magnitudes():
    atm = default_table()
    grid = bg.default_pollution_grid()
    down = bg.detected_per_detector(
        bg.downlink_background(bg.SkyBrightness(), bg.ReceiverView(0.25), 670), 0.68)
    ups = []
    for el in (15, 30, 50, 90):
        e = math.radians(el)
        d = 600e3 / math.sin(e)
        view = bg.ReceiverView(0.15)
        ext = bg.uplink_extinction(atm, 785, e)
        moon_ext = ext * bg.uplink_extinction(atm, 785, math.radians(45))
        rate = bg.total_background(
            bg.uplink_natural_background(d, e, view, 785, extinction=moon_ext),
            bg.uplink_pollution_background(grid, bg.DEFAULT_SITE, d, e, view, 785, ext),
        )
        ups.append(float(bg.detected_per_detector(rate, 0.62)))
    assert 150 <= down <= 250
    assert all(100 <= u <= 1000 for u in ups)
    assert min(ups) > 2.5 * down


def test_raster_conversion_round_trip(tmp_path):
    src = tmp_path / "r.asc"
    src.write_text(
        "ncols 3\nnrows 2\nxllcorner -76\nyllcorner 45\ncellsize 0.5\nNODATA_value -9999\n"
        "1 2 3\n4 -9999 6\n"
    )
    dst = tmp_path / "g.csv"
    grid = bg.convert_esri_ascii(src, dst, scale=1e-6)
    back = bg.load_pollution_grid(dst)
    np.testing.assert_allclose(back.radiance, grid.radiance)
    # bottom raster row is the southernmost latitude
    np.testing.assert_allclose(back.radiance[0], [4e-6, 0.0, 6e-6])
    np.testing.assert_allclose(back.latitudes, [45.25, 45.75])


@given(scale=st.floats(0.0, 10.0))
def test_pollution_linear_in_radiance(scale):
    v = bg.ReceiverView(0.15)
    base = bg.uplink_pollution_background(_uniform_grid(1e-6), bg.DEFAULT_SITE, 8e5, 0.9, v, 785)
    scaled = bg.uplink_pollution_background(_uniform_grid(1e-6 * scale), bg.DEFAULT_SITE, 8e5, 0.9,
                                            v, 785)
    assert scaled == pytest.approx(scale * base, rel=1e-12, abs=1e-12)

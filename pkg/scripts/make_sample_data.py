"""Regenerate the representative sample tables bundled in src/qsatlink/data.

The atmosphere table is a simple optical-depth model (Rayleigh + rural
aerosol + small absorption terms) evaluated with the Kasten-Young air mass.
It is meant to reproduce the shape of a 5 km visibility rural sea-level
atmosphere, not to replace a radiative-transfer code.
"""
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "qsatlink" / "data"

WAVELENGTHS = np.array([405, 532, 670, 785, 830, 1060, 1550])
ELEVATIONS = np.arange(10, 91, 10)
# extra absorption optical depth at zenith (ozone Chappuis near 600 nm, water near 830 nm)
ABSORPTION = {405: 0.0, 532: 0.03, 670: 0.02, 785: 0.005, 830: 0.05, 1060: 0.01, 1550: 0.03}


def airmass(el_deg):
    el = np.asarray(el_deg, float)
    return 1.0 / (np.sin(np.radians(el)) + 0.50572 * (el + 6.07995) ** -1.6364)


def zenith_depth(wl_nm):
    um = wl_nm / 1000.0
    rayleigh = 0.0088 * um ** -4.05
    aerosol = 0.45 * (wl_nm / 550.0) ** -1.0
    return rayleigh + aerosol + ABSORPTION[int(wl_nm)]


def write_atmosphere():
    rows = [np.exp(-zenith_depth(w) * airmass(ELEVATIONS)) for w in WAVELENGTHS]
    lines = [
        "# wavelengths_nm: " + " ".join(str(w) for w in WAVELENGTHS),
        "# elevations_deg: " + " ".join(str(e) for e in ELEVATIONS),
        "# provenance: representative rural sea-level atmosphere, 5 km visibility; "
        "optical-depth model (Rayleigh + aerosol Angstrom 1.0 + absorption) with "
        "Kasten-Young air mass; approximate, not radiative-transfer output",
    ]
    lines += [",".join(f"{v:.5f}" for v in r) for r in rows]
    (OUT / "atmosphere_rural_5km.csv").write_text("\n".join(lines) + "\n")


def write_detector(name, kind, eff, note):
    lines = [
        "# wavelengths_nm: " + " ".join(str(w) for w in WAVELENGTHS),
        f"# kind: {kind}",
        f"# provenance: {note}",
    ]
    lines += [f"{e:.4f}" for e in eff]
    (OUT / name).write_text("\n".join(lines) + "\n")


def write_moon_albedo():
    # effective lunar albedo versus illuminated fraction; the opposition surge
    # makes the full moon much brighter than twice the half moon
    table = [(0.0, 0.0), (0.25, 0.004), (0.5, 0.012), (0.75, 0.035), (1.0, 0.12)]
    lines = ["# phase_fraction,albedo",
             "# provenance: representative effective albedo versus lunar phase"]
    lines += [f"{a},{b}" for a, b in table]
    (OUT / "moon_albedo.csv").write_text("\n".join(lines) + "\n")


def write_light_pollution():
    lat = np.round(np.arange(44.5, 46.5 + 1e-9, 0.02), 4)
    lon = np.round(np.arange(-77.0, -75.0 + 1e-9, 0.02), 4)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    # rural floor plus a city-sized bright region and two small towns
    x = (lo + 75.70) * np.cos(np.radians(45.4))
    y = la - 45.42
    rad = 2e-7 + 1.4e-5 * np.exp(-(x**2 + y**2) / (2 * 0.12**2))
    for tlat, tlon, amp in ((45.02, -75.65, 2e-6), (45.90, -76.55, 1e-6)):
        rad += amp * np.exp(-(((lo - tlon) * 0.7) ** 2 + (la - tlat) ** 2) / (2 * 0.03**2))
    lines = [
        "# latitudes_deg: " + " ".join(f"{v:.2f}" for v in lat),
        "# longitudes_deg: " + " ".join(f"{v:.2f}" for v in lon),
        "# provenance: synthetic upward spectral radiance (W m^-2 sr^-1 nm^-1) around a "
        "city of Ottawa's size; representative only, not satellite night-lights data",
    ]
    lines += [",".join(f"{v:.4e}" for v in row) for row in rad]
    (OUT / "light_pollution_ottawa.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    write_moon_albedo()
    write_light_pollution()
    OUT.mkdir(parents=True, exist_ok=True)
    write_atmosphere()
    write_detector(
        "detector_thick_apd.csv", "thick-apd",
        [0.25, 0.55, 0.68, 0.62, 0.55, 0.05, 0.001],
        "representative thick silicon APD photon detection efficiency",
    )
    write_detector(
        "detector_thin_apd.csv", "thin-apd",
        [0.40, 0.48, 0.30, 0.15, 0.11, 0.01, 0.0005],
        "representative thin silicon APD photon detection efficiency",
    )

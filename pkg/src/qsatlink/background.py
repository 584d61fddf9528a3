"""Background photon rates at the receiver.

Downlink: night-sky radiance (natural + artificial) collected by the ground
telescope.  Uplink: the satellite looks down at a ground footprint lit by
moonlight and by upward light pollution.  All radiances are spectral
(per nm) and treated as flat across the receiver filter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import constants as const

from .atmosphere import AtmosphereTable, TableError, transmittance

SUN_TEMPERATURE = 5778.0
SUN_RADIUS = 6.957e8
ASTRONOMICAL_UNIT = 1.495978707e11
MOON_RADIUS = 1.7374e6
EARTH_MOON_DISTANCE = 3.844e8
EARTH_ALBEDO = 0.3
ANALYZER_TRANSMISSION = 10 ** (-0.3)


def photon_energy(wavelength_nm: float) -> float:
    return const.h * const.c / (wavelength_nm * 1e-9)


def planck_radiance(wavelength_nm, temperature: float = SUN_TEMPERATURE):
    """Blackbody spectral radiance B_lambda in W m^-2 sr^-1 nm^-1."""
    lam = np.asarray(wavelength_nm, float) * 1e-9
    x = const.h * const.c / (lam * const.k * temperature)
    return 2 * const.h * const.c**2 / lam**5 / np.expm1(x) * 1e-9


@dataclass(frozen=True)
class SkyBrightness:
    """Spectral sky radiance seen from the ground, W m^-2 sr^-1 nm^-1."""

    h_nat: float = 1.5e-7
    h_art: float = 2.5e-7

    def __post_init__(self):
        if self.h_nat < 0 or self.h_art < 0:
            raise ValueError("sky radiance must be >= 0")


@dataclass(frozen=True)
class ReceiverView:
    telescope_radius: float
    fov: float = 50e-6
    filter_bandwidth: float = 1.0
    window: float = 0.5e-9

    def __post_init__(self):
        if self.fov <= 0 or self.filter_bandwidth <= 0 or self.telescope_radius <= 0:
            raise ValueError("fov, bandwidth and radius must be > 0")


@dataclass(frozen=True)
class Moon:
    phase: float = 0.5          # illuminated fraction, 0 new .. 1 full
    elevation: float = math.radians(45)

    def __post_init__(self):
        if not 0 <= self.phase <= 1:
            raise ValueError("phase must be in [0, 1]")
        if not 0 < self.elevation <= math.pi / 2:
            raise ValueError("moon must be above the horizon")


@dataclass(frozen=True)
class LightPollutionGrid:
    latitudes: np.ndarray       # cell centres, deg, ascending
    longitudes: np.ndarray      # cell centres, deg, ascending
    radiance: np.ndarray        # W m^-2 sr^-1 nm^-1, shape (n_lat, n_lon)
    provenance: str = ""

    def __post_init__(self):
        if self.radiance.shape != (self.latitudes.size, self.longitudes.size):
            raise TableError("radiance matrix does not match lat/lon axes")
        if np.any(np.diff(self.latitudes) <= 0) or np.any(np.diff(self.longitudes) <= 0):
            raise TableError("lat/lon axes must be strictly ascending")
        if np.any(~np.isfinite(self.radiance)) or self.radiance.min() < 0:
            raise TableError("radiance must be finite and >= 0")

    @property
    def bounds(self):
        dlat = self.latitudes[1] - self.latitudes[0] if self.latitudes.size > 1 else 0
        dlon = self.longitudes[1] - self.longitudes[0] if self.longitudes.size > 1 else 0
        return (self.latitudes[0] - dlat / 2, self.latitudes[-1] + dlat / 2,
                self.longitudes[0] - dlon / 2, self.longitudes[-1] + dlon / 2)

    def sample(self, lat, lon):
        """Nearest-cell radiance at the given points."""
        lat, lon = np.asarray(lat, float), np.asarray(lon, float)
        lo_lat, hi_lat, lo_lon, hi_lon = self.bounds
        if np.any((lat < lo_lat) | (lat > hi_lat) | (lon < lo_lon) | (lon > hi_lon)):
            raise ValueError("footprint extends outside the light-pollution grid")
        i = np.abs(lat[..., None] - self.latitudes).argmin(axis=-1)
        j = np.abs(lon[..., None] - self.longitudes).argmin(axis=-1)
        return self.radiance[i, j]


def footprint_area(distance: float, elevation: float, fov: float) -> float:
    """Ground area seen by a nadir-ish pointing receiver with half-angle ``fov``."""
    return math.pi * (fov * distance) ** 2 / math.sin(elevation)


def receiver_solid_angle(view: ReceiverView, distance: float) -> float:
    return math.pi * view.telescope_radius**2 / distance**2


def downlink_background(sky: SkyBrightness, view: ReceiverView, wavelength: float) -> float:
    """Sky photons/s entering the ground telescope's field of view."""
    power = (sky.h_nat + sky.h_art) * view.filter_bandwidth * math.pi * view.fov**2 \
        * math.pi * view.telescope_radius**2
    return power / photon_energy(wavelength)


def load_moon_albedo(path=None):
    """Piecewise-linear moon albedo versus illuminated fraction."""
    if path is None:
        with resources.as_file(resources.files("qsatlink") / "data" / "moon_albedo.csv") as p:
            data = np.loadtxt(p, delimiter=",", comments="#")
    else:
        data = np.loadtxt(path, delimiter=",", comments="#")
    return data[:, 0], data[:, 1]


def moon_albedo(phase: float) -> float:
    x, y = load_moon_albedo()
    return float(np.interp(phase, x, y))


def moon_photon_rate(wavelength: float, bandwidth: float, albedo: float) -> float:
    """Photons/s reflected by the Moon in the filter band.

    Solar spectral irradiance at the Moon (blackbody disk of the Sun at one
    astronomical unit) times albedo times the Moon's cross-section.
    """
    irradiance = math.pi * planck_radiance(wavelength) * (SUN_RADIUS / ASTRONOMICAL_UNIT) ** 2
    return albedo * irradiance * bandwidth / photon_energy(wavelength) * math.pi * MOON_RADIUS**2


def uplink_natural_background(
    distance: float,
    elevation: float,
    view: ReceiverView,
    wavelength: float,
    moon: Moon = Moon(),
    earth_albedo: float = EARTH_ALBEDO,
    extinction: float = 1.0,
    *,
    albedo: float | None = None,
) -> float:
    """Moonlight reflected off the ground footprint into the satellite telescope.

    ``extinction`` is the combined transmittance of both atmospheric passes
    (Moon to ground, ground to satellite).  Both reflections are Lambertian,
    and the lunar illumination of the footprint is reduced by the sine of
    the Moon's elevation.
    """
    a_moon = moon_albedo(moon.phase) if albedo is None else albedo
    n_moon = moon_photon_rate(wavelength, view.filter_bandwidth, a_moon)
    footprint = footprint_area(distance, elevation, view.fov)
    on_ground = n_moon / math.pi * footprint / EARTH_MOON_DISTANCE**2 * math.sin(moon.elevation)
    into_receiver = earth_albedo * on_ground / math.pi * receiver_solid_angle(view, distance)
    return extinction * into_receiver


def footprint_mean_radiance(grid: LightPollutionGrid, site, radius: float, n_samples: int = 16) -> float:
    """Grid radiance averaged over a disc of ``radius`` metres centred on ``site``."""
    lat0, lon0 = site
    rr, th = np.meshgrid(radius * np.sqrt((np.arange(n_samples) + 0.5) / n_samples),
                         np.linspace(0, 2 * np.pi, n_samples, endpoint=False))
    dlat = np.degrees(rr * np.cos(th) / 6.371e6)
    dlon = np.degrees(rr * np.sin(th) / (6.371e6 * math.cos(math.radians(lat0))))
    return float(np.mean(grid.sample(lat0 + dlat, lon0 + dlon)))


def uplink_pollution_background(
    grid: LightPollutionGrid,
    site: tuple[float, float],
    distance: float,
    elevation: float,
    view: ReceiverView,
    wavelength: float,
    extinction: float = 1.0,
    *,
    n_samples: int = 16,
) -> float:
    """Upward light pollution from the footprint into the satellite telescope.

    The footprint is taken as a disc of equal area centred on ``site``;
    grid radiance is averaged over a polar sample pattern.
    """
    area = footprint_area(distance, elevation, view.fov)
    mean_l = footprint_mean_radiance(grid, site, math.sqrt(area / math.pi), n_samples)
    power = mean_l * view.filter_bandwidth * area * receiver_solid_angle(view, distance)
    return extinction * power / photon_energy(wavelength)


def total_background(*components: float) -> float:
    return float(sum(components))


def detected_per_detector(photon_rate, detector_efficiency: float, n_detectors: int = 4):
    """Background clicks/s per detector behind the lossy four-way analyzer."""
    return np.asarray(photon_rate) * detector_efficiency * ANALYZER_TRANSMISSION / n_detectors


# ---------------------------------------------------------------- grid files

def load_pollution_grid(path) -> LightPollutionGrid:
    header, rows = {}, []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            k, sep, v = s[1:].partition(":")
            if sep:
                header[k.strip()] = v.strip()
            continue
        try:
            rows.append([float(x) for x in s.split(",")])
        except ValueError:
            raise TableError(f"{path}:{lineno}: cannot parse row") from None
    if not rows:
        raise TableError(f"{path}: no data rows")
    for key in ("latitudes_deg", "longitudes_deg"):
        if key not in header:
            raise TableError(f"{path}: missing '# {key}:' header")
    lat = np.array(header["latitudes_deg"].split(), float)
    lon = np.array(header["longitudes_deg"].split(), float)
    return LightPollutionGrid(lat, lon, np.array(rows), header.get("provenance", ""))


def save_pollution_grid(grid: LightPollutionGrid, path):
    lines = [
        "# latitudes_deg: " + " ".join(f"{v:.6f}" for v in grid.latitudes),
        "# longitudes_deg: " + " ".join(f"{v:.6f}" for v in grid.longitudes),
        f"# provenance: {grid.provenance}",
    ]
    lines += [",".join(f"{v:.6e}" for v in row) for row in grid.radiance]
    Path(path).write_text("\n".join(lines) + "\n")


def default_pollution_grid() -> LightPollutionGrid:
    with resources.as_file(resources.files("qsatlink") / "data" / "light_pollution_ottawa.csv") as p:
        return load_pollution_grid(p)


DEFAULT_SITE = (45.30, -75.90)


def convert_esri_ascii(src, dst, scale: float = 1.0, provenance: str = "") -> LightPollutionGrid:
    """Convert an ESRI ASCII raster (e.g. night-lights radiance) to grid CSV.

    Cell values are multiplied by ``scale`` to reach W m^-2 sr^-1 nm^-1;
    NODATA cells become 0.
    """
    lines = Path(src).read_text().splitlines()
    hdr = {}
    k = 0
    while k < len(lines) and lines[k].split() and lines[k].split()[0][0].isalpha():
        key, val = lines[k].split()[:2]
        hdr[key.lower()] = float(val)
        k += 1
    for key in ("ncols", "nrows", "cellsize"):
        if key not in hdr:
            raise TableError(f"{src}: missing {key} in raster header")
    ncols, nrows, cell = int(hdr["ncols"]), int(hdr["nrows"]), hdr["cellsize"]
    if "xllcenter" in hdr:
        x0, y0 = hdr["xllcenter"], hdr["yllcenter"]
    else:
        x0, y0 = hdr["xllcorner"] + cell / 2, hdr["yllcorner"] + cell / 2
    data = np.array(" ".join(lines[k:]).split(), float)
    if data.size != ncols * nrows:
        raise TableError(f"{src}: expected {ncols * nrows} values, found {data.size}")
    data = data.reshape(nrows, ncols)[::-1]      # raster rows run north to south
    if "nodata_value" in hdr:
        data = np.where(data == hdr["nodata_value"], 0.0, data)
    grid = LightPollutionGrid(y0 + cell * np.arange(nrows), x0 + cell * np.arange(ncols),
                              data * scale, provenance or f"converted from {Path(src).name}")
    save_pollution_grid(grid, dst)
    return grid


def uplink_extinction(atm: AtmosphereTable, wavelength: float, elevation: float) -> float:
    return transmittance(atm, wavelength, elevation)

"""Idealised sun-synchronous LEO and nighttime pass generation.

Circular two-body motion on a spherical Earth with the ascending node
regressing at the sun-synchronous rate (the secular J2 effect).  Sun
position and sidereal time use the usual low-precision almanac formulas,
which are ample for pass statistics.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

EARTH_RADIUS = 6378137.0
MU_EARTH = 3.986004418e14
J2 = 1.08262668e-3
EARTH_ROTATION = 7.2921159e-5
TROPICAL_YEAR_S = 365.2421897 * 86400.0
J2000 = datetime(2000, 1, 1, 12, tzinfo=timezone.utc)


@dataclass(frozen=True)
class OrbitSpec:
    altitude: float = 600e3
    node_type: str = "noon-midnight"
    epoch: datetime = datetime(2026, 1, 1, tzinfo=timezone.utc)

    def __post_init__(self):
        if not 300e3 <= self.altitude <= 2000e3:
            raise ValueError("altitude must be within 300-2000 km")
        if self.node_type not in ("noon-midnight", "dawn-dusk"):
            raise ValueError("node_type must be 'noon-midnight' or 'dawn-dusk'")

    @property
    def radius(self) -> float:
        return EARTH_RADIUS + self.altitude

    @property
    def period(self) -> float:
        return 2 * math.pi * math.sqrt(self.radius**3 / MU_EARTH)

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.radius**3)

    @property
    def node_rate(self) -> float:
        """Sun-synchronous nodal regression rate (rad/s)."""
        return 2 * math.pi / TROPICAL_YEAR_S

    @property
    def inclination(self) -> float:
        c = -self.node_rate / (1.5 * J2 * (EARTH_RADIUS / self.radius) ** 2 * self.mean_motion)
        return math.acos(c)


@dataclass
class PassProfile:
    start: datetime
    t: np.ndarray               # s since start
    distance: np.ndarray        # m
    elevation: np.ndarray       # rad
    threshold: float = math.radians(10)
    sat_ecef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.t.size < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("pass needs at least two samples with increasing time")

    @property
    def usable(self) -> np.ndarray:
        return self.elevation > self.threshold

    @property
    def cadence(self) -> float:
        return float(np.median(np.diff(self.t)))

    @property
    def duration_usable(self) -> float:
        return float(self.usable.sum() * self.cadence)

    @property
    def max_elevation(self) -> float:
        return float(self.elevation.max())

    @property
    def peak_time(self) -> datetime:
        return self.start + timedelta(seconds=float(self.t[np.argmax(self.elevation)]))


# ---------------------------------------------------------------- astronomy

def _days_since_j2000(when: datetime) -> float:
    return (when - J2000).total_seconds() / 86400.0


def gmst(days):
    """Greenwich mean sidereal time (rad) for days since J2000."""
    return np.radians((280.46061837 + 360.98564736629 * np.asarray(days)) % 360.0)


def sun_ra_dec(days):
    """Low-precision solar right ascension and declination (rad)."""
    n = np.asarray(days, float)
    L = np.radians(280.460 + 0.9856474 * n)
    g = np.radians(357.528 + 0.9856003 * n)
    lam = L + np.radians(1.915) * np.sin(g) + np.radians(0.020) * np.sin(2 * g)
    eps = np.radians(23.439 - 4e-7 * n)
    ra = np.arctan2(np.cos(eps) * np.sin(lam), np.cos(lam))
    dec = np.arcsin(np.sin(eps) * np.sin(lam))
    return ra, dec


def sun_elevation(days, lat, lon):
    """Solar elevation (rad) at a site given in radians."""
    ra, dec = sun_ra_dec(days)
    ha = gmst(days) + lon - ra
    return np.arcsin(np.sin(lat) * np.sin(dec) + np.cos(lat) * np.cos(dec) * np.cos(ha))


# ---------------------------------------------------------------- geometry

def site_ecef(lat, lon, alt=0.0):
    r = EARTH_RADIUS + alt
    return np.array([r * math.cos(lat) * math.cos(lon),
                     r * math.cos(lat) * math.sin(lon),
                     r * math.sin(lat)])


def geodetic_to_ecef(lat, lon, alt):
    """Spherical-Earth conversion (degrees in, metres out), vectorised."""
    lat, lon = np.radians(lat), np.radians(lon)
    r = EARTH_RADIUS + np.asarray(alt, float)
    return np.stack([r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon),
                     r * np.sin(lat)], axis=-1)


def ecef_to_geodetic(xyz):
    xyz = np.asarray(xyz, float)
    r = np.linalg.norm(xyz, axis=-1)
    lat = np.degrees(np.arcsin(xyz[..., 2] / r))
    lon = np.degrees(np.arctan2(xyz[..., 1], xyz[..., 0]))
    return lat, lon, r - EARTH_RADIUS


def look_angles(sat_ecef, site):
    """Slant range (m) and elevation (rad) of satellites seen from ``site`` (ECEF)."""
    up = site / np.linalg.norm(site)
    rel = sat_ecef - site
    rng = np.linalg.norm(rel, axis=-1)
    return rng, np.arcsin(np.clip(rel @ up / rng, -1.0, 1.0))


class Propagator:
    """Circular sun-synchronous orbit in Earth-fixed coordinates."""

    def __init__(self, orbit: OrbitSpec):
        self.orbit = orbit
        d0 = _days_since_j2000(orbit.epoch)
        ra_sun, _ = sun_ra_dec(d0)
        # noon/midnight: ascending node on the noon meridian; dawn/dusk 6 h off
        offset = 0.0 if orbit.node_type == "noon-midnight" else math.pi / 2
        self.raan0 = float(ra_sun) + offset
        self.d0 = d0

    def ecef(self, t):
        """Satellite ECEF position (m) at ``t`` seconds after the epoch."""
        o = self.orbit
        t = np.asarray(t, float)
        u = o.mean_motion * t
        raan = self.raan0 + o.node_rate * t
        inc = o.inclination
        cu, su = np.cos(u), np.sin(u)
        x = cu * np.cos(raan) - su * np.sin(raan) * math.cos(inc)
        y = cu * np.sin(raan) + su * np.cos(raan) * math.cos(inc)
        z = su * math.sin(inc)
        theta = gmst(self.d0 + t / 86400.0)
        ct, st = np.cos(theta), np.sin(theta)
        r = o.radius
        return np.stack([r * (ct * x + st * y), r * (-st * x + ct * y), r * z], axis=-1)


def _segments(mask):
    """(start, stop) index pairs of True runs."""
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]))


def propagate_passes(
    orbit: OrbitSpec = OrbitSpec(),
    site: tuple[float, float] = (45.30, -75.90),
    year: int | None = None,
    *,
    days: float = 365.0,
    threshold: float = math.radians(10),
    night_sun_elevation: float = math.radians(-6),
    coarse_step: float = 20.0,
) -> list[PassProfile]:
    """All nighttime passes with a usable (above ``threshold``) portion.

    ``site`` is (lat, lon) in degrees.  The scan starts at the orbit epoch,
    or at 1 January of ``year`` when given.  Passes are found on a coarse
    grid and then sampled at 1 s; a pass counts as nighttime when the Sun
    is below ``night_sun_elevation`` at the site at the pass peak.
    """
    if year is not None:
        orbit = OrbitSpec(orbit.altitude, orbit.node_type,
                          datetime(year, 1, 1, tzinfo=timezone.utc))
    lat, lon = math.radians(site[0]), math.radians(site[1])
    if abs(site[0]) > 180 - math.degrees(orbit.inclination) + 25:
        raise ValueError("site latitude not covered by the orbit")
    prop = Propagator(orbit)
    gs = site_ecef(lat, lon)
    total = days * 86400.0
    tc = np.arange(0.0, total, coarse_step)
    el = np.concatenate([look_angles(prop.ecef(tc[k:k + 200_000]), gs)[1]
                         for k in range(0, tc.size, 200_000)])
    passes = []
    for a, b in _segments(el > 0):
        lo = max(tc[a] - coarse_step, 0.0)
        hi = min(tc[b - 1] + coarse_step, total)
        tf = np.arange(math.floor(lo), math.ceil(hi) + 1.0, 1.0)
        sat = prop.ecef(tf)
        rng, elf = look_angles(sat, gs)
        segs = _segments(elf > 0)
        if not segs:
            continue
        i, j = max(segs, key=lambda s: s[1] - s[0])
        if j - i < 2 or elf[i:j].max() <= threshold:
            continue
        k = i + int(np.argmax(elf[i:j]))
        if sun_elevation(prop.d0 + tf[k] / 86400.0, lat, lon) >= night_sun_elevation:
            continue
        start = orbit.epoch + timedelta(seconds=float(tf[i]))
        passes.append(PassProfile(start, tf[i:j] - tf[i], rng[i:j], elf[i:j],
                                  threshold, sat[i:j]))
    return passes


def classify_passes(passes) -> dict:
    """Best, upper-quartile and median passes by usable duration."""
    if not passes:
        raise ValueError("no passes to classify")
    ranked = sorted(passes, key=lambda p: p.duration_usable, reverse=True)
    n = len(ranked)
    return {
        "best": ranked[0],
        "upper_quartile": ranked[min(n - 1, n // 4)],
        "median": ranked[min(n - 1, n // 2)],
    }


# ---------------------------------------------------------------- ephemeris files

EPHEMERIS_HEADER = ["utc_iso8601", "lat_deg", "lon_deg", "alt_m"]


def export_ephemeris(passes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPHEMERIS_HEADER)
        for p in passes:
            if p.sat_ecef is None:
                raise ValueError("pass carries no satellite positions")
            lat, lon, alt = ecef_to_geodetic(p.sat_ecef)
            for dt, a, b, c in zip(p.t, lat, lon, alt):
                when = p.start + timedelta(seconds=float(dt))
                w.writerow([when.strftime("%Y-%m-%dT%H:%M:%S.%fZ"), f"{a:.9f}", f"{b:.9f}",
                            f"{c:.4f}"])


def _parse_time(s):
    s = s.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    t = datetime.fromisoformat(s)
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


def import_ephemeris(path, site=(45.30, -75.90), threshold=math.radians(10)) -> list[PassProfile]:
    """Read a satellite track and cut it into passes over ``site``.

    A new pass starts wherever the satellite is below the horizon or the
    time step jumps by more than five nominal steps.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row or row[0].startswith("#") or row[0] == EPHEMERIS_HEADER[0]:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append((_parse_time(row[0]), float(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two samples to form a pass")
    t0 = rows[0][0]
    t = np.array([(r[0] - t0).total_seconds() for r in rows])
    if np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 2
        raise ValueError(f"{path}: timestamps not strictly increasing near data row {k}")
    sat = geodetic_to_ecef(np.array([r[1] for r in rows]), np.array([r[2] for r in rows]),
                           np.array([r[3] for r in rows]))
    gs = site_ecef(math.radians(site[0]), math.radians(site[1]))
    rng, el = look_angles(sat, gs)
    step = float(np.median(np.diff(t)))
    split = np.concatenate([[False], np.diff(t) > 5 * step])
    passes = []
    run_id = np.cumsum(split)
    for rid in np.unique(run_id):
        idx = np.nonzero(run_id == rid)[0]
        for a, b in _segments(el[idx] > 0):
            sel = idx[a:b]
            if sel.size < 2:
                continue
            start = t0 + timedelta(seconds=float(t[sel[0]]))
            passes.append(PassProfile(start, t[sel] - t[sel[0]], rng[sel], el[sel],
                                      threshold, sat[sel]))
    return passes


def write_passes_csv(passes, path):
    """Per-pass summary table."""
    p = Path(path)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pass", "start_utc", "max_elevation_deg", "usable_duration_s",
                    "min_distance_m"])
        for i, q in enumerate(passes):
            w.writerow([i, q.start.isoformat(), f"{math.degrees(q.max_elevation):.3f}",
                        f"{q.duration_usable:.0f}", f"{q.distance.min():.1f}"])

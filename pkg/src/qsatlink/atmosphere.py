"""Atmospheric transmittance tables and single-photon detector efficiency curves.

Both are stored as small CSV files with ``# key: values`` header lines
followed by a row-major matrix (one row per wavelength).  Detector curves
use the same layout with a single column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

_MONOTONE_SLACK = 1e-3


class TableError(ValueError):
    """Malformed or physically invalid table file."""


@dataclass(frozen=True)
class AtmosphereTable:
    wavelengths: np.ndarray     # nm, ascending
    elevations: np.ndarray      # rad, ascending
    transmittance: np.ndarray   # shape (n_wavelengths, n_elevations)
    provenance: str = ""

    def __post_init__(self):
        t = self.transmittance
        if t.shape != (self.wavelengths.size, self.elevations.size):
            raise TableError(f"matrix shape {t.shape} does not match grid")
        if np.any(np.diff(self.wavelengths) <= 0) or np.any(np.diff(self.elevations) <= 0):
            raise TableError("grid axes must be strictly ascending")
        if np.any(~np.isfinite(t)) or t.min() < 0 or t.max() > 1:
            raise TableError("transmittance must lie in [0, 1]")
        drops = np.diff(t, axis=1)
        if drops.min() < -_MONOTONE_SLACK:
            i, j = np.unravel_index(np.argmin(drops), drops.shape)
            raise TableError(
                f"transmittance decreases toward zenith at {self.wavelengths[i]:g} nm "
                f"between {math.degrees(self.elevations[j]):g} and "
                f"{math.degrees(self.elevations[j + 1]):g} deg"
            )


@dataclass(frozen=True)
class DetectorCurve:
    wavelengths: np.ndarray
    efficiency: np.ndarray
    kind: str = "thick-apd"

    def __post_init__(self):
        if self.kind not in ("thin-apd", "thick-apd"):
            raise TableError(f"unknown detector kind {self.kind!r}")
        if self.efficiency.shape != self.wavelengths.shape:
            raise TableError("one efficiency per wavelength")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise TableError("wavelengths must be strictly ascending")
        if self.efficiency.min() < 0 or self.efficiency.max() > 1:
            raise TableError("efficiency must lie in [0, 1]")

    def __call__(self, wavelength_nm: float) -> float:
        w = self.wavelengths
        if not w[0] <= wavelength_nm <= w[-1]:
            raise ValueError(f"{wavelength_nm} nm outside curve range [{w[0]}, {w[-1]}]")
        return float(np.interp(wavelength_nm, w, self.efficiency))


def _parse(path):
    text = Path(path).read_text()
    header, rows = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, sep, val = s[1:].partition(":")
            if sep:
                header[key.strip()] = (val.strip(), lineno)
            continue
        try:
            rows.append([float(x) for x in s.split(",")])
        except ValueError as exc:
            raise TableError(f"{path}:{lineno}: cannot parse row: {exc}") from None
    if not rows:
        raise TableError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise TableError(f"{path}: ragged rows")
    return header, np.array(rows)


def _axis(header, key, path):
    if key not in header:
        raise TableError(f"{path}: missing '# {key}:' header")
    val, lineno = header[key]
    try:
        return np.array([float(x) for x in val.replace(",", " ").split()])
    except ValueError:
        raise TableError(f"{path}:{lineno}: bad axis values") from None


def load_table(path) -> AtmosphereTable:
    header, mat = _parse(path)
    wl = _axis(header, "wavelengths_nm", path)
    el = _axis(header, "elevations_deg", path)
    if mat.shape != (wl.size, el.size):
        raise TableError(f"{path}: matrix {mat.shape} but header grid {(wl.size, el.size)}")
    prov = header.get("provenance", ("", 0))[0]
    return AtmosphereTable(wl, np.radians(el), mat, prov)


def load_detector_curve(path) -> DetectorCurve:
    header, mat = _parse(path)
    wl = _axis(header, "wavelengths_nm", path)
    if mat.shape[1] != 1 and mat.shape[0] == 1:
        mat = mat.T
    if mat.shape != (wl.size, 1):
        raise TableError(f"{path}: expected one efficiency per wavelength")
    kind = header.get("kind", ("thick-apd", 0))[0]
    return DetectorCurve(wl, mat[:, 0], kind)


def transmittance(table: AtmosphereTable, wavelength: float, elevation: float) -> float:
    """Bilinear interpolation; ``wavelength`` in nm, ``elevation`` in rad."""
    wl, el = table.wavelengths, table.elevations
    if not (wl[0] <= wavelength <= wl[-1] and el[0] - 1e-12 <= elevation <= el[-1] + 1e-12):
        raise ValueError(
            f"query ({wavelength} nm, {math.degrees(elevation):.3f} deg) outside table hull"
        )
    i = min(max(np.searchsorted(wl, wavelength) - 1, 0), wl.size - 2)
    j = min(max(np.searchsorted(el, elevation) - 1, 0), el.size - 2)
    u = (wavelength - wl[i]) / (wl[i + 1] - wl[i])
    v = min(max((elevation - el[j]) / (el[j + 1] - el[j]), 0.0), 1.0)
    t = table.transmittance
    return float(
        (1 - u) * (1 - v) * t[i, j] + u * (1 - v) * t[i + 1, j]
        + (1 - u) * v * t[i, j + 1] + u * v * t[i + 1, j + 1]
    )


def _data_path(name):
    return resources.files("qsatlink") / "data" / name


def default_table() -> AtmosphereTable:
    with resources.as_file(_data_path("atmosphere_rural_5km.csv")) as p:
        return load_table(p)


def default_detector(wavelength_nm: float) -> DetectorCurve:
    """Thin APD below 532 nm, thick APD at 532 nm and above."""
    name = "detector_thin_apd.csv" if wavelength_nm < 532 else "detector_thick_apd.csv"
    with resources.as_file(_data_path(name)) as p:
        return load_detector_curve(p)

"""Optical link budget between a ground station and a satellite.

The transmitted Gaussian beam is clipped by the transmit aperture and
propagated with a direct Rayleigh-Sommerfeld sum.  Pointing jitter and
(for uplinks) long-term turbulence spreading are folded in as isotropic
2-D Gaussian convolutions of the radial profile, and the received power is
the profile integrated over the receiver.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import i0e

from .atmosphere import AtmosphereTable, transmittance

ANALYZER_LOSS_DB = 3.0
N_RADII = 5000
R_MAX = 50.0
GRID_POINTS = 50
POWER_TOLERANCE = 0.005


class PowerConservationWarning(UserWarning):
    """A convolution changed the integrated power by more than tolerance."""


@dataclass(frozen=True)
class TelescopeSpec:
    diameter: float
    obstruction_ratio: float = 0.0
    beam_fwhm: float | None = None

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("diameter must be > 0")
        if not 0.0 <= self.obstruction_ratio < 1.0:
            raise ValueError("obstruction_ratio must be in [0, 1)")
        if self.beam_fwhm is not None and self.beam_fwhm <= 0:
            raise ValueError("beam_fwhm must be > 0")

    @property
    def radius(self) -> float:
        return self.diameter / 2

    @property
    def area_fraction(self) -> float:
        return 1.0 - self.obstruction_ratio**2


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    elevation: float
    receiver_altitude: float = 600e3
    direction: str = "downlink"

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be > 0")
        if not 0.0 < self.elevation <= math.pi / 2 + 1e-12:
            raise ValueError("elevation must be in (0, pi/2]")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError("direction must be 'uplink' or 'downlink'")


@dataclass(frozen=True)
class TurbulenceProfile:
    A: float = 1.7e-14
    v: float = 21.0

    def __post_init__(self):
        if self.A <= 0 or self.v <= 0:
            raise ValueError("A and v must be > 0")

    def cn2(self, z):
        """Hufnagel-Valley refractive-index structure constant at altitude z (m)."""
        z = np.asarray(z, dtype=float)
        return (
            0.00594 * (self.v / 27.0) ** 2 * (1e-5 * z) ** 10 * np.exp(-z / 1000.0)
            + 2.7e-16 * np.exp(-z / 1500.0)
            + self.A * np.exp(-z / 100.0)
        )


@dataclass(frozen=True)
class RadialIntensityProfile:
    radii: np.ndarray
    intensity: np.ndarray
    wavelength: float

    def __post_init__(self):
        if self.radii[0] != 0 or np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must start at 0 and increase strictly")
        if np.any(self.intensity < 0):
            raise ValueError("intensity must be >= 0")

    def power(self, radius: float | None = None) -> float:
        """Power inside ``radius`` (whole grid when omitted)."""
        r, I = self.radii, self.intensity
        if radius is None:
            return float(integrate.trapezoid(2 * np.pi * r * I, r))
        if radius > r[-1]:
            raise ValueError("radius beyond profile grid")
        # receiver discs may be small compared with the sample spacing; refine
        fine = np.union1d(np.linspace(0.0, radius, 201), r[r < radius])
        return float(integrate.trapezoid(2 * np.pi * fine * np.interp(fine, r, I), fine))

    def fwhm(self) -> float:
        I = self.intensity
        half = I[0] / 2
        k = int(np.argmax(I < half))
        if k == 0:
            raise ValueError("profile does not fall to half maximum on grid")
        r0, r1 = self.radii[k - 1], self.radii[k]
        f0, f1 = I[k - 1], I[k]
        return 2 * (r0 + (half - f0) * (r1 - r0) / (f1 - f0))

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.radii, self.intensity]), delimiter=",",
                   header="radius_m,intensity_w_m2", comments="")


def fwhm_to_waist(fwhm: float) -> float:
    """1/e^2 intensity radius of a Gaussian with the given intensity FWHM."""
    return fwhm / math.sqrt(2 * math.log(2))


def _aperture_samples(tx: TelescopeSpec, n: int = GRID_POINTS):
    """Cell centres, amplitudes and cell area of the clipped transmit beam.

    The Gaussian is normalised to unit power before clipping, so the
    returned transmitted power is the fraction that leaves the aperture.
    """
    if tx.beam_fwhm is None:
        raise ValueError("transmitter needs beam_fwhm")
    R = tx.radius
    step = 2 * R / n
    c = -R + step * (np.arange(n) + 0.5)
    x, y = np.meshgrid(c, c, indexing="ij")
    r2 = x**2 + y**2
    mask = (r2 <= R**2) & (r2 >= (tx.obstruction_ratio * R) ** 2)
    w0 = fwhm_to_waist(tx.beam_fwhm)
    I0 = 2 / (np.pi * w0**2) * np.exp(-2 * r2[mask] / w0**2)
    return x[mask], y[mask], np.sqrt(I0), step**2


def transmitted_fraction(tx: TelescopeSpec, n: int = GRID_POINTS) -> float:
    _, _, amp, dA = _aperture_samples(tx, n)
    return float(np.sum(amp**2) * dA)


def diffract(
    tx: TelescopeSpec,
    geometry: LinkGeometry,
    wavelength: float,
    *,
    n_radii: int = N_RADII,
    r_max: float = R_MAX,
    grid_points: int = GRID_POINTS,
) -> RadialIntensityProfile:
    """Far-field intensity of the clipped Gaussian beam (unit launched power).

    ``wavelength`` is in nm.  Only the y=0 line is evaluated; the profile is
    circularly symmetric.
    """
    d = geometry.distance
    if d <= 1e3:
        raise ValueError("diffraction model requires distance > 1 km")
    lam = wavelength * 1e-9
    k = 2 * np.pi / lam
    # a grid of pitch p repeats the far field every lam*d/p; keep the first
    # ghost well outside the requested radii
    grid_points = max(grid_points, math.ceil(1.5 * r_max * tx.diameter / (lam * d)))
    xs, ys, amp, dA = _aperture_samples(tx, grid_points)
    rho = np.linspace(0.0, r_max, n_radii)
    out = np.empty(n_radii)
    chunk = max(1, 2_000_000 // xs.size)
    for s in range(0, n_radii, chunk):
        p = rho[s:s + chunk, None]
        s2 = (xs[None, :] - p) ** 2 + ys[None, :] ** 2
        R = np.sqrt(d * d + s2)
        # R - d computed without cancellation
        phase = k * s2 / (R + d)
        field = np.sum(amp * np.exp(1j * phase) / R**2, axis=1) * dA
        out[s:s + chunk] = (d / lam) ** 2 * np.abs(field) ** 2
    return RadialIntensityProfile(rho, out, wavelength)


def _gaussian_kernel_matrix(r_out, r_in, sigma):
    rr = r_out[:, None] * r_in[None, :] / sigma**2
    return (r_in[None, :] / sigma**2) * np.exp(
        -((r_out[:, None] - r_in[None, :]) ** 2) / (2 * sigma**2)
    ) * i0e(rr)


def _support(r, I, rel=1e-9):
    """Radius beyond which the profile holds a negligible fraction of its peak."""
    nz = np.nonzero(I > rel * I.max())[0]
    return r[nz[-1]] if nz.size else 0.0


def convolve_gaussian(profile: RadialIntensityProfile, sigma: float) -> RadialIntensityProfile:
    """Convolve a radial profile with an isotropic 2-D Gaussian of per-axis width sigma.

    Uses the exact radial kernel ``(r'/s^2) exp(-(r-r')^2/2s^2) I0e(r r'/s^2)``
    with trapezoid weights over the input grid.  The input is taken as zero
    beyond its last radius; the output grid is extended (same spacing) far
    enough to hold the spread power.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return profile
    r, I = profile.radii, profile.intensity
    w = np.gradient(r)
    w[0] = w[-1] = (r[1] - r[0]) / 2
    if sigma < 2 * (r[1] - r[0]):
        # kernel narrower than the grid: resample the input finely first
        fine = np.linspace(0.0, r[-1], int(r[-1] / (sigma / 4)) + 1)
        I_in, r_in = np.interp(fine, r, I), fine
        w_in = np.gradient(fine)
        w_in[0] = w_in[-1] = (fine[1] - fine[0]) / 2
    else:
        I_in, r_in, w_in = I, r, w
    # input beyond its support contributes nothing; the smoothed output
    # needs no finer sampling than a fraction of sigma
    keep = np.searchsorted(r_in, _support(r_in, I_in)) + 2
    r_in, I_in, w_in = r_in[:keep], I_in[:keep], w_in[:keep]
    dr = r[1] - r[0]
    step = max(dr, sigma / 25)
    r_end = max(r[-1], _support(r, I) + 6 * sigma)
    if step == dr and r_end == r[-1]:
        r_out = r
    else:
        r_out = np.linspace(0.0, r_end, int(math.ceil(r_end / step)) + 1)
    out = np.empty(r_out.size)
    chunk = max(1, 4_000_000 // r_in.size)
    for s in range(0, r_out.size, chunk):
        K = _gaussian_kernel_matrix(r_out[s:s + chunk], r_in, sigma)
        out[s:s + chunk] = K @ (I_in * w_in)
    result = RadialIntensityProfile(r_out, np.clip(out, 0.0, None), profile.wavelength)
    p_in, p_out = profile.power(), result.power()
    if p_in > 0 and abs(p_out / p_in - 1) > POWER_TOLERANCE:
        warnings.warn(
            f"convolution with sigma={sigma:.3g} m changed power by "
            f"{100 * (p_out / p_in - 1):.2f}%",
            PowerConservationWarning,
            stacklevel=2,
        )
    return result


def coherence_length(geometry: LinkGeometry, wavelength: float,
                     profile: TurbulenceProfile = TurbulenceProfile()) -> float:
    """Transverse coherence length r0 (m) for a path from ground to altitude h."""
    h = geometry.receiver_altitude
    lam = wavelength * 1e-9
    k = 2 * np.pi / lam

    def f(z):
        return float(profile.cn2(z)) * (1 - z / h) ** (5 / 3)

    edges = [e for e in (0.0, 100.0, 1000.0, 5000.0, 20000.0, 50000.0) if e < h] + [h]
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, b, epsrel=1e-8, epsabs=0.0, limit=200)
        total += val
        err += e
    if err > 1e-6 * total:
        raise RuntimeError(f"turbulence integral did not converge (rel err {err / total:.1e})")
    sec = 1.0 / math.sin(geometry.elevation)
    return (1.46 * sec * k**2 * total) ** (-3 / 5)


def long_term_waist(geometry: LinkGeometry, wavelength: float,
                    profile: TurbulenceProfile = TurbulenceProfile()) -> float:
    """Long-term beam spreading waist w2 = 2 sqrt(2) d lambda / (pi r0)."""
    r0 = coherence_length(geometry, wavelength, profile)
    return 2 * math.sqrt(2) * geometry.distance * wavelength * 1e-9 / (math.pi * r0)


#: per-axis Gaussian sigma per unit turbulence waist w2
TURBULENCE_SIGMA_PER_WAIST = 1 / (2 * math.sqrt(2))


def turbulence_sigma(geometry: LinkGeometry, wavelength: float,
                     profile: TurbulenceProfile = TurbulenceProfile()) -> float:
    """Per-axis Gaussian broadening (m) equivalent to the long-term waist w2.

    The waist is converted with ``sigma = w2 / (2 sqrt 2)``, i.e. w2 is
    read as the 1/e radius of the turbulent spread.
    """
    if geometry.direction != "uplink":
        raise ValueError("turbulence broadening applies to uplinks only")
    return long_term_waist(geometry, wavelength, profile) * TURBULENCE_SIGMA_PER_WAIST


@dataclass(frozen=True)
class LossBreakdown:
    geometric_db: float
    atmosphere_db: float
    detector_db: float
    analyzer_db: float = ANALYZER_LOSS_DB

    @property
    def total_db(self) -> float:
        return self.geometric_db + self.atmosphere_db + self.detector_db + self.analyzer_db


def _db(x: float) -> float:
    return -10 * math.log10(x) if x > 0 else math.inf


def link_budget(
    tx: TelescopeSpec,
    rx: TelescopeSpec,
    geometry: LinkGeometry,
    wavelength: float,
    pointing_sigma_rad: float,
    atm: AtmosphereTable | None,
    det_efficiency: float,
    *,
    turbulence: TurbulenceProfile = TurbulenceProfile(),
    source_kind: str = "entangled",
    profile: RadialIntensityProfile | None = None,
) -> LossBreakdown:
    """Full loss chain; ``atm=None`` means a perfectly transparent atmosphere.

    For ``source_kind="wcp"`` the reference power is the power leaving the
    transmitter, since the source intensity can be raised to compensate
    for aperture clipping.
    """
    if source_kind not in ("wcp", "entangled"):
        raise ValueError("source_kind must be 'wcp' or 'entangled'")
    prof = profile if profile is not None else diffract(tx, geometry, wavelength)
    prof = convolve_gaussian(prof, pointing_sigma_rad * geometry.distance)
    if geometry.direction == "uplink":
        prof = convolve_gaussian(prof, turbulence_sigma(geometry, wavelength, turbulence))
    received = prof.power(rx.radius) * rx.area_fraction
    p0 = transmitted_fraction(tx) if source_kind == "wcp" else 1.0
    eta_t = 1.0 if atm is None else transmittance(atm, wavelength, geometry.elevation)
    return LossBreakdown(_db(received / p0), _db(eta_t), _db(det_efficiency))


def total_loss(tx, rx, geometry, wavelength, pointing_sigma_rad, atm, det_efficiency, **kw) -> float:
    """Total link loss in dB, including the fixed 3 dB analyzer/coupling term."""
    return link_budget(tx, rx, geometry, wavelength, pointing_sigma_rad, atm,
                       det_efficiency, **kw).total_db


def obstruction_penalty(
    tx: TelescopeSpec,
    geometry: LinkGeometry,
    wavelength: float,
    source_kind: str = "entangled",
    rx: TelescopeSpec = TelescopeSpec(0.5),
) -> float:
    """Extra loss (dB) of an obstructed transmitter relative to an unobstructed one."""
    if not 0.0 <= tx.obstruction_ratio <= 0.5:
        raise ValueError("obstruction_ratio must be in [0, 0.5]")
    if tx.obstruction_ratio == 0:
        return 0.0
    clear = replace(tx, obstruction_ratio=0.0)
    kw = dict(source_kind=source_kind)
    lo = link_budget(clear, rx, geometry, wavelength, 0.0, None, 1.0, **kw).geometric_db
    hi = link_budget(tx, rx, geometry, wavelength, 0.0, None, 1.0, **kw).geometric_db
    return hi - lo


class FarFieldLoss:
    """Fast geometric-loss evaluator for many (distance, elevation) samples.

    In the far field the diffracted profile scales self-similarly with
    distance, and pointing plus turbulence combine into one Gaussian whose
    angular width is independent of distance.  The received power is then
    ``area * I_c(s) / d^2`` where ``I_c`` is the on-axis intensity at unit
    distance after blurring with angular width ``s``, tabulated once.
    """

    def __init__(self, tx: TelescopeSpec, rx: TelescopeSpec, wavelength: float,
                 direction: str, *, reference_distance: float = 600e3,
                 turbulence: TurbulenceProfile = TurbulenceProfile(),
                 receiver_altitude: float = 600e3, source_kind: str = "entangled"):
        self.tx, self.rx, self.wavelength = tx, rx, wavelength
        self.direction = direction
        self.turbulence = turbulence
        self.receiver_altitude = receiver_altitude
        ref = LinkGeometry(reference_distance, math.pi / 2, receiver_altitude, direction)
        prof = diffract(tx, ref, wavelength)
        self._theta = prof.radii / reference_distance
        self._I_unit = prof.intensity * reference_distance**2
        self._p0 = transmitted_fraction(tx) if source_kind == "wcp" else 1.0
        self._s_grid = np.concatenate([[0.0], np.geomspace(1e-8, 1e-3, 400)])
        self._center = np.array([self._blurred_center(s) for s in self._s_grid])
        # turbulence angular width per unit (1/sin(el))^(3/5) is elevation-only
        self._r0_zenith = None

    def _blurred_center(self, s):
        th, I = self._theta, self._I_unit
        if s == 0:
            return I[0]
        if th[-1] < 6 * s:
            # beyond the tabulated far field: treat as a point source blurred by s
            power = integrate.trapezoid(2 * np.pi * th * I, th)
            return power / (2 * np.pi * s**2)
        if s < 2 * (th[1] - th[0]):
            fine = np.linspace(0, min(th[-1], 12 * s), 4001)
            I, th = np.interp(fine, th, I), fine
        kern = th / s**2 * np.exp(-th**2 / (2 * s**2))
        return integrate.trapezoid(I * kern, th)

    def angular_sigma(self, elevation, pointing_sigma_rad):
        s2 = np.asarray(pointing_sigma_rad, float) ** 2
        if self.direction == "uplink":
            if self._r0_zenith is None:
                g = LinkGeometry(1e6, math.pi / 2, self.receiver_altitude, "uplink")
                self._r0_zenith = coherence_length(g, self.wavelength, self.turbulence)
            r0 = self._r0_zenith * np.sin(np.asarray(elevation, float)) ** (3 / 5)
            w2_per_d = 2 * math.sqrt(2) * self.wavelength * 1e-9 / (math.pi * r0)
            s2 = s2 + (w2_per_d * TURBULENCE_SIGMA_PER_WAIST) ** 2
        return np.sqrt(s2)

    def geometric_db(self, distance, elevation, pointing_sigma_rad):
        s = self.angular_sigma(elevation, pointing_sigma_rad)
        centre = np.interp(np.log(np.maximum(s, 1e-8)), np.log(self._s_grid[1:]), self._center[1:])
        centre = np.where(s == 0, self._center[0], centre)
        area = math.pi * self.rx.radius**2 * self.rx.area_fraction
        received = area * centre / np.asarray(distance, float) ** 2
        return -10 * np.log10(received / self._p0)

"""Pass integration, monthly aggregation and parameter sweeps.

For every 1 s sample of the usable part of a pass the link loss and the
background count rate are computed, detection statistics are looked up on
a precomputed loss x background grid, and counts are accumulated.  The
protocol layer then turns the pass totals into a key length or a
Bell/teleportation verdict.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from . import background as bg
from . import fockspace as fs
from . import protocols as pr
from .atmosphere import default_detector, default_table, load_detector_curve, load_table, transmittance
from .config import ConfigError, ScenarioConfig, get_path, set_path, to_dict
from .linkbudget import ANALYZER_LOSS_DB, FarFieldLoss, TelescopeSpec
from .orbit import OrbitSpec, PassProfile, classify_passes, propagate_passes

_P_FLOOR = 1e-300


class SpotCheckError(RuntimeError):
    """Interpolated detection statistics deviate from the exact calculation."""


# ---------------------------------------------------------------- link model

class LinkModel:
    """Loss and background along a pass for one configuration."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        data = Path(cfg.data_dir) if cfg.data_dir else None
        wl = cfg.wavelength
        self.atm = load_table(data / "atmosphere_rural_5km.csv") if data else default_table()
        if cfg.detector.efficiency is not None:
            self.det_eff = cfg.detector.efficiency
        else:
            name = "detector_thin_apd.csv" if wl < 532 else "detector_thick_apd.csv"
            curve = load_detector_curve(data / name) if data else default_detector(wl)
            self.det_eff = curve(wl)
        self.det_db = -10 * math.log10(self.det_eff)
        self.source_kind = "wcp" if (cfg.experiment == "qkd" and cfg.source.kind == "wcp") else "entangled"
        self.tx = telescope_spec(cfg.tx, self.source_kind)
        self.rx = TelescopeSpec(cfg.rx.diameter, cfg.rx.obstruction)
        self.far = FarFieldLoss(self.tx, self.rx, wl, cfg.direction,
                                receiver_altitude=cfg.altitude, source_kind=self.source_kind)
        b = cfg.background
        self.view = bg.ReceiverView(self.rx.radius, b.fov, b.filter_bandwidth, cfg.detector.window)
        if cfg.direction == "uplink":
            grid = (bg.load_pollution_grid(data / "light_pollution_ottawa.csv") if data
                    else bg.default_pollution_grid())
            if data and (data / "moon_albedo.csv").exists():
                x, y = bg.load_moon_albedo(data / "moon_albedo.csv")
                self.moon_albedo = float(np.interp(b.moon_phase, x, y))
            else:
                self.moon_albedo = bg.moon_albedo(b.moon_phase)
            self.moon = bg.Moon(b.moon_phase, math.radians(b.moon_elevation_deg))
            # mean footprint radiance depends only on the footprint radius
            self._radii = np.geomspace(1.0, 2e4, 240)
            self._mean_l = np.array([bg.footprint_mean_radiance(grid, cfg.site, r)
                                     for r in self._radii])

    def atmosphere_db(self, elevation):
        el = np.atleast_1d(np.asarray(elevation, float))
        t = np.array([transmittance(self.atm, self.cfg.wavelength, e) for e in el])
        return -10 * np.log10(t)

    def loss_db(self, distance, elevation):
        """Total loss (geometric, atmosphere, detector and analyzer) in dB."""
        geo = self.far.geometric_db(distance, elevation, self.cfg.pointing_sigma)
        return geo + self.atmosphere_db(elevation) + self.det_db + ANALYZER_LOSS_DB

    def background_cps(self, distance, elevation):
        """Detected background counts/s per detector."""
        d = np.atleast_1d(np.asarray(distance, float))
        el = np.atleast_1d(np.asarray(elevation, float))
        b = self.cfg.background
        wl = self.cfg.wavelength
        if self.cfg.direction == "downlink":
            rate = np.full(d.shape, bg.downlink_background(bg.SkyBrightness(b.h_nat, b.h_art),
                                                           self.view, wl))
        else:
            t_el = 10 ** (-self.atmosphere_db(el) / 10)
            t_moon = transmittance(self.atm, wl, self.moon.elevation)
            area = np.pi * (b.fov * d) ** 2 / np.sin(el)
            mean_l = np.interp(np.sqrt(area / np.pi), self._radii, self._mean_l)
            omega = np.pi * self.rx.radius**2 / d**2
            pollution = t_el * mean_l * b.filter_bandwidth * area * omega / bg.photon_energy(wl)
            natural = np.array([
                bg.uplink_natural_background(di, ei, self.view, wl, self.moon, b.earth_albedo,
                                             ti * t_moon, albedo=self.moon_albedo)
                for di, ei, ti in zip(d, el, t_el)])
            rate = pollution + natural
        return bg.detected_per_detector(rate, self.det_eff)


def telescope_spec(tc, source_kind: str) -> TelescopeSpec:
    """Transmitter spec; the default beam FWHM is D/2 (entangled) or D (WCP)."""
    fwhm = tc.beam_fwhm
    if fwhm is None:
        fwhm = tc.diameter if source_kind == "wcp" else tc.diameter / 2
    return TelescopeSpec(tc.diameter, tc.obstruction, fwhm)


# ---------------------------------------------------------------- detection evaluators

def _misalignment(cfg):
    return fs.misalignment_for_visibility(cfg.source.visibility)


def make_evaluator(cfg: ScenarioConfig, det_eff: float):
    """Return f(loss_db, bg_cps_array) -> dict of per-window probability arrays.

    ``det_eff`` is the detector efficiency at the operating wavelength; it
    is also Alice's local detection efficiency unless configured.
    """
    window = cfg.detector.window
    dark = cfg.detector.dark_rate
    mis = _misalignment(cfg)
    alice_noise = dark * window
    src = cfg.source
    eta_a = src.alice_efficiency if src.alice_efficiency is not None else det_eff
    det_db = -10 * math.log10(det_eff)

    def noise(bgs):
        return (dark + np.asarray(bgs, float)) * window

    if cfg.experiment == "qkd" and src.kind == "wcp":
        resp = {k: fs.AnalyzerResponse(fs.make_wcp(m, "H", mis), "HV")
                for k, m in (("mu", src.mu), ("nu", src.nu))}

        def f(loss, bgs):
            out = {}
            for k, r in resp.items():
                s = r.stats(10 ** (-loss / 10), noise(bgs), expected="H")
                out.update({f"{k}_event": s.p_event, f"{k}_e": s.p_expected,
                            f"{k}_u": s.p_unexpected, f"{k}_d": s.p_double})
            return out
        return _shaped(f)

    if cfg.experiment == "qkd":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fs.TruncationWarning)
            resp = fs.AnalyzerResponse(fs.make_entangled_pair(src.epsilon, mis), "HV")

        def f(loss, bgs):
            s = resp.stats(10 ** (-loss / 10), noise(bgs), eta_alice=eta_a,
                           noise_alice=alice_noise)
            return {"event": s.p_event, "e": s.p_expected, "u": s.p_unexpected, "d": s.p_double}
        return _shaped(f)

    if cfg.experiment == "bell":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fs.TruncationWarning)
            state = fs.make_entangled_pair(src.epsilon, mis)
        a, ap, b_, bp = pr.CHSH_ANGLES
        settings = {"ab": (a, b_), "abp": (a, bp), "apb": (ap, b_), "apbp": (ap, bp)}

        def f(loss, bgs):
            out = {}
            for k, (x, y) in settings.items():
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", fs.TruncationWarning)
                    p = fs.polarization_correlation(
                        state, x, y, eta_alice=eta_a, noise_alice=alice_noise,
                        eta_bob=np.full(np.size(bgs), 10 ** (-loss / 10)), noise_bob=noise(bgs))
                for name, v in zip(("pp", "pm", "mp", "mm"), np.atleast_2d(p).T):
                    out[f"{k}_{name}"] = v
            return out
        return _shaped(f)

    eps, alpha = cfg.teleport.resolved(cfg.direction)

    def f(loss, bgs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fs.TruncationWarning)
            resp = fs.TeleportationResponse(eps, alpha, 10 ** (-(loss - det_db) / 10),
                                            cutoff=cfg.teleport.cutoff)
        s = resp.stats(det_eff, noise(bgs), eta_a, alice_noise)
        return {"e": s.p_expected, "u": s.p_unexpected, "d": s.p_double}
    return _shaped(f)


def _shaped(f):
    """Broadcast every probability to the shape of the background array."""
    def g(loss, bgs):
        shape = np.shape(bgs)
        return {k: np.broadcast_to(np.asarray(v, float), shape).copy()
                for k, v in f(loss, bgs).items()}
    return g


class StatsGrid:
    """Detection statistics tabulated on loss (dB) x background (cps) nodes.

    Loss nodes sit on multiples of ``loss_step``; probabilities are
    interpolated linearly in log space.
    """

    def __init__(self, evaluate, loss_range, bg_range, loss_step=0.5, bg_steps=10):
        lo = math.floor(loss_range[0] / loss_step) * loss_step
        hi = math.ceil(loss_range[1] / loss_step) * loss_step
        self.loss = np.arange(lo, hi + loss_step / 2, loss_step)
        if self.loss.size < 2:
            self.loss = np.array([lo, lo + loss_step])
        b0, b1 = bg_range
        self.bg = np.linspace(b0, b1, bg_steps) if b1 > b0 else np.array([b0, b0 + 1.0])
        rows = [evaluate(float(L), self.bg) for L in self.loss]
        self.keys = tuple(rows[0])
        self._interp = {
            k: RegularGridInterpolator(
                (self.loss, self.bg),
                np.log(np.maximum(np.array([r[k] for r in rows]), _P_FLOOR)))
            for k in self.keys
        }

    def covers(self, loss, bgs) -> bool:
        return bool(np.all((loss >= self.loss[0]) & (loss <= self.loss[-1])
                           & (bgs >= self.bg[0]) & (bgs <= self.bg[-1])))

    def __call__(self, loss, bgs) -> dict:
        pts = np.column_stack([np.asarray(loss, float), np.asarray(bgs, float)])
        return {k: np.exp(f(pts)) for k, f in self._interp.items()}


# ---------------------------------------------------------------- pass evaluation

@dataclass
class PassResult:
    start: str
    usable_s: float
    max_elevation_deg: float
    min_distance_km: float
    kind: str
    result: object
    counts: dict = field(default_factory=dict)

    @property
    def secure_bits(self) -> int:
        return self.result.secure_bits if isinstance(self.result, pr.KeyResult) else 0

    @property
    def passed(self) -> bool:
        if isinstance(self.result, pr.BellResult):
            return self.result.passed
        if isinstance(self.result, TeleportResult):
            return self.result.passed
        return self.secure_bits > 0


@dataclass(frozen=True)
class TeleportResult:
    visibility: float
    sigma: float
    passed: bool
    events: float


@dataclass
class Samples:
    distance: np.ndarray
    elevation: np.ndarray
    loss_db: np.ndarray
    background: np.ndarray
    dt: float


def pass_samples(model: LinkModel, p: PassProfile) -> Samples:
    m = p.usable
    d, el = p.distance[m], p.elevation[m]
    if not m.any():
        e = np.array([])
        return Samples(e, e, e, e, p.cadence)
    return Samples(d, el, model.loss_db(d, el), model.background_cps(d, el), p.cadence)


class Simulation:
    """Configuration-bound evaluator holding the link model and statistics grid."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.model = LinkModel(cfg)
        self.evaluate = make_evaluator(cfg, self.model.det_eff)
        self.grid: StatsGrid | None = None
        self.spot_deviation = 0.0

    def _build(self, samples):
        loss = np.concatenate([s.loss_db for s in samples] + [np.array([])])
        bgs = np.concatenate([s.background for s in samples] + [np.array([])])
        if loss.size == 0:
            return None
        g = self.cfg.grid
        return StatsGrid(self.evaluate, (loss.min(), loss.max()), (bgs.min(), bgs.max()),
                         g.loss_step_db, g.background_steps)

    def prepare(self, samples: list[Samples]):
        """Build the statistics grid spanning all samples of the given passes."""
        self.grid = self._build(samples)

    def stats(self, s: Samples) -> dict:
        grid = self.grid
        if grid is None or not grid.covers(s.loss_db, s.background):
            # standalone pass: a grid spanning this pass only
            grid = self._build([s])
        out = grid(s.loss_db, s.background)
        if self.cfg.grid.spotcheck:
            self._spotcheck(s, out)
        return out

    def _spotcheck(self, s: Samples, interp: dict):
        g = self.cfg.grid
        n = s.loss_db.size
        step = max(1, int(round(1 / g.spotcheck_fraction)))
        for i in range(0, n, step):
            exact = self.evaluate(float(s.loss_db[i]), np.array([s.background[i]]))
            for k, v in exact.items():
                ref = float(np.ravel(v)[0])
                if ref < 1e-12 * max(float(np.ravel(x)[0]) for x in exact.values()):
                    continue
                dev = abs(interp[k][i] - ref) / ref
                self.spot_deviation = max(self.spot_deviation, dev)
                if dev > g.spotcheck_tolerance:
                    raise SpotCheckError(
                        f"{k} at {s.loss_db[i]:.2f} dB, {s.background[i]:.1f} cps: "
                        f"grid {interp[k][i]:.4e} vs exact {ref:.4e} ({dev:.2%})")

    def evaluate_pass(self, p: PassProfile, samples: Samples | None = None) -> PassResult:
        cfg = self.cfg
        s = samples if samples is not None else pass_samples(self.model, p)
        head = dict(start=p.start.isoformat(), usable_s=p.duration_usable,
                    max_elevation_deg=math.degrees(p.max_elevation),
                    min_distance_km=float(s.distance.min() / 1e3) if s.distance.size else math.nan)
        rep = cfg.source.repetition_rate
        if s.loss_db.size == 0:
            return PassResult(kind=cfg.experiment, result=_empty_result(cfg), **head)
        st = self.stats(s)
        scale = rep * s.dt
        if cfg.experiment == "qkd" and cfg.source.kind == "wcp":
            fsig = cfg.source.signal_fraction
            n_mu = float(st["mu_event"].sum() * scale * fsig)
            n_nu = float(st["nu_event"].sum() * scale * (1 - fsig))
            e_mu = _qber(st, "mu_")
            e_nu = _qber(st, "nu_")
            pulses = scale * s.loss_db.size
            res = pr.decoy_bb84_key_length(n_mu, n_nu, e_mu, e_nu, pulses, cfg.security,
                                           mu=cfg.source.mu, nu=cfg.source.nu,
                                           signal_fraction=fsig)
            counts = {"n_mu": n_mu, "n_nu": n_nu, "e_mu": e_mu, "e_nu": e_nu, "pulses": pulses}
        elif cfg.experiment == "qkd":
            n = float(st["event"].sum() * scale)
            e = _qber(st, "")
            if n < 1:
                res = pr.KeyResult(0, 0, e, "no key: no coincidences")
            else:
                res = pr.bbm92_key_length(int(round(n)), e, cfg.security)
            counts = {"n": n, "qber": e}
        elif cfg.experiment == "bell":
            counts = {k: float(v.sum() * scale / 4) for k, v in st.items()}
            table = {key: tuple(counts[f"{name}_{o}"] for o in ("pp", "pm", "mp", "mm"))
                     for key, name in ((("a", "b"), "ab"), (("a", "b'"), "abp"),
                                       (("a'", "b"), "apb"), (("a'", "b'"), "apbp"))}
            try:
                res = pr.chsh_verdict(table)
            except ValueError:
                res = pr.BellResult(0.0, math.inf, False, ())
        else:
            ne, nu_, nd = (float(st[k].sum() * scale) for k in ("e", "u", "d"))
            total = ne + nu_ + nd
            v = (ne - nu_) / total if total > 0 else 0.0
            sig = pr.visibility_sigma(v, total)
            res = TeleportResult(v, sig, pr.teleportation_verdict(v, sig) if total > 0 else False,
                                 total)
            counts = {"n_e": ne, "n_u": nu_, "n_d": nd}
        return PassResult(kind=cfg.experiment, result=res, counts=counts, **head)

    def evaluate_passes(self, passes: list[PassProfile]) -> list[PassResult]:
        samples = [pass_samples(self.model, p) for p in passes]
        self.prepare(samples)

        def one(i):
            return self.evaluate_pass(passes[i], samples[i])

        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as ex:
                return list(ex.map(one, range(len(passes))))
        return [one(i) for i in range(len(passes))]


def _qber(st, prefix):
    e, u, d = (float(st[prefix + k].sum()) for k in ("e", "u", "d"))
    tot = e + u + d
    return min((u + d / 2) / tot, 0.5) if tot > 0 else 0.5


def _empty_result(cfg):
    if cfg.experiment == "qkd":
        return pr.KeyResult(0, 0, 0.0, "no key: pass has no usable samples")
    if cfg.experiment == "bell":
        return pr.BellResult(0.0, math.inf, False, ())
    return TeleportResult(0.0, math.inf, False, 0.0)


# ---------------------------------------------------------------- passes and aggregation

@lru_cache(maxsize=8)
def _passes_cached(altitude, site, year, days):
    return tuple(propagate_passes(OrbitSpec(altitude), site, year, days=days))


def passes_for(cfg: ScenarioConfig) -> list[PassProfile]:
    return list(_passes_cached(cfg.altitude, cfg.site, cfg.year, cfg.days))


def evaluate_pass(cfg: ScenarioConfig, p: PassProfile) -> PassResult:
    return Simulation(cfg).evaluate_pass(p)


@dataclass
class MonthlyResult:
    months: list            # [(YYYY-MM, bits), ...]
    annual_mean: float
    passes: list            # PassResult per pass, in pass order


def monthly_key(cfg: ScenarioConfig, passes: list[PassProfile] | None = None,
                results: list[PassResult] | None = None) -> MonthlyResult:
    """Secure bits per calendar month, derated by the cloud fraction."""
    if cfg.experiment != "qkd":
        raise ConfigError("monthly key needs experiment = qkd")
    if results is None:
        passes = passes_for(cfg) if passes is None else passes
        results = Simulation(cfg).evaluate_passes(passes)
    totals: dict[str, float] = {}
    for r in results:
        m = r.start[:7]
        totals[m] = totals.get(m, 0.0) + r.secure_bits
    clear = 1.0 - cfg.cloud_fraction
    months = [(m, totals[m] * clear) for m in sorted(totals)]
    mean = float(np.mean([b for _, b in months])) if months else 0.0
    return MonthlyResult(months, mean, results)


def max_distance(results: list[PassResult]) -> float:
    """Largest closest-approach distance (km) among passes that succeed."""
    ok = [r.min_distance_km for r in results if r.passed]
    return max(ok) if ok else 0.0


# ---------------------------------------------------------------- sweeps

ORBIT_KEYS = ("altitude", "year", "days", "site_lat", "site_lon")
METRICS = ("monthly_key", "pass_key", "pass_loss_db", "max_distance_km", "pass_qber")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    metric: str = "monthly_key"
    pass_rank: str = "upper_quartile"

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")


def _metric(cfg, spec, passes):
    sim = Simulation(cfg)
    if spec.metric == "monthly_key":
        return monthly_key(cfg, results=sim.evaluate_passes(passes)).annual_mean
    if spec.metric == "max_distance_km":
        return max_distance(sim.evaluate_passes(passes))
    p = classify_passes(passes)[spec.pass_rank]
    if spec.metric == "pass_loss_db":
        s = pass_samples(sim.model, p)
        return float(s.loss_db.min()) if s.loss_db.size else math.inf
    r = sim.evaluate_pass(p)
    if spec.metric == "pass_key":
        return float(r.secure_bits)
    return float(getattr(r.result, "mean_qber", math.nan))


def sweep(cfg: ScenarioConfig, spec: SweepSpec, passes: list[PassProfile] | None = None):
    """One row per axis value: (value, metric)."""
    get_path(cfg, spec.axis)
    rows = []
    for v in spec.values:
        c = set_path(cfg, spec.axis, v)
        ps = passes if (passes is not None and spec.axis not in ORBIT_KEYS) else passes_for(c)
        rows.append((v, _metric(c, spec, ps)))
    return rows


# ---------------------------------------------------------------- output

def write_csv(path, header, rows, cfg: ScenarioConfig | None = None, meta: dict | None = None):
    """CSV plus a JSON sidecar with the resolved configuration."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    side = {"version": __version__}
    if cfg is not None:
        side["config"] = to_dict(cfg)
    if meta:
        side.update(meta)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=str) + "\n")
    return path


def pass_rows(results: list[PassResult]):
    header = ["pass", "start_utc", "usable_s", "max_elevation_deg", "min_distance_km",
              "secure_bits", "qber", "passed", "verdict"]
    rows = []
    for i, r in enumerate(results):
        res = r.result
        if isinstance(res, pr.KeyResult):
            q, verdict = res.mean_qber, res.verdict
        elif isinstance(res, pr.BellResult):
            q, verdict = math.nan, f"S={res.S:.4f} sigma={res.sigma:.4f}"
        else:
            q, verdict = (1 - res.visibility) / 2, f"V={res.visibility:.4f} sigma={res.sigma:.4f}"
        rows.append([i, r.start, float(r.usable_s), float(r.max_elevation_deg),
                     float(r.min_distance_km), r.secure_bits, float(q), r.passed, verdict])
    return header, rows

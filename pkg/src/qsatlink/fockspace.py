"""Truncated Fock-space engine for photonic source and detector modelling.

States live on ``n_modes`` bosonic modes, each truncated at ``cutoff``
photons.  Pure states are carried as kets and only expanded into a density
operator when a non-unitary channel (loss) is applied or ``rho`` is asked
for, which keeps the 4-mode cutoff-6 and 8-mode cutoff-4 workloads cheap.

Unitaries are generated with a matrix exponential on a padded space and then
projected back onto the truncated space.  The norm lost in that projection
is the truncation leakage; it is reported (``TruncationWarning`` above
``LEAKAGE_WARN``) and the state renormalised.

Detection uses non-number-resolving bucket detectors.  For a detector with
efficiency ``eta`` watching a mode, the no-click operator is
``(1 - eta) ** n``, which is exactly loss followed by an ideal bucket
detector, so channel transmission can be folded into detector efficiency
whenever it acts uniformly on the measured modes.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.stats import poisson

LEAKAGE_WARN = 1e-4
#: largest Hilbert dimension for which a dense density operator is built
MAX_RHO_DIM = 8192
#: largest Hilbert dimension for a ket
MAX_KET_DIM = 2_000_000
_PAD = 8


class TruncationWarning(UserWarning):
    """Probability leaked out of the truncated Fock space."""


class CutoffConvergenceWarning(UserWarning):
    """A reported quantity moved by more than tolerance when the cutoff was raised."""


@dataclass(frozen=True)
class ModeLayout:
    n_modes: int
    cutoff: int
    labels: tuple = ()

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if self.labels and len(self.labels) != self.n_modes:
            raise ValueError("one label per mode required")
        if self.dim > MAX_KET_DIM:
            raise MemoryError(
                f"Hilbert dimension {self.dim} exceeds budget {MAX_KET_DIM}"
            )

    @property
    def local_dim(self) -> int:
        return self.cutoff + 1

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_modes

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.n_modes:
                raise IndexError(f"mode {label} out of range")
            return int(label)
        return self.labels.index(label)


class MultimodeState:
    """Immutable multimode state, pure (ket) or mixed (density operator)."""

    __slots__ = ("layout", "_ket", "_rho", "leakage")

    def __init__(self, layout: ModeLayout, *, ket=None, rho=None, leakage: float = 0.0):
        if (ket is None) == (rho is None):
            raise ValueError("give exactly one of ket or rho")
        self.layout = layout
        self.leakage = float(leakage)
        self._ket = None
        self._rho = None
        if ket is not None:
            ket = np.ascontiguousarray(ket, dtype=complex).reshape(layout.dim)
            ket.setflags(write=False)
            self._ket = ket
        else:
            rho = np.ascontiguousarray(rho, dtype=complex)
            if rho.shape != (layout.dim, layout.dim):
                raise ValueError(f"rho shape {rho.shape} does not match layout")
            rho.setflags(write=False)
            self._rho = rho

    @property
    def is_pure(self) -> bool:
        return self._ket is not None

    @property
    def ket(self) -> np.ndarray:
        if self._ket is None:
            raise ValueError("state is mixed")
        return self._ket

    @property
    def rho(self) -> np.ndarray:
        if self._rho is None:
            _check_rho_budget(self.layout)
            rho = np.outer(self._ket, self._ket.conj())
            rho.setflags(write=False)
            return rho
        return self._rho

    def trace(self) -> float:
        if self._ket is not None:
            return float(np.vdot(self._ket, self._ket).real)
        return float(np.trace(self._rho).real)

    def photon_number_distribution(self, modes=None) -> np.ndarray:
        """Joint photon-number distribution, shape ``(cutoff+1,) * len(modes)``."""
        d, n = self.layout.local_dim, self.layout.n_modes
        if self._ket is not None:
            probs = np.abs(self._ket) ** 2
        else:
            probs = np.real(np.diagonal(self._rho)).copy()
        probs = probs.reshape((d,) * n)
        if modes is None:
            return probs
        keep = [self.layout.index(m) for m in modes]
        drop = tuple(i for i in range(n) if i not in keep)
        marg = probs.sum(axis=drop) if drop else probs
        # sum() keeps remaining axes in ascending order; reorder to request
        order = sorted(keep)
        return np.transpose(marg, [order.index(k) for k in keep])

    def mean_photon_number(self, mode=None) -> float:
        d = self.layout.local_dim
        if mode is None:
            return sum(self.mean_photon_number(m) for m in range(self.layout.n_modes))
        p = self.photon_number_distribution([mode])
        return float(np.dot(p, np.arange(d)))

    def overlap(self, other: "MultimodeState") -> float:
        """Tr(rho sigma); equals fidelity when either state is pure."""
        if self._ket is not None and other._ket is not None:
            return float(abs(np.vdot(self._ket, other._ket)) ** 2)
        if self._ket is not None:
            return float(np.real(np.vdot(self._ket, other.rho @ self._ket)))
        if other._ket is not None:
            return other.overlap(self)
        return float(np.real(np.sum(self._rho * other._rho.T)))


def _check_rho_budget(layout: ModeLayout):
    if layout.dim > MAX_RHO_DIM:
        raise MemoryError(
            f"density operator of dimension {layout.dim} exceeds budget {MAX_RHO_DIM}"
        )


def make_vacuum(layout: ModeLayout) -> MultimodeState:
    ket = np.zeros(layout.dim, dtype=complex)
    ket[0] = 1.0
    return MultimodeState(layout, ket=ket)


def make_fock(layout: ModeLayout, occupations) -> MultimodeState:
    """Product number state with the given per-mode occupations."""
    if len(occupations) != layout.n_modes:
        raise ValueError("one occupation per mode")
    if any(not 0 <= n <= layout.cutoff for n in occupations):
        raise ValueError("occupation exceeds cutoff")
    ket = np.zeros((layout.local_dim,) * layout.n_modes, dtype=complex)
    ket[tuple(occupations)] = 1.0
    return MultimodeState(layout, ket=ket)


# ---------------------------------------------------------------- operators

def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)


@lru_cache(maxsize=256)
def _padded_exp(kind: str, params: tuple, cutoff: int, pad: int) -> np.ndarray:
    """exp(generator) built at cutoff+pad, projected onto occupations <= cutoff."""
    big = cutoff + 1 + pad
    a = annihilation(big)
    ad = a.conj().T
    eye = np.eye(big)
    if kind == "squeeze":
        r, phi = params
        z = r * np.exp(1j * phi)
        gen = z * np.kron(ad, ad) - np.conj(z) * np.kron(a, a)
        n_modes = 2
    elif kind == "displace":
        (alpha,) = params
        gen = alpha * ad - np.conj(alpha) * a
        n_modes = 1
    elif kind == "mix":
        # U a_1^dag U^dag = cos(t) a_1^dag + e^{i phi} sin(t) a_2^dag
        theta, phi = params
        gen = theta * (
            np.exp(1j * phi) * np.kron(a, ad) - np.exp(-1j * phi) * np.kron(ad, a)
        )
        n_modes = 2
    else:
        raise ValueError(kind)
    del eye
    u = expm(gen)
    keep = cutoff + 1
    if n_modes == 1:
        return u[:keep, :keep]
    u = u.reshape(big, big, big, big)[:keep, :keep, :keep, :keep]
    return u.reshape(keep * keep, keep * keep)


def _apply_operator(state: MultimodeState, op: np.ndarray, modes, renormalize=True) -> MultimodeState:
    lay = state.layout
    d, n = lay.local_dim, lay.n_modes
    idx = [lay.index(m) for m in modes]
    if len(set(idx)) != len(idx):
        raise ValueError("modes must be distinct")
    k = len(idx)
    op_t = op.reshape((d,) * (2 * k))
    in_axes = list(range(k, 2 * k))

    def left(t, offset):
        axes = [offset + i for i in idx]
        out = np.tensordot(op_t, t, axes=(in_axes, axes))
        return np.moveaxis(out, list(range(k)), axes)

    if state.is_pure:
        t = state.ket.reshape((d,) * n)
        out = left(t, 0).reshape(lay.dim)
        norm = float(np.vdot(out, out).real)
        deficit = state.trace() - norm
        if renormalize:
            out = out / math.sqrt(norm)
        new = MultimodeState(lay, ket=out, leakage=state.leakage + max(deficit, 0.0))
    else:
        t = state.rho.reshape((d,) * (2 * n))
        t = left(t, 0)
        # act on bra side with op^*
        op_c = op_t.conj()
        axes = [n + i for i in idx]
        t = np.tensordot(op_c, t, axes=(in_axes, axes))
        t = np.moveaxis(t, list(range(k)), axes)
        rho = t.reshape(lay.dim, lay.dim)
        tr = float(np.trace(rho).real)
        deficit = state.trace() - tr
        if renormalize:
            rho = rho / tr
        new = MultimodeState(lay, rho=rho, leakage=state.leakage + max(deficit, 0.0))
    if new.leakage - state.leakage > LEAKAGE_WARN:
        warnings.warn(
            f"truncation leakage {new.leakage - state.leakage:.2e} at cutoff {lay.cutoff}",
            TruncationWarning,
            stacklevel=3,
        )
    return new


def apply_squeezer(state, mode_a, mode_b, epsilon: float, phase: float = 0.0) -> MultimodeState:
    """Two-mode squeezer exp(eps (e^{i phase} a^dag b^dag - h.c.))."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if state.layout.index(mode_a) == state.layout.index(mode_b):
        raise ValueError("mode_a and mode_b must differ")
    if epsilon == 0:
        return state
    op = _padded_exp("squeeze", (float(epsilon), float(phase)), state.layout.cutoff, _PAD)
    return _apply_operator(state, op, [mode_a, mode_b])


def apply_displacement(state, mode, alpha: complex) -> MultimodeState:
    mu = abs(alpha) ** 2
    tail = float(poisson.sf(state.layout.cutoff, mu)) if mu > 0 else 0.0
    if tail >= 1e-5:
        raise ValueError(
            f"|alpha|^2={mu:.3g} puts Poisson weight {tail:.2e} above cutoff "
            f"{state.layout.cutoff}"
        )
    if alpha == 0:
        return state
    op = _padded_exp("displace", (complex(alpha),), state.layout.cutoff, _PAD)
    return _apply_operator(state, op, [mode])


def apply_beamsplitter(state, mode_a, mode_b, transmissivity: float, phase: float = 0.0) -> MultimodeState:
    """Lossless two-mode mixer with power transmissivity ``transmissivity``."""
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError("transmissivity must be in [0, 1]")
    if state.layout.index(mode_a) == state.layout.index(mode_b):
        raise ValueError("modes must be distinct")
    if transmissivity == 1.0:
        return state
    theta = math.acos(math.sqrt(transmissivity))
    op = _padded_exp("mix", (theta, float(phase)), state.layout.cutoff, _PAD)
    return _apply_operator(state, op, [mode_a, mode_b])


def apply_rotation(state, mode_h, mode_v, angle: float) -> MultimodeState:
    """Polarisation rotation: a_H^dag -> cos(angle) a_H^dag + sin(angle) a_V^dag."""
    if angle == 0:
        return state
    op = _padded_exp("mix", (float(angle), 0.0), state.layout.cutoff, _PAD)
    return _apply_operator(state, op, [mode_h, mode_v])


def apply_phase(state, mode, phi: float) -> MultimodeState:
    d = state.layout.local_dim
    op = np.diag(np.exp(1j * phi * np.arange(d)))
    return _apply_operator(state, op, [mode], renormalize=False)


def loss_kraus(transmissivity: float, dim: int) -> list[np.ndarray]:
    """Kraus operators of the pure-loss channel on a mode truncated to ``dim``."""
    t = transmissivity
    ops = []
    for k in range(dim):
        K = np.zeros((dim, dim))
        for n in range(k, dim):
            K[n - k, n] = math.sqrt(math.comb(n, k) * t ** (n - k) * (1 - t) ** k)
        ops.append(K)
    return ops


def apply_loss(state, mode, transmissivity: float) -> MultimodeState:
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError("transmissivity must be in [0, 1]")
    if transmissivity == 1.0:
        return state
    lay = state.layout
    _check_rho_budget(lay)
    d, n = lay.local_dim, lay.n_modes
    i = lay.index(mode)
    t = np.asarray(state.rho).reshape((d,) * (2 * n))
    out = np.zeros_like(t)
    for K in loss_kraus(transmissivity, d):
        if not K.any():
            continue
        s = np.tensordot(K, t, axes=([1], [i]))
        s = np.moveaxis(s, 0, i)
        s = np.tensordot(K, s, axes=([1], [n + i]))
        out += np.moveaxis(s, 0, n + i)
    rho = out.reshape(lay.dim, lay.dim)
    return MultimodeState(lay, rho=rho, leakage=state.leakage)


# ---------------------------------------------------------------- detection

@dataclass(frozen=True)
class DetectorModel:
    """Bucket detector bank.

    ``efficiency`` is the total efficiency (detector, optics and link folded
    together).  Background light is given per detector in counts/s and
    treated exactly like dark counts.
    """

    efficiency: float
    dark_rate: float = 20.0
    window: float = 0.5e-9
    n_detectors: int = 4
    background_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dark_rate < 0 or self.background_rate < 0 or self.window <= 0:
            raise ValueError("rates must be >= 0 and window > 0")
        if self.noise_probability >= 1.0:
            raise ValueError("(dark + background) rate x window must be < 1")

    @property
    def dark_probability(self) -> float:
        return self.dark_rate * self.window

    @property
    def noise_probability(self) -> float:
        return (self.dark_rate + self.background_rate) * self.window


@dataclass(frozen=True)
class DetectionStats:
    """Per-window detection statistics for one analyzer configuration.

    ``p_event`` is the probability per window of a counted event (any click
    for prepare-and-measure, any two-sided coincidence for entangled
    sources); ``rate`` is that times the repetition rate.
    ``p_expected``/``p_unexpected``/``p_double`` split the sifted-basis events.
    """

    p_click: np.ndarray
    p_coinc: dict
    visibility: float
    qber: float
    rate: float
    p_event: float = 0.0
    p_expected: float = 0.0
    p_unexpected: float = 0.0
    p_double: float = 0.0
    p_herald: float = 1.0
    converged: bool = True
    extra: dict = field(default_factory=dict)


def no_click_table(dist: np.ndarray, efficiencies, noise) -> np.ndarray:
    """P(no click on subset S) for every subset of the measured modes.

    ``dist`` is a joint photon-number distribution over k modes.  Entry
    ``mask`` of the result is the no-click probability for the detectors
    whose bits are set.  ``efficiencies``/``noise`` may carry a leading
    batch axis; the result then has shape ``(batch, 2**k)``.
    """
    k = dist.ndim
    d = dist.shape[0]
    eff = np.atleast_2d(np.asarray(efficiencies, dtype=float))
    noi = np.atleast_2d(np.asarray(noise, dtype=float))
    batch = max(eff.shape[0], noi.shape[0])
    eff = np.broadcast_to(eff, (batch, k))
    noi = np.broadcast_to(noi, (batch, k))
    n = np.arange(d)
    # survival[b, j, n] = (1 - eff_j)^n
    survival = (1.0 - eff)[:, :, None] ** n[None, None, :]
    out = np.empty((batch, 2**k))
    for mask in range(2**k):
        t = dist
        # contract axes from last to first so indices stay valid
        vec_first = None
        res = np.broadcast_to(t, (batch,) + t.shape)
        for j in reversed(range(k)):
            if mask >> j & 1:
                res = np.einsum("b...n,bn->b...", res, survival[:, j, :])
            else:
                res = res.sum(axis=-1)
        del vec_first
        noise_factor = np.ones(batch)
        for j in range(k):
            if mask >> j & 1:
                noise_factor = noise_factor * (1.0 - noi[:, j])
        out[:, mask] = res * noise_factor
    return out


def click_patterns(noclick: np.ndarray) -> np.ndarray:
    """Exact click-pattern probabilities from a no-click table (Moebius inversion).

    Entry ``C`` is the probability that exactly the detectors in bitmask
    ``C`` click.
    """
    noclick = np.atleast_2d(noclick)
    full = noclick.shape[1] - 1
    k = full.bit_length()
    out = np.zeros_like(noclick)
    for c in range(full + 1):
        silent = full & ~c
        sub = c
        while True:
            sign = -1.0 if bin(sub).count("1") % 2 else 1.0
            out[:, c] += sign * noclick[:, silent | sub]
            if sub == 0:
                break
            sub = (sub - 1) & c
    del k
    return np.clip(out, 0.0, 1.0)


def _rotate_pair(state, h, v, angle):
    return apply_rotation(state, h, v, angle) if angle else state


def _labels(state):
    labs = state.layout.labels
    if not labs:
        raise ValueError("layout needs (party, polarisation) labels")
    return labs


BASIS_ANGLE = {"HV": 0.0, "DA": math.pi / 4}
_EXPECTED_INDEX = {"H": ("HV", 0), "V": ("HV", 1), "D": ("DA", 0), "A": ("DA", 1)}


class AnalyzerResponse:
    """Loss/noise-independent part of a passive BB84 analysis.

    Holds the photon-number distribution of the measured modes after
    rotating each party's polarisation into ``basis``.  ``stats`` then
    evaluates detection statistics for any efficiencies and noise levels,
    vectorised over a batch.
    """

    def __init__(self, state: MultimodeState, basis_choice: str = "HV"):
        if basis_choice not in BASIS_ANGLE:
            raise ValueError(f"basis must be one of {sorted(BASIS_ANGLE)}")
        labs = _labels(state)
        self.basis = basis_choice
        self.entangled = ("A", "H") in labs
        angle = -BASIS_ANGLE[basis_choice]
        s = _rotate_pair(state, ("B", "H"), ("B", "V"), angle)
        modes = [("B", "H"), ("B", "V")]
        if self.entangled:
            s = _rotate_pair(s, ("A", "H"), ("A", "V"), angle)
            modes = [("A", "H"), ("A", "V")] + modes
        self.dist = s.photon_number_distribution(modes)
        self.leakage = s.leakage

    def stats(
        self,
        eta_bob,
        noise_bob,
        *,
        eta_alice=1.0,
        noise_alice=0.0,
        expected: str = "H",
        repetition_rate: float = 1.0,
    ):
        eta_b = np.atleast_1d(np.asarray(eta_bob, dtype=float))
        p_b = np.atleast_1d(np.asarray(noise_bob, dtype=float))
        batch = np.broadcast(eta_b, p_b).shape[0]
        eta_b = np.broadcast_to(eta_b, (batch,))
        p_b = np.broadcast_to(p_b, (batch,))
        # passive 50:50 basis split: each basis pair sees half the light
        half_b = eta_b / 2.0
        if not self.entangled:
            eff = np.stack([half_b, half_b], axis=1)
            noi = np.stack([p_b, p_b], axis=1)
            pat = click_patterns(no_click_table(self.dist, eff, noi))
            # gain over all four detectors: every photon reaches one detector
            all_eff = np.stack([eta_b, eta_b], axis=1)
            all_noi = np.stack([1 - (1 - p_b) ** 2] * 2, axis=1)
            none_all = no_click_table(self.dist, all_eff, all_noi)[:, 3]
            basis_name, e_idx = _EXPECTED_INDEX[expected]
            if basis_name != self.basis:
                raise ValueError(f"expected polarisation {expected} not in basis {self.basis}")
            single = [pat[:, 1], pat[:, 2]]
            p_e = single[e_idx]
            p_u = single[1 - e_idx]
            p_d = pat[:, 3]
            p_event = 1.0 - none_all
            p_click = np.stack([pat[:, 1] + pat[:, 3], pat[:, 2] + pat[:, 3]], axis=1)
            coinc = {("H", "V") if self.basis == "HV" else ("D", "A"): pat[:, 3]}
            herald = np.ones(batch)
        else:
            eta_a = np.broadcast_to(np.atleast_1d(np.asarray(eta_alice, float)), (batch,))
            p_a = np.broadcast_to(np.atleast_1d(np.asarray(noise_alice, float)), (batch,))
            half_a = eta_a / 2.0
            eff = np.stack([half_a, half_a, half_b, half_b], axis=1)
            noi = np.stack([p_a, p_a, p_b, p_b], axis=1)
            pat = click_patterns(no_click_table(self.dist, eff, noi))
            # bit order: 0 = A1, 1 = A2, 2 = B1, 3 = B2
            def P(a, b):
                return pat[:, a | (b << 2)]

            p_e = P(1, 2) + P(2, 1)   # anti-correlated singles
            p_u = P(1, 1) + P(2, 2)
            p_d = sum(P(a, b) for a in (1, 2, 3) for b in (1, 2, 3)) - p_e - p_u
            all_eff = np.stack([eta_a, eta_a, eta_b, eta_b], axis=1)
            all_noi = np.stack(
                [1 - (1 - p_a) ** 2] * 2 + [1 - (1 - p_b) ** 2] * 2, axis=1
            )
            nc = no_click_table(self.dist, all_eff, all_noi)
            none_a, none_b, none_ab = nc[:, 3], nc[:, 12], nc[:, 15]
            p_event = 1.0 - none_a - none_b + none_ab
            herald = 1.0 - none_a
            p_click = np.stack(
                [pat[:, [m for m in range(16) if m >> 2 & 1]].sum(axis=1),
                 pat[:, [m for m in range(16) if m >> 3 & 1]].sum(axis=1)],
                axis=1,
            )
            coinc = {(a, b): P(ai, bi) for ai, a in ((1, "A1"), (2, "A2"))
                     for bi, b in ((1, "B1"), (2, "B2"))}
        total = p_e + p_u + p_d
        with np.errstate(invalid="ignore", divide="ignore"):
            vis = np.where(total > 0, (p_e - p_u) / total, 0.0)
        qber = (1.0 - vis) / 2.0
        return _pack(
            p_click, coinc, vis, qber, p_event * repetition_rate, p_event,
            p_e, p_u, p_d, herald,
        )


def _pack(p_click, coinc, vis, qber, rate, p_event, p_e, p_u, p_d, herald):
    if np.ndim(vis) and np.size(vis) == 1:
        return DetectionStats(
            p_click=p_click[0],
            p_coinc={k: float(v[0]) for k, v in coinc.items()},
            visibility=float(vis[0]),
            qber=float(qber[0]),
            rate=float(rate[0]),
            p_event=float(p_event[0]),
            p_expected=float(p_e[0]),
            p_unexpected=float(p_u[0]),
            p_double=float(p_d[0]),
            p_herald=float(herald[0]),
        )
    return DetectionStats(
        p_click=p_click, p_coinc=coinc, visibility=vis, qber=qber, rate=rate,
        p_event=p_event, p_expected=p_e, p_unexpected=p_u, p_double=p_d,
        p_herald=herald,
    )


def measure_bb84_analyzer(
    state: MultimodeState,
    detectors: DetectorModel,
    basis_choice: str = "HV",
    *,
    alice_detectors: DetectorModel | None = None,
    expected: str = "H",
    repetition_rate: float = 1.0,
) -> DetectionStats:
    """Passive four-detector polarisation analysis of Bob's (and Alice's) modes.

    The layout must label modes ``("B", "H")``/``("B", "V")``; entangled
    states also carry ``("A", "H")``/``("A", "V")`` and are analysed as
    two-sided coincidences with |Psi^-> (anti-correlated) as the expected
    outcome.  Double clicks within a basis are counted as half an error.
    """
    resp = AnalyzerResponse(state, basis_choice)
    kw = {}
    if resp.entangled:
        a = alice_detectors or DetectorModel(1.0, 0.0, detectors.window)
        kw = dict(eta_alice=a.efficiency, noise_alice=a.noise_probability)
    return resp.stats(
        detectors.efficiency,
        detectors.noise_probability,
        expected=expected,
        repetition_rate=repetition_rate,
        **kw,
    )


# ---------------------------------------------------------------- sources

ENTANGLED_LABELS = (("A", "H"), ("A", "V"), ("B", "H"), ("B", "V"))


def misalignment_for_visibility(visibility: float) -> float:
    """Bob-side rotation angle giving the requested two-photon visibility."""
    if not -1.0 <= visibility <= 1.0:
        raise ValueError("visibility must be in [-1, 1]")
    return 0.5 * math.acos(visibility)


DEFAULT_MISALIGNMENT = misalignment_for_visibility(0.98)


def make_entangled_pair(
    epsilon: float, misalignment_angle: float = DEFAULT_MISALIGNMENT, cutoff: int = 6
) -> MultimodeState:
    """Polarisation-entangled SPDC output including multi-pair emission.

    Two squeezers pair A_H with B_V and A_V with B_H; a pi phase on B_H
    gives the singlet sign, so the single-pair term is |Psi^->.  Bob's
    photon is then rotated by ``misalignment_angle``.
    """
    lay = ModeLayout(4, cutoff, ENTANGLED_LABELS)
    s = make_vacuum(lay)
    s = apply_squeezer(s, ("A", "H"), ("B", "V"), epsilon)
    s = apply_squeezer(s, ("A", "V"), ("B", "H"), epsilon)
    s = apply_phase(s, ("B", "H"), math.pi)
    return _rotate_pair(s, ("B", "H"), ("B", "V"), misalignment_angle)


def make_wcp(
    mu: float,
    polarization: str = "H",
    misalignment_angle: float = DEFAULT_MISALIGNMENT,
    cutoff: int = 6,
) -> MultimodeState:
    """Weak coherent pulse in polarisation H/V/D/A on Bob's two modes."""
    lay = ModeLayout(2, cutoff, (("B", "H"), ("B", "V")))
    pol_angle = {"H": 0.0, "V": math.pi / 2, "D": math.pi / 4, "A": -math.pi / 4}[polarization]
    s = apply_displacement(make_vacuum(lay), ("B", "H"), math.sqrt(mu))
    return _rotate_pair(s, ("B", "H"), ("B", "V"), pol_angle + misalignment_angle)


# ---------------------------------------------------------------- CHSH

def polarization_correlation(
    state: MultimodeState,
    angle_a: float,
    angle_b: float,
    *,
    eta_alice: float = 1.0,
    eta_bob: float = 1.0,
    noise_alice: float = 0.0,
    noise_bob=0.0,
):
    """Coincidence probabilities (N++, N+-, N-+, N--) per window.

    Each party uses one polarising beam splitter at its angle with a
    bucket detector on each output.  A double click on one side is
    assigned a random outcome.  ``eta_bob``/``noise_bob`` may be arrays.
    """
    s = _rotate_pair(state, ("A", "H"), ("A", "V"), -angle_a)
    s = _rotate_pair(s, ("B", "H"), ("B", "V"), -angle_b)
    dist = s.photon_number_distribution(ENTANGLED_LABELS)
    eb = np.atleast_1d(np.asarray(eta_bob, float))
    nb = np.atleast_1d(np.asarray(noise_bob, float))
    batch = np.broadcast(eb, nb).shape[0]
    eb = np.broadcast_to(eb, (batch,))
    nb = np.broadcast_to(nb, (batch,))
    ea = np.full(batch, eta_alice)
    na = np.full(batch, noise_alice)
    pat = click_patterns(
        no_click_table(dist, np.stack([ea, ea, eb, eb], 1), np.stack([na, na, nb, nb], 1))
    )
    # outcome weights per side pattern: 1 -> '+', 2 -> '-', 3 -> half each
    w = {1: (1.0, 0.0), 2: (0.0, 1.0), 3: (0.5, 0.5)}
    out = np.zeros((batch, 4))
    for a, (ap, am) in w.items():
        for b, (bp, bm) in w.items():
            p = pat[:, a | (b << 2)]
            out[:, 0] += p * ap * bp
            out[:, 1] += p * ap * bm
            out[:, 2] += p * am * bp
            out[:, 3] += p * am * bm
    return out[0] if batch == 1 else out


# ---------------------------------------------------------------- teleportation

TELEPORT_LABELS = (
    ("T", "H"), ("T", "V"),      # entangled photon sent over the link
    ("A", "H"), ("A", "V"),      # entangled photon kept by Alice
    ("W", "H"), ("W", "V"),      # Bob's weak coherent input
    ("E", "H"), ("E", "V"),      # loss environment (traced out)
)


class TeleportationResponse:
    """Teleportation statistics at fixed source strengths and channel loss.

    The link loss on the travelling photon is dilated into a beam splitter
    with environment modes, so the whole evolution stays pure; Bob's and
    Alice's detector efficiencies and noise are applied at measurement.
    """

    def __init__(self, epsilon, alpha, channel_transmissivity, *, cutoff=3,
                 input_angle=math.pi / 4, misalignment_angle=DEFAULT_MISALIGNMENT):
        lay = ModeLayout(8, cutoff, TELEPORT_LABELS)
        s = make_vacuum(lay)
        s = apply_squeezer(s, ("A", "H"), ("T", "V"), epsilon)
        s = apply_squeezer(s, ("A", "V"), ("T", "H"), epsilon)
        s = apply_phase(s, ("T", "H"), math.pi)
        s = _rotate_pair(s, ("T", "H"), ("T", "V"), misalignment_angle)
        s = apply_displacement(s, ("W", "H"), alpha)
        s = _rotate_pair(s, ("W", "H"), ("W", "V"), input_angle)
        if channel_transmissivity < 1.0:
            s = apply_beamsplitter(s, ("T", "H"), ("E", "H"), channel_transmissivity)
            s = apply_beamsplitter(s, ("T", "V"), ("E", "V"), channel_transmissivity)
        # Bell-state measurement: 50:50 on each polarisation, PBS after
        s = apply_beamsplitter(s, ("T", "H"), ("W", "H"), 0.5)
        s = apply_beamsplitter(s, ("T", "V"), ("W", "V"), 0.5)
        # Alice analyses her photon parallel/perpendicular to the input
        s = _rotate_pair(s, ("A", "H"), ("A", "V"), -input_angle)
        self.dist = s.photon_number_distribution(
            [("T", "H"), ("T", "V"), ("W", "H"), ("W", "V"), ("A", "H"), ("A", "V")]
        )
        self.leakage = s.leakage

    def stats(self, eta_bob, noise_bob, eta_alice=1.0, noise_alice=0.0, repetition_rate=1.0):
        eb = np.atleast_1d(np.asarray(eta_bob, float))
        nb = np.atleast_1d(np.asarray(noise_bob, float))
        batch = np.broadcast(eb, nb).shape[0]
        eb = np.broadcast_to(eb, (batch,))
        nb = np.broadcast_to(nb, (batch,))
        ea = np.full(batch, float(eta_alice))
        na = np.full(batch, float(noise_alice))
        eff = np.stack([eb] * 4 + [ea] * 2, 1)
        noi = np.stack([nb] * 4 + [na] * 2, 1)
        pat = click_patterns(no_click_table(self.dist, eff, noi))
        # bits: 0 cH, 1 cV, 2 dH, 3 dV, 4 A-parallel, 5 A-perp
        bsm = [0b1001, 0b0110]   # (cH, dV) or (cV, dH): Psi^- signature

        def P(b, a):
            return sum(pat[:, m | (a << 4)] for m in b)

        n_e = P(bsm, 1)
        n_u = P(bsm, 2)
        dbl = P(bsm, 3)
        total = n_e + n_u + dbl
        with np.errstate(invalid="ignore", divide="ignore"):
            vis = np.where(total > 0, (n_e - n_u) / total, 0.0)
        herald = P(bsm, 0) + total
        return _pack(
            np.stack([P([1 << j], 0) for j in range(4)], 1),
            {("BSM", "A"): total},
            vis, (1 - vis) / 2, total * repetition_rate, total,
            n_e, n_u, dbl, herald,
        )


def simulate_teleportation(
    epsilon: float,
    alpha: float,
    channel_loss_db: float,
    background_rate: float,
    detectors: DetectorModel,
    *,
    alice_detectors: DetectorModel | None = None,
    cutoff: int = 3,
    check_convergence: bool = True,
    repetition_rate: float = 1.0,
    input_angle: float = math.pi / 4,
) -> DetectionStats:
    """Teleportation of Bob's weak coherent polarisation onto Alice's photon.

    Returns statistics conditioned on the |Psi^-> Bell-measurement pattern;
    ``visibility`` is measured parallel/perpendicular to the input
    polarisation.  With ``check_convergence`` the calculation is repeated
    at ``cutoff + 1`` and a visibility shift above 1e-3 is flagged with
    ``converged=False`` and a ``CutoffConvergenceWarning``.
    """
    trans = 10 ** (-channel_loss_db / 10)
    a = alice_detectors or DetectorModel(1.0, 0.0, detectors.window)
    bob_noise = (detectors.dark_rate + background_rate) * detectors.window

    def run(c):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            resp = TeleportationResponse(epsilon, alpha, trans, cutoff=c, input_angle=input_angle)
        return resp.stats(detectors.efficiency, bob_noise, a.efficiency,
                          a.noise_probability, repetition_rate), resp.leakage

    st, leak = run(cutoff)
    extra = {"cutoff": cutoff, "leakage": leak}
    converged = True
    if check_convergence:
        st2, _ = run(cutoff + 1)
        shift = abs(st2.visibility - st.visibility)
        extra["visibility_shift"] = shift
        if shift > 1e-3:
            converged = False
            warnings.warn(
                f"teleportation visibility moved {shift:.2e} from cutoff {cutoff} "
                f"to {cutoff + 1}",
                CutoffConvergenceWarning,
                stacklevel=2,
            )
    return DetectionStats(
        p_click=st.p_click, p_coinc=st.p_coinc, visibility=st.visibility,
        qber=st.qber, rate=st.rate, p_event=st.p_event, p_expected=st.p_expected,
        p_unexpected=st.p_unexpected, p_double=st.p_double, p_herald=st.p_herald,
        converged=converged, extra=extra,
    )


def all_patterns(k: int):
    """Helper for tests: every click pattern over k detectors as bit tuples."""
    return list(itertools.product((0, 1), repeat=k))

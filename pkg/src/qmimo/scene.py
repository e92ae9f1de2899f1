"""Discrete received-data model for a distributed MIMO radar.

Everything here lives after demodulation and channel separation: each
transmit/receive pair (m, n) sees an ``L x Q`` matrix whose columns are the
fast-time samples of one pulse. Transmitter and receiver indices are
zero-based throughout, so transmitter ``m`` uses carrier ``f0 + m * delta_f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

SPEED_OF_LIGHT = 299792458.0

# floor() guard for ratios such as tau / ts that should land on an integer
_FLOOR_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """Target coincides with an antenna, so a line of sight is undefined."""


class DelayOverflowError(ValueError):
    """A delayed pulse does not fit inside the fast-time window."""


def _floor_ratio(num: float, den: float) -> int:
    return int(np.floor(num / den + _FLOOR_EPS))


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class SceneConfig:
    """Antenna layout, waveform timing and noise level of one radar scene.

    ``ts`` defaults to the Nyquist interval ``1 / b0``. ``tp`` must be an
    integer multiple ``N`` of ``ts`` with ``N`` a power of two, since the
    transmit waveforms are Hadamard rows of order ``N``.
    """

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    f0: float = 5e9
    delta_f: float = 50e6
    b0: float = 10e6
    tp: float = 3.2e-6
    t_pri: float = 0.5e-3
    q_pulses: int = 64
    tau_max: float = 40e-6
    noise_var: float = 0.0
    ts: float | None = None
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        self.tx_positions = np.atleast_2d(np.asarray(self.tx_positions, dtype=float))
        self.rx_positions = np.atleast_2d(np.asarray(self.rx_positions, dtype=float))
        if self.ts is None:
            self.ts = 1.0 / self.b0
        if self.tx_positions.shape[1] != 2 or self.rx_positions.shape[1] != 2:
            raise ValueError("antenna positions must be 2-D points")
        if self.delta_f < self.b0:
            raise ValueError("carrier increment must be at least the baseband bandwidth")
        ratio = self.tp / self.ts
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError(f"tp / ts = {ratio} is not an integer")
        if not _is_pow2(int(round(ratio))):
            raise ValueError(f"pulse length N = {int(round(ratio))} is not a power of two")
        if self.t_pri <= self.tp + self.tau_max:
            raise ValueError("t_pri must exceed tp + tau_max")
        if self.q_pulses < 1:
            raise ValueError("q_pulses must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")

    @property
    def mt(self) -> int:
        return len(self.tx_positions)

    @property
    def mr(self) -> int:
        return len(self.rx_positions)

    @property
    def n_samples(self) -> int:
        """Pulse length N in samples."""
        return int(round(self.tp / self.ts))

    @property
    def l_samples(self) -> int:
        """Fast-time window length L = floor((tp + tau_max) / ts)."""
        return _floor_ratio(self.tp + self.tau_max, self.ts)

    @property
    def max_shift(self) -> int:
        return self.l_samples - self.n_samples

    def carrier(self, m: int) -> float:
        return self.f0 + m * self.delta_f

    def pairs(self):
        return [(m, n) for m in range(self.mt) for n in range(self.mr)]

    def with_noise(self, noise_var: float) -> "SceneConfig":
        from dataclasses import replace

        return replace(self, noise_var=float(noise_var))


@dataclass
class TargetState:
    """Point target. ``reflectivity`` holds one complex coefficient per (m, n)."""

    position: np.ndarray
    velocity: np.ndarray
    reflectivity: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        if self.reflectivity is not None:
            self.reflectivity = np.asarray(self.reflectivity, dtype=complex)

    def beta_tilde(self, m: int, n: int) -> complex:
        if self.reflectivity is None:
            return 1.0 + 0.0j
        return complex(self.reflectivity[m, n])


@dataclass
class TimMatrix:
    """Target information matrix ``x = a @ lam @ bmat`` for one pair."""

    x: np.ndarray
    a: np.ndarray
    lam: np.ndarray
    bmat: np.ndarray
    l_shifts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def rank_bound(self) -> int:
        return self.a.shape[1]


def concentric_layout(mt: int, mr: int, tx_radius: float, rx_radius: float):
    """Antennas spread uniformly on two concentric circles about the origin."""
    at = 2 * np.pi * np.arange(mt) / mt
    ar = 2 * np.pi * np.arange(mr) / mr
    tx = tx_radius * np.column_stack([np.cos(at), np.sin(at)])
    rx = rx_radius * np.column_stack([np.cos(ar), np.sin(ar)])
    return tx, rx


def random_reflectivities(rng: np.random.Generator, mt: int, mr: int) -> np.ndarray:
    """Unit-modulus coefficients with independent uniform phases."""
    return np.exp(2j * np.pi * rng.random((mt, mr)))


def bistatic_delay(scene: SceneConfig, target: TargetState, m: int, n: int) -> float:
    p = target.position
    d = np.linalg.norm(p - scene.tx_positions[m]) + np.linalg.norm(p - scene.rx_positions[n])
    return float(d / scene.speed_of_light)


def doppler_freq(scene: SceneConfig, target: TargetState, m: int, n: int) -> float:
    """Bistatic Doppler shift of ``target`` on pair (m, n), in Hz."""
    return float(los_sum(scene, target.position, m, n) @ target.velocity * scene.carrier(m)
                 / scene.speed_of_light)


def los_sum(scene: SceneConfig, position, m: int, n: int) -> np.ndarray:
    """Sum of the unit vectors from transmitter m and receiver n to ``position``."""
    p = np.asarray(position, dtype=float)
    dt = p - scene.tx_positions[m]
    dr = p - scene.rx_positions[n]
    nt, nr = np.linalg.norm(dt), np.linalg.norm(dr)
    if nt == 0.0 or nr == 0.0:
        raise DegenerateGeometryError(f"position {p} coincides with an antenna of pair ({m}, {n})")
    return dt / nt + dr / nr


def make_waveform(scene: SceneConfig, m: int) -> np.ndarray:
    """Baseband code of transmitter ``m``: Hadamard row ``m + 1`` (row 0 is never used)."""
    n = scene.n_samples
    return hadamard_row(n, m + 1)


def hadamard_row(order: int, row: int) -> np.ndarray:
    if not _is_pow2(order):
        raise ValueError(f"Hadamard order {order} is not a power of two")
    if not 0 <= row < order:
        raise ValueError(f"row {row} out of range for order {order}")
    return hadamard(order)[row].astype(complex)


def delay_shift(scene: SceneConfig, tau: float) -> int:
    return _floor_ratio(tau, scene.ts)


def shifted_waveforms(scene: SceneConfig, m: int, shifts) -> np.ndarray:
    """Columns are the code of transmitter m delayed by each entry of ``shifts``."""
    s = make_waveform(scene, m)
    L, N = scene.l_samples, scene.n_samples
    shifts = np.atleast_1d(np.asarray(shifts, dtype=int))
    if shifts.size and (shifts.min() < 0 or shifts.max() + N > L):
        raise DelayOverflowError(f"shifts {shifts} do not fit in a window of {L} samples")
    a = np.zeros((L, shifts.size), dtype=complex)
    for k, lk in enumerate(shifts):
        a[lk:lk + N, k] = s
    return a


def position_shifts(scene: SceneConfig, positions, m: int, n: int) -> np.ndarray:
    """Integer sample delays of candidate positions (array of shape (K, 2)) on pair (m, n)."""
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    d = (np.linalg.norm(p - scene.tx_positions[m], axis=1)
         + np.linalg.norm(p - scene.rx_positions[n], axis=1))
    return np.floor(d / scene.speed_of_light / scene.ts + _FLOOR_EPS).astype(int)


def build_tim(scene: SceneConfig, targets, m: int, n: int) -> TimMatrix:
    Q = scene.q_pulses
    shifts, betas, dopplers = [], [], []
    for tgt in targets:
        tau = bistatic_delay(scene, tgt, m, n)
        f = doppler_freq(scene, tgt, m, n)
        shifts.append(delay_shift(scene, tau))
        betas.append(tgt.beta_tilde(m, n) * np.exp(-2j * np.pi * (scene.carrier(m) + f) * tau))
        dopplers.append(f)
    shifts = np.array(shifts, dtype=int)
    a = shifted_waveforms(scene, m, shifts)
    lam = np.diag(np.array(betas, dtype=complex))
    q = np.arange(Q)
    bmat = np.exp(2j * np.pi * np.outer(dopplers, q) * scene.t_pri)
    x = a @ lam @ bmat
    return TimMatrix(x=x, a=a, lam=lam, bmat=bmat, l_shifts=shifts)


def build_all_tims(scene: SceneConfig, targets) -> dict:
    return {(m, n): build_tim(scene, targets, m, n) for m, n in scene.pairs()}


def add_noise(x, noise_var: float, seed=None) -> np.ndarray:
    """Add circular complex white Gaussian noise of variance ``noise_var`` per entry.

    ``x`` may be a :class:`TimMatrix` or a plain array. Draws for a given
    seed are the same for every ``noise_var``, only scaled.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    xm = x.x if isinstance(x, TimMatrix) else np.asarray(x, dtype=complex)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(xm.shape) + 1j * rng.standard_normal(xm.shape)
    return xm + np.sqrt(noise_var / 2.0) * w


def noise_var_for_snr(tims, snr_db: float) -> float:
    """Noise variance giving mean per-sample SNR ``snr_db`` over the given pairs."""
    xs = [t.x if isinstance(t, TimMatrix) else t for t in tims]
    power = np.mean([np.linalg.norm(x) ** 2 / x.size for x in xs])
    return float(power / 10 ** (snr_db / 10.0))


def empirical_snr_db(xs, ys) -> float:
    sig = np.mean([np.linalg.norm(x) ** 2 / x.size for x in xs])
    noise = np.mean([np.linalg.norm(y - x) ** 2 / x.size for x, y in zip(xs, ys)])
    return float(10 * np.log10(sig / noise))

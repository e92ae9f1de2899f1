"""Sequential least-squares position and velocity estimation.

Positions come from a grid search minimising the energy of each recovered
matrix left outside the span of the delayed transmit codes. Given those
positions, the per-target slow-time rows follow by least squares, their
Doppler frequencies from a zero-padded FFT, and the velocities from a
linear least-squares fit (the Doppler model is linear in velocity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import SceneConfig, los_sum, position_shifts, shifted_waveforms


class RankDeficiencyError(np.linalg.LinAlgError):
    """The delayed-code matrix does not have full column rank."""


@dataclass(frozen=True)
class SearchGrid:
    """Rectangular grid of candidate positions; ranges are ``(min, max, step)`` in meters."""

    x_range: tuple
    y_range: tuple

    def __post_init__(self):
        for lo, hi, step in (self.x_range, self.y_range):
            if not step > 0:
                raise ValueError("grid step must be positive")
            if hi < lo:
                raise ValueError("grid range is empty")

    @staticmethod
    def _axis(lo, hi, step):
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)

    @classmethod
    def centered(cls, center, step: float = 10.0, n: int = 40) -> "SearchGrid":
        """``n x n`` grid with ``step`` spacing that has ``center`` on a node."""
        cx, cy = center
        lo = -(n // 2) * step
        hi = lo + (n - 1) * step
        return cls((cx + lo, cx + hi, step), (cy + lo, cy + hi, step))

    @property
    def xs(self) -> np.ndarray:
        return self._axis(*self.x_range)

    @property
    def ys(self) -> np.ndarray:
        return self._axis(*self.y_range)

    @property
    def shape(self):
        return (len(self.xs), len(self.ys))

    @property
    def points(self) -> np.ndarray:
        """Candidates in row-major order over ``(x index, y index)``."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class EstimationResult:
    theta_p: np.ndarray
    theta_v: np.ndarray
    doppler_estimates: np.ndarray
    xi_matrices: dict = field(default_factory=dict)
    position_residual_map: np.ndarray | None = None
    residual_maps: list = field(default_factory=list)


def steering_matrix(scene: SceneConfig, positions, m: int, n: int) -> np.ndarray:
    """Delayed transmit codes for candidate ``positions`` on pair (m, n)."""
    shifts = position_shifts(scene, positions, m, n)
    if len(np.unique(shifts)) < len(shifts):
        raise RankDeficiencyError(f"candidates share an integer delay on pair ({m}, {n}): {shifts}")
    a = shifted_waveforms(scene, m, shifts)
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise RankDeficiencyError(f"delayed codes are linearly dependent on pair ({m}, {n})")
    return a


def _ls_coefficients(a, x):
    return np.linalg.solve(a.conj().T @ a, a.conj().T @ x)


def projection_residual(x_hat, candidate, scene: SceneConfig, m: int, n: int) -> float:
    """``||P_perp(candidate) x_hat||_F^2`` for the candidate positions (shape (K, 2))."""
    a = steering_matrix(scene, candidate, m, n)
    r = x_hat - a @ _ls_coefficients(a, x_hat)
    return float(np.vdot(r, r).real)


def recover_xi(x_hat, theta_p, scene: SceneConfig, m: int, n: int) -> np.ndarray:
    """Least-squares estimate of the ``K x Q`` slow-time matrix at positions ``theta_p``."""
    a = steering_matrix(scene, theta_p, m, n)
    return _ls_coefficients(a, x_hat)


def _shift_residuals(r, basis, all_codes):
    """Residual energy after adding each shifted code to the already selected ``basis``."""
    codes = all_codes
    if basis is not None:
        codes = all_codes - basis @ (basis.conj().T @ all_codes)
    num = np.sum(np.abs(codes.conj().T @ r) ** 2, axis=1)
    den = np.sum(np.abs(codes) ** 2, axis=0)
    energy = np.vdot(r, r).real
    out = np.full(codes.shape[1], np.inf)
    ok = den > 1e-9 * np.max(den)
    out[ok] = energy - num[ok] / den[ok]
    return out


def estimate_position(x_hats: dict, grid: SearchGrid, scene: SceneConfig, k_targets: int = 1,
                      return_maps: bool = False):
    """Grid search for ``k_targets`` positions.

    One target is found per pass. Each pass minimises, over grid points, the
    total residual of every pair after projecting out the codes of the
    targets already found plus the candidate. Ties go to the first grid
    point in row-major order.
    """
    pts = grid.points
    if len(pts) == 0:
        raise ValueError("empty search grid")
    if k_targets < 1:
        raise ValueError("k_targets must be positive")
    max_shift = scene.max_shift
    all_shifts = np.arange(max_shift + 1)
    pair_shifts, codes, resid, basis = {}, {}, {}, {}
    for (m, n), x in x_hats.items():
        l = position_shifts(scene, pts, m, n)
        pair_shifts[(m, n)] = np.where((l >= 0) & (l <= max_shift), l, -1)
        codes[(m, n)] = shifted_waveforms(scene, m, all_shifts)
        resid[(m, n)] = np.asarray(x, dtype=complex)
        basis[(m, n)] = None

    chosen, maps = [], []
    for _ in range(k_targets):
        total = np.zeros(len(pts))
        for key, l in pair_shifts.items():
            per_shift = _shift_residuals(resid[key], basis[key], codes[key])
            total += np.where(l >= 0, per_shift[np.maximum(l, 0)], np.inf)
        if not np.isfinite(total).any():
            raise ValueError("no admissible grid point for the remaining target")
        chosen.append(int(np.argmin(total)))
        maps.append(total.reshape(grid.shape))
        for key, l in pair_shifts.items():
            q, _ = np.linalg.qr(codes[key][:, l[chosen]])
            basis[key] = q
            x = np.asarray(x_hats[key], dtype=complex)
            resid[key] = x - q @ (q.conj().T @ x)
    theta_p = pts[chosen]
    return (theta_p, maps) if return_maps else theta_p


def estimate_doppler(xi_row, t_pri: float, zero_pad: int = 8) -> float:
    """Peak frequency of a slow-time row, in Hz, wrapped to ``(-1/(2 t_pri), 1/(2 t_pri)]``.

    The peak of the zero-padded spectrum is refined by a parabola through
    the log magnitudes of the peak bin and its two neighbours.
    """
    row = np.asarray(xi_row, dtype=complex).ravel()
    if row.size < 2:
        raise ValueError("need at least two pulses")
    if zero_pad < 1:
        raise ValueError("zero_pad must be at least 1")
    if not np.any(row):
        raise ValueError("all-zero slow-time row")
    nfft = int(zero_pad) * row.size
    mag = np.abs(np.fft.fft(row, nfft))
    k = int(np.argmax(mag))
    a, b, c = mag[(k - 1) % nfft], mag[k], mag[(k + 1) % nfft]
    offset = 0.0
    if a > 0 and c > 0:
        la, lb, lc = np.log(a), np.log(b), np.log(c)
        den = la - 2 * lb + lc
        if den < 0:
            offset = 0.5 * (la - lc) / den
    return wrap_frequency((k + offset) / (nfft * t_pri), t_pri)


def wrap_frequency(f, t_pri: float):
    half = 0.5 / t_pri
    return half - np.mod(half - f, 2 * half)


def doppler_spectrum(xi_row, t_pri: float, zero_pad: int = 8):
    """Frequencies (fft-shifted, Hz) and magnitudes of the zero-padded row spectrum."""
    row = np.asarray(xi_row, dtype=complex).ravel()
    nfft = int(zero_pad) * row.size
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, d=t_pri))
    return freqs, np.fft.fftshift(np.abs(np.fft.fft(row, nfft)))


def velocity_design(scene: SceneConfig, position) -> np.ndarray:
    """Rows ``(f_m / c) * (u_t + u_r)`` for every pair, in ``scene.pairs()`` order."""
    return np.array([scene.carrier(m) / scene.speed_of_light * los_sum(scene, position, m, n)
                     for m, n in scene.pairs()])


def estimate_velocity(doppler_estimates, theta_p, scene: SceneConfig) -> np.ndarray:
    """Least-squares velocities, one per target.

    ``doppler_estimates`` has shape ``(Mt, Mr, K)`` (or ``(Mt, Mr)`` for one
    target) and ``theta_p`` shape ``(K, 2)``.
    """
    theta_p = np.atleast_2d(np.asarray(theta_p, dtype=float))
    f = np.asarray(doppler_estimates, dtype=float)
    if f.ndim == 2:
        f = f[..., None]
    out = []
    for k, pos in enumerate(theta_p):
        h = velocity_design(scene, pos)
        fk = np.array([f[m, n, k] for m, n in scene.pairs()])
        normal = h.T @ h
        if np.linalg.cond(normal) > 1e12:
            raise np.linalg.LinAlgError("degenerate geometry: velocity is not identifiable")
        out.append(np.linalg.solve(normal, h.T @ fk))
    return np.array(out)


def estimate_targets(x_hats: dict, grid: SearchGrid, scene: SceneConfig, k_targets: int = 1,
                     zero_pad: int = 8) -> EstimationResult:
    """Full sequential pipeline: positions, slow-time rows, Doppler, velocities."""
    theta_p, maps = estimate_position(x_hats, grid, scene, k_targets, return_maps=True)
    f_hat = np.zeros((scene.mt, scene.mr, k_targets))
    xis = {}
    for (m, n), x in x_hats.items():
        xi = recover_xi(x, theta_p, scene, m, n)
        xis[(m, n)] = xi
        for k in range(k_targets):
            f_hat[m, n, k] = estimate_doppler(xi[k], scene.t_pri, zero_pad) if np.any(xi[k]) else 0.0
    theta_v = estimate_velocity(f_hat, theta_p, scene)
    return EstimationResult(theta_p, theta_v, f_hat, xis, maps[0], maps)

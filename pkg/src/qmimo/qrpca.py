"""Low-rank plus sparse recovery from quantized observations.

Solves

    min_{X, T}  1/2 D(Z, X + T) + mu ||X||_* + lam ||T||_1

by accelerated proximal gradient, where ``D`` is the squared distance of
``X + T`` to the quantization cells around ``Z`` (zero inside a cell of
width ``delta_q``). ``||T||_1`` sums ``|Re|`` and ``|Im|`` of every entry,
which is the norm whose prox is the per-part soft threshold.

:func:`rpca_baseline` runs the same iteration on unquantized data with the
ordinary least-squares data term.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh
from scipy.linalg.blas import zherk


class NonFiniteIterateError(FloatingPointError):
    """An iterate became NaN or Inf, usually because the step is too large."""


@dataclass
class QrpcaConfig:
    """Solver parameters.

    ``mu`` and ``lam`` default to ``delta_q * sqrt(max(L, Q))`` and
    ``delta_q`` once the data shape is known (see :meth:`resolve`).
    """

    mu: float | None = None
    lam: float | None = None
    step: float = 0.25
    max_iter: int = 500
    tol: float = 1e-6
    delta_q: float = 0.0
    backtracking: bool = False
    svd_method: str = "gram"
    record_objective: bool = True

    def resolve(self, shape) -> "QrpcaConfig":
        mu, lam = self.mu, self.lam
        if mu is None or lam is None:
            if not self.delta_q > 0:
                raise ValueError("mu and lam must be given when delta_q is not positive")
            if mu is None:
                mu = self.delta_q * np.sqrt(max(shape))
            if lam is None:
                lam = self.delta_q
        cfg = replace(self, mu=float(mu), lam=float(lam))
        cfg.validate()
        return cfg

    def validate(self):
        if not (self.mu and self.mu > 0 and self.lam and self.lam > 0):
            raise ValueError("mu and lam must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.step > 0.25 and not self.backtracking:
            raise ValueError("step above 0.25 requires backtracking")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.svd_method not in ("svd", "gram"):
            raise ValueError(f"unknown svd_method {self.svd_method!r}")


@dataclass
class QrpcaState:
    x_cur: np.ndarray
    x_prev: np.ndarray
    t_cur: np.ndarray
    t_prev: np.ndarray
    zeta_cur: float = 1.0
    zeta_prev: float = 1.0
    iter: int = 0

    @classmethod
    def zeros(cls, shape) -> "QrpcaState":
        z = np.zeros(shape, dtype=complex)
        return cls(z, z.copy(), z.copy(), z.copy())


@dataclass
class QrpcaSolution:
    x_hat: np.ndarray
    t_hat: np.ndarray
    iterations: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    config: QrpcaConfig | None = None


def _check_shapes(z, v):
    if np.shape(z) != np.shape(v):
        raise ValueError(f"shape mismatch: {np.shape(z)} vs {np.shape(v)}")


def hinge(x):
    """Element-wise ``max(-x, 0)``."""
    return np.maximum(-np.asarray(x, dtype=float), 0.0)


def similarity(z, v, delta_q: float) -> float:
    """Squared distance of ``v`` to the quantization cells centred on ``z``."""
    z, v = np.asarray(z), np.asarray(v)
    _check_shapes(z, v)
    h = delta_q / 2.0
    d = v - z
    return float(
        np.sum(hinge(d.real + h) ** 2) + np.sum(hinge(d.imag + h) ** 2)
        + np.sum(hinge(-d.real + h) ** 2) + np.sum(hinge(-d.imag + h) ** 2)
    )


def grad_similarity(z, v, delta_q: float) -> np.ndarray:
    """Gradient of ``similarity / 2`` with respect to ``v`` (real and imaginary parts)."""
    z, v = np.asarray(z), np.asarray(v)
    _check_shapes(z, v)
    h = delta_q / 2.0
    d = z - v
    re = hinge(d.real + h) - hinge(-d.real + h)
    im = hinge(d.imag + h) - hinge(-d.imag + h)
    return re + 1j * im


def soft_threshold(t, threshold: float):
    """Shrink real and imaginary parts independently towards zero by ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    t = np.array(t, dtype=complex if np.iscomplexobj(t) else float)
    return _shrink_inplace(t, threshold)


def _parts(a):
    return a.view(float) if np.iscomplexobj(a) else a


def _shrink_inplace(a, threshold):
    # r - clip(r, -t, t) == sign(r) * max(|r| - t, 0)
    r = _parts(a)
    r -= np.clip(r, -threshold, threshold)
    return a


def _dead_zone_residual(z, v, half):
    # gradient of the hinge data term, written as a soft threshold of v - z
    d = np.subtract(v, z)
    return _shrink_inplace(d, half)


def _svt_svd(x, threshold):
    u, s, vh = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    k = int(np.count_nonzero(s))
    return (u[:, :k] * s[:k]) @ vh[:k], s[:k]


def _svt_gram(x, threshold):
    # eigendecomposition of the small Gram matrix; exact in exact arithmetic
    tall = x.shape[0] >= x.shape[1]
    xt = x if tall else x.conj().T
    # zherk on the transpose gives the upper triangle of conj(xt^H xt);
    # only eigenpairs above threshold^2 are computed
    w, v = eigh(zherk(1.0, xt.T, trans=0), lower=False, overwrite_a=True, check_finite=False,
                subset_by_value=(threshold * threshold, np.inf), driver="evr")
    if w.size == 0:
        return np.zeros_like(x), np.zeros(0)
    vk, sk = v.conj(), np.sqrt(w)
    out = ((xt @ vk) * (1.0 - threshold / sk)) @ vk.conj().T
    return (out if tall else out.conj().T), (sk - threshold)[::-1]


def svt(x, threshold: float, method: str = "svd") -> np.ndarray:
    """Singular value soft-thresholding: ``U diag(max(s - threshold, 0)) V^H``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=complex)
    fn = _svt_gram if method == "gram" else _svt_svd
    return fn(x, threshold)[0]


def nuclear_norm(x) -> float:
    return float(np.linalg.svd(np.asarray(x), compute_uv=False).sum())


def l1_norm(t) -> float:
    t = np.asarray(t)
    return float(np.abs(t.real).sum() + np.abs(t.imag).sum())


def next_zeta(zeta_prev: float) -> float:
    return (1.0 + np.sqrt(4.0 * zeta_prev * zeta_prev + 1.0)) / 2.0


def _norm(a) -> float:
    return float(np.sqrt(np.vdot(a, a).real))


def _apg(z, cfg: QrpcaConfig, grad_fn, loss_fn) -> QrpcaSolution:
    svt_fn = _svt_gram if cfg.svd_method == "gram" else _svt_svd
    st = QrpcaState.zeros(z.shape)
    step = cfg.step
    trace = [loss_fn(st.x_cur + st.t_cur)] if cfg.record_objective else []
    converged = False
    # dx, dt hold x_cur - x_prev and t_cur - t_prev
    dx, dt = st.x_cur - st.x_prev, st.t_cur - st.t_prev
    nx = nt = 0.0  # norms of x_cur, t_cur
    while st.iter < cfg.max_iter:
        st.zeta_cur = next_zeta(st.zeta_prev)
        w = (st.zeta_prev - 1.0) / st.zeta_cur
        xb = dx * w
        xb += st.x_cur
        tb = dt * w
        tb += st.t_cur
        g = grad_fn(xb + tb)
        if not np.isfinite(np.vdot(g, g)):
            raise NonFiniteIterateError(f"non-finite gradient at iteration {st.iter + 1}")
        while True:
            sg = step * g
            xn, s = svt_fn(xb - sg, cfg.mu * step)
            tn = _shrink_inplace(tb - sg, cfg.lam * step)
            if not cfg.backtracking:
                break
            ex, et = xn - xb, tn - tb
            bound = (loss_fn(xb + tb) + np.real(np.vdot(g, ex + et))
                     + (np.vdot(ex, ex).real + np.vdot(et, et).real) / (2.0 * step))
            if loss_fn(xn + tn) <= bound + 1e-12 * max(1.0, abs(bound)):
                break
            step /= 2.0
        nxn, ntn = np.vdot(xn, xn).real, np.vdot(tn, tn).real
        if not (np.isfinite(nxn) and np.isfinite(ntn)):
            raise NonFiniteIterateError(f"non-finite iterate at iteration {st.iter + 1}")
        dx, dt = xn - st.x_cur, tn - st.t_cur
        change = max(_norm(dx) / max(1.0, nx), _norm(dt) / max(1.0, nt))
        nx, nt = np.sqrt(nxn), np.sqrt(ntn)
        st.x_prev, st.x_cur = st.x_cur, xn
        st.t_prev, st.t_cur = st.t_cur, tn
        st.zeta_prev = st.zeta_cur
        st.iter += 1
        if cfg.record_objective:
            trace.append(loss_fn(xn + tn) + cfg.mu * float(np.sum(s)) + cfg.lam * l1_norm(tn))
        if change < cfg.tol:
            converged = True
            break
    return QrpcaSolution(st.x_cur, st.t_cur, st.iter, trace, converged, replace(cfg, step=step))


def apg_qrpca(z, cfg: QrpcaConfig) -> QrpcaSolution:
    """Recover low-rank ``X`` and sparse ``T`` from quantized data ``z``."""
    z = np.asarray(z, dtype=complex)
    cfg = cfg.resolve(z.shape)
    dq = cfg.delta_q
    return _apg(
        z, cfg,
        grad_fn=lambda v: _dead_zone_residual(z, v, dq / 2.0),
        loss_fn=lambda v: 0.5 * similarity(z, v, dq),
    )


def rpca_baseline(y, cfg: QrpcaConfig) -> QrpcaSolution:
    """Same iteration with data term ``1/2 ||Y - X - T||_F^2`` (no quantization model)."""
    y = np.asarray(y, dtype=complex)
    cfg = cfg.resolve(y.shape)
    return _apg(
        y, cfg,
        grad_fn=lambda v: v - y,
        loss_fn=lambda v: 0.5 * float(np.vdot(v - y, v - y).real),
    )


def numerical_rank(x, rel_tol: float = 1e-9) -> int:
    s = np.linalg.svd(np.asarray(x), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))

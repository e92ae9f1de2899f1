"""Oracles shared by the unit and acceptance tests."""

import numpy as np

from qmimo.qrpca import similarity
from qmimo.scene import SceneConfig, TargetState, build_tim, random_reflectivities

# (x, Q(x)) pairs from an interval-scan oracle over exact fractions
TABLE_G1_B4 = [
    (-3.0, -0.75), (-1.5, -0.75), (-1.0001, -0.75), (-1.0, -0.75), (-0.9, -0.75), (-0.75, -0.75),
    (-0.5, -0.25), (-0.49, -0.25), (-0.3, -0.25), (-0.25, -0.25), (-0.1, -0.25), (-0.0001, -0.25),
    (0.0, 0.25), (0.0001, 0.25), (0.1, 0.25), (0.2, 0.25), (0.25, 0.25), (0.3, 0.25),
    (0.4999, 0.25), (0.5, 0.75), (0.6, 0.75), (0.75, 0.75), (0.9, 0.75), (0.99, 0.75),
    (1.0, 0.75), (1.0001, 0.75), (1.5, 0.75), (2.0, 0.75), (10.0, 0.75), (-10.0, -0.75),
    (0.125, 0.25), (-0.625, -0.75),
]
TABLE_G2_B8 = [
    (-5.0, -1.75), (-2.5, -1.75), (-2.0, -1.75), (-1.9, -1.75), (-1.5, -1.25), (-1.25, -1.25),
    (-1.0, -0.75), (-0.75, -0.75), (-0.6, -0.75), (-0.5, -0.25), (-0.25, -0.25), (-0.1, -0.25),
    (0.0, 0.25), (0.1, 0.25), (0.25, 0.25), (0.4, 0.25), (0.5, 0.75), (0.5001, 0.75),
    (0.75, 0.75), (1.0, 1.25), (1.2, 1.25), (1.5, 1.75), (1.75, 1.75), (1.8, 1.75),
    (1.9999, 1.75), (2.0, 1.75), (2.0001, 1.75), (3.0, 1.75), (-0.0001, -0.25), (0.9999, 0.75),
    (-1.4999, -1.25), (20.0, 1.75),
]
TABLES = [((1.0, 4), TABLE_G1_B4), ((2.0, 8), TABLE_G2_B8)]


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def fd_points(rng, n, delta, shape=(3, 4)):
    pts = []
    while len(pts) < n:
        z = crandn(rng, *shape)
        v = z + delta * crandn(rng, *shape)
        r = v - z
        gap = np.minimum(np.abs(np.abs(r.real) - delta / 2), np.abs(np.abs(r.imag) - delta / 2))
        if gap.min() >= 1e-3:
            pts.append((z, v))
    return pts


def fd_gradient(z, v, delta, h=1e-6):
    f = lambda w: 0.5 * similarity(z, w, delta)
    g = np.zeros_like(v)
    for idx in np.ndindex(v.shape):
        for unit in (1.0, 1j):
            e = np.zeros_like(v)
            e[idx] = h * unit
            g[idx] += unit * (f(v + e) - f(v - e)) / (2 * h)
    return g


def small_scene_tim(seed=0):
    """Noiseless 16 x 16 rank-1 matrix of a one-pair scene (N = 8, Q = 16)."""
    scene = SceneConfig(np.array([[0.0, 0.0]]), np.array([[100.0, 0.0]]), tp=0.8e-6,
                        tau_max=0.8e-6, q_pulses=16)
    rng = np.random.default_rng(seed)
    tgt = TargetState([50.0, 50.0], [10.0, 5.0], random_reflectivities(rng, 1, 1))
    return build_tim(scene, [tgt], 0, 0).x

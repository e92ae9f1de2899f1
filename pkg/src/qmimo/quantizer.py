"""Uniform mid-rise quantizer, transmission-error channel and bit packing."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_HEADER = struct.Struct("<IIIf")


@dataclass(frozen=True)
class QuantizerSpec:
    """``levels``-point mid-rise quantizer on ``[-gamma, gamma]``.

    Reconstruction points are ``-gamma + delta * (l + 1/2)`` for
    ``l = 0 .. levels - 1``, with ``delta = 2 * gamma / levels``. Inputs
    outside the range saturate to the extreme points.
    """

    gamma: float
    levels: int

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.levels < 2 or self.levels & (self.levels - 1):
            raise ValueError(f"levels={self.levels} must be a power of two >= 2")

    @classmethod
    def from_bits(cls, gamma: float, bits: int) -> "QuantizerSpec":
        return cls(gamma=float(gamma), levels=2 ** int(bits))

    @property
    def bits(self) -> int:
        return self.levels.bit_length() - 1

    @property
    def delta(self) -> float:
        return 2.0 * self.gamma / self.levels

    @property
    def alphabet(self) -> np.ndarray:
        return self.decode(np.arange(self.levels))

    def decode(self, codes) -> np.ndarray:
        return -self.gamma + self.delta * (np.asarray(codes) + 0.5)


@dataclass(frozen=True)
class DteChannelSpec:
    """Sparse symbol corruption on the receiver-to-fusion-center link.

    ``mode="symbol"`` replaces a whole complex sample with a different
    alphabet symbol with probability ``corruption_prob``. ``mode="bit"``
    flips each transmitted bit independently with that probability.
    """

    corruption_prob: float = 0.01
    seed: object = None
    mode: str = "symbol"

    def __post_init__(self):
        if not 0 <= self.corruption_prob < 1:
            raise ValueError("corruption_prob must lie in [0, 1)")
        if self.mode not in ("symbol", "bit"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")


def quantize_codes(x, spec: QuantizerSpec) -> np.ndarray:
    """Cell index of each real input.

    Cells are half-open ``[-gamma + l*delta, -gamma + (l+1)*delta)`` with the
    top cell closed at ``gamma``; saturation falls out of the clip.
    """
    x = np.asarray(x, dtype=float)
    return np.clip(np.floor((x + spec.gamma) / spec.delta), 0, spec.levels - 1).astype(np.int64)


def quantize_real(x, spec: QuantizerSpec):
    out = spec.decode(quantize_codes(x, spec))
    return float(out) if np.ndim(out) == 0 else out


def quantize_complex(y, spec: QuantizerSpec) -> np.ndarray:
    y = np.asarray(y)
    return quantize_real(y.real, spec) + 1j * quantize_real(y.imag, spec)


def complex_codes(z, spec: QuantizerSpec):
    z = np.asarray(z)
    return quantize_codes(z.real, spec), quantize_codes(z.imag, spec)


def apply_dte(z, spec: DteChannelSpec, qspec: QuantizerSpec):
    """Corrupt quantized data ``z``; returns ``(z_corrupted, t_tilde)``.

    In symbol mode every hit entry is moved to a symbol drawn uniformly from
    the ``levels**2 - 1`` alphabet pairs that differ from the sent one, so
    the support of ``t_tilde`` is exactly the set of hit entries.
    """
    z = np.asarray(z, dtype=complex)
    rng = np.random.default_rng(spec.seed)
    re, im = complex_codes(z, qspec)
    b = qspec.levels
    if spec.mode == "symbol":
        hit = rng.random(z.shape) < spec.corruption_prob
        sym = re * b + im
        offset = rng.integers(1, b * b, size=z.shape)
        new = np.where(hit, (sym + offset) % (b * b), sym)
        re, im = new // b, new % b
    else:
        nbits = qspec.bits
        flips_re = rng.random(z.shape + (nbits,)) < spec.corruption_prob
        flips_im = rng.random(z.shape + (nbits,)) < spec.corruption_prob
        weights = 1 << np.arange(nbits)
        re = re ^ (flips_re * weights).sum(axis=-1)
        im = im ^ (flips_im * weights).sum(axis=-1)
    zc = qspec.decode(re) + 1j * qspec.decode(im)
    return zc, zc - z


def apply_dte_analog(y, spec: DteChannelSpec, gamma: float):
    """Unquantized counterpart of :func:`apply_dte`.

    Hit entries are replaced by values uniform on ``[-gamma, gamma]`` per
    part. Used to feed the unquantized baseline with the same error pattern.
    """
    y = np.asarray(y, dtype=complex)
    rng = np.random.default_rng(spec.seed)
    hit = rng.random(y.shape) < spec.corruption_prob
    # same draw order as symbol mode keeps the hit mask identical for one seed
    u = rng.random(y.shape + (2,))
    repl = gamma * (2 * u[..., 0] - 1) + 1j * gamma * (2 * u[..., 1] - 1)
    yc = np.where(hit, repl, y)
    return yc, yc - y


def bit_volume(mt: int, mr: int, l_samples: int, q_pulses: int, bits: int) -> int:
    """Bits shipped to the fusion center; a complex sample costs ``2 * bits``."""
    dims = (mt, mr, l_samples, q_pulses, bits)
    if any(int(d) <= 0 for d in dims):
        raise ValueError("all dimensions must be positive")
    return 2 * int(mt) * int(mr) * int(l_samples) * int(q_pulses) * int(bits)


def pack_matrix(z, spec: QuantizerSpec) -> bytes:
    """Serialize a quantized matrix.

    Layout: little-endian header ``(L, Q, bits)`` as uint32 and ``gamma`` as
    float32, then the codes in row-major order, real part before imaginary
    part, ``bits`` bits per code, least significant bit first within bytes.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    L, Q = z.shape
    re, im = complex_codes(z, spec)
    codes = np.stack([re, im], axis=-1).reshape(-1)
    nb = spec.bits
    bitplanes = ((codes[:, None] >> np.arange(nb)) & 1).astype(np.uint8).reshape(-1)
    payload = np.packbits(bitplanes, bitorder="little").tobytes()
    return _HEADER.pack(L, Q, nb, spec.gamma) + payload


def unpack_matrix(buf: bytes):
    """Inverse of :func:`pack_matrix`; returns ``(z, spec)``.

    ``gamma`` round-trips through float32, so decoded values can differ from
    the originals by float32 rounding of the range.
    """
    L, Q, nb, gamma = _HEADER.unpack_from(buf, 0)
    spec = QuantizerSpec.from_bits(gamma, nb)
    nvals = 2 * L * Q
    raw = np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size)
    bits = np.unpackbits(raw, bitorder="little")[: nvals * nb].reshape(nvals, nb)
    codes = (bits.astype(np.int64) << np.arange(nb)).sum(axis=1).reshape(L, Q, 2)
    z = spec.decode(codes[..., 0]) + 1j * spec.decode(codes[..., 1])
    return z, spec


def packed_size(l_samples: int, q_pulses: int, bits: int) -> int:
    return _HEADER.size + (2 * l_samples * q_pulses * bits + 7) // 8


def peak_gamma(x, noise_var: float = 0.0, factor: float = 0.0) -> float:
    """Largest ``|Re|`` or ``|Im|`` of the noiseless ``x`` plus ``factor`` noise deviations.

    With the default ``factor=0`` the range depends on the echo only, so one
    quantizer serves every noise level and noise peaks saturate.
    """
    x = np.asarray(x)
    peak = max(np.abs(x.real).max(initial=0.0), np.abs(x.imag).max(initial=0.0))
    gamma = peak + factor * np.sqrt(noise_var / 2.0)
    return float(gamma) if gamma > 0 else 1.0


def sigma_gamma(x, noise_var: float, factor: float = 3.0) -> float:
    """``factor`` times the per-part standard deviation of signal plus noise."""
    x = np.asarray(x)
    power = np.linalg.norm(x) ** 2 / x.size + noise_var
    gamma = factor * np.sqrt(power / 2.0)
    return float(gamma) if gamma > 0 else 1.0

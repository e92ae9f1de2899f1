import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import TABLES
from qmimo.quantizer import (DteChannelSpec, QuantizerSpec, apply_dte, apply_dte_analog,
                             bit_volume, complex_codes, pack_matrix, packed_size, peak_gamma,
                             quantize_complex, quantize_real, sigma_gamma, unpack_matrix)



@pytest.mark.parametrize("params,table", TABLES)
def test_hand_table(params, table):
    spec = QuantizerSpec(*params)
    for x, want in table:
        assert quantize_real(x, spec) == want, x


def test_spec_examples():
    spec = QuantizerSpec(1.0, 4)
    assert quantize_real(0.3, spec) == 0.25
    assert quantize_real(1.5, spec) == 0.75
    assert quantize_real(-0.9, spec) == -0.75
    assert spec.delta == 0.5 and spec.bits == 2
    assert np.array_equal(spec.alphabet, [-0.75, -0.25, 0.25, 0.75])


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantizerSpec(1.0, 6)
    with pytest.raises(ValueError):
        QuantizerSpec(0.0, 4)
    with pytest.raises(ValueError):
        DteChannelSpec(1.0)
    with pytest.raises(ValueError):
        DteChannelSpec(0.1, mode="burst")


def test_complex_zero_and_idempotence(rng):
    spec = QuantizerSpec(1.0, 4)
    assert np.all(quantize_complex(np.zeros((3, 3)), spec) == 0.25 + 0.25j)
    y = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
    z = quantize_complex(y, spec)
    assert np.array_equal(quantize_complex(z, spec), z)


def test_complex_cell_bound(rng):
    spec = QuantizerSpec(1.0, 16)
    y = rng.uniform(-1, 1, (4, 4)) + 1j * rng.uniform(-1, 1, (4, 4))
    e = y - quantize_complex(y, spec)
    assert np.all(np.abs(e.real) <= spec.delta / 2) and np.all(np.abs(e.imag) <= spec.delta / 2)


def test_dte_zero_probability(rng):
    spec = QuantizerSpec(1.0, 8)
    z = quantize_complex(rng.standard_normal((20, 20)), spec)
    zc, t = apply_dte(z, DteChannelSpec(0.0, seed=1), spec)
    assert np.array_equal(zc, z) and not t.any()


def test_dte_density_monte_carlo(rng):
    spec = QuantizerSpec(1.0, 4)
    z = quantize_complex(rng.standard_normal((128, 128)) + 1j * rng.standard_normal((128, 128)), spec)
    frac = [np.count_nonzero(apply_dte(z, DteChannelSpec(0.01, seed=s), spec)[1]) / z.size
            for s in range(100)]
    assert abs(np.mean(frac) - 0.01) <= 0.005
    assert all(abs(f - 0.01) <= 0.005 for f in frac)


@pytest.mark.parametrize("mode", ["symbol", "bit"])
def test_dte_alphabet_and_determinism(rng, mode):
    spec = QuantizerSpec(2.0, 8)
    z = quantize_complex(rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30)), spec)
    ch = DteChannelSpec(0.2, seed=42, mode=mode)
    zc, t = apply_dte(z, ch, spec)
    assert np.isin(zc.real, spec.alphabet).all() and np.isin(zc.imag, spec.alphabet).all()
    assert np.allclose(zc, z + t)
    zc2, _ = apply_dte(z, ch, spec)
    assert np.array_equal(zc, zc2)


def test_dte_symbol_support_matches_hits():
    spec = QuantizerSpec(1.0, 4)
    z = quantize_complex(np.zeros((50, 50)), spec)
    ch = DteChannelSpec(0.1, seed=5)
    _, t = apply_dte(z, ch, spec)
    hit = np.random.default_rng(5).random(z.shape) < 0.1
    assert np.array_equal(t != 0, hit)
    _, ta = apply_dte_analog(np.zeros((50, 50)), ch, 1.0)
    assert np.array_equal(ta != 0, hit)
    assert np.abs(ta.real).max() <= 1.0 and np.abs(ta.imag).max() <= 1.0


def test_bit_volume_examples():
    assert bit_volume(1, 1, 1, 1, 1) == 2
    assert bit_volume(3, 10, 77, 128, 4) / bit_volume(3, 10, 77, 128, 14) == pytest.approx(2 / 7)
    with pytest.raises(ValueError):
        bit_volume(0, 1, 1, 1, 1)


def test_bit_volume_matches_packed_bytes(rng):
    total = bit_volume(3, 10, 128, 128, 4)
    assert total == 3932160
    spec = QuantizerSpec(1.0, 16)
    payload = 0
    for _ in range(30):
        z = quantize_complex(rng.standard_normal((128, 128)) + 1j * rng.standard_normal((128, 128)), spec)
        buf = pack_matrix(z, spec)
        assert len(buf) == packed_size(128, 128, 4)
        payload += 8 * (len(buf) - 16)
    assert payload == total


def test_pack_roundtrip_and_header(rng):
    spec = QuantizerSpec(1.5, 8)
    z = quantize_complex(rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7)), spec)
    buf = pack_matrix(z, spec)
    assert struct.unpack_from("<IIIf", buf) == (5, 7, 3, 1.5)
    z2, spec2 = unpack_matrix(buf)
    assert spec2 == spec
    assert np.array_equal(z2, z)


def test_pack_bit_layout():
    spec = QuantizerSpec(1.0, 4)
    # codes: re=3 (0b11), im=1 (0b01) then re=0, im=2 -> bits LSB first: 1,1,1,0,0,0,0,1
    z = np.array([[0.75 - 0.25j, -0.75 + 0.25j]])
    buf = pack_matrix(z, spec)
    assert buf[16:] == bytes([0b10000111])


def test_gamma_rules():
    x = np.array([[0.5 - 2.0j, 1.0]])
    assert peak_gamma(x) == 2.0
    assert peak_gamma(x, noise_var=2.0, factor=3.0) == pytest.approx(5.0)
    assert sigma_gamma(np.ones((2, 2)), 0.0) == pytest.approx(3 * np.sqrt(0.5))
    assert peak_gamma(np.zeros(3)) == 1.0


# ---- properties -------------------------------------------------------------

specs = st.builds(QuantizerSpec.from_bits, st.floats(0.1, 100.0), st.integers(1, 14))


@given(specs, st.floats(-1.0, 1.0))
def test_consistency_bound(spec, u):
    x = u * spec.gamma
    # decode rounding is relative to gamma, not delta
    assert abs(x - quantize_real(x, spec)) <= spec.delta / 2 + 8 * np.finfo(float).eps * spec.gamma


@given(specs, st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_alphabet_closure(spec, xs):
    out = quantize_real(np.array(xs), spec)
    assert np.isin(out, spec.alphabet).all()
    a = spec.alphabet
    assert len(np.unique(a)) == spec.levels
    assert a.min() == pytest.approx(-spec.gamma + spec.delta / 2)
    assert a.max() == pytest.approx(spec.gamma - spec.delta / 2)


@given(specs, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_monotone(spec, a, b):
    lo, hi = min(a, b), max(a, b)
    assert quantize_real(lo, spec) <= quantize_real(hi, spec)


@given(specs, st.floats(1.0001, 1e3))
def test_saturation(spec, u):
    x = u * spec.gamma
    top = spec.gamma - spec.gamma / spec.levels
    assert quantize_real(x, spec) == pytest.approx(top)
    assert quantize_real(-x, spec) == pytest.approx(-top)


@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.2), st.integers(1, 6))
def test_dte_sparsity(seed, p, bits):
    spec = QuantizerSpec.from_bits(1.0, bits)
    z = quantize_complex(np.zeros((64, 64)), spec)
    _, t = apply_dte(z, DteChannelSpec(p, seed=seed), spec)
    frac = np.count_nonzero(t) / t.size
    # 4 sigma of the binomial keeps 200 examples from flaking
    assert abs(frac - p) <= 4 * np.sqrt(p * (1 - p) / t.size) + 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 12), st.integers(1, 12))
def test_pack_roundtrip_property(seed, bits, L, Q):
    rng = np.random.default_rng(seed)
    spec = QuantizerSpec.from_bits(1.0, bits)
    z = quantize_complex(rng.uniform(-1.2, 1.2, (L, Q)) + 1j * rng.uniform(-1.2, 1.2, (L, Q)), spec)
    z2, _ = unpack_matrix(pack_matrix(z, spec))
    re, im = complex_codes(z, spec)
    re2, im2 = complex_codes(z2, spec)
    assert np.array_equal(re, re2) and np.array_equal(im, im2)

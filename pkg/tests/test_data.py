import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbnbrdf.data import (MERL_DIMS, MERL_SCALES, EmptySourceError, GgxMicrofacet, Lambertian,
                          MerlBrdf, MerlFormatError, ScaledConstant, merl_eval, merl_eval_rusink,
                          merl_indices, parse_merl, parse_source, rasterize, read_merl,
                          sample_dataset, write_merl)
from pbnbrdf.field import hemisphere_integral_quadrature
from pbnbrdf.geom import DirectionPair, RusinCoords, SphericalDir, TWO_PI, io_to_rusink, rusink_to_io

N_VALUES = 3 * 90 * 90 * 180


@pytest.fixture(scope="module")
def lambert_bytes():
    return write_merl(Lambertian((0.5, 0.3, 0.2)))


@pytest.fixture(scope="module")
def random_merl():
    rng = np.random.default_rng(0)
    table = rng.uniform(0, 2000, (3,) + MERL_DIMS)
    table[:, :, 85:, :] = -1.0  # a block of invalid cells
    return MerlBrdf(table)


# -- container --------------------------------------------------------------

def test_header_layout(lambert_bytes):
    assert len(lambert_bytes) == 12 + 8 * N_VALUES
    assert struct.unpack("<3i", lambert_bytes[:12]) == (90, 90, 180)


def test_round_trip_is_bit_exact(random_merl):
    data = write_merl(random_merl)
    back = parse_merl(data)
    assert back.table.tobytes() == random_merl.table.tobytes()
    assert write_merl(back) == data


def test_round_trip_through_a_file(tmp_path, lambert_bytes):
    p = tmp_path / "lambert.binary"
    p.write_bytes(lambert_bytes)
    assert write_merl(read_merl(p)) == lambert_bytes


def test_truncated_payload(lambert_bytes):
    with pytest.raises(MerlFormatError) as exc:
        parse_merl(lambert_bytes[:-1])
    assert "truncated" in str(exc.value)
    assert exc.value.offset == len(lambert_bytes) - 1


def test_truncated_header():
    with pytest.raises(MerlFormatError) as exc:
        parse_merl(b"\x5a\x00\x00")
    assert exc.value.offset == 3


def test_wrong_dims():
    data = struct.pack("<3i", 45, 45, 90) + bytes(8 * 3 * 45 * 45 * 90)
    with pytest.raises(MerlFormatError) as exc:
        parse_merl(data)
    assert "(45, 45, 90)" in str(exc.value)
    assert exc.value.offset == 0


def test_trailing_bytes(lambert_bytes):
    with pytest.raises(MerlFormatError) as exc:
        parse_merl(lambert_bytes + b"\0")
    assert exc.value.offset == len(lambert_bytes)


def test_channel_major_index_formula():
    table = np.arange(N_VALUES, dtype=np.float64).reshape((3,) + MERL_DIMS)
    payload = np.frombuffer(write_merl(MerlBrdf(table))[12:], dtype="<f8")
    ih, idd, ip = 17, 42, 101
    flat = ip + 180 * (idd + 90 * ih)
    for c in range(3):
        assert payload[c * 90 * 90 * 180 + flat] == table[c, ih, idd, ip]


# -- lookup -----------------------------------------------------------------

def test_index_zero_returns_first_entries(random_merl):
    vals, valid = merl_eval_rusink(random_merl, RusinCoords(0.0, 0.0, 0.0, 0.0))
    assert valid
    expected = random_merl.table[:, 0, 0, 0] * MERL_SCALES
    np.testing.assert_array_equal(vals, expected)


def test_index_zero_from_directions(random_merl):
    vals, valid = merl_eval(random_merl, DirectionPair(SphericalDir(0.0, 0.0), SphericalDir(0.0, 0.0)))
    np.testing.assert_array_equal(vals, random_merl.table[:, 0, 0, 0] * MERL_SCALES)


def test_phi_d_fold(random_merl):
    rng = np.random.default_rng(1)
    r = RusinCoords(*(rng.uniform(0, np.pi / 2, 1000) for _ in range(3)), rng.uniform(0, np.pi, 1000))
    r = r._replace(phi_h=np.zeros(1000))
    a, va = merl_eval_rusink(random_merl, r)
    b, vb = merl_eval_rusink(random_merl, r._replace(phi_d=r.phi_d + np.pi))
    np.testing.assert_array_equal(va, vb)
    np.testing.assert_array_equal(a, b)


def test_invalid_cells_are_surfaced(random_merl):
    r = RusinCoords(np.array([0.3]), np.array([0.0]), np.array([1.55]), np.array([0.2]))
    vals, valid = merl_eval_rusink(random_merl, r)
    assert not valid[0]
    assert np.all(vals >= 0)
    out = random_merl.eval(*rusink_to_io(RusinCoords(0.3, 0.0, 1.55, 0.2))[0])
    assert np.all(np.isnan(out))


def _brute_force_index(wi, wo):
    """Independent indexer: rotation matrices and the classic degree formulas."""
    def vec(t, p):
        return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])

    a, b = vec(*wi), vec(*wo)
    h = (a + b) / np.linalg.norm(a + b)
    th = math.acos(min(1.0, h[2]))
    ph = math.atan2(h[1], h[0])
    rz = np.array([[math.cos(-ph), -math.sin(-ph), 0], [math.sin(-ph), math.cos(-ph), 0], [0, 0, 1]])
    ry = np.array([[math.cos(-th), 0, math.sin(-th)], [0, 1, 0], [-math.sin(-th), 0, math.cos(-th)]])
    d = ry @ rz @ a
    td = math.acos(max(-1.0, min(1.0, d[2])))
    pd = math.atan2(d[1], d[0])
    th_deg = math.degrees(th)
    ih = 0 if th_deg <= 0 else min(89, int(math.sqrt(th_deg / 90.0 * 90.0 * 90.0)))
    idd = min(89, max(0, int(math.degrees(td) / 90.0 * 90)))
    if pd < 0:
        pd += math.pi
    if pd >= math.pi:
        pd -= math.pi
    ip = min(179, max(0, int(pd / math.pi * 180)))
    edge = min(abs(math.sqrt(th_deg / 90.0) * 90 - round(math.sqrt(th_deg / 90.0) * 90)),
               abs(math.degrees(td) - round(math.degrees(td))),
               abs(pd / math.pi * 180 - round(pd / math.pi * 180)))
    return (ih, idd, ip), edge


def test_indexer_agrees_with_brute_force():
    rng = np.random.default_rng(2)
    n = 10_000
    wi = SphericalDir(rng.uniform(0, np.pi / 2, n), rng.uniform(0, TWO_PI, n))
    wo = SphericalDir(rng.uniform(0, np.pi / 2, n), rng.uniform(0, TWO_PI, n))
    ih, idd, ip = merl_indices(io_to_rusink(wi, wo))
    checked = 0
    for k in range(n):
        ref, edge = _brute_force_index((wi.theta[k], wi.phi[k]), (wo.theta[k], wo.phi[k]))
        if edge < 1e-7:
            continue  # the two implementations may round a bin edge differently
        assert (ih[k], idd[k], ip[k]) == ref, k
        checked += 1
    assert checked > 0.999 * n


def test_rasterized_lookup_hits_cell_centers():
    m = rasterize(GgxMicrofacet(0.4, (0.9, 0.9, 0.9), (0.1, 0.1, 0.1)))
    from pbnbrdf.data import merl_cell_centers
    c = merl_cell_centers()
    ih, idd, ip = merl_indices(c)
    I, J, K = np.meshgrid(np.arange(90), np.arange(90), np.arange(180), indexing="ij")
    assert np.array_equal(ih, I) and np.array_equal(idd, J) and np.array_equal(ip, K)
    _, geo_ok = rusink_to_io(c)
    assert np.array_equal(m.valid_cells(), geo_ok)


# -- analytic sources -------------------------------------------------------

def test_lambertian_value():
    f = Lambertian((0.5, 0.5, 0.5)).eval(SphericalDir(0.3, 0.1), SphericalDir(1.1, 2.0))
    np.testing.assert_allclose(f, 0.5 / np.pi)
    assert f[0] == pytest.approx(0.159155, abs=1e-6)


def test_scaled_constant_integral():
    src = ScaledConstant((1.5 / np.pi,) * 3)
    np.testing.assert_allclose(src.hemispherical(None), 1.5, rtol=1e-15)
    q = hemisphere_integral_quadrature(src.eval, SphericalDir(np.array([0.4]), np.array([0.0])), 32)
    np.testing.assert_allclose(q, 1.5, atol=1e-10)


def test_ggx_reciprocity():
    rng = np.random.default_rng(3)
    src = GgxMicrofacet(0.5, (0.04, 0.5, 1.0), (0.2, 0.1, 0.0))
    wi = SphericalDir(rng.uniform(0, np.pi / 2, 1000), rng.uniform(0, TWO_PI, 1000))
    wo = SphericalDir(rng.uniform(0, np.pi / 2, 1000), rng.uniform(0, TWO_PI, 1000))
    a, b = src.eval(wi, wo), src.eval(wo, wi)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0, np.pi / 2), st.floats(0, TWO_PI),
       st.floats(0, np.pi / 2), st.floats(0, TWO_PI))
def test_ggx_is_positive_and_finite(alpha, t1, p1, t2, p2):
    f = GgxMicrofacet(alpha, (1.0,) * 3).eval(SphericalDir(t1, p1), SphericalDir(t2, p2))
    assert np.all(np.isfinite(f)) and np.all(f >= 0)


def test_parse_source():
    assert parse_source("lambertian:0.5") == Lambertian((0.5, 0.5, 0.5))
    assert parse_source("constant:1.5/pi").value[0] == pytest.approx(1.5 / np.pi)
    g = parse_source("ggx:0.3,1.0,0.1")
    assert (g.roughness, g.f0, g.diffuse) == (0.3, (1.0,) * 3, (0.1,) * 3)
    for bad in ("lambertian:1.5", "ggx:0", "phong:1", "constant:-1"):
        with pytest.raises(ValueError):
            parse_source(bad)


# -- sampling ---------------------------------------------------------------

def test_sampling_is_deterministic():
    src = GgxMicrofacet(0.3)
    a, b = sample_dataset(src, 500, 42), sample_dataset(src, 500, 42)
    for x, y in zip((a.wi, a.wo, a.value), (b.wi, b.wo, b.value)):
        np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
    c = sample_dataset(src, 500, 43)
    assert not np.array_equal(a.value, c.value)


def test_lambertian_samples():
    s = sample_dataset(Lambertian((0.5, 0.5, 0.5)), 10_000, 0)
    assert len(s) == 10_000
    np.testing.assert_array_equal(s.value, np.full((10_000, 3), 0.5 / np.pi))
    assert np.all(s.wi.theta <= np.pi / 2) and np.all(s.wo.theta <= np.pi / 2)
    sample = s[3]
    assert sample.value.shape == (3,)
    assert sample.pair.wi.theta == s.wi.theta[3]


def test_single_valid_cell_fixture():
    table = -np.ones((3,) + MERL_DIMS)
    cell = (30, 20, 50)
    table[(slice(None),) + cell] = (100.0, 200.0, 300.0)
    m = parse_merl(write_merl(MerlBrdf(table)))
    s = sample_dataset(m, 200, 0)
    np.testing.assert_array_equal(s.value, np.tile(np.array([100.0, 200.0, 300.0]) * MERL_SCALES, (200, 1)))
    # the direction pairs map back into that cell
    ih, idd, ip = merl_indices(io_to_rusink(s.wi, s.wo))
    assert set(zip(ih, idd, ip)) == {cell}


def test_empty_source():
    with pytest.raises(EmptySourceError):
        sample_dataset(MerlBrdf(-np.ones((3,) + MERL_DIMS)), 10, 0)


def test_rasterized_lambertian_samples_exactly():
    m = parse_merl(write_merl(Lambertian((0.5, 0.5, 0.5))))
    s = sample_dataset(m, 5000, 1)
    np.testing.assert_allclose(s.value, 0.5 / np.pi, rtol=0, atol=1e-12)
    assert np.all(s.value >= 0)
    # merl lookups of the sampled directions agree too
    vals, valid = merl_eval(m, DirectionPair(s.wi, s.wo))
    assert np.all(valid)
    np.testing.assert_allclose(vals, 0.5 / np.pi, atol=1e-12)

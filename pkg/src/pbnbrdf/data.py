"""BRDF data sources: MERL tables, analytic reference BRDFs and sampling.

Every source exposes ``eval(wi, wo) -> (..., 3)`` over spherical directions
(arrays allowed) and an ``isotropic`` flag.  MERL lookups return NaN for
invalid cells; use :func:`merl_eval` to get the validity mask explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geom import (DirectionPair, RusinCoords, SphericalDir, TWO_PI, io_to_rusink,
                   rusink_to_io, sph_to_cart)

MERL_DIMS = (90, 90, 180)
MERL_SCALES = np.array([1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0])
MERL_HEADER_BYTES = 12
MERL_PAYLOAD_BYTES = 3 * 90 * 90 * 180 * 8

# training samples stay this far from the pole and the horizon
BOUNDARY_BAND = 1e-3


class MerlFormatError(ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class EmptySourceError(ValueError):
    pass


def _rgb(x):
    a = np.broadcast_to(np.asarray(x, dtype=np.float64), (3,)).copy()
    return a


# -- analytic references -----------------------------------------------------

@dataclass(frozen=True)
class Lambertian:
    albedo: tuple = (0.5, 0.5, 0.5)
    isotropic = True

    def eval(self, wi, wo):
        shape = np.broadcast(np.asarray(wi[0]), np.asarray(wo[0])).shape
        return np.broadcast_to(_rgb(self.albedo) / np.pi, shape + (3,)).copy()

    def hemispherical(self, wi):
        return _rgb(self.albedo)


@dataclass(frozen=True)
class ScaledConstant:
    """Constant BRDF value per steradian; may exceed the passivity bound."""

    value: tuple = (1.5 / np.pi,) * 3
    isotropic = True

    def eval(self, wi, wo):
        shape = np.broadcast(np.asarray(wi[0]), np.asarray(wo[0])).shape
        return np.broadcast_to(_rgb(self.value), shape + (3,)).copy()

    def hemispherical(self, wi):
        return _rgb(self.value) * np.pi


@dataclass(frozen=True)
class GgxMicrofacet:
    """GGX specular lobe (Smith shadowing, Schlick Fresnel) plus Lambertian diffuse."""

    roughness: float = 0.5
    f0: tuple = (0.04, 0.04, 0.04)
    diffuse: tuple = (0.0, 0.0, 0.0)
    isotropic = True

    def eval(self, wi, wo):
        a2 = self.roughness ** 2
        li = np.stack(sph_to_cart(np.asarray(wi[0], float), np.asarray(wi[1], float)), -1)
        lo = np.stack(sph_to_cart(np.asarray(wo[0], float), np.asarray(wo[1], float)), -1)
        li, lo = np.broadcast_arrays(li, lo)
        s = li + lo
        norm = np.linalg.norm(s, axis=-1, keepdims=True)
        h = s / np.where(norm > 0, norm, 1.0)
        ci = np.clip(li[..., 2], 1e-8, 1.0)
        co = np.clip(lo[..., 2], 1e-8, 1.0)
        ch = np.clip(h[..., 2], 0.0, 1.0)
        d = a2 / (np.pi * (ch * ch * (a2 - 1.0) + 1.0) ** 2)

        def g1(c):
            return 2.0 * c / (c + np.sqrt(a2 + (1.0 - a2) * c * c))

        vh = np.clip(np.sum(li * h, axis=-1), 0.0, 1.0)
        f0 = _rgb(self.f0)
        fres = f0 + (1.0 - f0) * ((1.0 - vh) ** 5)[..., None]
        spec = (d * g1(ci) * g1(co) / (4.0 * ci * co))[..., None] * fres
        return spec + _rgb(self.diffuse) / np.pi


def parse_source(desc):
    """Analytic descriptor such as ``lambertian:0.5``, ``constant:1.5/pi``,
    ``ggx:0.5,1.0,0.0`` (roughness, F0, diffuse) or ``lambertian:0.2,0.1,0.05``."""
    kind, _, args = desc.partition(":")
    kind = kind.strip().lower()

    def num(t):
        t = t.strip().lower()
        if t.endswith("/pi"):
            return float(t[:-3]) / np.pi
        return float(t)

    vals = [num(t) for t in args.split(",")] if args.strip() else []
    if kind == "lambertian":
        albedo = tuple(vals) if len(vals) == 3 else (vals[0] if vals else 0.5,) * 3
        if any(a < 0 or a > 1 for a in albedo):
            raise ValueError(f"lambertian albedo must be in [0, 1]: {albedo}")
        return Lambertian(albedo)
    if kind in ("constant", "scaledconstant"):
        value = tuple(vals) if len(vals) == 3 else (vals[0] if vals else 1.5 / np.pi,) * 3
        if any(v < 0 for v in value):
            raise ValueError("constant BRDF must be non-negative")
        return ScaledConstant(value)
    if kind == "ggx":
        rough = vals[0] if vals else 0.5
        if not 0 < rough <= 1:
            raise ValueError(f"ggx roughness must be in (0, 1]: {rough}")
        f0 = (vals[1] if len(vals) > 1 else 0.04,) * 3
        dif = (vals[2] if len(vals) > 2 else 0.0,) * 3
        return GgxMicrofacet(rough, f0, dif)
    raise ValueError(f"unknown analytic source {desc!r}")


# -- MERL ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MerlBrdf:
    table: np.ndarray  # (3, 90, 90, 180), raw stored values
    scales: np.ndarray = field(default_factory=lambda: MERL_SCALES.copy())
    isotropic = True

    @property
    def dims(self):
        return self.table.shape[1:]

    def valid_cells(self):
        return np.all(self.table >= 0, axis=0)

    def eval(self, wi, wo):
        vals, valid = merl_eval(self, DirectionPair(SphericalDir(*wi), SphericalDir(*wo)))
        return np.where(valid[..., None], vals, np.nan)


def parse_merl(data: bytes) -> MerlBrdf:
    if len(data) < MERL_HEADER_BYTES:
        raise MerlFormatError("truncated header", len(data))
    dims = struct.unpack("<3i", data[:MERL_HEADER_BYTES])
    if dims != MERL_DIMS:
        raise MerlFormatError(f"unsupported dims {dims}, expected {MERL_DIMS}", 0)
    expected = MERL_HEADER_BYTES + MERL_PAYLOAD_BYTES
    if len(data) < expected:
        raise MerlFormatError(f"truncated payload: {len(data)} bytes, expected {expected}", len(data))
    if len(data) > expected:
        raise MerlFormatError(f"trailing data after payload ({len(data) - expected} bytes)", expected)
    table = np.frombuffer(data, dtype="<f8", offset=MERL_HEADER_BYTES).astype(np.float64)
    return MerlBrdf(table.reshape((3,) + MERL_DIMS))


def read_merl(path) -> MerlBrdf:
    with open(path, "rb") as f:
        return parse_merl(f.read())


def write_merl(m) -> bytes:
    """Serialize a MERL table; analytic sources are rasterized first."""
    if not isinstance(m, MerlBrdf):
        m = rasterize(m)
    table = np.ascontiguousarray(m.table, dtype="<f8")
    if table.shape != (3,) + MERL_DIMS:
        raise ValueError(f"table shape {table.shape} is not (3, 90, 90, 180)")
    return struct.pack("<3i", *MERL_DIMS) + table.tobytes()


def merl_indices(r):
    """Nearest-cell (theta_h, theta_d, phi_d) indices for Rusinkiewicz coords."""
    th = np.asarray(r.theta_h, dtype=np.float64)
    td = np.asarray(r.theta_d, dtype=np.float64)
    pd = np.mod(np.asarray(r.phi_d, dtype=np.float64), np.pi)
    ih = np.floor(np.sqrt(np.clip(th, 0.0, None) / (np.pi / 2)) * 90).astype(np.int64)
    idd = np.floor(td / (np.pi / 2) * 90).astype(np.int64)
    ip = np.floor(pd / np.pi * 180).astype(np.int64)
    return np.clip(ih, 0, 89), np.clip(idd, 0, 89), np.clip(ip, 0, 179)


def merl_cell_centers():
    """Rusinkiewicz angles (phi_h = 0) at the center of every table cell."""
    i = np.arange(90)
    th = ((i + 0.5) / 90) ** 2 * (np.pi / 2)
    td = (i + 0.5) / 90 * (np.pi / 2)
    pd = (np.arange(180) + 0.5) / 180 * np.pi
    TH, TD, PD = np.meshgrid(th, td, pd, indexing="ij")
    return RusinCoords(TH, np.zeros_like(TH), TD, PD)


def merl_eval(m: MerlBrdf, p: DirectionPair):
    """Scaled RGB lookup for direction pairs; returns ``(values, valid)``."""
    r = io_to_rusink(p.wi, p.wo)
    return merl_eval_rusink(m, r)


def merl_eval_rusink(m, r):
    ih, idd, ip = merl_indices(r)
    raw = m.table[:, ih, idd, ip]  # (3, ...)
    raw = np.moveaxis(raw, 0, -1)
    valid = np.all(raw >= 0, axis=-1)
    vals = np.where(valid[..., None], raw * m.scales, 0.0)
    return vals, valid


def rasterize(src) -> MerlBrdf:
    """Evaluate a source at every cell center; unreachable geometry is stored as -1."""
    r = merl_cell_centers()
    pair, valid = rusink_to_io(r)
    vals = np.zeros(valid.shape + (3,))
    vals[valid] = src.eval(
        SphericalDir(pair.wi.theta[valid], pair.wi.phi[valid]),
        SphericalDir(pair.wo.theta[valid], pair.wo.phi[valid]),
    )
    table = np.where(valid[..., None], vals / MERL_SCALES, -1.0)
    return MerlBrdf(np.ascontiguousarray(np.moveaxis(table, -1, 0)))


# -- sampling --------------------------------------------------------------

class BrdfSample(NamedTuple):
    pair: DirectionPair
    rusink: RusinCoords
    value: np.ndarray


@dataclass
class SampleSet:
    """Columnar training samples; indexing yields :class:`BrdfSample`."""

    wi: SphericalDir
    wo: SphericalDir
    rusink: RusinCoords
    value: np.ndarray  # (n, 3)

    def __len__(self):
        return len(self.value)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            pair = DirectionPair(SphericalDir(self.wi.theta[i], self.wi.phi[i]),
                                 SphericalDir(self.wo.theta[i], self.wo.phi[i]))
            return BrdfSample(pair, RusinCoords(*(c[i] for c in self.rusink)), self.value[i])
        return SampleSet(SphericalDir(self.wi.theta[i], self.wi.phi[i]),
                         SphericalDir(self.wo.theta[i], self.wo.phi[i]),
                         RusinCoords(*(c[i] for c in self.rusink)), self.value[i])


def _in_band(theta):
    return (theta >= BOUNDARY_BAND) & (theta <= np.pi / 2 - BOUNDARY_BAND)


def sample_dataset(src, n, seed) -> SampleSet:
    """Draw ``n`` training samples, deterministic in ``seed``.

    MERL: uniform over valid cells (cell centers, random phi_h and phi_d
    branch).  Analytic: independent cosine-weighted incident and outgoing
    directions.  Both directions stay inside the pole/horizon band.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(src, MerlBrdf):
        return _sample_merl(src, n, rng)
    chunks, have = [], 0
    while have < n:
        m = 2 * (n - have) + 16
        u = rng.random((4, m))
        ti, to = np.arcsin(np.sqrt(u[0])), np.arcsin(np.sqrt(u[1]))
        keep = _in_band(ti) & _in_band(to)
        chunks.append(np.stack([ti, TWO_PI * u[2], to, TWO_PI * u[3]])[:, keep])
        have += int(keep.sum())
    a = np.concatenate(chunks, axis=1)[:, :n]
    wi, wo = SphericalDir(a[0], a[1]), SphericalDir(a[2], a[3])
    return SampleSet(wi, wo, io_to_rusink(wi, wo), src.eval(wi, wo))


def _sample_merl(m, n, rng):
    centers = merl_cell_centers()
    pair, geo_ok = rusink_to_io(centers)
    ok = m.valid_cells() & geo_ok & _in_band(pair.wi.theta) & _in_band(pair.wo.theta)
    cells = np.flatnonzero(ok)
    if cells.size == 0:
        raise EmptySourceError("MERL source has no valid cells")
    pick = cells[rng.integers(0, cells.size, n)]
    phi_h = rng.random(n) * TWO_PI
    flip = rng.integers(0, 2, n) * np.pi
    r = RusinCoords(centers.theta_h.ravel()[pick], phi_h,
                    centers.theta_d.ravel()[pick], centers.phi_d.ravel()[pick] + flip)
    pair, _ = rusink_to_io(r)
    vals, _ = merl_eval_rusink(m, r)
    return SampleSet(pair.wi, pair.wo, r, vals)

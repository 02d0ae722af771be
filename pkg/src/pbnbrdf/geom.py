"""Direction and coordinate utilities.

Everything here is written against generic scalar arithmetic so the same
code runs on floats, numpy arrays and :class:`~pbnbrdf.autodiff.Dual2`
numbers (whose components may themselves be tape variables).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Dual2, value_of

TWO_PI = 2.0 * np.pi
POLE_EPS = 1e-6
DEGENERATE_EPS = 1e-8


class DegenerateInputError(ValueError):
    """Incident and outgoing directions are (nearly) antipodal."""


class SphericalDir(NamedTuple):
    theta: object
    phi: object


class RusinCoords(NamedTuple):
    theta_h: object
    phi_h: object
    theta_d: object
    phi_d: object


class DirectionPair(NamedTuple):
    wi: SphericalDir
    wo: SphericalDir


def _is_dual(*xs):
    return any(isinstance(x, Dual2) for x in xs)


def _where(mask, a, b):
    if isinstance(a, Dual2) or isinstance(b, Dual2):
        a = a if isinstance(a, Dual2) else ad.constant(a)
        b = b if isinstance(b, Dual2) else ad.constant(b)
        return Dual2(*(ad.select(mask, x, y) for x, y in zip(a, b)))
    return ad.select(mask, a, b)


def _const_like(x, value):
    return ad.constant(value) if isinstance(x, Dual2) else value


def sph_to_cart(theta, phi):
    """Unit vector ``(sin t cos p, sin t sin p, cos t)`` as a 3-tuple."""
    st = ad.sin(theta)
    return ad.mul(st, ad.cos(phi)), ad.mul(st, ad.sin(phi)), ad.cos(theta)


def _polar_angle(z):
    """arccos(z) with a pole guard: within POLE_EPS of the pole the angle is
    returned exactly but treated as locally constant."""
    zv = np.asarray(value_of(z), dtype=np.float64)
    exact = np.arccos(np.clip(zv, -1.0, 1.0))
    if not isinstance(z, Dual2):
        if np.ndim(exact) == 0:
            return float(exact)
        return exact
    pole = zv > np.cos(POLE_EPS)
    if not np.any(pole):
        return ad.arccos(z)
    safe = _where(pole, 0.5, z)
    return _where(pole, ad.constant(exact), ad.arccos(safe))


def _azimuth(y, x, radius_xy_sq):
    """atan2 wrapped to [0, 2*pi); zero (and locally constant) at the pole."""
    r = np.asarray(value_of(radius_xy_sq))
    pole = r < np.sin(POLE_EPS) ** 2
    if np.any(pole):
        x = _where(pole, 1.0, x)
        y = _where(pole, 0.0, y)
    phi = ad.arctan2(y, x)
    neg = np.asarray(value_of(phi)) < 0
    if isinstance(phi, Dual2):
        if np.any(neg):
            phi = ad.add(phi, np.where(neg, TWO_PI, 0.0))
        return phi
    phi = np.where(neg, phi + TWO_PI, phi)
    return float(phi) if np.ndim(phi) == 0 else phi


def io_to_rusink(wi, wo):
    """Rusinkiewicz coordinates of the pair ``(wi, wo)``.

    ``wi`` and ``wo`` are :class:`SphericalDir` (or ``(theta, phi)`` tuples).
    Raises :class:`DegenerateInputError` when ``|wi + wo| < 1e-8``.
    """
    ax, ay, az = sph_to_cart(*wi)
    bx, by, bz = sph_to_cart(*wo)
    sx, sy, sz = ad.add(ax, bx), ad.add(ay, by), ad.add(az, bz)
    sxy = ad.add(ad.mul(sx, sx), ad.mul(sy, sy))
    n2 = ad.add(sxy, ad.mul(sz, sz))
    if np.any(np.asarray(value_of(n2)) < DEGENERATE_EPS ** 2):
        raise DegenerateInputError("incident and outgoing directions are antipodal")
    n = ad.sqrt(n2) if _is_dual(n2) else np.sqrt(n2)
    hx, hy, hz = ad.div(sx, n), ad.div(sy, n), ad.div(sz, n)

    theta_h = _polar_angle(hz)
    phi_h = _azimuth(hy, hx, ad.div(sxy, n2))

    cp, sp = ad.cos(phi_h), ad.sin(phi_h)
    ct, st = ad.cos(theta_h), ad.sin(theta_h)
    # rotate wi by -phi_h about the normal, then by -theta_h about the binormal
    x1 = ad.add(ad.mul(ax, cp), ad.mul(ay, sp))
    y1 = ad.sub(ad.mul(ay, cp), ad.mul(ax, sp))
    dx = ad.sub(ad.mul(x1, ct), ad.mul(az, st))
    dz = ad.add(ad.mul(x1, st), ad.mul(az, ct))
    dy = y1

    theta_d = _polar_angle(dz)
    phi_d = _azimuth(dy, dx, ad.add(ad.mul(dx, dx), ad.mul(dy, dy)))
    return RusinCoords(theta_h, phi_h, theta_d, phi_d)


def _to_spherical(x, y, z):
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.mod(np.arctan2(y, x), TWO_PI)
    phi = np.where(np.hypot(x, y) < 1e-12, 0.0, phi)
    return theta, phi


def rusink_to_io(r):
    """Inverse of :func:`io_to_rusink` for plain numeric coordinates.

    Returns ``(pair, valid)`` where ``valid`` is False wherever one of the
    reconstructed directions lies below the horizon.  Such samples are
    flagged, not clamped.
    """
    th, ph, td, pd = (np.asarray(c, dtype=np.float64) for c in r)
    dx, dy, dz = np.sin(td) * np.cos(pd), np.sin(td) * np.sin(pd), np.cos(td)
    ct, st, cp, sp = np.cos(th), np.sin(th), np.cos(ph), np.sin(ph)

    def to_world(x, y, z):
        # inverse rotations: +theta_h about binormal, then +phi_h about normal
        x1 = x * ct + z * st
        z1 = -x * st + z * ct
        return x1 * cp - y * sp, x1 * sp + y * cp, z1

    wi_c = to_world(dx, dy, dz)
    wo_c = to_world(-dx, -dy, dz)
    valid = (wi_c[2] >= 0) & (wo_c[2] >= 0)
    wi = SphericalDir(*_to_spherical(*wi_c))
    wo = SphericalDir(*_to_spherical(*wo_c))
    if np.ndim(valid) == 0:
        wi = SphericalDir(float(wi.theta), float(wi.phi))
        wo = SphericalDir(float(wo.theta), float(wo.phi))
        valid = bool(valid)
    return DirectionPair(wi, wo), valid


def reciprocity_embed(r, doubled=True):
    """Map Rusinkiewicz angles to ``(h, d')`` unit vectors.

    With ``doubled`` the difference azimuth enters as ``2*phi_d``, which makes
    the embedding (and anything computed from it) pi-periodic in ``phi_d``.
    """
    h = sph_to_cart(r.theta_h, r.phi_h)
    pd = ad.mul(2.0, r.phi_d) if doubled else r.phi_d
    d = sph_to_cart(r.theta_d, pd)
    return h, d


def swap(p):
    return DirectionPair(p.wo, p.wi)


def cosine_hemisphere(rng, n):
    """``n`` cosine-weighted directions on the upper hemisphere."""
    u1, u2 = rng.random(n), rng.random(n)
    theta = np.arcsin(np.sqrt(u1))
    return SphericalDir(theta, TWO_PI * u2)

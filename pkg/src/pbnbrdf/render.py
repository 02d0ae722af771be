"""A tiny deterministic renderer: one sphere, orthographic camera, and either
a distant point light or the white furnace."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .field import FieldModel, ANTIDERIVATIVE, hemisphere_integral_closed, hemisphere_integral_quadrature
from .geom import SphericalDir, TWO_PI, sph_to_cart

log = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    pass


@dataclass
class Image:
    pixels: np.ndarray  # (height, width, 3) float64 linear radiance, row 0 at the top
    mask: np.ndarray  # (height, width) bool

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PointLight:
    direction: SphericalDir = SphericalDir(0.0, 0.0)  # world frame, theta from the camera axis
    radiance: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Furnace:
    intensity: float = field(default=1.0, init=False)


@dataclass(frozen=True)
class Scene:
    resolution: int = 256
    light: object = field(default_factory=PointLight)


@dataclass
class SphereHits:
    mask: np.ndarray
    normal: np.ndarray  # (k, 3) for covered pixels, row-major order
    tangent: np.ndarray
    bitangent: np.ndarray


def sphere_hits(resolution):
    """Covered pixels of a unit sphere seen by an orthographic camera on +z."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x, y = np.meshgrid(c, -c)  # image row 0 is the top (+y)
    r2 = x * x + y * y
    mask = r2 < 1.0
    nx, ny = x[mask], y[mask]
    nz = np.sqrt(1.0 - r2[mask])
    n = np.stack([nx, ny, nz], -1)
    # orthonormal basis continuous over the upper hemisphere of normals
    a = 1.0 / (1.0 + nz)
    b = -nx * ny * a
    t = np.stack([1.0 - nx * nx * a, b, -nx], -1)
    bt = np.stack([b, 1.0 - ny * ny * a, -ny], -1)
    return SphereHits(mask, n, t, bt)


def _to_local(hits, w):
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), hits.normal.shape)
    lx = np.sum(w * hits.tangent, -1)
    ly = np.sum(w * hits.bitangent, -1)
    lz = np.sum(w * hits.normal, -1)
    theta = np.arccos(np.clip(lz, -1.0, 1.0))
    phi = np.mod(np.arctan2(ly, lx), TWO_PI)
    return SphericalDir(theta, phi), lz


VIEW = np.array([0.0, 0.0, 1.0])


def _assemble(hits, values):
    img = np.zeros(hits.mask.shape + (3,))
    img[hits.mask] = values
    return Image(img, hits.mask.copy())


def render_direct(src, scene: Scene) -> Image:
    """Radiance ``f(wi, wo) cos(theta_i) L`` per covered pixel; no shadows."""
    light = scene.light
    if not isinstance(light, PointLight):
        raise TypeError("render_direct needs a PointLight scene")
    hits = sphere_hits(scene.resolution)
    wl = np.array(sph_to_cart(float(light.direction.theta), float(light.direction.phi)))
    wi, cos_i = _to_local(hits, wl)
    wo, _ = _to_local(hits, VIEW)
    lit = cos_i > 0
    values = np.zeros((hits.normal.shape[0], 3))
    if np.any(lit):
        f = np.asarray(src.eval(SphericalDir(wi.theta[lit], wi.phi[lit]),
                                SphericalDir(wo.theta[lit], wo.phi[lit])))
        values[lit] = f * cos_i[lit, None] * np.asarray(light.radiance, dtype=np.float64)
    return _assemble(hits, values)


def furnace_integral(src, wi, quad_order=64):
    """Directional albedo per incident direction: closed form for antiderivative
    fields, Gauss-Legendre quadrature for everything else."""
    if isinstance(src, FieldModel) and src.mode == ANTIDERIVATIVE:
        return np.asarray(hemisphere_integral_closed(src, wi))
    return hemisphere_integral_quadrature(src.eval, wi, quad_order)


def render_furnace(src, scene: Scene = None, quad_order=64, reciprocity_probe=0) -> Image:
    """White furnace: each covered pixel holds the cosine-weighted integral of
    the BRDF over outgoing directions, with the incident direction set by the
    view geometry.  ``reciprocity_probe`` > 0 also integrates the swapped
    reading on that many pixels and logs a warning if they disagree."""
    scene = scene or Scene(light=Furnace())
    hits = sphere_hits(scene.resolution)
    wi, _ = _to_local(hits, VIEW)
    if getattr(src, "isotropic", False):
        # the integral depends only on theta_i
        key, inverse = np.unique(wi.theta, return_inverse=True)
        vals = furnace_integral(src, SphericalDir(key, np.zeros_like(key)), quad_order)[inverse]
    else:
        vals = furnace_integral(src, wi, quad_order)
    if reciprocity_probe:
        idx = np.linspace(0, len(wi.theta) - 1, reciprocity_probe).astype(int)
        probe = SphericalDir(wi.theta[idx], wi.phi[idx])
        direct = hemisphere_integral_quadrature(src.eval, probe, quad_order)
        swapped = hemisphere_integral_quadrature(lambda a, b: src.eval(b, a), probe, quad_order)
        gap = float(np.max(np.abs(swapped - direct)))
        if gap > 1e-3:
            log.warning("furnace readings disagree by %.3g: source is not reciprocal", gap)
    return _assemble(hits, vals)


def furnace_excess(img: Image) -> Image:
    """Energy created per covered pixel, ``max(0, v - 1)``."""
    out = np.where(img.mask[..., None], np.maximum(img.pixels - 1.0, 0.0), 0.0)
    return Image(out, img.mask.copy())


# -- image IO ----------------------------------------------------------------

def write_pfm(img: Image) -> bytes:
    h, w = img.pixels.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    rows = img.pixels[::-1].astype("<f4")
    return header + rows.tobytes()


def read_pfm(data: bytes) -> Image:
    parts = []
    pos = 0
    for _ in range(3):
        end = data.find(b"\n", pos)
        if end < 0:
            raise ImageFormatError("truncated PFM header")
        parts.append(data[pos:end].decode("ascii", "replace").strip())
        pos = end + 1
    if parts[0] != "PF":
        raise ImageFormatError(f"not a color PFM (magic {parts[0]!r})")
    try:
        w, h = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise ImageFormatError(f"malformed PFM header: {exc}") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise ImageFormatError("malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * 3
    if len(data) - pos != 4 * n:
        raise ImageFormatError(f"PFM payload has {len(data) - pos} bytes, expected {4 * n}")
    px = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.float64)
    px = px.reshape(h, w, 3)[::-1].copy()
    return Image(px, np.ones((h, w), dtype=bool))


def srgb_encode(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def write_ppm(img: Image, tonemap=srgb_encode) -> bytes:
    h, w = img.pixels.shape[:2]
    px = np.round(tonemap(img.pixels) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def save_image(img, path):
    data = write_ppm(img) if str(path).endswith(".ppm") else write_pfm(img)
    with open(path, "wb") as f:
        f.write(data)


def load_pfm(path):
    with open(path, "rb") as f:
        return read_pfm(f.read())


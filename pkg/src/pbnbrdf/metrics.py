"""Physical-plausibility and image-fidelity metrics.

Vector (RGB) quantities are reduced by the channel mean before comparison.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from skimage.color import deltaE_cie76, xyz2lab
from skimage.metrics import structural_similarity

from .data import BOUNDARY_BAND
from .field import hemisphere_integral
from .geom import RusinCoords, SphericalDir, TWO_PI, rusink_to_io

PSNR_CAP = 99.0

# linear sRGB (D65) -> CIE XYZ
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])


@dataclass
class MetricReport:
    hri: float | None = None
    hci: float | None = None
    epi: float | None = None
    eci: float | None = None
    image: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def format_table(self):
        """One summary row with every index scaled by 1e3."""
        cells = []
        for name in ("hri", "hci", "eci", "epi"):
            v = getattr(self, name)
            cells.append(f"{name.upper()} {'-' if v is None else f'{1e3 * v:.3g}'}")
        return " | ".join(cells)


def _channel_mean(x):
    return np.mean(np.asarray(x, dtype=np.float64), axis=-1)


def _valid_pairs(rng, n, draw, max_rounds=1000):
    """Collect ``n`` geometrically valid coordinate draws (resampling the rest)."""
    got = []
    have = 0
    for _ in range(max_rounds):
        r = draw(rng, 2 * (n - have) + 8)
        keep = r[-1]
        got.append(tuple(c[keep] for c in r[:-1]))
        have += int(keep.sum())
        if have >= n:
            break
    else:
        raise RuntimeError("could not draw enough valid geometry")
    cols = [np.concatenate([g[k] for g in got])[:n] for k in range(len(got[0]))]
    return cols


def _seam_draw(src, phi_h_range, phi_d_fn):
    iso = bool(getattr(src, "isotropic", False))

    def draw(rng, m):
        th = rng.uniform(0, np.pi / 2, m)
        td = rng.uniform(0, np.pi / 2, m)
        ph = np.zeros(m) if iso else rng.uniform(0, phi_h_range, m)
        pd = phi_d_fn(rng, m)
        a, va = rusink_to_io(RusinCoords(th, ph, td, pd))
        b, vb = rusink_to_io(RusinCoords(th, ph, td, pd + np.pi))
        ok = va & vb
        fa = np.zeros((m, 3))
        fb = np.zeros((m, 3))
        if np.any(ok):
            fa[ok] = src.eval(SphericalDir(a.wi.theta[ok], a.wi.phi[ok]), SphericalDir(a.wo.theta[ok], a.wo.phi[ok]))
            fb[ok] = src.eval(SphericalDir(b.wi.theta[ok], b.wi.phi[ok]), SphericalDir(b.wo.theta[ok], b.wo.phi[ok]))
        ok &= np.all(np.isfinite(fa), -1) & np.all(np.isfinite(fb), -1)
        return fa, fb, ok

    return draw


def hri(src, n=10_000, seed=0):
    """Mean squared difference between ``f(phi_d)`` and ``f(phi_d + pi)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    draw = _seam_draw(src, np.pi, lambda rng, m: rng.uniform(0, np.pi, m))
    fa, fb = _valid_pairs(np.random.default_rng(seed), n, draw)
    return float(np.mean((_channel_mean(fa) - _channel_mean(fb)) ** 2))


def hci(src, n=10_000, seed=0):
    """Mean absolute jump across the ``phi_d = 0 / pi`` seam."""
    if n < 1:
        raise ValueError("n must be >= 1")
    draw = _seam_draw(src, TWO_PI, lambda rng, m: np.zeros(m))
    fa, fb = _valid_pairs(np.random.default_rng(seed), n, draw)
    return float(np.mean(np.abs(_channel_mean(fa) - _channel_mean(fb))))


def epi(src, wi_count=64, quad_order=64, seed=0, printed_form=False):
    """Mean hinge excess of the directional albedo over 1.

    ``printed_form`` returns the mean of ``max(1, integral)`` instead, whose
    minimum is 1 for any passive BRDF.
    """
    if wi_count < 1:
        raise ValueError("wi_count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.sin(BOUNDARY_BAND) ** 2, np.sin(np.pi / 2 - BOUNDARY_BAND) ** 2
    u = lo + rng.random(wi_count) * (hi - lo)
    wi = SphericalDir(np.arcsin(np.sqrt(u)), TWO_PI * rng.random(wi_count))
    albedo = _channel_mean(hemisphere_integral(src, wi, quad_order))
    if printed_form:
        return float(np.mean(np.maximum(1.0, albedo)))
    return float(np.mean(np.maximum(albedo - 1.0, 0.0)))


def eci(furnace_image):
    """Mean energy created per covered pixel of a furnace render."""
    mask = furnace_image.mask
    if not np.any(mask):
        raise ValueError("furnace image has no covered pixels")
    px = furnace_image.pixels[mask]
    return float(np.mean(np.maximum(_channel_mean(px) - 1.0, 0.0)))


def _pixels(x):
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


def linear_rgb_to_lab(rgb):
    xyz = np.clip(rgb, 0.0, 1.0) @ _SRGB_TO_XYZ.T
    return xyz2lab(xyz, illuminant="D65", observer="2")


def ssim(a, b):
    """Mean SSIM over channels (Gaussian 11x11 window, sigma 1.5) on [0, 1] images."""
    a = np.clip(_pixels(a), 0.0, 1.0)
    b = np.clip(_pixels(b), 0.0, 1.0)
    return float(structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                       sigma=1.5, win_size=11, use_sample_covariance=False,
                                       K1=0.01, K2=0.03))


def psnr(a, b):
    a = np.clip(_pixels(a), 0.0, 1.0)
    b = np.clip(_pixels(b), 0.0, 1.0)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def delta_e(a, b):
    """Mean CIE76 colour difference over pixels."""
    return float(np.mean(deltaE_cie76(linear_rgb_to_lab(_pixels(a)), linear_rgb_to_lab(_pixels(b)))))


def image_metrics(a, b):
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"image dimensions differ: {pa.shape} vs {pb.shape}")
    d = pa - pb
    return {
        "mae": float(np.mean(np.abs(d))),
        "mse": float(np.mean(d * d)),
        "psnr": psnr(pa, pb),
        "ssim": ssim(pa, pb),
        "delta_e": delta_e(pa, pb),
    }

"""Neural BRDF fields.

A :class:`FieldModel` is a small MLP on the reciprocity embedding ``(h, d')``
of a direction pair.  In ``antiderivative`` mode the network output ``g`` is
an antiderivative and the BRDF is its mixed partial in the outgoing angles,

    f(wi, wo) = d2 g / (d theta_o d phi_o) / (cos theta_o sin theta_o),

so the cosine-weighted hemisphere integral of ``f`` is a four-corner
difference of ``g``.  In ``direct`` mode (the plain NBRDF baseline) the
network outputs the BRDF itself.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Dual2, value_of
from .geom import SphericalDir, io_to_rusink, reciprocity_embed

ANTIDERIVATIVE = "antiderivative"
DIRECT = "direct"
ACTIVATIONS = ("softplus", "tanh", "sigmoid", "sin", "relu")
SMOOTH = ("softplus", "tanh", "sigmoid", "sin")
DENOM_FLOOR = 1e-6
CHECKPOINT_FORMAT = "pbnbrdf-checkpoint"
CHECKPOINT_VERSION = 1
EVAL_CHUNK = 1 << 15


class ConfigError(ValueError):
    pass


class EvaluationError(FloatingPointError):
    pass


def _activation(name):
    return {"softplus": ad.softplus, "tanh": ad.tanh, "sigmoid": ad.sigmoid,
            "sin": ad.sin, "relu": ad.relu}[name]


@dataclass
class FieldModel:
    weights: list  # [W0, b0, W1, b1, ...] float64 arrays
    activation: str = "softplus"
    mode: str = ANTIDERIVATIVE
    doubled_phi_d: bool = True
    isotropic: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.mode not in (ANTIDERIVATIVE, DIRECT):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.mode == ANTIDERIVATIVE and self.activation not in SMOOTH:
            raise ConfigError(
                f"activation {self.activation!r} is not twice differentiable; the mixed "
                "second partial of the antiderivative field would vanish almost everywhere"
            )
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if self.layer_sizes[0] != 6 or self.layer_sizes[-1] != 3:
            raise ConfigError(f"layer sizes must start at 6 and end at 3, got {self.layer_sizes}")

    @classmethod
    def init(cls, seed=0, hidden=(32, 32), activation="softplus", mode=ANTIDERIVATIVE,
             doubled_phi_d=True, scale=1.0):
        rng = np.random.default_rng(seed)
        sizes = (6, *hidden, 3)
        weights = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, scale / np.sqrt(a), (a, b)))
            weights.append(np.zeros(b))
        return cls(weights, activation, mode, doubled_phi_d)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights[::2]]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights)

    def flat(self):
        return np.concatenate([w.ravel() for w in self.weights])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        out, i = [], 0
        for w in self.weights:
            out.append(theta[i:i + w.size].reshape(w.shape).copy())
            i += w.size
        return FieldModel(out, self.activation, self.mode, self.doubled_phi_d)

    def eval(self, wi, wo):
        return brdf_eval(self, wi, wo)


# -- forward passes ----------------------------------------------------------

def embed(model, wi, wo, derivatives):
    """Network input ``(h, d')`` as an ``(n, 6)`` array, or a Dual2 of such
    arrays seeded along ``theta_o`` / ``phi_o`` when ``derivatives``."""
    ti, pi_ = (np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in wi)
    to, po = (np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in wo)
    ti, pi_, to, po = np.broadcast_arrays(ti, pi_, to, po)
    if derivatives:
        wo_ = (ad.seed_theta(to), ad.seed_phi(po))
    else:
        wo_ = (to, po)
    r = io_to_rusink((ti, pi_), wo_)
    h, d = reciprocity_embed(r, model.doubled_phi_d)
    comps = list(h) + list(d)
    if derivatives:
        comps = [c if isinstance(c, Dual2) else ad.constant(np.broadcast_to(c, to.shape)) for c in comps]
        return Dual2(*(np.stack([np.broadcast_to(np.asarray(getattr(c, f), dtype=np.float64), to.shape)
                                 for c in comps], axis=-1) for f in Dual2._fields))
    return np.stack([np.broadcast_to(c, to.shape) for c in comps], axis=-1)


def mlp(model, x, weights=None):
    """Run the network on an embedding (array or Dual2); ``weights`` may be
    tape variables.  Direct mode applies a softplus to the output."""
    ws = model.weights if weights is None else weights
    act = _activation(model.activation)
    n_layers = len(ws) // 2
    for k in range(n_layers):
        w, b = ws[2 * k], ws[2 * k + 1]
        if isinstance(x, Dual2):
            x = ad.add(ad.matmul_dual(x, w), b)
        else:
            x = ad.add(ad.matmul(x, w), b)
        if k < n_layers - 1:
            x = act(x)
    if model.mode == DIRECT:
        x = ad.softplus(x)
    return x


def g_eval(model, wi, wo, weights=None):
    """Antiderivative output with its theta_o / phi_o partials (Dual2 of (n, 3))."""
    if model.mode != ANTIDERIVATIVE:
        raise ConfigError("g_eval needs an antiderivative-mode model")
    return mlp(model, embed(model, wi, wo, True), weights)


def g_value(model, wi, wo, weights=None):
    """Antiderivative output only, no derivative seeds."""
    if model.mode != ANTIDERIVATIVE:
        raise ConfigError("g_value needs an antiderivative-mode model")
    return mlp(model, embed(model, wi, wo, False), weights)


def _denominator(theta_o):
    t = np.atleast_1d(np.asarray(theta_o, dtype=np.float64))
    return np.maximum(np.cos(t) * np.sin(t), DENOM_FLOOR)[:, None]


def raw_brdf(model, wi, wo, weights=None, x=None):
    """Unclamped model BRDF, shape (n, 3).  Tracked when ``weights`` are Vars.

    ``x`` optionally supplies a precomputed :func:`embed` result."""
    if model.mode == DIRECT:
        if x is None:
            x = embed(model, wi, wo, False)
        return mlp(model, x, weights)
    if x is None:
        x = embed(model, wi, wo, True)
    g = mlp(model, x, weights)
    to = np.broadcast_arrays(*(np.atleast_1d(np.asarray(c, float)) for c in (*wi, *wo)))[2]
    return ad.div(g.dtp, _denominator(to))


def brdf_eval(model, wi, wo, raw=False):
    """Model BRDF as a numpy array (..., 3); clamped at zero unless ``raw``."""
    shape = np.broadcast(*(np.asarray(c) for c in (*wi, *wo))).shape
    flat = [np.broadcast_to(np.asarray(c, dtype=np.float64), shape).ravel() for c in (*wi, *wo)]
    n = flat[0].size
    out = np.empty((n, 3))
    for s in range(0, n, EVAL_CHUNK):
        sl = slice(s, s + EVAL_CHUNK)
        out[sl] = raw_brdf(model, (flat[0][sl], flat[1][sl]), (flat[2][sl], flat[3][sl]))
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(out), axis=1))[0])
        raise EvaluationError(
            f"non-finite BRDF value at wi=({flat[0][bad]}, {flat[1][bad]}), wo=({flat[2][bad]}, {flat[3][bad]})")
    if not raw:
        out = np.maximum(out, 0.0)
    return out.reshape(shape + (3,))


# -- hemisphere integrals ----------------------------------------------------

CORNERS = ((np.pi / 2, 2 * np.pi, 1.0), (np.pi / 2, 0.0, -1.0), (0.0, 2 * np.pi, -1.0), (0.0, 0.0, 1.0))
TWO_TERM = ((np.pi / 2, 2 * np.pi, 1.0), (0.0, 0.0, -1.0))


def corner_combination(g_at, two_term=False):
    """Signed sum of ``g_at(theta_o, phi_o)`` over the rectangle corners.

    By the fundamental theorem of calculus this equals the integral of the
    mixed partial of ``g`` over ``[0, pi/2] x [0, 2 pi]``.
    """
    total = None
    for th, ph, sign in (TWO_TERM if two_term else CORNERS):
        term = ad.mul(sign, g_at(th, ph))
        total = term if total is None else ad.add(total, term)
    return total


def hemisphere_integral_closed(model, wi, weights=None, two_term=False):
    """Cosine-weighted hemisphere integral of the raw model BRDF from corner
    values of the antiderivative, shape (m, 3).

    The default is the full inclusion-exclusion over the (theta_o, phi_o)
    rectangle; ``two_term`` keeps only ``g(pi/2, 2pi) - g(0, 0)``.
    """
    if model.mode != ANTIDERIVATIVE:
        raise ConfigError("closed-form integral needs an antiderivative-mode model; use quadrature")
    ti = np.atleast_1d(np.asarray(wi[0], dtype=np.float64))
    pi_ = np.broadcast_to(np.asarray(wi[1], dtype=np.float64), ti.shape)
    corners = TWO_TERM if two_term else CORNERS
    m = ti.size
    # one batched forward pass over all corners
    to = np.concatenate([np.full(m, c[0]) for c in corners])
    po = np.concatenate([np.full(m, c[1]) for c in corners])
    g = g_value(model, (np.tile(ti, len(corners)), np.tile(pi_, len(corners))), (to, po), weights)
    slot = {(c[0], c[1]): k for k, c in enumerate(corners)}

    def g_at(th, ph):
        k = slot[(th, ph)]
        return g[k * m:(k + 1) * m]

    return corner_combination(g_at, two_term)


def gauss_legendre_hemisphere(order):
    """Nodes and weights for a tensor Gauss-Legendre rule over
    theta in [0, pi/2], phi in [0, 2 pi] with the ``sin(theta)`` Jacobian and
    ``cos(theta)`` foreshortening folded into the weights."""
    x, w = np.polynomial.legendre.leggauss(order)
    th = (x + 1) * (np.pi / 4)
    wt = w * (np.pi / 4)
    ph = (x + 1) * np.pi
    wp = w * np.pi
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = np.outer(wt * np.cos(th) * np.sin(th), wp)
    return T.ravel(), P.ravel(), W.ravel()


def hemisphere_integral_quadrature(f, wi, order=64):
    """Integral of ``f(wi, wo) cos(theta_o)`` over outgoing directions.

    ``f`` is any callable ``(wi, wo) -> (..., 3)``; ``wi`` may hold arrays.
    Returns shape (m, 3) for m incident directions.
    """
    if order < 8:
        raise ValueError("quadrature order must be >= 8")
    ti = np.atleast_1d(np.asarray(wi[0], dtype=np.float64))
    pi_ = np.broadcast_to(np.asarray(wi[1], dtype=np.float64), ti.shape)
    T, P, W = gauss_legendre_hemisphere(order)
    out = np.empty((ti.size, 3))
    step = max(1, EVAL_CHUNK // T.size)
    for s in range(0, ti.size, step):
        a, b = ti[s:s + step, None], pi_[s:s + step, None]
        vals = f(SphericalDir(np.broadcast_to(a, (a.shape[0], T.size)), np.broadcast_to(b, (a.shape[0], T.size))),
                 SphericalDir(np.broadcast_to(T, (a.shape[0], T.size)), np.broadcast_to(P, (a.shape[0], T.size))))
        out[s:s + step] = np.einsum("mnc,n->mc", np.asarray(vals), W)
    return out


def quadrature_convergence(f, wi, orders=(8, 16, 32, 64, 128)):
    """Integral estimates for increasing orders plus successive differences."""
    vals = [hemisphere_integral_quadrature(f, wi, o) for o in orders]
    diffs = [float(np.max(np.abs(b - a))) for a, b in zip(vals, vals[1:])]
    return vals, diffs


def hemisphere_integral(src, wi, order=64):
    """Closed form for antiderivative fields, quadrature otherwise."""
    if isinstance(src, FieldModel) and src.mode == ANTIDERIVATIVE:
        return np.asarray(hemisphere_integral_closed(src, wi))
    if hasattr(src, "hemispherical"):
        ti = np.atleast_1d(np.asarray(wi[0]))
        return np.broadcast_to(src.hemispherical(wi), ti.shape + (3,)).copy()
    return hemisphere_integral_quadrature(src.eval, wi, order)


# -- checkpoints -------------------------------------------------------------

def dumps_checkpoint(model) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": model.layer_sizes,
        "activation": model.activation,
        "mode": model.mode,
        "doubled_phi_d": model.doubled_phi_d,
        "dtype": "float64-le",
        "params": base64.b64encode(model.flat().astype("<f8").tobytes()).decode("ascii"),
    }
    return json.dumps(doc, indent=1)


def loads_checkpoint(text) -> FieldModel:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a pbnbrdf checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    sizes = doc["layer_sizes"]
    theta = np.frombuffer(base64.b64decode(doc["params"]), dtype="<f8").astype(np.float64)
    weights, i = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(theta[i:i + a * b].reshape(a, b).copy())
        i += a * b
        weights.append(theta[i:i + b].copy())
        i += b
    if i != theta.size:
        raise ValueError("parameter array does not match layer sizes")
    return FieldModel(weights, doc["activation"], doc["mode"], bool(doc["doubled_phi_d"]))


def save_checkpoint(model, path):
    with open(path, "w") as f:
        f.write(dumps_checkpoint(model))


def load_checkpoint(path):
    with open(path) as f:
        return loads_checkpoint(f.read())

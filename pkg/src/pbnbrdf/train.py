"""Losses and the fitting loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, value_of
from .data import BOUNDARY_BAND, sample_dataset
from .field import (ANTIDERIVATIVE, DIRECT, ConfigError, FieldModel, _denominator, embed,
                    hemisphere_integral_closed, mlp, save_checkpoint)
from .geom import SphericalDir, TWO_PI

log = logging.getLogger(__name__)

LOG1P_FLOOR = -1.0 + 1e-12


@dataclass
class TrainConfig:
    lambda_epl: float = 0.1
    lambda_ce: float = 1.0
    learning_rate: float = 5e-4
    batch_size: int = 512
    epochs: int = 20
    seed: int = 0
    epl_wi_samples_per_step: int = 16
    n_samples: int = 100_000
    hidden: tuple = (32, 32)
    activation: str = "softplus"
    reciprocity: bool = True
    antiderivative: bool = True
    epl: bool = True
    ce: bool = True
    epl_per_channel: bool = False
    epl_two_term: bool = False
    init_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lambda_epl < 0 or self.lambda_ce < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.batch_size <= 0 or self.epochs < 0 or self.n_samples <= 0:
            raise ConfigError("batch_size and n_samples must be positive, epochs non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.antiderivative and self.activation == "relu":
            raise ConfigError(
                "activation 'relu' cannot be used for the antiderivative field: its mixed "
                "second partial is zero almost everywhere (use softplus, tanh, sigmoid or sin)")

    @property
    def mode(self):
        return ANTIDERIVATIVE if self.antiderivative else DIRECT

    @property
    def use_epl(self):
        return self.antiderivative and self.epl and self.lambda_epl > 0

    @property
    def use_ce(self):
        return self.ce and self.lambda_ce > 0

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class RunReport:
    config: dict
    loss_total: list = field(default_factory=list)
    loss_nbrdf: list = field(default_factory=list)
    loss_epl: list = field(default_factory=list)
    loss_ce: list = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = -1
    final: dict = field(default_factory=dict)
    checkpoint_path: str | None = None
    wall_clock: float = 0.0

    def to_dict(self, include_timing=False):
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return d

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True)


class TrainingDivergence(RuntimeError):
    def __init__(self, message, model, report):
        self.model = model
        self.report = report
        super().__init__(message)


# -- losses ------------------------------------------------------------------

def _sum_last(x):
    if isinstance(x, ad.Var):
        return x.sum(axis=-1)
    return np.sum(x, axis=-1)


def _mean(x):
    if isinstance(x, ad.Var):
        return x.mean()
    return np.mean(x)


def _cos_col(theta_i):
    c = np.cos(np.asarray(theta_i, dtype=np.float64))
    return np.maximum(c, 0.0)[..., None]


def _log1p_floored(x):
    return ad.log1p(ad.maximum(x, LOG1P_FLOOR))


def loss_nbrdf(pred, gt, theta_i):
    """Per-sample mean absolute log error over channels, shape (...)."""
    c = _cos_col(theta_i)
    gt = np.asarray(gt, dtype=np.float64)
    diff = ad.sub(np.log1p(gt * c), _log1p_floored(ad.mul(pred, c)))
    return ad.mul(_sum_last(ad.absolute(diff)), 1.0 / 3.0)


def loss_ce(pred, gt, theta_i):
    """Per-sample absolute log error on the squared RGB norm, shape (...)."""
    c = _cos_col(theta_i)
    gt = np.asarray(gt, dtype=np.float64)
    gc = gt * c
    pc = ad.mul(pred, c)
    diff = ad.sub(np.log1p(np.sum(gc * gc, axis=-1)), ad.log1p(_sum_last(ad.mul(pc, pc))))
    return ad.absolute(diff)


def loss_epl(model, wi, weights=None, per_channel=False, two_term=False):
    """Mean hinge excess of the closed-form hemisphere integral over ``wi``."""
    if model.mode != ANTIDERIVATIVE:
        raise ConfigError("the energy passivity loss needs an antiderivative-mode model")
    integral = hemisphere_integral_closed(model, wi, weights, two_term=two_term)
    return passivity_hinge(integral, per_channel)


def passivity_hinge(integral, per_channel=False):
    """Mean of ``max(0, I - 1)`` with ``I`` the channel mean (or each channel)."""
    if per_channel:
        return _mean(ad.maximum(ad.sub(integral, 1.0), 0.0))
    agg = ad.mul(_sum_last(integral), 1.0 / 3.0)
    return _mean(ad.maximum(ad.sub(agg, 1.0), 0.0))


def sample_epl_directions(rng, n):
    """Cosine-weighted incident directions inside the pole/horizon band."""
    u1 = BOUNDARY_BAND_SIN2[0] + rng.random(n) * (BOUNDARY_BAND_SIN2[1] - BOUNDARY_BAND_SIN2[0])
    return SphericalDir(np.arcsin(np.sqrt(u1)), TWO_PI * rng.random(n))


BOUNDARY_BAND_SIN2 = (np.sin(BOUNDARY_BAND) ** 2, np.sin(np.pi / 2 - BOUNDARY_BAND) ** 2)


@dataclass
class Batch:
    """Training batch with a precomputed network input."""

    theta_i: np.ndarray
    theta_o: np.ndarray
    value: np.ndarray
    x: object  # embedding (array or Dual2 of arrays)

    def __len__(self):
        return len(self.value)


def make_batch(model, wi, wo, value):
    ti = np.asarray(wi[0], dtype=np.float64)
    to = np.asarray(wo[0], dtype=np.float64)
    x = embed(model, wi, wo, model.mode == ANTIDERIVATIVE)
    return Batch(ti, to, np.asarray(value, dtype=np.float64), x)


def _slice_batch(b, idx):
    x = b.x.map(lambda c: c[idx]) if isinstance(b.x, ad.Dual2) else b.x[idx]
    return Batch(b.theta_i[idx], b.theta_o[idx], b.value[idx], x)


def predict(model, batch, weights=None):
    """Raw (unclamped) model BRDF for a batch, tracked when ``weights`` are Vars."""
    out = mlp(model, batch.x, weights)
    if model.mode == ANTIDERIVATIVE:
        return ad.div(out.dtp, _denominator(batch.theta_o))
    return out


def loss_total(model, batch, cfg, weights=None, epl_wi=None):
    """Combined objective; returns ``(total, terms)`` with plain-float terms."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    pred = predict(model, batch, weights)
    nb = _mean(loss_nbrdf(pred, batch.value, batch.theta_i))
    e = c = None
    if cfg.use_epl:
        if epl_wi is None:
            raise ValueError("EPL is enabled but no incident directions were given")
        e = loss_epl(model, epl_wi, weights, cfg.epl_per_channel, cfg.epl_two_term)
    if cfg.use_ce:
        c = _mean(loss_ce(pred, batch.value, batch.theta_i))
    terms = {"nbrdf": float(value_of(nb)),
             "epl": 0.0 if e is None else float(value_of(e)),
             "ce": 0.0 if c is None else float(value_of(c))}
    return weighted_total(nb, e, c, cfg), terms


def weighted_total(nbrdf, epl, ce, cfg):
    """``nbrdf + lambda_epl * epl + lambda_ce * ce``; disabled terms are skipped."""
    total = nbrdf
    if epl is not None and cfg.use_epl:
        total = ad.add(total, ad.mul(cfg.lambda_epl, epl))
    if ce is not None and cfg.use_ce:
        total = ad.add(total, ad.mul(cfg.lambda_ce, ce))
    return total


def loss_and_grad(model, batch, cfg, epl_wi=None):
    """Total loss, terms and the flat parameter gradient."""
    tape = Tape()
    weights = [tape.param(w) for w in model.weights]
    total, terms = loss_total(model, batch, cfg, weights, epl_wi)
    grads = ad.grad(total, tape, weights)
    return float(value_of(total)), terms, np.concatenate([g.ravel() for g in grads])


# -- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- fitting -----------------------------------------------------------------

def train(src, cfg: TrainConfig, checkpoint_dir=None, samples=None):
    """Fit a field to ``src``; returns ``(model, report)``.

    Deterministic in ``cfg.seed``.  With ``checkpoint_dir`` the best-epoch
    model is written to ``best.json`` and the final one to ``model.json``.
    """
    start = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    data_seed = int(seeds[0].generate_state(1)[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    epl_rng = np.random.default_rng(seeds[2])
    init_seed = int(seeds[3].generate_state(1)[0])

    model = FieldModel.init(init_seed, cfg.hidden, cfg.activation, cfg.mode, cfg.reciprocity,
                            cfg.init_scale)
    if samples is None:
        samples = sample_dataset(src, cfg.n_samples, data_seed)
    data = make_batch(model, samples.wi, samples.wo, samples.value)
    n = len(data)
    report = RunReport(config=cfg.to_dict())
    opt = Adam(model.n_params, cfg.learning_rate)
    theta = model.flat()
    best_model = model

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        report.checkpoint_path = os.path.join(checkpoint_dir, "model.json")

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "nbrdf": 0.0, "epl": 0.0, "ce": 0.0}
        steps = 0
        for s in range(0, n, cfg.batch_size):
            batch = _slice_batch(data, order[s:s + cfg.batch_size])
            epl_wi = sample_epl_directions(epl_rng, cfg.epl_wi_samples_per_step) if cfg.use_epl else None
            try:
                total, terms, g = loss_and_grad(model, batch, cfg, epl_wi)
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("non-finite gradient")
            except (NonFiniteError, FloatingPointError) as exc:
                report.wall_clock = time.perf_counter() - start
                if checkpoint_dir is not None:
                    save_checkpoint(best_model, os.path.join(checkpoint_dir, "last_good.json"))
                raise TrainingDivergence(f"training diverged at epoch {epoch}, step {steps}: {exc}",
                                         best_model, report) from exc
            theta = opt.step(theta, g)
            model = model.with_flat(theta)
            sums["total"] += total
            for k in ("nbrdf", "epl", "ce"):
                sums[k] += terms[k]
            steps += 1
        epoch_loss = sums["total"] / steps
        report.loss_total.append(epoch_loss)
        report.loss_nbrdf.append(sums["nbrdf"] / steps)
        report.loss_epl.append(sums["epl"] / steps)
        report.loss_ce.append(sums["ce"] / steps)
        log.info("epoch %d loss %.6g", epoch, epoch_loss)
        if epoch_loss < report.best_loss:
            report.best_loss = epoch_loss
            report.best_epoch = epoch
            best_model = model
            if checkpoint_dir is not None:
                save_checkpoint(model, os.path.join(checkpoint_dir, "best.json"))

    report.final = {"loss_nbrdf": dataset_loss_nbrdf(model, data)}
    if checkpoint_dir is not None:
        save_checkpoint(model, report.checkpoint_path)
    report.wall_clock = time.perf_counter() - start
    return model, report


def dataset_loss_nbrdf(model, data, chunk=8192):
    """Mean L_NBRDF over a full batch, evaluated without a tape."""
    total = 0.0
    for s in range(0, len(data), chunk):
        b = _slice_batch(data, slice(s, s + chunk))
        total += float(np.sum(loss_nbrdf(predict(model, b), b.value, b.theta_i)))
    return total / len(data)

"""Fit the direct baseline and the antiderivative model to the same data and
compare them with the reciprocity and energy metrics.

Reduced scale (2e4 samples, 5 epochs) so it finishes in well under a minute;
pass --full for the default configuration.
"""
import sys

import numpy as np

from pbnbrdf import metrics
from pbnbrdf.data import parse_source
from pbnbrdf.render import Furnace, PointLight, Scene, render_direct, render_furnace
from pbnbrdf.geom import SphericalDir
from pbnbrdf.train import TrainConfig, train

full = "--full" in sys.argv
src = parse_source("ggx:0.3,0.9,0.1")
base_cfg = dict(seed=0) if full else dict(seed=0, n_samples=20_000, epochs=5)

runs = {
    "baseline": TrainConfig(antiderivative=False, reciprocity=False, **base_cfg),
    "doubled": TrainConfig(antiderivative=False, **base_cfg),
    "pbnbrdf": TrainConfig(**base_cfg),
}
light = Scene(64, PointLight(SphericalDir(0.6, 0.8), (3.0, 3.0, 3.0)))
truth = render_direct(src, light)

for name, cfg in runs.items():
    model, rep = train(src, cfg)
    furnace = render_furnace(model, Scene(32, Furnace()))
    r = metrics.MetricReport(hri=metrics.hri(model, 4000), hci=metrics.hci(model, 4000),
                             epi=metrics.epi(model, 16), eci=metrics.eci(furnace))
    im = metrics.image_metrics(render_direct(model, light), truth)
    print(f"{name:9s} loss {rep.final['loss_nbrdf']:.4g}  {r.format_table()}  "
          f"PSNR {im['psnr']:.1f}  dE {im['delta_e']:.2f}")

# The doubled-phi_d direct model is reciprocal by construction (HRI ~ 0).
# The antiderivative model is not: its output is a derivative of a reciprocal
# field, and the derivative is taken with respect to one argument only.
print("truth     HRI", metrics.hri(src, 4000), " max pixel", float(np.max(truth.pixels)))

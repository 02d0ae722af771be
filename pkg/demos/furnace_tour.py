"""White furnace renders and energy metrics for the analytic fixtures.

    python3 demos/furnace_tour.py [outdir]
"""
import os
import sys

from pbnbrdf import metrics
from pbnbrdf.data import parse_source
from pbnbrdf.render import Furnace, Scene, furnace_excess, render_furnace, save_image

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out, exist_ok=True)

for desc in ("lambertian:1", "lambertian:0.5", "constant:1.5/pi", "ggx:0.3,1.0,0.0", "ggx:0.3,1.0,0.9"):
    src = parse_source(desc)
    img = render_furnace(src, Scene(96, Furnace()))
    px = img.pixels[img.mask].mean(-1)
    name = desc.replace(":", "_").replace(",", "_").replace("/", "_")
    save_image(img, os.path.join(out, name + "_furnace.pfm"))
    save_image(furnace_excess(img), os.path.join(out, name + "_excess.pfm"))
    # EPI looks at the BRDF directly, ECI at the rendered pixels
    print(f"{desc:18s} albedo {px.min():.4f}..{px.max():.4f}  "
          f"EPI {metrics.epi(src):.4f}  ECI {metrics.eci(img):.4f}")

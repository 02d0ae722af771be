"""Physically based neural BRDF fitting and validation."""

from .autodiff import Dual2, Tape, grad
from .data import GgxMicrofacet, Lambertian, MerlBrdf, ScaledConstant, parse_merl, sample_dataset, write_merl
from .field import FieldModel, brdf_eval, hemisphere_integral_closed, hemisphere_integral_quadrature
from .geom import DirectionPair, RusinCoords, SphericalDir, io_to_rusink, reciprocity_embed, rusink_to_io
from .train import TrainConfig, train

__version__ = "0.1.0"

"""Numerical toolkit for measure-valued control on the torus.

Subpackages cover: torus measures and their truncated Fourier transforms,
certified spectral (Fourier-Wasserstein) metrics, measure calculus (linear
derivatives, generators, Hamiltonians), a controlled interacting-particle
simulator, desk-scale value-function machinery, and a reproducible experiment
CLI with an acceptance harness.
"""

from .fourier import FourierTable, HarmonicFunction
from .measures import (
    GridDensity,
    ParticleCloud,
    TorusMeasure,
    fourier_coefficient,
    fourier_table,
    load_measure,
    reduce_to_torus,
    sample_measure,
    save_measure,
    torus_distance,
)
from .metrics import (
    MetricResult,
    SobolevWeight,
    dual_maximizer,
    embedding_constant,
    n_star,
    rho_lambda,
    sobolev_norm,
    tail_constant_c,
    w1_circle,
)

__version__ = "0.1.0"

__all__ = [
    "FourierTable",
    "GridDensity",
    "HarmonicFunction",
    "MetricResult",
    "ParticleCloud",
    "SobolevWeight",
    "TorusMeasure",
    "dual_maximizer",
    "embedding_constant",
    "fourier_coefficient",
    "fourier_table",
    "load_measure",
    "n_star",
    "reduce_to_torus",
    "rho_lambda",
    "sample_measure",
    "save_measure",
    "sobolev_norm",
    "tail_constant_c",
    "torus_distance",
    "w1_circle",
]

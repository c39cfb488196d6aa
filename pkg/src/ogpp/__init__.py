"""Particle generation by flow matching with canonical orderings and geometric paths."""

__version__ = "0.1.0"

from ._validation import ConfigError, ContractError, NumericError, sub_rng
from .canon import CanonSpec, Canonicalizer, canonicalize, canonicalize_batch
from .energy import ParticleSet, gen_blue_noise, gen_circle, gen_dla, gen_min_surface, gen_thomson
from .flow import OGPPFlow, TrainConfig, sample, train
from .io import read_checkpoint, read_particles, write_checkpoint, write_particles
from .metrics import evaluate
from .net import NetConfig, VelocityNet
from .paths import PathSpec, path_batch

__all__ = [
    "CanonSpec",
    "Canonicalizer",
    "ConfigError",
    "ContractError",
    "NetConfig",
    "NumericError",
    "OGPPFlow",
    "ParticleSet",
    "PathSpec",
    "TrainConfig",
    "VelocityNet",
    "canonicalize",
    "canonicalize_batch",
    "evaluate",
    "gen_blue_noise",
    "gen_circle",
    "gen_dla",
    "gen_min_surface",
    "gen_thomson",
    "path_batch",
    "read_checkpoint",
    "read_particles",
    "sample",
    "sub_rng",
    "train",
    "write_checkpoint",
    "write_particles",
]

"""Spatial SEIR epidemics: simulation, data-augmented inference and latent model criticism."""
from .model import (NEVER, HostPopulation, KernelFamily, KernelSpec, ModelParams, ObservedData, Trajectory,
                    truncate)

__version__ = "0.1.0"

__all__ = ["NEVER", "HostPopulation", "KernelFamily", "KernelSpec", "ModelParams", "ObservedData",
           "Trajectory", "truncate", "__version__"]

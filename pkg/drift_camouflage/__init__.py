"""Hidden-drift Brownian simulations and the checks that go with them."""

__version__ = "0.1.0"

from .models import Ensemble, EnsembleSpec, PathSample, SeededRng, TimeGrid
from .paths import make_grid, sample_brownian
from .filtering import DriftScenario, simulate_hidden_path
from .levy import levy_transform
from .concat import ConcatConfig, build_concatenation
from .battery import run_battery
from .discrete import BiasedBitLaw, build_index_family, exact_joint_law

__all__ = [
    "__version__",
    "BiasedBitLaw",
    "ConcatConfig",
    "DriftScenario",
    "Ensemble",
    "EnsembleSpec",
    "PathSample",
    "SeededRng",
    "TimeGrid",
    "build_concatenation",
    "build_index_family",
    "exact_joint_law",
    "levy_transform",
    "make_grid",
    "run_battery",
    "sample_brownian",
    "simulate_hidden_path",
]

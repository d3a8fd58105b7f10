"""Monte Carlo construction of the Brownian plane from coding triples."""

from .harness import ExperimentConfig, HarnessError, Report, run_suite
from .hulls import (build_separating_cycle, crossings, exit_between, exit_estimate, exit_profile,
                    hull)
from .metric import delta, delta_zero, geodesic_ray
from .processes import ParameterError, sample_bessel9_spine, sample_ito_excursion
from .snake import grow_labels, min_label, truncate
from .triple import Window, WindowError, assemble_triple, build_tree, cut_at_level

__all__ = [
    "ExperimentConfig", "HarnessError", "ParameterError", "Report", "Window", "WindowError",
    "assemble_triple", "build_separating_cycle", "build_tree", "crossings", "cut_at_level",
    "delta", "delta_zero", "exit_between", "exit_estimate", "exit_profile", "geodesic_ray",
    "grow_labels", "hull", "min_label", "run_suite", "sample_bessel9_spine",
    "sample_ito_excursion", "truncate",
]

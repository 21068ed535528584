"""binaria: rotating self-gravitating star equilibria and their diagnostics.

Library layout mirrors the pipeline: `eos` (pressure calculus), `fields`
(grid densities and integral functionals), `solver` (self-consistent-field
minimization), `wasserstein` (bottleneck transport and the perturbation
cone), `diagnostics` (residuals, derivative checks, Lane-Emden oracle),
and `cli` (scenario orchestration with figures and CSV/JSON reports).
"""

from . import diagnostics, eos, fields, solver, wasserstein
from .errors import BinariaError

__version__ = "0.1.0"

__all__ = ["eos", "fields", "solver", "wasserstein", "diagnostics",
           "BinariaError", "__version__"]

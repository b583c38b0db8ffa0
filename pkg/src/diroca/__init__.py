"""Learning linear causal-abstraction maps under distributional uncertainty.

The package is organized around a low-level / high-level pair of linear
additive-noise SCMs and an intervention map between them:

- ``scm``: linear SCMs, interventions, reduced forms, sampling, abduction
- ``environments``: exogenous environments and the Bures-Wasserstein toolbox
- ``radius``: concentration-bound robustness radii
- ``solvers``: the two robust min-max solvers and the non-robust baselines
- ``evaluation``: contamination / misspecification protocols and the k-fold grid
- ``datasets``: the two built-in benchmark SCM pairs
- ``cli``: batch front end
"""

from diroca.scm import Intervention, InterventionMap, LinearScm
from diroca.environments import EmpiricalEnv, GaussianEnv, JointEnv

__all__ = [
    "LinearScm",
    "Intervention",
    "InterventionMap",
    "GaussianEnv",
    "EmpiricalEnv",
    "JointEnv",
]

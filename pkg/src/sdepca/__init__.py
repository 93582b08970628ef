"""Adaptive time-stepping Milstein solvers for SDEs with piecewise continuous arguments."""

from .engine import HAVE_COMPILED, integrate
from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    NewtonError,
    PolicyError,
    SdepcaError,
)
from .montecarlo import Candidate, ExperimentPlan, run_experiment
from .noise import IncrementBundle, MasterNoise, TickGrid, bundle, sample_master
from .problem import AssumptionCertificate, RationalStep, SdepcaProblem, make_example
from .steppers import SOLVERS, PathRecord, StepPolicy, next_step, run_path

__version__ = "0.1.0"

"""Augmented Lagrangian solvers with APG and dual cutting-plane subproblem solvers."""

from .apg import ApgConfig, ApgResult, SmoothFunction, apg_solve
from .bench import BenchConfig, BenchReport, run_benchmark
from .dualcut import SaddleSubproblem, bisec, ellipsoid_search, stem
from .ialm import (IalmConfig, IalmTrace, Solution, ialm_solve, ialm_solve_apg,
                   ialm_solve_cutting_plane, solve_convex, solve_nonconvex)
from .problem import KktResidual, OracleBundle, Problem, ProblemConstants, kkt_residuals
from .qcqp import GeneratorConfig, QcqpInstance, generate, load, reference_solve, save, to_problem
from .verify import verify_suite

__all__ = [
    "ApgConfig", "ApgResult", "SmoothFunction", "apg_solve",
    "BenchConfig", "BenchReport", "run_benchmark",
    "SaddleSubproblem", "bisec", "ellipsoid_search", "stem",
    "IalmConfig", "IalmTrace", "Solution", "ialm_solve", "ialm_solve_apg",
    "ialm_solve_cutting_plane", "solve_convex", "solve_nonconvex",
    "KktResidual", "OracleBundle", "Problem", "ProblemConstants", "kkt_residuals",
    "GeneratorConfig", "QcqpInstance", "generate", "load", "reference_solve", "save",
    "to_problem", "verify_suite",
]

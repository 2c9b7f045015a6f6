"""Entropy-regularized stochastic control solvers."""

from ._softctl import (
    ConvergenceError,
    DimensionError,
    DomainError,
    Grid,
    InvalidProblemError,
    KernelBuildError,
    ModeError,
    ParameterError,
    Problem,
    RegistryError,
    SoftctlError,
    cli,
    evaluate_policy,
    fit_loglog,
    parse_sweep_list,
    problem_names,
    simulate,
    solve_classical,
    solve_hjb,
    solve_mdp,
    sweep,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DimensionError",
    "DomainError",
    "Grid",
    "InvalidProblemError",
    "KernelBuildError",
    "ModeError",
    "ParameterError",
    "Problem",
    "RegistryError",
    "SoftctlError",
    "cli",
    "evaluate_policy",
    "fit_loglog",
    "parse_sweep_list",
    "problem_names",
    "simulate",
    "solve_classical",
    "solve_hjb",
    "solve_mdp",
    "sweep",
    "validate",
]

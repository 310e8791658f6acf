"""Desk-scale nonlinear finite element benchmarks."""

from .bar import HyperelasticBar, make_hyperelastic_bar, piola_stress
from .base import (
    FomProblem,
    FomTrajectory,
    FullQuadratureRule,
    SolverError,
    eval_force_entries,
    eval_force_full,
    eval_integrand_contracted,
    sample_mesh_from_indices,
    solve_fom,
)
from .diffusion import NonlinearDiffusion, make_nonlinear_diffusion

PROBLEMS = {"diffusion": make_nonlinear_diffusion, "bar": make_hyperelastic_bar}


def make_problem(config):
    """Build a benchmark from a config mapping (``problem`` plus its sizes)."""
    kind = config.get("problem")
    if kind == "diffusion":
        return make_nonlinear_diffusion(
            nx=config.get("nx", 16), ny=config.get("ny", config.get("nx", 16)),
            mu=config.get("mu", 0.3), dt=config.get("dt", 1e-3),
            n_steps=_steps(config, 1e-3, 0.1))
    if kind == "bar":
        return make_hyperelastic_bar(
            n_elem=config.get("n_elem", config.get("nx", 64)), mu=config.get("mu", 1.0),
            dt=config.get("dt", 0.01), n_steps=_steps(config, 0.01, 5.0))
    raise ValueError(f"unknown problem {kind!r}; expected 'diffusion' or 'bar'")


def _steps(config, dt_default, t_default):
    if "n_steps" in config:
        return int(config["n_steps"])
    dt = config.get("dt", dt_default)
    t_final = config.get("t_final", t_default)
    return int(round(t_final / dt))


__all__ = [
    "FomProblem", "FomTrajectory", "FullQuadratureRule", "SolverError", "HyperelasticBar",
    "NonlinearDiffusion", "PROBLEMS", "eval_force_entries", "eval_force_full",
    "eval_integrand_contracted", "make_hyperelastic_bar", "make_nonlinear_diffusion",
    "make_problem", "piola_stress", "sample_mesh_from_indices", "solve_fom",
]

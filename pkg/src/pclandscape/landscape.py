"""Numerical Hessians, saddle classification and 2-D landscape grids.

Objectives are pure callables Params -> float. The finite-difference
Hessian uses per-coordinate steps h_i = h * (1 + |theta_i|) and the
four-point central second difference, which is exact for quadratics and
accurate to ~h^2 otherwise; the 1e-4 comparison tolerances used by the
analytic-vs-numerical tests follow from the default h = 1e-3.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError
from .linalg import Matrix, sym_eig
from .network import ArchSpec, Params, zeros_params

Objective = Callable[[Params], float]

MAX_DENSE_PARAMS = 2000
THREADS_ENV_VAR = "PC_LANDSCAPE_THREADS"


@dataclass(frozen=True)
class SaddleReport:
    """Second-order classification of a parameter point."""

    grad_norm: float
    lambda_min: float
    lambda_max: float
    classification: str  # strict_saddle | nonstrict_candidate | local_min_candidate | not_critical
    strict_tol: float


@dataclass(frozen=True)
class LandscapeGrid:
    """Objective samples over the plane spanned by the extreme Hessian
    eigenvectors at ``center`` (raw coordinates when p <= 2)."""

    alphas: np.ndarray
    betas: np.ndarray
    values: Matrix
    center: Params


def numerical_hessian(objective: Objective, at: Params, h: float = 1e-3) -> Matrix:
    """Symmetrized central second-difference Hessian in the flat layout.

    Entry (i, j) = [f(+h_i+h_j) - f(+h_i-h_j) - f(-h_i+h_j) + f(-h_i-h_j)]
    / (4 h_i h_j), with h_i = h * (1 + |theta_i|).
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    theta = at.flatten()
    p = theta.size
    if p > MAX_DENSE_PARAMS:
        raise ContractError(
            f"{p} parameters exceed the dense-Hessian limit {MAX_DENSE_PARAMS}"
        )
    steps = h * (1.0 + np.abs(theta))

    def feval(vec: np.ndarray) -> float:
        return float(objective(at.with_flat(vec)))

    hess = np.zeros((p, p))
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = steps[i]
            ej[j] = steps[j]
            val = (
                feval(theta + ei + ej)
                - feval(theta + ei - ej)
                - feval(theta - ei + ej)
                + feval(theta - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = val
            hess[j, i] = val
    return 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class ClassifyTols:
    """Thresholds for classify_point.

    A point counts as critical when grad_inf < grad_rtol * (1 + |f|);
    eigenvalues within strict_rtol * max(1, lambda_max - lambda_min) of
    zero are treated as zero (the finite-difference noise floor).
    """

    grad_rtol: float = 1e-8
    strict_rtol: float = 1e-6
    h: float = 1e-3


def classify_point(objective: Objective, gradient: Callable[[Params], Params],
                   at: Params, tols: ClassifyTols = ClassifyTols()) -> SaddleReport:
    """Classify ``at`` via the gradient norm and the numerical Hessian
    spectrum.

    ``strict_saddle`` needs an eigenvalue below -strict_tol;
    ``local_min_candidate`` needs all above +strict_tol; anything in
    between (flat directions) is ``nonstrict_candidate`` because escape
    directions of order >= 3 are not checked here.
    """
    f_val = float(objective(at))
    grads = gradient(at)
    g_inf = max(
        float(np.max(np.abs(g))) if g.size else 0.0 for g in grads.weights
    )
    spec = sym_eig(numerical_hessian(objective, at, tols.h))
    lam_min, lam_max = spec.lambda_min, spec.lambda_max
    strict_tol = tols.strict_rtol * max(1.0, lam_max - lam_min)
    if g_inf > tols.grad_rtol * (1.0 + abs(f_val)):
        label = "not_critical"
    elif lam_min < -strict_tol:
        label = "strict_saddle"
    elif lam_min > strict_tol:
        label = "local_min_candidate"
    else:
        label = "nonstrict_candidate"
    return SaddleReport(
        grad_norm=g_inf,
        lambda_min=lam_min,
        lambda_max=lam_max,
        classification=label,
        strict_tol=strict_tol,
    )


def make_origin(arch: ArchSpec) -> Params:
    """All-zero parameters."""
    return zeros_params(arch)


def make_zero_rank_saddle(arch: ArchSpec, seed: int) -> Params:
    """The zero-rank critical family: random penultimate layer, all other
    weights zero, so W_L = 0 and W_{L-1:1} = 0."""
    if arch.n_layers < 2:
        raise ContractError("zero-rank saddles need at least two layers")
    params = zeros_params(arch)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params.weights[-2] = rng.standard_normal(params.weights[-2].shape)
    return params


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def landscape_grid(objective: Objective, center: Params, resolution: int = 30,
                   half_range: float = 1.0, h: float = 1e-3) -> LandscapeGrid:
    """Objective values on f(center + alpha v_min + beta v_max).

    The directions are the extreme eigenvectors of the numerical Hessian
    at ``center``; for p <= 2 the raw coordinate axes are used instead.
    Worker threads are capped by the PC_LANDSCAPE_THREADS env var
    (default 1); values are assembled by index so the output does not
    depend on the worker count.
    """
    if resolution < 2:
        raise ContractError("resolution must be >= 2")
    theta = center.flatten()
    p = theta.size
    if p <= 2:
        v_min = np.zeros(p)
        v_min[0] = 1.0
        v_max = np.zeros(p)
        v_max[-1] = 1.0
    else:
        spec = sym_eig(numerical_hessian(objective, center, h))
        v_min = spec.v_min()
        v_max = spec.v_max()

    alphas = np.linspace(-half_range, half_range, resolution)
    betas = np.linspace(-half_range, half_range, resolution)
    values = np.zeros((resolution, resolution))

    def eval_cell(idx: tuple[int, int]) -> tuple[int, int, float]:
        i, j = idx
        vec = theta + alphas[i] * v_min + betas[j] * v_max
        return i, j, float(objective(center.with_flat(vec)))

    cells = [(i, j) for i in range(resolution) for j in range(resolution)]
    workers = _worker_count()
    if workers == 1:
        results = map(eval_cell, cells)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_cell, cells))
    for i, j, val in results:
        values[i, j] = val
    return LandscapeGrid(alphas=alphas, betas=betas, values=values, center=center)

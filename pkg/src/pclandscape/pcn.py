"""Predictive-coding machinery: energy, inference dynamics, solvers, learning.

Activities are one matrix per layer (n_l x N, one sample per column);
z[0] is clamped to the batch input and z[L] to the target, and no solver
ever mutates them. The prediction convention is mu_l = W_l phi(z_{l-1})
with phi applied to the presynaptic state (identity at the input layer),
so a feedforward initialization zeroes every hidden error and leaves the
energy equal to the MSE loss.

Inference minimizes the energy over the hidden activities. The activity
gradient returned here is the per-sample one (no 1/N), so step sizes
and the equilibrium tolerance do not depend on batch size; the weight
gradient keeps the 1/N batch averaging to match the loss normalization.

An optional ``output_mask`` (d_y x N boolean, True = observed) drops
unobserved output errors from the energy and every gradient, which is
how matrix completion reuses this code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractError, DivergenceError, ShapeError, StiffnessError
from .linalg import Matrix
from .network import (
    ArchSpec,
    Batch,
    Params,
    activation_deriv,
    activation_fn,
    sgd_step,
)

DIVERGENCE_ENERGY = 1e12
_DIVERGENCE_Z_GUARD = 1e4  # full energy check only past this activity size


def _maybe_divergent(acts: "Activities") -> bool:
    return any(
        z.size and float(np.max(np.abs(z))) > _DIVERGENCE_Z_GUARD
        for z in acts.z[1:-1]
    )


@dataclass
class Activities:
    """Per-layer activity matrices; first and last entries are clamped."""

    z: list[Matrix]

    @property
    def n_samples(self) -> int:
        return self.z[0].shape[1]

    def hidden(self) -> list[Matrix]:
        return self.z[1:-1]

    def copy(self) -> "Activities":
        return Activities(z=[m.copy() for m in self.z])


@dataclass(frozen=True)
class SolverConfig:
    """Inference solver selection and tolerances.

    ``dt`` is the Euler step (and the adaptive solver's initial step),
    ``max_steps`` caps iterations, ``grad_tol`` declares equilibrium on
    the infinity norm of the activity gradient, and ``t_max`` is the
    adaptive solver's integration-time ceiling.
    """

    mode: str = "euler"
    dt: float = 0.1
    max_steps: int = 500
    abs_tol: float = 1e-3
    rel_tol: float = 1e-3
    grad_tol: float = 1e-8
    t_max: float = 300.0

    def __post_init__(self):
        if self.mode not in ("euler", "heun_adaptive", "exact_linear"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if min(self.abs_tol, self.rel_tol, self.grad_tol) <= 0:
            raise ValueError("tolerances must be > 0")


def _check_net(params: Params, arch: ArchSpec, batch: Batch):
    if not params.matches(arch):
        raise ShapeError("params do not match the architecture")
    if batch.x.shape[0] != arch.d_x or batch.y.shape[0] != arch.d_y:
        raise ShapeError("batch dimensions do not match the architecture")


def feedforward_activities(params: Params, arch: ArchSpec, batch: Batch) -> Activities:
    """Hidden activities set by the forward sweep z_l = mu_l; ends clamped."""
    _check_net(params, arch, batch)
    phi = activation_fn(arch.activation)
    z = [batch.x.copy()]
    for k in range(arch.n_layers - 1):
        pre = params.weights[k] @ (z[-1] if k == 0 else phi(z[-1]))
        if params.biases is not None:
            pre = pre + params.biases[k][:, None]
        z.append(pre)
    z.append(batch.y.copy())
    return Activities(z=z)


def _errors(params: Params, arch: ArchSpec, acts: Activities) -> list[Matrix]:
    """Prediction errors eps_l = z_l - mu_l for l = 1..L."""
    phi = activation_fn(arch.activation)
    eps = []
    for layer in range(1, arch.n_layers + 1):
        below = acts.z[layer - 1] if layer == 1 else phi(acts.z[layer - 1])
        mu = params.weights[layer - 1] @ below
        if params.biases is not None:
            mu = mu + params.biases[layer - 1][:, None]
        eps.append(acts.z[layer] - mu)
    return eps


def energy(params: Params, arch: ArchSpec, acts: Activities,
           output_mask: np.ndarray | None = None) -> float:
    """(1/2N) sum over samples and layers of the squared prediction errors."""
    _check_net(params, arch, Batch(x=acts.z[0], y=acts.z[-1]))
    eps = _errors(params, arch, acts)
    if output_mask is not None:
        eps[-1] = eps[-1] * output_mask
    total = sum(float(np.sum(e * e)) for e in eps)
    return 0.5 * total / acts.n_samples


def activity_gradient(params: Params, arch: ArchSpec, acts: Activities,
                      output_mask: np.ndarray | None = None) -> list[Matrix]:
    """Per-sample energy gradient w.r.t. each hidden layer.

    dF/dz_l = eps_l - phi'(z_l) * (W_{l+1}^T eps_{l+1}) for l = 1..L-1.
    This is N times the gradient of ``energy`` (which carries 1/2N), so
    the equilibrium condition is independent of batch size. Clamped
    layers are excluded.
    """
    eps = _errors(params, arch, acts)
    if output_mask is not None:
        eps[-1] = eps[-1] * output_mask
    dphi = activation_deriv(arch.activation)
    grads = []
    for layer in range(1, arch.n_layers):
        back = params.weights[layer].T @ eps[layer]
        grads.append(eps[layer - 1] - dphi(acts.z[layer]) * back)
    return grads


def _grad_inf_norm(grads: list[Matrix]) -> float:
    if not grads:
        return 0.0
    return max(float(np.max(np.abs(g))) if g.size else 0.0 for g in grads)


def infer_euler(params: Params, arch: ArchSpec, batch: Batch, cfg: SolverConfig,
                output_mask: np.ndarray | None = None) -> tuple[Activities, int]:
    """Plain gradient-descent inference z <- z - dt * dF/dz.

    Runs ``cfg.max_steps`` iterations or stops early at ``cfg.grad_tol``;
    raises DivergenceError if the energy passes 1e12. Returns the
    activities and the number of iterations taken.
    """
    if cfg.mode != "euler":
        raise ContractError("infer_euler needs cfg.mode == 'euler'")
    acts = feedforward_activities(params, arch, batch)
    steps = 0
    for _ in range(cfg.max_steps):
        grads = activity_gradient(params, arch, acts, output_mask)
        if _grad_inf_norm(grads) < cfg.grad_tol:
            break
        for i, g in enumerate(grads):
            acts.z[i + 1] -= cfg.dt * g
        steps += 1
        if _maybe_divergent(acts) and \
                energy(params, arch, acts, output_mask) > DIVERGENCE_ENERGY:
            raise DivergenceError(
                f"inference diverged after {steps} Euler steps (dt={cfg.dt})"
            )
    return acts, steps


def infer_adaptive(params: Params, arch: ArchSpec, batch: Batch, cfg: SolverConfig,
                   output_mask: np.ndarray | None = None) -> tuple[Activities, int]:
    """Heun (explicit RK2) integration of the inference flow dz/dt = -dF/dz
    with an embedded first-order error estimate and PI step-size control.

    Error norm: max over hidden entries of |e| / (abs_tol + rel_tol |z|).
    Controller: safety 0.9, growth clamped to [0.2, 5.0], derivative
    term zero. Stops at integration time ``t_max``, at ``grad_tol``, or
    after ``max_steps`` accepted steps; a step below 1e-12 raises
    StiffnessError.
    """
    if cfg.mode != "heun_adaptive":
        raise ContractError("infer_adaptive needs cfg.mode == 'heun_adaptive'")
    acts = feedforward_activities(params, arch, batch)
    if arch.n_hidden == 0:
        return acts, 0

    safety, shrink, grow = 0.9, 0.2, 5.0
    k_i, k_p = 0.3, 0.2  # exponents scaled for the order-1 error estimate
    dt = cfg.dt
    t = 0.0
    err_prev = 1.0
    accepted = 0

    k1 = activity_gradient(params, arch, acts, output_mask)
    while t < cfg.t_max and accepted < cfg.max_steps:
        if _grad_inf_norm(k1) < cfg.grad_tol:
            break
        dt = min(dt, cfg.t_max - t)
        trial = [z - dt * g for z, g in zip(acts.hidden(), k1)]
        trial_acts = Activities(z=[acts.z[0]] + trial + [acts.z[-1]])
        k2 = activity_gradient(params, arch, trial_acts, output_mask)

        err = 0.0
        for z, g1, g2 in zip(acts.hidden(), k1, k2):
            z_new = z - 0.5 * dt * (g1 + g2)
            e = 0.5 * dt * (g2 - g1)
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(z_new)
            if e.size:
                err = max(err, float(np.max(np.abs(e) / scale)))
        err = max(err, 1e-16)

        if err <= 1.0:
            for i, (g1, g2) in enumerate(zip(k1, k2)):
                acts.z[i + 1] -= 0.5 * dt * (g1 + g2)
            t += dt
            accepted += 1
            factor = safety * err ** (-k_i) * (err_prev / err) ** k_p
            err_prev = err
            k1 = activity_gradient(params, arch, acts, output_mask)
            if _maybe_divergent(acts) and \
                    energy(params, arch, acts, output_mask) > DIVERGENCE_ENERGY:
                raise DivergenceError("adaptive inference diverged")
        else:
            factor = safety * err ** (-0.5)
        dt *= min(grow, max(shrink, factor))
        if dt < 1e-12:
            raise StiffnessError(f"step size underflow at t={t:.3e}")
    return acts, accepted


def infer_exact_linear(params: Params, arch: ArchSpec, batch: Batch,
                       output_mask: np.ndarray | None = None) -> Activities:
    """Exact inference equilibrium for linear nets.

    The energy is a strictly convex quadratic in the hidden activities,
    so the stationarity condition is a block-tridiagonal SPD system,
    solved here by Cholesky for all samples at once (or per sample when
    an output mask makes the system sample-dependent).
    """
    if not arch.is_linear:
        raise ContractError("exact inference is defined for linear nets only")
    _check_net(params, arch, batch)
    if arch.n_hidden == 0:
        return feedforward_activities(params, arch, batch)

    widths = arch.widths
    hidden_dims = widths[1:-1]
    m = sum(hidden_dims)
    offs = np.concatenate(([0], np.cumsum(hidden_dims)))

    def assemble(mask_col: np.ndarray | None) -> Matrix:
        mat = np.zeros((m, m))
        for l in range(1, arch.n_layers):  # hidden layer index, 1-based
            wu = params.weights[l]  # W_{l+1}
            if l == arch.n_layers - 1 and mask_col is not None:
                gram = wu.T @ (mask_col[:, None] * wu)
            else:
                gram = wu.T @ wu
            sl = slice(offs[l - 1], offs[l])
            mat[sl, sl] = np.eye(hidden_dims[l - 1]) + gram
            if l < arch.n_layers - 1:
                su = slice(offs[l], offs[l + 1])
                mat[sl, su] = -wu.T
                mat[su, sl] = -wu
        return mat

    def rhs_for(mask_cols: np.ndarray | None) -> Matrix:
        # stationarity row for hidden layer l:
        #   (I + W_{l+1}^T D W_{l+1}) z_l - W_l z_{l-1} - W_{l+1}^T D z_{l+1}
        #     = b_l - W_{l+1}^T D b_{l+1}
        # with D the output mask on the last row and identity elsewhere
        rhs = np.zeros((m, batch.n))
        rhs[offs[0]:offs[1]] += params.weights[0] @ batch.x
        y_eff = batch.y if mask_cols is None else mask_cols * batch.y
        rhs[offs[-2]:offs[-1]] += params.weights[-1].T @ y_eff
        if params.biases is not None:
            for l in range(1, arch.n_layers):
                sl = slice(offs[l - 1], offs[l])
                rhs[sl] += params.biases[l - 1][:, None]
                b_up = np.broadcast_to(
                    params.biases[l][:, None], (widths[l + 1], batch.n)
                ).copy()
                if l == arch.n_layers - 1 and mask_cols is not None:
                    b_up *= mask_cols
                rhs[sl] -= params.weights[l].T @ b_up
        return rhs

    if output_mask is None:
        mat = assemble(None)
        c, low = scipy.linalg.cho_factor(mat, check_finite=False)
        sol = scipy.linalg.cho_solve((c, low), rhs_for(None), check_finite=False)
    else:
        mask_f = output_mask.astype(np.float64)
        full_rhs = rhs_for(mask_f)
        sol = np.zeros((m, batch.n))
        for i in range(batch.n):
            mat = assemble(mask_f[:, i])
            c, low = scipy.linalg.cho_factor(mat, check_finite=False)
            sol[:, i] = scipy.linalg.cho_solve((c, low), full_rhs[:, i],
                                               check_finite=False)

    z = [batch.x.copy()]
    for l in range(1, arch.n_layers):
        z.append(sol[offs[l - 1]:offs[l]].copy())
    z.append(batch.y.copy())
    return Activities(z=z)


def infer(params: Params, arch: ArchSpec, batch: Batch, cfg: SolverConfig,
          output_mask: np.ndarray | None = None) -> tuple[Activities, int]:
    """Dispatch on cfg.mode; exact solves report 0 iterations."""
    if cfg.mode == "euler":
        return infer_euler(params, arch, batch, cfg, output_mask)
    if cfg.mode == "heun_adaptive":
        return infer_adaptive(params, arch, batch, cfg, output_mask)
    return infer_exact_linear(params, arch, batch, output_mask), 0


def pc_weight_gradient(params: Params, arch: ArchSpec, acts: Activities,
                       output_mask: np.ndarray | None = None) -> Params:
    """dF/dW_l = -(1/N) sum_i eps_{l,i} phi(z_{l-1,i})^T at fixed activities."""
    phi = activation_fn(arch.activation)
    eps = _errors(params, arch, acts)
    if output_mask is not None:
        eps[-1] = eps[-1] * output_mask
    n = acts.n_samples
    grads = []
    for layer in range(1, arch.n_layers + 1):
        below = acts.z[layer - 1] if layer == 1 else phi(acts.z[layer - 1])
        grads.append(-(eps[layer - 1] @ below.T) / n)
    biases = None
    if params.biases is not None:
        biases = [-(e.sum(axis=1)) / n for e in eps]
    return Params(weights=grads, biases=biases)


@dataclass
class PCStepResult:
    params: Params
    energy_at_equilibrium: float
    inference_steps: int


def pc_train_step(params: Params, arch: ArchSpec, batch: Batch, cfg: SolverConfig,
                  eta: float,
                  output_mask: np.ndarray | None = None) -> PCStepResult:
    """One inference solve followed by one SGD update on the equilibrium
    weight gradient."""
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    acts, steps = infer(params, arch, batch, cfg, output_mask)
    f_eq = energy(params, arch, acts, output_mask)
    grads = pc_weight_gradient(params, arch, acts, output_mask)
    return PCStepResult(
        params=sgd_step(params, grads, eta),
        energy_at_equilibrium=f_eq,
        inference_steps=steps,
    )

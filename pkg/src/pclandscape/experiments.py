"""Desk-scale experiment drivers producing structured training logs.

Each driver is deterministic for a fixed seed + configuration. Logs are
recorded every ``log_every`` steps (step numbers in the records are the
true training step indices), which keeps long saddle-to-saddle runs at a
manageable size without affecting determinism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic import equilibrated_energy
from .data import DataConfig, completion_batch, gen_lowrank_matrix, generate
from .errors import ContractError
from .landscape import make_origin, make_zero_rank_saddle, numerical_hessian
from .linalg import singular_values, sym_eig
from .network import (
    ArchSpec,
    Batch,
    Params,
    bp_gradient,
    grad_norm_l2,
    init_near_point,
    mse_loss,
    sgd_step,
    zeros_params,
)
from .pcn import SolverConfig, energy, infer, pc_weight_gradient


@dataclass
class StepRecord:
    step: int
    train_loss: float
    equilibrated_energy: float | None = None
    energy_numeric: float | None = None
    grad_norm: float | None = None
    product_rank: int | None = None


CSV_COLUMNS = (
    "step",
    "train_loss",
    "equilibrated_energy",
    "energy_numeric",
    "grad_norm",
    "product_rank",
)


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        used = ["step", "train_loss"]
        for col in CSV_COLUMNS[2:]:
            if any(getattr(rec, col) is not None for rec in self.steps):
                used.append(col)
        return used

    def to_csv_text(self) -> str:
        cols = self.columns()
        lines = [",".join(cols)]
        for rec in self.steps:
            cells = []
            for col in cols:
                val = getattr(rec, col)
                if val is None:
                    cells.append("")
                elif isinstance(val, (int, np.integer)):
                    cells.append(str(int(val)))
                else:
                    cells.append(repr(float(val)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def losses(self) -> np.ndarray:
        return np.array([rec.train_loss for rec in self.steps])

    def step_numbers(self) -> np.ndarray:
        return np.array([rec.step for rec in self.steps], dtype=np.int64)


@dataclass
class EscapeReport:
    plateau_loss: float
    escape_step: int | None
    criterion: str


def escape_step(log: TrainLog, plateau_loss: float, factor: float = 0.5) -> int | None:
    """First logged step with train_loss <= factor * plateau_loss.

    ``factor`` lies in (0, 1]; factor = 1 returns the first step at or
    below the plateau itself (usually step 0).
    """
    if not 0.0 < factor <= 1.0:
        raise ContractError(f"factor must lie in (0, 1], got {factor}")
    for rec in log.steps:
        if rec.train_loss <= factor * plateau_loss:
            return rec.step
    return None


def run_theory_validation(arch: ArchSpec, data_cfg: DataConfig, steps: int,
                          solver_cfg: SolverConfig, seed: int,
                          eta: float = 1e-3, init_sigma: float = 0.1,
                          log_every: int = 1) -> TrainLog:
    """Train a linear net with PC, logging the numerical-equilibrium
    energy against the closed-form rescaled loss at every logged step.

    ``extra['max_rel_gap']`` carries the largest relative mismatch seen.
    """
    if not arch.is_linear:
        raise ContractError("theory validation requires a linear architecture")
    batch = generate(data_cfg)
    params = init_near_point(arch, zeros_params(arch), init_sigma, seed)
    log = TrainLog(seed=seed, config={
        "experiment": "validate-energy", "steps": steps, "eta": eta,
        "init_sigma": init_sigma, "solver": solver_cfg.mode,
    })
    max_gap = 0.0
    for step in range(steps + 1):
        acts, _ = infer(params, arch, batch, solver_cfg)
        f_num = energy(params, arch, acts)
        f_star = equilibrated_energy(params, batch)
        gap = abs(f_num - f_star) / max(f_star, 1e-12)
        max_gap = max(max_gap, gap)
        grads = pc_weight_gradient(params, arch, acts)
        if step % log_every == 0 or step == steps:
            log.steps.append(StepRecord(
                step=step,
                train_loss=mse_loss(params, arch, batch),
                equilibrated_energy=f_star,
                energy_numeric=f_num,
                grad_norm=grad_norm_l2(grads),
            ))
        if step < steps:
            params = sgd_step(params, grads, eta)
    log.extra["max_rel_gap"] = max_gap
    return log


def run_escape(arch: ArchSpec, init_kind: str, trainer: str, sigma: float,
               eta: float, max_steps: int, seed: int, *,
               data_cfg: DataConfig, solver_cfg: SolverConfig | None = None,
               escape_factor: float = 0.5, log_every: int = 1,
               stop_on_escape: bool = True,
               extra_steps_after_escape: int = 0) -> tuple[TrainLog, EscapeReport]:
    """Train with BP or PC from near a saddle and record the escape step.

    The plateau level is the loss at the (perturbed) initialization;
    escape means dropping to ``escape_factor`` of it. BP and PC runs
    with the same seed share the data, the initialization draw and eta.
    """
    if sigma <= 0:
        raise ContractError("sigma must be > 0")
    if init_kind not in ("origin", "zero_rank"):
        raise ContractError(f"unknown init_kind {init_kind!r}")
    if trainer not in ("bp", "pc"):
        raise ContractError(f"unknown trainer {trainer!r}")
    if solver_cfg is None:
        solver_cfg = SolverConfig(mode="euler", dt=0.1, max_steps=50)

    batch = generate(data_cfg)
    center = make_origin(arch) if init_kind == "origin" \
        else make_zero_rank_saddle(arch, seed)
    params = init_near_point(arch, center, sigma, seed)

    log = TrainLog(seed=seed, config={
        "experiment": "escape", "init_kind": init_kind, "trainer": trainer,
        "sigma": sigma, "eta": eta, "max_steps": max_steps,
        "escape_factor": escape_factor,
    })
    plateau = mse_loss(params, arch, batch)
    escaped_at: int | None = None
    remaining_after = extra_steps_after_escape
    for step in range(max_steps + 1):
        loss = mse_loss(params, arch, batch)
        if trainer == "bp":
            grads = bp_gradient(params, arch, batch)
            f_num = None
        else:
            acts, _ = infer(params, arch, batch, solver_cfg)
            f_num = energy(params, arch, acts)
            grads = pc_weight_gradient(params, arch, acts)
        if step % log_every == 0 or step == max_steps:
            log.steps.append(StepRecord(
                step=step, train_loss=loss, energy_numeric=f_num,
                grad_norm=grad_norm_l2(grads),
            ))
        if escaped_at is None and loss <= escape_factor * plateau:
            escaped_at = step
            if log.steps[-1].step != step:
                log.steps.append(StepRecord(
                    step=step, train_loss=loss, energy_numeric=f_num,
                    grad_norm=grad_norm_l2(grads),
                ))
        if escaped_at is not None and stop_on_escape:
            if remaining_after <= 0:
                break
            remaining_after -= 1
        if step < max_steps:
            params = sgd_step(params, grads, eta)
    report = EscapeReport(
        plateau_loss=plateau,
        escape_step=escaped_at,
        criterion=f"train_loss <= {escape_factor} * plateau_loss",
    )
    return log, report


@dataclass
class SpectraResult:
    theory_eigs: np.ndarray | None
    numeric_eigs_loss: np.ndarray
    numeric_eigs_energy: np.ndarray


def run_spectra(arch: ArchSpec, batch: Batch, point_kind: str,
                seed: int = 0, h: float = 1e-3) -> SpectraResult:
    """Eigenvalues of the theoretical origin Hessian of the energy and of
    the finite-difference Hessians of both objectives, sorted ascending.

    ``theory_eigs`` is None for zero-rank points (no closed-form Hessian
    is implemented there)."""
    from .analytic import origin_hessian_energy, covariances

    if point_kind not in ("origin", "zero_rank"):
        raise ContractError(f"unknown point_kind {point_kind!r}")
    if point_kind == "origin":
        point = make_origin(arch)
        theory = sym_eig(origin_hessian_energy(covariances(batch), arch)).eigenvalues
    else:
        point = make_zero_rank_saddle(arch, seed)
        theory = None
    num_loss = sym_eig(
        numerical_hessian(lambda p: mse_loss(p, arch, batch), point, h)
    ).eigenvalues
    num_energy = sym_eig(
        numerical_hessian(lambda p: equilibrated_energy(p, batch), point, h)
    ).eigenvalues
    return SpectraResult(
        theory_eigs=theory,
        numeric_eigs_loss=num_loss,
        numeric_eigs_energy=num_energy,
    )


# ---------------------------------------------------------------------------
# matrix completion (saddle-to-saddle)


@dataclass
class PlateauRecord:
    rank: int
    start_step: int
    end_step: int
    snapshot_step: int
    plateau_loss: float
    bp_grad_norm: float


@dataclass
class MatcompResult:
    bp_log: TrainLog
    pc_logs: list[TrainLog]
    plateaus: list[PlateauRecord]
    bp_escape_steps: list[int | None]
    pc_escape_steps: list[int | None]
    pc_min_grad_norms: list[float]


class _SnapshotKeeper:
    """Evenly spaced parameter snapshots over a growing interval, thinned
    by decimation so at most ``cap`` are alive."""

    def __init__(self, cap: int = 64):
        self.cap = cap
        self.stride = 1
        self.count = 0
        self.items: list[tuple[int, list[np.ndarray]]] = []

    def offer(self, step: int, weights: list[np.ndarray]):
        if self.count % self.stride == 0:
            self.items.append((step, [w.copy() for w in weights]))
            if len(self.items) > self.cap:
                self.items = self.items[::2]
                self.stride *= 2
        self.count += 1

    def nearest(self, step: int) -> tuple[int, list[np.ndarray]]:
        return min(self.items, key=lambda it: abs(it[0] - step))

    def reset(self):
        self.stride = 1
        self.count = 0
        self.items = []


def _anchored_rank(product: np.ndarray, target_smax: float, rel_tol: float) -> int:
    s = singular_values(product)
    return int(np.sum(s > rel_tol * target_smax))


def run_matrix_completion(seed: int, *, dims: int = 10, rank: int = 3,
                          mask_fraction: float = 0.2, width: int = 100,
                          hidden_layers: int = 3, eta: float = 1e-2,
                          sigma: float = 5e-3, rank_tol: float = 1e-3,
                          log_every: int = 100, plateau_window: int = 50,
                          plateau_rel_change: float = 1e-4,
                          max_steps: int = 30_000_000,
                          pc_max_steps: int = 50_000,
                          pc_log_every: int = 10,
                          escape_factor: float = 0.5) -> MatcompResult:
    """Gradient descent on a masked low-rank completion task, tracking the
    rank of the network map through its saddle-to-saddle plateaus, then
    predictive-coding runs launched from each captured plateau.

    The rank threshold is anchored to the target's largest singular value
    (rank_tol * sigma_max(target)) so the near-origin plateau reads rank
    0 rather than the rank of a vanishingly small random product.
    """
    task = gen_lowrank_matrix(DataConfig(
        kind="lowrank_matrix", dims=dims, rank=rank,
        mask_fraction=mask_fraction, seed=seed,
    ))
    batch, observed = completion_batch(task)
    mask_f = observed.astype(np.float64)
    target_smax = float(singular_values(task.target)[0])

    widths = (dims,) + (width,) * hidden_layers + (dims,)
    arch = ArchSpec(widths=widths, activation="linear")
    params0 = init_near_point(arch, zeros_params(arch), sigma, seed)

    bp_log = TrainLog(seed=seed, config={
        "experiment": "matcomp", "dims": dims, "rank": rank,
        "mask_fraction": mask_fraction, "width": width,
        "hidden_layers": hidden_layers, "eta": eta, "sigma": sigma,
        "log_every": log_every,
    })

    # dedicated flat loop: full-batch GD with the masked residual
    ws = [w.copy() for w in params0.weights]
    n = batch.n
    x, y = batch.x, batch.y

    def forward_all(ws_):
        acts = [x]
        for w in ws_:
            acts.append(w @ acts[-1])
        return acts

    plateaus: list[PlateauRecord] = []
    keeper = _SnapshotKeeper()
    streak = 0
    prev_raw_loss = None
    plateau_rank = None
    plateau_start = None
    confirmed = False
    snapshots: list[tuple[int, list[np.ndarray], PlateauRecord]] = []

    recorded_ranks: set[int] = set()
    step = 0
    loss = float("inf")
    while step <= max_steps:
        acts = forward_all(ws)
        resid = (acts[-1] - y) * mask_f
        loss = 0.5 * float(np.sum(resid * resid)) / n
        grads = [None] * len(ws)
        back = resid / n
        for k in range(len(ws) - 1, -1, -1):
            grads[k] = back @ acts[k].T
            if k > 0:
                back = ws[k].T @ back

        # flatness streak on raw steps (the rank is sampled on the log grid)
        if prev_raw_loss is not None and \
                abs(loss - prev_raw_loss) <= plateau_rel_change * max(prev_raw_loss, 1e-300):
            streak += 1
        else:
            streak = 0
        prev_raw_loss = loss

        if step % log_every == 0:
            # x is the identity, so the output activation *is* the product map
            cur_rank = _anchored_rank(acts[-1], target_smax, rank_tol)
            gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
            bp_log.steps.append(StepRecord(
                step=step, train_loss=loss, grad_norm=gnorm,
                product_rank=cur_rank,
            ))

            if plateau_rank is None or cur_rank != plateau_rank:
                if confirmed and plateau_rank is not None \
                        and plateau_rank < rank and plateau_rank not in recorded_ranks:
                    snap_step, snap_ws = keeper.nearest((plateau_start + step) // 2)
                    rec = PlateauRecord(
                        rank=plateau_rank, start_step=plateau_start,
                        end_step=step, snapshot_step=snap_step,
                        plateau_loss=bp_loss_at(bp_log, snap_step),
                        bp_grad_norm=bp_grad_at(bp_log, snap_step),
                    )
                    plateaus.append(rec)
                    snapshots.append((snap_step, snap_ws, rec))
                    recorded_ranks.add(plateau_rank)
                plateau_rank = cur_rank
                plateau_start = step
                streak = 0
                confirmed = False
                keeper.reset()
            elif streak >= plateau_window:
                confirmed = True
            if confirmed:
                keeper.offer(step, ws)

            if len(plateaus) >= rank and cur_rank >= rank and \
                    loss <= escape_factor * plateaus[-1].plateau_loss:
                break
            if loss <= 1e-14 * max(1.0, bp_log.steps[0].train_loss):
                break  # converged without resolving every plateau

        for k in range(len(ws)):
            ws[k] -= eta * grads[k]
        step += 1
    final_loss = loss

    bp_log.extra["final_loss"] = final_loss
    bp_log.extra["total_steps"] = step

    # BP escape step from each snapshot, read off the main log
    bp_escapes: list[int | None] = []
    for rec in plateaus:
        bp_escapes.append(_first_step_below(
            bp_log, rec.snapshot_step, escape_factor * rec.plateau_loss))

    # PC runs launched from each captured plateau
    pc_logs: list[TrainLog] = []
    pc_escapes: list[int | None] = []
    pc_min_grads: list[float] = []
    solver = SolverConfig(mode="exact_linear")
    for snap_step, snap_ws, rec in snapshots:
        params = Params(weights=[w.copy() for w in snap_ws])
        log = TrainLog(seed=seed, config={
            "experiment": "matcomp-pc", "from_rank": rec.rank,
            "snapshot_step": snap_step, "eta": eta,
        })
        esc = None
        min_grad = float("inf")
        for pstep in range(pc_max_steps + 1):
            loss = mse_loss(params, arch, batch, mask=observed)
            acts, _ = infer(params, arch, batch, solver, output_mask=observed)
            grads = pc_weight_gradient(params, arch, acts, output_mask=observed)
            gnorm = grad_norm_l2(grads)
            if pstep % pc_log_every == 0:
                log.steps.append(StepRecord(
                    step=pstep, train_loss=loss,
                    energy_numeric=energy(params, arch, acts, output_mask=observed),
                    grad_norm=gnorm,
                ))
            min_grad = min(min_grad, gnorm)
            if loss <= escape_factor * rec.plateau_loss:
                esc = pstep
                if log.steps[-1].step != pstep:
                    log.steps.append(StepRecord(
                        step=pstep, train_loss=loss, grad_norm=gnorm,
                    ))
                break
            params = sgd_step(params, grads, eta)
        pc_logs.append(log)
        pc_escapes.append(esc)
        pc_min_grads.append(min_grad)

    return MatcompResult(
        bp_log=bp_log,
        pc_logs=pc_logs,
        plateaus=plateaus,
        bp_escape_steps=bp_escapes,
        pc_escape_steps=pc_escapes,
        pc_min_grad_norms=pc_min_grads,
    )


def bp_loss_at(log: TrainLog, step: int) -> float:
    """Logged loss at the record closest to ``step``."""
    rec = min(log.steps, key=lambda r: abs(r.step - step))
    return rec.train_loss


def bp_grad_at(log: TrainLog, step: int) -> float:
    rec = min(log.steps, key=lambda r: abs(r.step - step))
    return rec.grad_norm if rec.grad_norm is not None else float("nan")


def _first_step_below(log: TrainLog, from_step: int, level: float) -> int | None:
    for rec in log.steps:
        if rec.step >= from_step and rec.train_loss <= level:
            return rec.step - from_step
    return None

"""Command-line front end: one experiment per invocation.

Usage: pclandscape <experiment> --config cfg.json [--seed N] [--out DIR]
                   [--steps N] [--eta F] [--sigma F]

Each run writes ``{experiment}_{seed}.csv`` (step log), a matching
``.json`` summary and an ``.svg`` plot under the output directory
(default ./runs). Files are written to a temp name and renamed, so a
failed run leaves no partial artifacts. Exit codes: 0 success, 2 invalid
configuration (message names the failing field path), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .analytic import (
    chain_minima_relation,
    chain_quantities,
    covariances,
    equilibrated_energy,
    origin_hessian_energy,
)
from .data import DataConfig, generate
from .errors import ConfigError, ContractError
from .experiments import (
    run_escape,
    run_matrix_completion,
    run_spectra,
    run_theory_validation,
)
from .landscape import landscape_grid, make_origin, make_zero_rank_saddle
from .linalg import sym_eig
from .network import ArchSpec, mse_loss
from .pcn import SolverConfig
from .plots import emit_svg_plot
from .runio import atomic_write_text, write_json

EXPERIMENTS = (
    "validate-energy", "spectra", "escape", "landscape", "matcomp",
    "chain-analysis",
)

_REQUIRED = object()


def _take(raw: dict, key: str, path: str, default=_REQUIRED, kind=None,
          choices=None):
    if key not in raw:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    val = raw.pop(key)
    if kind is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{path}.{key}: expected a boolean")
    elif kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{path}.{key}: expected an integer")
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{path}.{key}: expected a number")
        val = float(val)
    elif kind is str:
        if not isinstance(val, str):
            raise ConfigError(f"{path}.{key}: expected a string")
    elif kind is list:
        if not isinstance(val, list):
            raise ConfigError(f"{path}.{key}: expected a list")
    if choices is not None and val not in choices:
        raise ConfigError(f"{path}.{key}: must be one of {sorted(choices)}")
    return val


def _reject_unknown(raw: dict, path: str):
    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"{path}.{key}: unknown key")


def _parse_arch(raw, path="arch") -> ArchSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    raw = dict(raw)
    widths = _take(raw, "widths", path, kind=list)
    activation = _take(raw, "activation", path, default="linear", kind=str,
                       choices=("linear", "tanh", "relu"))
    bias = _take(raw, "bias", path, default=False, kind=bool)
    _reject_unknown(raw, path)
    if not all(isinstance(w, int) and not isinstance(w, bool) and w >= 1
               for w in widths):
        raise ConfigError(f"{path}.widths: entries must be integers >= 1")
    if len(widths) < 2:
        raise ConfigError(f"{path}.widths: need at least [d_x, d_y]")
    return ArchSpec(widths=tuple(widths), activation=activation, bias=bias)


def _parse_data(raw, seed: int, path="data") -> DataConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    raw = dict(raw)
    kwargs = {
        "kind": _take(raw, "kind", path, kind=str,
                      choices=("gauss_regression", "blob_classification",
                               "lowrank_matrix")),
        "dims": _take(raw, "dims", path, default=3, kind=int),
        "n_samples": _take(raw, "n_samples", path, default=64, kind=int),
        "seed": _take(raw, "seed", path, default=seed, kind=int),
        "mean": _take(raw, "mean", path, default=1.0, kind=float),
        "std": _take(raw, "std", path, default=0.1, kind=float),
        "n_classes": _take(raw, "n_classes", path, default=10, kind=int),
        "scale": _take(raw, "scale", path, default=1.0, kind=float),
        "noise": _take(raw, "noise", path, default=0.1, kind=float),
        "rank": _take(raw, "rank", path, default=3, kind=int),
        "mask_fraction": _take(raw, "mask_fraction", path, default=0.2,
                               kind=float),
    }
    flips = _take(raw, "flip_dims", path, default=[], kind=list)
    d_y = _take(raw, "d_y", path, default=None)
    _reject_unknown(raw, path)
    try:
        return DataConfig(flip_dims=tuple(flips), d_y=d_y, **kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_solver(raw, path="solver") -> SolverConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    raw = dict(raw)
    kwargs = {
        "mode": _take(raw, "mode", path, default="euler", kind=str,
                      choices=("euler", "heun_adaptive", "exact_linear")),
        "dt": _take(raw, "dt", path, default=0.1, kind=float),
        "max_steps": _take(raw, "max_steps", path, default=500, kind=int),
        "abs_tol": _take(raw, "abs_tol", path, default=1e-3, kind=float),
        "rel_tol": _take(raw, "rel_tol", path, default=1e-3, kind=float),
        "grad_tol": _take(raw, "grad_tol", path, default=1e-8, kind=float),
        "t_max": _take(raw, "t_max", path, default=300.0, kind=float),
    }
    _reject_unknown(raw, path)
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_config(args) -> dict:
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise ConfigError(f"config: file not found: {cfg_path}")
    try:
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    return raw


def _csv_from_rows(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for val in row:
            if val is None:
                cells.append("")
            elif isinstance(val, (int, np.integer)):
                cells.append(str(int(val)))
            elif isinstance(val, str):
                cells.append(val)
            else:
                cells.append(repr(float(val)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _run_validate_energy(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    arch = _parse_arch(_take(raw, "arch", path))
    data_cfg = _parse_data(_take(raw, "data", path, default={"kind": "gauss_regression"}), seed)
    solver = _parse_solver(_take(raw, "solver", path, default={}))
    training = _take(raw, "training", path, default={})
    if not isinstance(training, dict):
        raise ConfigError("config.training: expected an object")
    training = dict(training)
    steps = _take(training, "steps", "training", default=200, kind=int)
    eta = _take(training, "eta", "training", default=1e-3, kind=float)
    init_sigma = _take(training, "init_sigma", "training", default=0.1, kind=float)
    log_every = _take(training, "log_every", "training", default=1, kind=int)
    _reject_unknown(training, "training")
    _reject_unknown(raw, path)
    if overrides.steps is not None:
        steps = overrides.steps
    if overrides.eta is not None:
        eta = overrides.eta
    if overrides.sigma is not None:
        init_sigma = overrides.sigma

    log = run_theory_validation(arch, data_cfg, steps, solver, seed,
                                eta=eta, init_sigma=init_sigma,
                                log_every=log_every)
    base = out / f"validate-energy_{seed}"
    atomic_write_text(base.with_suffix(".csv"), log.to_csv_text())
    write_json(base.with_suffix(".json"), {
        "experiment": "validate-energy", "seed": seed, "config": log.config,
        "data": asdict(data_cfg), "arch": {
            "widths": list(arch.widths), "activation": arch.activation,
            "bias": arch.bias,
        },
        "max_rel_gap": log.extra["max_rel_gap"],
        "final_loss": log.steps[-1].train_loss,
        "rows": len(log.steps),
    })
    emit_svg_plot(log, "loss-curve", base.with_suffix(".svg"),
                  title=f"validate-energy seed={seed}", log_scale=True)


def _run_spectra(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    arch = _parse_arch(_take(raw, "arch", path))
    data_cfg = _parse_data(_take(raw, "data", path, default={"kind": "gauss_regression"}), seed)
    point_kind = _take(raw, "point_kind", path, default="origin", kind=str,
                       choices=("origin", "zero_rank"))
    h = _take(raw, "h", path, default=1e-3, kind=float)
    _reject_unknown(raw, path)

    batch = generate(data_cfg)
    res = run_spectra(arch, batch, point_kind, seed=seed, h=h)
    rows = []
    n = res.numeric_eigs_loss.size
    for i in range(n):
        theory = None if res.theory_eigs is None else float(res.theory_eigs[i])
        rows.append([i, theory, float(res.numeric_eigs_loss[i]),
                     float(res.numeric_eigs_energy[i])])
    base = out / f"spectra_{seed}"
    atomic_write_text(base.with_suffix(".csv"), _csv_from_rows(
        ["index", "theory_energy_eig", "numeric_loss_eig", "numeric_energy_eig"],
        rows,
    ))
    write_json(base.with_suffix(".json"), {
        "experiment": "spectra", "seed": seed, "point_kind": point_kind,
        "arch": {"widths": list(arch.widths)},
        "theory_eigs": res.theory_eigs,
        "numeric_eigs_loss": res.numeric_eigs_loss,
        "numeric_eigs_energy": res.numeric_eigs_energy,
    })
    emit_svg_plot(res.numeric_eigs_energy, "eigenspectrum",
                  base.with_suffix(".svg"),
                  title=f"energy Hessian spectrum ({point_kind})")


def _run_escape(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    arch = _parse_arch(_take(raw, "arch", path))
    data_cfg = _parse_data(_take(raw, "data", path, default={"kind": "gauss_regression"}), seed)
    solver = _parse_solver(_take(raw, "solver", path, default={}))
    init_kind = _take(raw, "init_kind", path, default="origin", kind=str,
                      choices=("origin", "zero_rank"))
    trainer = _take(raw, "trainer", path, kind=str, choices=("bp", "pc"))
    training = dict(_take(raw, "training", path, default={}))
    sigma = _take(training, "sigma", "training", default=5e-2, kind=float)
    eta = _take(training, "eta", "training", default=0.4, kind=float)
    max_steps = _take(training, "max_steps", "training", default=10_000, kind=int)
    log_every = _take(training, "log_every", "training", default=1, kind=int)
    escape_factor = _take(training, "escape_factor", "training", default=0.5,
                          kind=float)
    _reject_unknown(training, "training")
    _reject_unknown(raw, path)
    if overrides.steps is not None:
        max_steps = overrides.steps
    if overrides.eta is not None:
        eta = overrides.eta
    if overrides.sigma is not None:
        sigma = overrides.sigma

    log, report = run_escape(
        arch, init_kind, trainer, sigma, eta, max_steps, seed,
        data_cfg=data_cfg, solver_cfg=solver, escape_factor=escape_factor,
        log_every=log_every,
    )
    base = out / f"escape_{seed}"
    atomic_write_text(base.with_suffix(".csv"), log.to_csv_text())
    write_json(base.with_suffix(".json"), {
        "experiment": "escape", "seed": seed, "trainer": trainer,
        "init_kind": init_kind, "config": log.config,
        "plateau_loss": report.plateau_loss,
        "escape_step": report.escape_step,
        "criterion": report.criterion,
    })
    emit_svg_plot(log, "loss-curve", base.with_suffix(".svg"),
                  title=f"escape {trainer} seed={seed}", log_scale=True)


def _run_landscape(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    arch = _parse_arch(_take(raw, "arch", path))
    data_cfg = _parse_data(_take(raw, "data", path, default={"kind": "gauss_regression"}), seed)
    objective_name = _take(raw, "objective", path, default="loss", kind=str,
                           choices=("loss", "energy"))
    center_kind = _take(raw, "center", path, default="origin", kind=str,
                        choices=("origin", "zero_rank"))
    resolution = _take(raw, "resolution", path, default=30, kind=int)
    half_range = _take(raw, "half_range", path, default=1.0, kind=float)
    _reject_unknown(raw, path)

    batch = generate(data_cfg)
    if objective_name == "loss":
        objective = lambda p: mse_loss(p, arch, batch)
    else:
        objective = lambda p: equilibrated_energy(p, batch)
    center = make_origin(arch) if center_kind == "origin" \
        else make_zero_rank_saddle(arch, seed)
    grid = landscape_grid(objective, center, resolution=resolution,
                          half_range=half_range)
    rows = []
    for i, a in enumerate(grid.alphas):
        for j, b in enumerate(grid.betas):
            rows.append([float(a), float(b), float(grid.values[i, j])])
    base = out / f"landscape_{seed}"
    atomic_write_text(base.with_suffix(".csv"),
                      _csv_from_rows(["alpha", "beta", "value"], rows))
    write_json(base.with_suffix(".json"), {
        "experiment": "landscape", "seed": seed, "objective": objective_name,
        "center": center_kind, "resolution": resolution,
        "half_range": half_range,
        "min_value": float(grid.values.min()),
        "max_value": float(grid.values.max()),
        "center_value": float(objective(center)),
    })
    emit_svg_plot(grid, "landscape-heatmap", base.with_suffix(".svg"),
                  title=f"{objective_name} landscape ({center_kind})")


def _run_matcomp(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    kwargs = {
        "dims": _take(raw, "dims", path, default=10, kind=int),
        "rank": _take(raw, "rank", path, default=3, kind=int),
        "mask_fraction": _take(raw, "mask_fraction", path, default=0.2, kind=float),
        "width": _take(raw, "width", path, default=100, kind=int),
        "hidden_layers": _take(raw, "hidden_layers", path, default=3, kind=int),
        "eta": _take(raw, "eta", path, default=1e-2, kind=float),
        "sigma": _take(raw, "sigma", path, default=5e-3, kind=float),
        "log_every": _take(raw, "log_every", path, default=100, kind=int),
        "max_steps": _take(raw, "max_steps", path, default=30_000_000, kind=int),
        "pc_max_steps": _take(raw, "pc_max_steps", path, default=50_000, kind=int),
        "pc_log_every": _take(raw, "pc_log_every", path, default=10, kind=int),
    }
    _reject_unknown(raw, path)
    if overrides.steps is not None:
        kwargs["max_steps"] = overrides.steps
    if overrides.eta is not None:
        kwargs["eta"] = overrides.eta
    if overrides.sigma is not None:
        kwargs["sigma"] = overrides.sigma

    res = run_matrix_completion(seed, **kwargs)
    base = out / f"matcomp_{seed}"
    atomic_write_text(base.with_suffix(".csv"), res.bp_log.to_csv_text())
    for log in res.pc_logs:
        r = log.config["from_rank"]
        atomic_write_text(out / f"matcomp_{seed}_pc_rank{r}.csv",
                          log.to_csv_text())
    write_json(base.with_suffix(".json"), {
        "experiment": "matcomp", "seed": seed, "config": res.bp_log.config,
        "total_steps": res.bp_log.extra["total_steps"],
        "final_loss": res.bp_log.extra["final_loss"],
        "plateaus": [asdict(p) for p in res.plateaus],
        "bp_escape_steps": res.bp_escape_steps,
        "pc_escape_steps": res.pc_escape_steps,
        "pc_min_grad_norms": res.pc_min_grad_norms,
    })
    emit_svg_plot(res.bp_log, "loss-curve", base.with_suffix(".svg"),
                  title=f"matcomp BP seed={seed}", log_scale=True)


def _run_chain_analysis(raw: dict, seed: int, out: Path, overrides):
    path = "config"
    weights = _take(raw, "weights", path, kind=list)
    data_cfg = _parse_data(_take(raw, "data", path, default={
        "kind": "gauss_regression", "dims": 1,
    }), seed)
    _reject_unknown(raw, path)
    if data_cfg.dims != 1:
        raise ConfigError("config.data.dims: chains need dims == 1")
    if not all(isinstance(w, (int, float)) and not isinstance(w, bool)
               for w in weights):
        raise ConfigError("config.weights: entries must be numbers")

    batch = generate(data_cfg)
    q = chain_quantities(weights, batch)
    spec_loss = sym_eig(q.loss_hessian)
    spec_energy = sym_eig(q.energy_hessian)

    arch = ArchSpec(widths=(1,) * (len(weights) + 1))
    cov = covariances(batch)
    origin_energy = sym_eig(origin_hessian_energy(cov, arch)).eigenvalues \
        if arch.n_hidden >= 1 else None

    minima = None
    try:
        rel = chain_minima_relation(weights, batch)
        minima = {"s": rel.s,
                  "max_abs_residual": float(np.max(np.abs(
                      rel.h_energy - rel.h_loss / rel.s)))}
    except ContractError:
        pass

    rows = [
        [i, float(spec_loss.eigenvalues[i]), float(spec_energy.eigenvalues[i])]
        for i in range(len(weights))
    ]
    base = out / f"chain-analysis_{seed}"
    atomic_write_text(base.with_suffix(".csv"), _csv_from_rows(
        ["index", "loss_hessian_eig", "energy_hessian_eig"], rows))
    write_json(base.with_suffix(".json"), {
        "experiment": "chain-analysis", "seed": seed,
        "weights": [float(w) for w in weights],
        "s": q.s, "f_star": q.f_star, "loss": q.loss,
        "loss_hessian": q.loss_hessian,
        "energy_hessian": q.energy_hessian,
        "loss_hessian_eigs": spec_loss.eigenvalues,
        "energy_hessian_eigs": spec_energy.eigenvalues,
        "origin_energy_hessian_eigs": origin_energy,
        "perfect_fit_relation": minima,
    })
    emit_svg_plot(spec_energy.eigenvalues, "eigenspectrum",
                  base.with_suffix(".svg"), title="chain energy Hessian")


_RUNNERS = {
    "validate-energy": _run_validate_energy,
    "spectra": _run_spectra,
    "escape": _run_escape,
    "landscape": _run_landscape,
    "matcomp": _run_matcomp,
    "chain-analysis": _run_chain_analysis,
}


def parse_and_dispatch(argv: list[str]) -> int:
    """Parse arguments, validate the config, run the experiment, write
    outputs. Returns the process exit code."""
    parser = argparse.ArgumentParser(prog="pclandscape", description=__doc__)
    sub = parser.add_subparsers(dest="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.experiment is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        raw = _load_config(args)
        declared = raw.pop("experiment", None)
        if declared is not None and declared != args.experiment:
            raise ConfigError(
                f"config.experiment: {declared!r} does not match "
                f"subcommand {args.experiment!r}"
            )
        seed = raw.pop("seed", 0)
        if args.seed is not None:
            seed = args.seed
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("config.seed: expected an integer")
        out_dir = raw.pop("out", "./runs")
        if args.out is not None:
            out_dir = args.out
        out = Path(out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    runner = _RUNNERS[args.experiment]
    try:
        runner(raw, seed, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

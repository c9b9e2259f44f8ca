"""Closed-form quantities for deep linear networks.

Empirical covariances, the analytic loss gradient/Hessian, the
inference-equilibrium rescaling S and rescaled loss F*, its gradient,
the theoretical Hessians at the origin of both objectives, scalar-chain
specializations, the zero-rank curvature constant, and the chain
flat-minima relation.

Parameter layout convention: all dense Hessians index the row-major
ravel of each weight matrix, layers concatenated W_1 ... W_L, matching
``Params.flatten``. Where a block's natural derivation is with respect
to a transposed weight matrix, a commutation matrix converts it into
this layout, so finite-difference comparisons index identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .linalg import Matrix, commutation_matrix, kron, solve_spd
from .network import ArchSpec, Batch, Params

__all__ = [
    "Covariances",
    "Rescaling",
    "ChainQuantities",
    "ChainMinimaRelation",
    "covariances",
    "weight_product",
    "loss_gradient_analytic",
    "loss_hessian",
    "rescaling",
    "equilibrated_energy",
    "equilibrated_energy_gradient",
    "origin_hessian_loss",
    "origin_hessian_energy",
    "chain_quantities",
    "chain_minima_relation",
    "zero_rank_curvature_constant",
]


@dataclass(frozen=True)
class Covariances:
    """Empirical second moments of a batch, with 1/N normalization."""

    sxx: Matrix
    sxy: Matrix
    syx: Matrix
    syy: Matrix


@dataclass(frozen=True)
class Rescaling:
    """The layer-variance correction S = I + sum_{l=2}^{L} (W_{L:l})(W_{L:l})^T.

    Symmetric with eigenvalues >= 1, so always invertible.
    """

    s: Matrix


def covariances(batch: Batch) -> Covariances:
    n = batch.n
    sxx = batch.x @ batch.x.T / n
    syy = batch.y @ batch.y.T / n
    sxy = batch.x @ batch.y.T / n
    return Covariances(
        sxx=0.5 * (sxx + sxx.T),
        sxy=sxy,
        syx=sxy.T.copy(),
        syy=0.5 * (syy + syy.T),
    )


def _require_linear(params: Params, arch: ArchSpec | None = None):
    if arch is not None:
        if not arch.is_linear:
            raise ContractError("analytic DLN formulas require a linear architecture")
        if arch.bias:
            raise ContractError("analytic DLN formulas exclude biases")
        if not params.matches(arch):
            raise ShapeError("params do not match the architecture")
    if params.biases is not None:
        raise ContractError("analytic DLN formulas exclude biases")


def _widths(params: Params) -> list[int]:
    """[n_0, ..., n_L] recovered from the weight shapes."""
    return [params.weights[0].shape[1]] + [w.shape[0] for w in params.weights]


def weight_product(params: Params, hi: int, lo: int) -> Matrix:
    """W_hi @ ... @ W_lo (1-based paper indices), empty product = identity.

    The empty product (hi == lo - 1) is the identity on the shared
    dimension n_hi = n_{lo-1}.
    """
    widths = _widths(params)
    if hi < lo - 1:
        raise ShapeError(f"invalid product range W_{hi}:{lo}")
    if hi == lo - 1:
        return np.eye(widths[hi])
    out = params.weights[hi - 1]
    for k in range(hi - 1, lo - 1, -1):
        out = out @ params.weights[k - 1]
    return out


def full_product(params: Params) -> Matrix:
    """The end-to-end map W_{L:1}."""
    return weight_product(params, len(params.weights), 1)


def loss_gradient_analytic(params: Params, cov: Covariances) -> Params:
    """dL/dW_l = (W_{L:l+1})^T (W_{L:1} Sxx - Syx) (W_{l-1:1})^T per layer."""
    _require_linear(params)
    n_layers = len(params.weights)
    mid = full_product(params) @ cov.sxx - cov.syx
    grads = []
    for layer in range(1, n_layers + 1):
        left = weight_product(params, n_layers, layer + 1).T
        right = weight_product(params, layer - 1, 1).T
        grads.append(left @ mid @ right)
    return Params(weights=grads)


def _block_offsets(arch: ArchSpec) -> list[int]:
    offsets = [0]
    for r, c in arch.weight_shapes:
        offsets.append(offsets[-1] + r * c)
    return offsets


def loss_hessian(params: Params, cov: Covariances, arch: ArchSpec) -> Matrix:
    """Symmetric p x p Hessian of the MSE loss at ``params``.

    Assembled block-by-block from the analytic derivative of the loss
    gradient; block (l, k) is the derivative of vec_r(dL/dW_l) with
    respect to vec_r(W_k).
    """
    _require_linear(params, arch)
    n_layers = arch.n_layers
    offsets = _block_offsets(arch)
    p = offsets[-1]
    hess = np.zeros((p, p))
    mid = full_product(params) @ cov.sxx - cov.syx  # W_{L:1} Sxx - Syx

    prod = lambda hi, lo: weight_product(params, hi, lo)
    for l in range(1, n_layers + 1):
        for k in range(1, n_layers + 1):
            if l == k:
                a = prod(n_layers, l + 1)
                b = prod(l - 1, 1)
                block = kron(a.T @ a, b @ cov.sxx @ b.T)
            else:
                # contribution through the residual factor W_{L:1}
                a1 = prod(n_layers, l + 1).T @ prod(n_layers, k + 1)
                b1t = prod(l - 1, 1) @ cov.sxx @ prod(k - 1, 1).T
                block = kron(a1, b1t)
                # contribution through the outer product factor holding W_k;
                # derived w.r.t. W_k^T, hence the commutation matrix
                if k > l:
                    a2 = prod(k - 1, l + 1).T
                    b2t = prod(l - 1, 1) @ mid.T @ prod(n_layers, k + 1)
                else:
                    a2 = prod(n_layers, l + 1).T @ mid @ prod(k - 1, 1).T
                    b2t = prod(l - 1, k + 1)
                rows_k, cols_k = arch.weight_shapes[k - 1]
                block = block + kron(a2, b2t) @ commutation_matrix(rows_k, cols_k)
            hess[offsets[l - 1]:offsets[l], offsets[k - 1]:offsets[k]] = block
    return 0.5 * (hess + hess.T)


def rescaling(params: Params) -> Rescaling:
    """S = I_dy + sum_{l=2}^{L} (W_{L:l})(W_{L:l})^T; S = I when L == 1."""
    _require_linear(params)
    n_layers = len(params.weights)
    d_y = params.weights[-1].shape[0]
    s = np.eye(d_y)
    partial = None
    for layer in range(n_layers, 1, -1):
        partial = params.weights[layer - 1] if partial is None \
            else partial @ params.weights[layer - 1]
        s = s + partial @ partial.T
    return Rescaling(s=0.5 * (s + s.T))


def equilibrated_energy(params: Params, batch: Batch) -> float:
    """F* = (1/2N) sum_i r_i^T S^{-1} r_i with r_i = y_i - W_{L:1} x_i.

    S^{-1} is applied through a symmetric positive-definite solve; S is
    never inverted explicitly (its eigenvalues are >= 1).
    """
    _require_linear(params)
    resid = batch.y - full_product(params) @ batch.x
    s = rescaling(params).s
    z = solve_spd(s, resid)
    return 0.5 * float(np.sum(resid * z)) / batch.n


def equilibrated_energy_gradient(params: Params, batch: Batch) -> Params:
    """Gradient of F*, assembled from both product-rule terms.

    Term A rescales the loss gradient by S^{-1}; term B carries the
    derivative of the rescaling and vanishes for W_1.
    """
    _require_linear(params)
    n_layers = len(params.weights)
    cov = covariances(batch)
    s = rescaling(params).s
    resid = batch.y - full_product(params) @ batch.x
    sinv_mid = solve_spd(s, full_product(params) @ cov.sxx - cov.syx)
    psi = resid @ resid.T / batch.n
    sinv_psi_sinv = solve_spd(s, solve_spd(s, psi).T)

    prod = lambda hi, lo: weight_product(params, hi, lo)
    grads = []
    for layer in range(1, n_layers + 1):
        left_t = prod(n_layers, layer + 1).T
        term_a = left_t @ sinv_mid @ prod(layer - 1, 1).T
        if layer >= 2:
            acc = np.zeros((params.weights[-1].shape[0],
                            params.weights[layer - 2].shape[0]))
            for m in range(2, layer + 1):
                acc += prod(n_layers, m) @ prod(layer - 1, m).T
            term_b = -left_t @ sinv_psi_sinv @ acc
            grads.append(term_a + term_b)
        else:
            grads.append(term_a)
    return Params(weights=grads)


def _require_hidden(arch: ArchSpec):
    if not arch.is_linear or arch.bias:
        raise ContractError("origin Hessians are defined for linear, bias-free nets")
    if arch.n_hidden < 1:
        raise ContractError("origin Hessians require at least one hidden layer")


def origin_hessian_loss(cov: Covariances, arch: ArchSpec) -> Matrix:
    """Theoretical loss Hessian at theta = 0.

    Zero for H > 1; for H = 1 only the W_1/W_2 cross blocks survive,
    carried by the input-output covariance.
    """
    _require_hidden(arch)
    offsets = _block_offsets(arch)
    p = offsets[-1]
    hess = np.zeros((p, p))
    if arch.n_hidden == 1:
        n1 = arch.widths[1]
        rows2, cols2 = arch.weight_shapes[1]
        block = kron(np.eye(n1), -cov.sxy) @ commutation_matrix(rows2, cols2)
        hess[offsets[0]:offsets[1], offsets[1]:offsets[2]] = block
        hess[offsets[1]:offsets[2], offsets[0]:offsets[1]] = block.T
    return hess


def origin_hessian_energy(cov: Covariances, arch: ArchSpec) -> Matrix:
    """Theoretical equilibrated-energy Hessian at theta = 0.

    Equals the loss Hessian at the origin plus the last diagonal block
    -Syy (x) I_{n_{L-1}}, which is what makes the origin saddle strict
    for every depth.
    """
    _require_hidden(arch)
    offsets = _block_offsets(arch)
    hess = origin_hessian_loss(cov, arch)
    last = kron(-cov.syy, np.eye(arch.widths[-2]))
    hess[offsets[-2]:offsets[-1], offsets[-2]:offsets[-1]] = last
    return hess


# ---------------------------------------------------------------------------
# scalar chains (all widths 1)


@dataclass(frozen=True)
class ChainQuantities:
    s: float
    f_star: float
    loss: float
    loss_hessian: Matrix
    energy_hessian: Matrix


@dataclass(frozen=True)
class ChainMinimaRelation:
    h_loss: Matrix
    h_energy: Matrix
    s: float


def _chain_moments(batch: Batch) -> tuple[float, float, float]:
    if batch.x.shape[0] != 1 or batch.y.shape[0] != 1:
        raise ContractError("chain formulas require 1-D inputs and outputs")
    x = batch.x[0]
    y = batch.y[0]
    n = batch.n
    return float(x @ x) / n, float(x @ y) / n, float(y @ y) / n


def _prod_excluding(w: np.ndarray, lo: int, hi: int, excl: tuple[int, ...]) -> float:
    """Product of w_lo ... w_hi (1-based) skipping the excluded indices."""
    out = 1.0
    for i in range(lo, hi + 1):
        if i not in excl:
            out *= w[i - 1]
    return out


def chain_quantities(weights, batch: Batch) -> ChainQuantities:
    """Closed-form s, F* = L/s and both full Hessians for a width-1 chain.

    The Hessian of F* follows the quotient rule
        d2F = d2L/s - (dL_i ds_j + dL_j ds_i)/s^2 - L d2s/s^2 + 2 L ds_i ds_j/s^3
    entry by entry, with ds/dw_1 = 0.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size < 1:
        raise ContractError("need at least one chain weight")
    n_layers = w.size
    sxx, sxy, syy = _chain_moments(batch)

    pi = float(np.prod(w))
    loss = 0.5 * (syy - 2.0 * pi * sxy + pi * pi * sxx)

    dl = np.array([
        _prod_excluding(w, 1, n_layers, (i,)) * (pi * sxx - sxy)
        for i in range(1, n_layers + 1)
    ])
    d2l = np.zeros((n_layers, n_layers))
    for i in range(1, n_layers + 1):
        for j in range(1, n_layers + 1):
            if i == j:
                d2l[i - 1, j - 1] = _prod_excluding(w, 1, n_layers, (i,)) ** 2 * sxx
            else:
                d2l[i - 1, j - 1] = _prod_excluding(w, 1, n_layers, (i, j)) * (
                    2.0 * pi * sxx - sxy
                )

    # rescaling s and its derivatives; tail_m = w_L ... w_m
    s_val = 1.0
    for m in range(2, n_layers + 1):
        s_val += _prod_excluding(w, m, n_layers, ()) ** 2

    ds = np.zeros(n_layers)
    for j in range(2, n_layers + 1):
        acc = 0.0
        for m in range(2, j + 1):
            acc += _prod_excluding(w, m, n_layers, ()) * \
                _prod_excluding(w, m, n_layers, (j,))
        ds[j - 1] = 2.0 * acc
    d2s = np.zeros((n_layers, n_layers))
    for i in range(2, n_layers + 1):
        for j in range(2, n_layers + 1):
            acc = 0.0
            for m in range(2, min(i, j) + 1):
                if i == j:
                    acc += _prod_excluding(w, m, n_layers, (i,)) ** 2
                else:
                    acc += (
                        _prod_excluding(w, m, n_layers, (i,))
                        * _prod_excluding(w, m, n_layers, (j,))
                        + _prod_excluding(w, m, n_layers, ())
                        * _prod_excluding(w, m, n_layers, (i, j))
                    )
            d2s[i - 1, j - 1] = 2.0 * acc

    d2f = (
        d2l / s_val
        - (np.outer(dl, ds) + np.outer(ds, dl)) / s_val**2
        - loss * d2s / s_val**2
        + 2.0 * loss * np.outer(ds, ds) / s_val**3
    )
    return ChainQuantities(
        s=s_val,
        f_star=loss / s_val,
        loss=loss,
        loss_hessian=d2l,
        energy_hessian=d2f,
    )


def chain_minima_relation(weights, batch: Batch,
                          fit_tol: float = 1e-10) -> ChainMinimaRelation:
    """Both chain Hessians at a perfect-fit point, where H_F* = H_L / s."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    pi = float(np.prod(w))
    resid = batch.y[0] - pi * batch.x[0]
    bound = fit_tol * (1.0 + float(np.max(np.abs(batch.y))))
    if float(np.max(np.abs(resid))) > bound:
        raise ContractError(
            f"not at a perfect fit: max residual {np.max(np.abs(resid)):.3e}"
        )
    q = chain_quantities(w, batch)
    return ChainMinimaRelation(h_loss=q.loss_hessian, h_energy=q.energy_hessian, s=q.s)


def zero_rank_curvature_constant(params: Params, batch: Batch) -> float:
    """Curvature constant c of the zero-rank saddle escape direction.

    c = sum_i yt_i^T A yt_i with A = I + sum_{l=2}^{L-1} W_{L-1:l} W_{L-1:l}^T
    and yt_i the target embedded into the penultimate width via the
    rectangular identity direction used for the perturbation (for square
    last layers yt_i = y_i and this is exactly the paper constant).
    Positive whenever some embedded target is nonzero. Note there is no
    1/2N here; callers relate it to the 1/2N-normalized energy.
    """
    _require_linear(params)
    n_layers = len(params.weights)
    if n_layers < 2:
        raise ContractError("zero-rank saddles need at least two layers")
    widths = _widths(params)
    n_pen = widths[-2]
    a = np.eye(n_pen)
    partial = None
    for layer in range(n_layers - 1, 1, -1):
        partial = params.weights[layer - 1] if partial is None \
            else partial @ params.weights[layer - 1]
        a = a + partial @ partial.T
    d_y = batch.y.shape[0]
    yt = np.zeros((n_pen, batch.n))
    m = min(d_y, n_pen)
    yt[:m] = batch.y[:m]
    return float(np.sum(yt * (a @ yt)))

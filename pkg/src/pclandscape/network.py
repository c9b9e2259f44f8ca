"""Network architecture, parameters, forward pass, MSE loss and backprop.

This is the BP baseline: plain fully connected nets, linear or with
tanh/relu hidden activations (output layer always linear). Data batches
are stored column-wise: ``x`` is d_x x N, one sample per column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import Matrix, as_matrix

ACTIVATIONS = ("linear", "tanh", "relu")


@dataclass(frozen=True)
class ArchSpec:
    """Layer widths [n_0, ..., n_L] plus hidden activation and bias flag.

    n_0 is the input dimension, n_L the output dimension; L = len(widths) - 1
    weight matrices, H = L - 1 hidden layers.
    """

    widths: tuple[int, ...]
    activation: str = "linear"
    bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ShapeError("ArchSpec needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ShapeError(f"all widths must be >= 1, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        """L, the number of weight matrices."""
        return len(self.widths) - 1

    @property
    def n_hidden(self) -> int:
        """H = L - 1, the number of hidden layers."""
        return self.n_layers - 1

    @property
    def d_x(self) -> int:
        return self.widths[0]

    @property
    def d_y(self) -> int:
        return self.widths[-1]

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[i + 1], self.widths[i]) for i in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        """p: total weight count (biases not included)."""
        return sum(r * c for r, c in self.weight_shapes)

    @property
    def is_linear(self) -> bool:
        return self.activation == "linear"


@dataclass
class Params:
    """Ordered per-layer weight matrices, optionally with bias vectors.

    weights[k] has shape n_{k+1} x n_k. The flattened layout is the
    row-major ravel of each weight matrix, layers concatenated in order
    W_1 ... W_L (biases, when present, appended after all weights); all
    Hessians and finite differences in the package index this layout.
    """

    weights: list[Matrix]
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        self.weights = [as_matrix(w) for w in self.weights]
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ShapeError(
                    f"consecutive weight shapes do not chain: {a.shape} -> {b.shape}"
                )
        if self.biases is not None:
            if len(self.biases) != len(self.weights):
                raise ShapeError("need one bias vector per weight matrix")
            self.biases = [
                np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
                for b in self.biases
            ]
            for w, b in zip(self.weights, self.biases):
                if b.shape[0] != w.shape[0]:
                    raise ShapeError(
                        f"bias length {b.shape[0]} != output width {w.shape[0]}"
                    )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Params":
        return Params(
            weights=[w.copy() for w in self.weights],
            biases=None if self.biases is None else [b.copy() for b in self.biases],
        )

    def flatten(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights]
        if self.biases is not None:
            parts += [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "Params":
        """Rebuild a Params with the same shapes from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape[0] != self.flatten().shape[0]:
            raise ShapeError(
                f"flat vector length {vec.shape[0]} does not match parameter count"
            )
        out_w, off = [], 0
        for w in self.weights:
            n = w.size
            out_w.append(vec[off:off + n].reshape(w.shape).copy())
            off += n
        out_b = None
        if self.biases is not None:
            out_b = []
            for b in self.biases:
                n = b.size
                out_b.append(vec[off:off + n].copy())
                off += n
        return Params(weights=out_w, biases=out_b)

    def matches(self, arch: ArchSpec) -> bool:
        if len(self.weights) != arch.n_layers:
            return False
        return all(
            w.shape == s for w, s in zip(self.weights, arch.weight_shapes)
        )


@dataclass(frozen=True)
class Batch:
    """Paired input/output matrices, one sample per column."""

    x: Matrix
    y: Matrix

    def __post_init__(self):
        object.__setattr__(self, "x", as_matrix(self.x))
        object.__setattr__(self, "y", as_matrix(self.y))
        if self.x.shape[1] != self.y.shape[1]:
            raise ShapeError(
                f"x and y must have the same sample count: "
                f"{self.x.shape[1]} vs {self.y.shape[1]}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[1]


def zeros_params(arch: ArchSpec) -> Params:
    weights = [np.zeros(s) for s in arch.weight_shapes]
    biases = [np.zeros(s[0]) for s in arch.weight_shapes] if arch.bias else None
    return Params(weights=weights, biases=biases)


def init_near_point(arch: ArchSpec, center: Params, sigma: float, seed: int) -> Params:
    """center + i.i.d. N(0, sigma^2) per entry, deterministic in ``seed``.

    Each layer draws from its own spawned PCG64 stream, so per-layer
    initialization is independent of evaluation order.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not center.matches(arch):
        raise ShapeError("center params do not match the architecture")
    streams = np.random.SeedSequence(seed).spawn(2 * arch.n_layers)
    weights = []
    for k, w in enumerate(center.weights):
        rng = np.random.Generator(np.random.PCG64(streams[k]))
        weights.append(w + sigma * rng.standard_normal(w.shape))
    biases = None
    if center.biases is not None:
        biases = []
        for k, b in enumerate(center.biases):
            rng = np.random.Generator(np.random.PCG64(streams[arch.n_layers + k]))
            biases.append(b + sigma * rng.standard_normal(b.shape))
    return Params(weights=weights, biases=biases)


def activation_fn(name: str):
    if name == "linear":
        return lambda z: z
    if name == "tanh":
        return np.tanh
    if name == "relu":
        return lambda z: np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def activation_deriv(name: str):
    # relu subgradient at 0 is 0
    if name == "linear":
        return lambda z: np.ones_like(z)
    if name == "tanh":
        return lambda z: 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return lambda z: (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {name!r}")


def _check_forward_shapes(params: Params, arch: ArchSpec, x: Matrix):
    if not params.matches(arch):
        raise ShapeError("params do not match the architecture")
    if x.shape[0] != arch.d_x:
        raise ShapeError(f"input rows {x.shape[0]} != d_x {arch.d_x}")


def forward(params: Params, arch: ArchSpec, x: Matrix) -> Matrix:
    """Network output. Hidden layers apply phi to the pre-activation;
    the output layer is always linear."""
    _check_forward_shapes(params, arch, x)
    phi = activation_fn(arch.activation)
    a = x
    for k in range(arch.n_layers - 1):
        z = params.weights[k] @ a
        if params.biases is not None:
            z = z + params.biases[k][:, None]
        a = phi(z)
    out = params.weights[-1] @ a
    if params.biases is not None:
        out = out + params.biases[-1][:, None]
    return out


def mse_loss(params: Params, arch: ArchSpec, batch: Batch,
             mask: np.ndarray | None = None) -> float:
    """(1/2N) sum_i ||y_i - yhat_i||^2.

    ``mask`` (optional, d_y x N boolean, True = observed) zeroes the
    contribution of unobserved output entries; used by matrix completion.
    """
    r = forward(params, arch, batch.x) - batch.y
    if mask is not None:
        r = r * mask
    return 0.5 * float(np.sum(r * r)) / batch.n


def bp_gradient(params: Params, arch: ArchSpec, batch: Batch,
                mask: np.ndarray | None = None) -> Params:
    """Reverse-mode gradient of ``mse_loss`` (same 1/N batch averaging)."""
    _check_forward_shapes(params, arch, batch.x)
    phi = activation_fn(arch.activation)
    dphi = activation_deriv(arch.activation)
    # forward pass, retaining pre-activations
    a = [batch.x]
    pre = []
    for k in range(arch.n_layers - 1):
        z = params.weights[k] @ a[-1]
        if params.biases is not None:
            z = z + params.biases[k][:, None]
        pre.append(z)
        a.append(phi(z))
    out = params.weights[-1] @ a[-1]
    if params.biases is not None:
        out = out + params.biases[-1][:, None]

    delta = (out - batch.y) / batch.n
    if mask is not None:
        delta = delta * mask
    grads_w: list[Matrix] = [np.empty(0)] * arch.n_layers
    grads_b = [np.empty(0)] * arch.n_layers if params.biases is not None else None
    grads_w[-1] = delta @ a[-1].T
    if grads_b is not None:
        grads_b[-1] = delta.sum(axis=1)
    for k in range(arch.n_layers - 2, -1, -1):
        delta = (params.weights[k + 1].T @ delta) * dphi(pre[k])
        grads_w[k] = delta @ a[k].T
        if grads_b is not None:
            grads_b[k] = delta.sum(axis=1)
    return Params(weights=grads_w, biases=grads_b)


def sgd_step(params: Params, grads: Params, eta: float) -> Params:
    """W <- W - eta * dW (and likewise for biases when present)."""
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if len(grads.weights) != len(params.weights):
        raise ShapeError("gradient layer count does not match params")
    weights = []
    for w, g in zip(params.weights, grads.weights):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != weight shape {w.shape}")
        weights.append(w - eta * g)
    biases = None
    if params.biases is not None:
        gb = grads.biases if grads.biases is not None else [
            np.zeros_like(b) for b in params.biases
        ]
        biases = [b - eta * g for b, g in zip(params.biases, gb)]
    return Params(weights=weights, biases=biases)


def grad_norm_inf(grads: Params) -> float:
    """Max absolute entry over all layers (and biases)."""
    m = max(float(np.max(np.abs(w))) if w.size else 0.0 for w in grads.weights)
    if grads.biases is not None:
        m = max(m, max(float(np.max(np.abs(b))) for b in grads.biases))
    return m


def grad_norm_l2(grads: Params) -> float:
    """Global Euclidean norm over all layers (and biases)."""
    total = sum(float(np.sum(w * w)) for w in grads.weights)
    if grads.biases is not None:
        total += sum(float(np.sum(b * b)) for b in grads.biases)
    return float(np.sqrt(total))

"""Scratch validation of the core analytic formulas against finite differences."""
import numpy as np

from pclandscape.analytic import (
    chain_quantities, covariances, equilibrated_energy,
    equilibrated_energy_gradient, loss_gradient_analytic, loss_hessian,
    origin_hessian_energy, origin_hessian_loss, rescaling,
    zero_rank_curvature_constant,
)
from pclandscape.landscape import make_origin, make_zero_rank_saddle, numerical_hessian
from pclandscape.network import ArchSpec, Batch, Params, bp_gradient, init_near_point, mse_loss, zeros_params
from pclandscape.pcn import (
    Activities, SolverConfig, activity_gradient, energy, feedforward_activities,
    infer_adaptive, infer_euler, infer_exact_linear, pc_weight_gradient,
)

rng = np.random.default_rng(0)

def fd_grad(f, params, h=1e-6):
    theta = params.flatten()
    g = np.zeros_like(theta)
    for i in range(theta.size):
        hi = h * (1 + abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hi; tm[i] -= hi
        g[i] = (f(params.with_flat(tp)) - f(params.with_flat(tm))) / (2 * hi)
    return g

# --- setup: random linear net H=2 ---
arch = ArchSpec(widths=(2, 3, 3, 2), activation="linear")
params = init_near_point(arch, zeros_params(arch), 0.6, seed=3)
x = rng.normal(size=(2, 5)); y = rng.normal(size=(2, 5))
batch = Batch(x=x, y=y)
cov = covariances(batch)

# 1. analytic loss gradient vs bp vs FD
ga = loss_gradient_analytic(params, cov)
gb = bp_gradient(params, arch, batch)
print("analytic vs bp grad:", max(np.max(np.abs(a - b)) for a, b in zip(ga.weights, gb.weights)))
gfd = fd_grad(lambda p: mse_loss(p, arch, batch), params)
print("bp vs fd grad:", np.max(np.abs(gb.flatten() - gfd)))

# 2. loss hessian vs FD
H = loss_hessian(params, cov, arch)
Hfd = numerical_hessian(lambda p: mse_loss(p, arch, batch), params, h=1e-4)
print("loss hessian vs fd:", np.max(np.abs(H - Hfd)), " sym:", np.max(np.abs(H - H.T)))

# 3. F* gradient vs FD
gE = equilibrated_energy_gradient(params, batch)
gEfd = fd_grad(lambda p: equilibrated_energy(p, batch), params)
print("F* grad vs fd:", np.max(np.abs(gE.flatten() - gEfd)) / max(1e-12, np.max(np.abs(gEfd))))

# 4. origin hessians vs FD
for H_hidden in (1, 2, 3):
    widths = (2,) + (3,) * H_hidden + (2,)
    a2 = ArchSpec(widths=widths)
    origin = make_origin(a2)
    hl = origin_hessian_loss(cov, a2)
    he = origin_hessian_energy(cov, a2)
    hl_fd = numerical_hessian(lambda p: mse_loss(p, a2, batch), origin, h=1e-3)
    he_fd = numerical_hessian(lambda p: equilibrated_energy(p, batch), origin, h=1e-3)
    print(f"H={H_hidden} origin loss vs fd:", np.max(np.abs(hl - hl_fd)),
          "energy vs fd:", np.max(np.abs(he - he_fd)))

# 5. exact inference equilibrium: energy == F*
for H_hidden in (1, 2, 5, 10):
    widths = (3,) + (4,) * H_hidden + (2,)
    a3 = ArchSpec(widths=widths)
    p3 = init_near_point(a3, zeros_params(a3), 0.4, seed=H_hidden)
    b3 = Batch(x=rng.normal(size=(3, 7)), y=rng.normal(size=(2, 7)))
    acts = infer_exact_linear(p3, a3, b3)
    g = activity_gradient(p3, a3, acts)
    gn = max(np.max(np.abs(gi)) for gi in g)
    fnum = energy(p3, a3, acts)
    fstar = equilibrated_energy(p3, b3)
    print(f"H={H_hidden}: resid grad {gn:.2e}  |F-F*|/F* {abs(fnum-fstar)/fstar:.2e}")
    # envelope: pc weight grad at equilibrium == dF*/dtheta
    gw = pc_weight_gradient(p3, a3, acts)
    gE2 = equilibrated_energy_gradient(p3, b3)
    print("   envelope:", max(np.max(np.abs(a - b)) for a, b in zip(gw.weights, gE2.weights)))

# 6. chain: closed forms vs wide code at width 1
wc = np.array([0.7, -1.2, 0.4])
bc = Batch(x=rng.normal(size=(1, 6)), y=rng.normal(size=(1, 6)))
q = chain_quantities(wc, bc)
pc_params = Params(weights=[np.array([[w]]) for w in wc])
archc = ArchSpec(widths=(1, 1, 1, 1))
covc = covariances(bc)
print("chain s vs wide:", abs(q.s - rescaling(pc_params).s[0, 0]))
print("chain F* vs wide:", abs(q.f_star - equilibrated_energy(pc_params, bc)))
print("chain Hl vs wide:", np.max(np.abs(q.loss_hessian - loss_hessian(pc_params, covc, archc))))
He_fd = numerical_hessian(lambda p: equilibrated_energy(p, bc), pc_params, h=1e-4)
print("chain He vs fd:", np.max(np.abs(q.energy_hessian - He_fd)))

# 7. zero-rank saddle: gradient zero, curvature constant
a4 = ArchSpec(widths=(2, 3, 3, 2))
zr = make_zero_rank_saddle(a4, seed=9)
gz = equilibrated_energy_gradient(zr, batch)
print("zero-rank grad inf-norm:", max(np.max(np.abs(g)) for g in gz.weights))
c = zero_rank_curvature_constant(zr, batch)
# quadratic fit of F*(delta * Ihat at W_L) - F*(0)
deltas = np.linspace(1e-3, 1e-2, 8)
ihat = np.zeros(zr.weights[-1].shape); np.fill_diagonal(ihat, 1.0)
f0 = equilibrated_energy(zr, batch)
vals = []
for d in deltas:
    pert = zr.copy(); pert.weights[-1] = pert.weights[-1] + d * ihat
    vals.append(equilibrated_energy(pert, batch) - f0)
coef = np.polyfit(deltas, vals, 2)[0]
print("quad coef:", coef, " -c/(2N):", -c / (2 * batch.n), " ratio:", coef / (-c / (2 * batch.n)))

# 8. euler & adaptive solvers agree with exact
a5 = ArchSpec(widths=(3, 4, 4, 2))
p5 = init_near_point(a5, zeros_params(a5), 0.4, seed=11)
b5 = Batch(x=rng.normal(size=(3, 6)), y=rng.normal(size=(2, 6)))
exact = infer_exact_linear(p5, a5, b5)
acts_e, n_e = infer_euler(p5, a5, b5, SolverConfig(mode="euler", max_steps=2000, grad_tol=1e-10))
acts_a, n_a = infer_adaptive(p5, a5, b5, SolverConfig(mode="heun_adaptive", max_steps=5000, abs_tol=1e-6, rel_tol=1e-6, grad_tol=1e-10))
err_e = max(np.max(np.abs(a - b)) for a, b in zip(acts_e.z[1:-1], exact.z[1:-1]))
err_a = max(np.max(np.abs(a - b)) for a, b in zip(acts_a.z[1:-1], exact.z[1:-1]))
print(f"euler vs exact: {err_e:.2e} ({n_e} it)   adaptive vs exact: {err_a:.2e} ({n_a} it)")

# 9. feedforward energy == loss
acts_ff = feedforward_activities(p5, a5, b5)
print("ff energy - loss:", abs(energy(p5, a5, acts_ff) - mse_loss(p5, a5, b5)))

"""Loss-landscape probes and post-hoc analysis helpers.

The Hessian is never materialized: curvature comes from central differences
of the gradient along unit directions, and the dominant eigenvalue from power
iteration with a Rayleigh-quotient readout (which keeps the sign even though
the iterates flip under a negative spectrum).
"""

import dataclasses

import numpy as np
from dataclasses import dataclass

from .errors import ConfigError
from .nn import GradientSet, grad_norm, param_axpy


def _dot(a, b):
    total = 0.0
    for x, y in zip(a.weights + a.biases, b.weights + b.biases):
        total += float(np.sum(x * y))
    return total


def _combine(a, b, ca, cb):
    return GradientSet(
        [ca * x + cb * y for x, y in zip(a.weights, b.weights)],
        [ca * x + cb * y for x, y in zip(a.biases, b.biases)],
    )


def _param_norm(params):
    total = 0.0
    for arr in params.weights + params.biases:
        total += float(np.sum(arr * arr))
    return float(np.sqrt(total))


def hessian_vector_product(loss_and_grad, params, direction, eps=1e-5):
    """H @ direction by central differences of the gradient.

    direction must be a unit GradientSet (enforced, since the step size is
    calibrated for unit directions: eps scaled by max(1, ||params||)).
    """
    norm = grad_norm(direction)
    if abs(norm - 1.0) > 1e-8:
        raise ConfigError(f"direction must have unit norm, got {norm}")
    step = eps * max(1.0, _param_norm(params))
    _, g_plus = loss_and_grad(param_axpy(params, direction, step))
    _, g_minus = loss_and_grad(param_axpy(params, direction, -step))
    return _combine(g_plus, g_minus, 1.0 / (2.0 * step), -1.0 / (2.0 * step))


@dataclass
class SharpnessReport:
    eigenvalue: float
    residual: float  # ||H v - lambda v|| at the returned iterate
    iterations: int
    converged: bool


def max_eigenvalue(loss_and_grad, params, rng, max_iters=2000, rtol=1e-9, eps=1e-5):
    """Dominant Hessian eigenvalue of the loss at params.

    Power iteration from a random unit start; stops when the Rayleigh
    quotient stabilizes to relative rtol.  The tolerance is deliberately
    tight: the quotient converges at the squared rate, so a loose cutoff can
    freeze far from the true value when the top of the spectrum is crowded.
    A zero Hessian reports 0.
    """
    if max_iters < 1:
        raise ConfigError("need at least one iteration")
    v = GradientSet(
        [rng.standard_normal(w.shape) for w in params.weights],
        [rng.standard_normal(b.shape) for b in params.biases],
    )
    v = _combine(v, v, 1.0 / grad_norm(v), 0.0)

    lam = 0.0
    for k in range(max_iters):
        hv = hessian_vector_product(loss_and_grad, params, v, eps=eps)
        new_lam = _dot(v, hv)
        residual = grad_norm(_combine(hv, v, 1.0, -new_lam))
        hv_norm = grad_norm(hv)
        if hv_norm == 0.0:
            return SharpnessReport(0.0, 0.0, k + 1, True)
        if k > 0 and abs(new_lam - lam) <= rtol * max(1.0, abs(new_lam)):
            return SharpnessReport(float(new_lam), float(residual), k + 1, True)
        lam = new_lam
        v = _combine(hv, hv, 1.0 / hv_norm, 0.0)
    return SharpnessReport(float(lam), float(residual), max_iters, False)


def cdf(values):
    """Empirical CDF: sorted values and p_i = i/n, i = 1..n."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ConfigError("cannot build a CDF from no data")
    xs = np.sort(values)
    ps = np.arange(1, xs.size + 1) / xs.size
    return xs, ps


def rho_sweep(base_cfg, rhos, modes, seeds, train_fn=None):
    """Grid of runs over (mode, constant rho, seed).

    Each run scores as the best per-iteration mean reward it ever reached.
    Returns a list of row dicts, grid order: mode-major, then rho, then seed.
    """
    from .training import train

    if train_fn is None:
        train_fn = train
    rows = []
    for mode in modes:
        for rho in rhos:
            sam = dataclasses.replace(
                base_cfg.sam, mode=mode, rho_start=float(rho), rho_end=float(rho),
                schedule="constant",
            )
            cfg = dataclasses.replace(base_cfg, sam=sam)
            for seed in seeds:
                result = train_fn(cfg, seed)
                rows.append(
                    {
                        "mode": mode,
                        "rho": float(rho),
                        "seed": int(seed),
                        "score": float(np.max(result.metrics.rewards)),
                        "final_reward": float(result.metrics.rewards[-1]),
                    }
                )
    return rows

"""Sharpness-aware parameter updates with a selective TD-variance gate.

The update perturbs parameters along the normalized gradient direction,
re-evaluates the gradient at the perturbed point, and feeds that adversarial
gradient to Adam at the original point.  A per-learner gate decides whether
the perturbation is applied at all: learners whose recent temporal-difference
errors fluctuate a lot get the flat-minima treatment, quiet ones keep plain
Adam.  The perturbation radius can decay linearly over the run.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import GradientSet, MlpParams, adam_step, grad_norm, param_axpy

MODES = ("no-sam", "actor-sam", "critic-sam", "both-sam")
SCHEDULES = ("linear", "constant")
THRESHOLDS = ("relative", "absolute")


@dataclass
class SamPolicy:
    """Knobs controlling where and how strongly sharpness-aware steps apply.

    mode picks which learners are eligible (actors, critic, both, neither).
    selective=False turns the gate off so every eligible actor perturbs on
    every update; the critic never consults the gate.
    """

    mode: str = "both-sam"
    rho_start: float = 0.5
    rho_end: float = 0.01
    schedule: str = "linear"
    selective: bool = True
    threshold: str = "relative"
    lambda_td: float = 0.1
    window: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.threshold not in THRESHOLDS:
            raise ConfigError(f"unknown threshold rule {self.threshold!r}")
        if self.rho_start < 0 or self.rho_end < 0:
            raise ConfigError("perturbation radii must be nonnegative")
        if self.window < 2:
            raise ConfigError("variance window needs at least 2 samples")

    @property
    def actor_eligible(self):
        return self.mode in ("actor-sam", "both-sam")

    @property
    def critic_eligible(self):
        return self.mode in ("critic-sam", "both-sam")


def rho_at(policy, t, n_total):
    """Perturbation radius at training iteration t of n_total.

    Linear schedule hits rho_start exactly at t=0 and rho_end exactly at
    t=n_total; beyond that it stays clamped at rho_end.
    """
    if n_total <= 0:
        raise ConfigError("n_total must be positive")
    if t < 0:
        raise ConfigError("iteration index must be nonnegative")
    if policy.schedule == "constant":
        return policy.rho_start
    if t == 0:
        return policy.rho_start
    if t >= n_total:
        return policy.rho_end
    return policy.rho_start + (policy.rho_end - policy.rho_start) * (t / n_total)


def sam_perturb(params, grads, rho):
    """theta + rho * g / ||g||.  Zero gradient leaves params untouched."""
    norm = grad_norm(grads)
    if norm == 0.0 or rho == 0.0:
        return params
    return param_axpy(params, grads, rho / norm)


def sam_step(params, loss_and_grad, rho, state):
    """One sharpness-aware Adam step.

    loss_and_grad maps MlpParams to (loss, GradientSet) and must be
    deterministic in params: any minibatch or sampling noise has to be frozen
    inside the closure, because with rho > 0 it is evaluated twice.  With
    rho == 0 the result is bit-identical to adam_step on the plain gradient.

    Returns (new_params, new_state, info) where info carries the loss at the
    unperturbed point and whether a perturbation was actually applied.
    """
    loss, grads = loss_and_grad(params)
    info = {"loss": float(loss), "grad_norm": grad_norm(grads), "perturbed": False}
    if rho > 0.0 and info["grad_norm"] > 0.0:
        adv = sam_perturb(params, grads, rho)
        _, grads = loss_and_grad(adv)
        info["perturbed"] = True
    new_params, new_state = adam_step(params, grads, state)
    return new_params, new_state, info


@dataclass
class TdStats:
    """Rolling per-actor windows of temporal-difference errors."""

    n_actors: int
    window: int = 100
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_actors < 1:
            raise ConfigError("need at least one actor")
        if self.window < 2:
            raise ConfigError("variance window needs at least 2 samples")
        for i in range(self.n_actors):
            self.errors.setdefault(i, deque(maxlen=self.window))

    def record(self, actor_id, delta):
        if actor_id not in self.errors:
            raise ConfigError(f"unknown actor id {actor_id}")
        self.errors[actor_id].append(float(delta))

    def record_many(self, actor_id, deltas):
        for d in deltas:
            self.record(actor_id, d)

    def variance(self, actor_id):
        """Sample variance (n-1 denominator) of the window, None if under 2."""
        if actor_id not in self.errors:
            raise ConfigError(f"unknown actor id {actor_id}")
        buf = self.errors[actor_id]
        if len(buf) < 2:
            return None
        return float(np.var(np.asarray(buf), ddof=1))

    def defined_variances(self):
        out = {}
        for i in range(self.n_actors):
            v = self.variance(i)
            if v is not None:
                out[i] = v
        return out


def gate_open(policy, stats, actor_id):
    """Whether this actor's next update should be sharpness-aware.

    Closed whenever the mode excludes actors or the actor's own variance is
    undefined.  Relative rule compares against the mean variance across all
    actors that have one; absolute rule compares against lambda_td.  Ties
    open the gate.
    """
    if not policy.actor_eligible:
        return False
    if not policy.selective:
        return True
    own = stats.variance(actor_id)
    if own is None:
        return False
    if policy.threshold == "absolute":
        return own >= policy.lambda_td
    defined = stats.defined_variances()
    return own >= float(np.mean(list(defined.values())))

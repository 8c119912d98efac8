"""Squashed-Gaussian actors and a shared per-pair action-value critic.

Each actor maps its own observation to a diagonal Gaussian over pre-squash
coordinates; a sigmoid squashes samples into the (0,1) box the action decoder
expects.  One global critic scores single-agent (state, action) pairs and is
fit on the pooled experience of every agent, so it acts as a shared value
model rather than a joint-action critic.  Soft targets keep an entropy bonus
weighted by beta.  All gradient paths are exact reverse-mode through the
shared MLP core; sampling noise is always passed in explicitly where a loss
has to be re-evaluated at perturbed parameters.
"""

import numpy as np
from collections import deque

from .errors import ConfigError
from .nn import _sigmoid, backward, backward_io, forward, init_mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = np.log(2.0 * np.pi)
_ACTION_EPS = 1e-12


def init_policy(state_dim, action_dim, hidden, rng):
    """Actor net: state -> (means, raw log-stds), identity output."""
    return init_mlp((state_dim, *hidden, 2 * action_dim), rng)


def init_critic(state_dim, action_dim, hidden, rng):
    """Critic net over one agent's concatenated (state, action) pair."""
    return init_mlp((state_dim + action_dim, *hidden, 1), rng)


def policy_forward(params, states):
    """Split trunk output into means and clipped log-stds."""
    out = forward(params, states)
    d = out.shape[-1]
    if d % 2 != 0:
        raise ConfigError("policy output size must be even (means + log-stds)")
    mu = out[..., : d // 2]
    log_std = np.clip(out[..., d // 2 :], LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def sample_action(params, state, rng):
    """One stochastic action in (0,1)^D for a single observation."""
    mu, log_std = policy_forward(params, state)
    eps = rng.standard_normal(mu.shape)
    return _sigmoid(mu + np.exp(log_std) * eps)


def sample_with_noise(params, states, noise):
    """Reparameterized actions from pre-drawn standard-normal noise."""
    mu, log_std = policy_forward(params, states)
    return _sigmoid(mu + np.exp(log_std) * np.asarray(noise))


def deterministic_action(params, state):
    mu, _ = policy_forward(params, state)
    return _sigmoid(mu)


def _logit(a):
    a = np.clip(np.asarray(a, dtype=float), _ACTION_EPS, 1.0 - _ACTION_EPS)
    return np.log(a) - np.log1p(-a)


def _softplus(x):
    return np.logaddexp(0.0, x)


def log_prob(params, states, actions):
    """log-density of squashed actions under the policy, summed over dims."""
    mu, log_std = policy_forward(params, states)
    u = _logit(actions)
    z = (u - mu) * np.exp(-log_std)
    gauss = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    jacobian = _softplus(u) + _softplus(-u)  # -log a(1-a)
    return np.sum(gauss + jacobian, axis=-1)


def critic_input(states, actions):
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if states.ndim == 1:  # single pair
        return np.concatenate([states, actions])
    return np.concatenate([states, actions], axis=1)


def critic_value(params, states, actions):
    out = forward(params, critic_input(states, actions))
    return float(out[0]) if out.ndim == 1 else out[:, 0]


def critic_target(critic_params, policies, owners, rewards, states, actions, next_states,
                  rng, beta=0.2, gamma=0.99):
    """Bootstrap target y = r + gamma Q(s', a') - beta log pi(a|s).

    Rows are per-agent pairs; owners[k] names the policy that produced row k.
    a' is freshly sampled from the owning policy (owner index order 0..n-1,
    one noise block per owner, so a caller-seeded rng reproduces the draw).
    The entropy term uses the behavior actions stored in the batch.  Targets
    are constants for the critic fit: no gradient flows through them.
    """
    owners = np.asarray(owners)
    rewards = np.asarray(rewards, dtype=float)
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    next_states = np.asarray(next_states, dtype=float)
    n = rewards.shape[0]
    next_actions = np.empty_like(actions)
    log_pi = np.zeros(n)
    for i, pol in enumerate(policies):
        mask = owners == i
        if not mask.any():
            continue
        noise = rng.standard_normal((int(mask.sum()), actions.shape[-1]))
        next_actions[mask] = sample_with_noise(pol, next_states[mask], noise)
        log_pi[mask] = log_prob(pol, states[mask], actions[mask])
    q_next = critic_value(critic_params, next_states, next_actions)
    return rewards + gamma * q_next - beta * log_pi


def critic_loss_and_grad(params, states, actions, targets):
    """Mean squared Bellman error and its exact gradient."""
    x = critic_input(states, actions)
    targets = np.asarray(targets, dtype=float)
    q = forward(params, x)[:, 0]
    diff = q - targets
    n = diff.size
    loss = float(np.mean(diff * diff))
    upstream = (2.0 / n) * diff[:, None]
    return loss, backward(params, x, upstream)


def policy_loss_and_grad(policy_params, critic_params, states, noise, beta=0.2):
    """Actor loss mean(beta log pi(a~|s) - Q(s, a~)) and its exact gradient.

    a~ is the reparameterized action from the frozen noise block.  The
    gradient flows through the critic's action input and through the entropy
    term; raw log-std outputs outside the clip range get zero gradient.
    """
    states = np.asarray(states, dtype=float)
    noise = np.asarray(noise, dtype=float)
    n = states.shape[0]

    out = forward(policy_params, states)
    d = out.shape[-1] // 2
    mu, raw_ls = out[:, :d], out[:, d:]
    ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    sigma = np.exp(ls)
    u = mu + sigma * noise
    a = _sigmoid(u)

    x = critic_input(states, a)
    q = forward(critic_params, x)[:, 0]

    log_pi = np.sum(-0.5 * noise * noise - ls - 0.5 * _LOG_2PI + _softplus(u) + _softplus(-u),
                    axis=1)
    loss = float(np.mean(beta * log_pi - q))

    # d(-mean q)/d critic-input, taken per sample
    _, dx = backward_io(critic_params, x, np.full((n, 1), -1.0 / n))
    da = dx[:, states.shape[1] :]

    du = da * a * (1.0 - a) + (beta / n) * (2.0 * a - 1.0)
    dmu = du
    dls = du * sigma * noise - beta / n
    dls = np.where((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX), dls, 0.0)
    upstream = np.concatenate([dmu, dls], axis=1)
    return loss, backward(policy_params, states, upstream)


def soft_value(critic_params, policy, state, rng, beta=0.2):
    """Entropy-corrected state value Q(s, a~) - beta log pi(a~|s), a~ fresh."""
    state = np.asarray(state, dtype=float)
    a = sample_action(policy, state, rng)
    return critic_value(critic_params, state, a) - beta * float(log_prob(policy, state, a))


def td_error(critic_params, policy, state, reward, next_state, rng, beta=0.2, gamma=0.99):
    """One-step value surprise r + gamma V(s') - V(s) for a single transition.

    Both values are soft_value estimates under the agent's current policy, so
    the residual measures how the team reward moved this agent's own state,
    not how good the stored behavior action looked.  Draw order: V(s) first.
    """
    v_now = soft_value(critic_params, policy, state, rng, beta)
    v_next = soft_value(critic_params, policy, next_state, rng, beta)
    return float(reward + gamma * v_next - v_now)


class ReplayBuffer:
    """Uniform-with-replacement replay of one agent's transitions, FIFO capped."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("capacity must be at least 1")
        self.capacity = int(capacity)
        self.items = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self.items)

    def add(self, state, action, reward, next_state):
        self.items.append(
            (
                np.array(state, dtype=float),
                np.array(action, dtype=float),
                float(reward),
                np.array(next_state, dtype=float),
            )
        )

    def sample(self, rng, batch_size):
        """A batch dict (with replacement), or None while the buffer is empty."""
        if not self.items:
            return None
        idx = rng.integers(0, len(self.items), size=batch_size)
        picked = [self.items[i] for i in idx]
        return {
            "states": np.stack([p[0] for p in picked]),
            "actions": np.stack([p[1] for p in picked]),
            "rewards": np.array([p[2] for p in picked]),
            "next_states": np.stack([p[3] for p in picked]),
        }

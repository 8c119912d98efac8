"""Multi-agent training loop: one actor per DU, one shared per-pair critic.

Every iteration the team plays fresh episodes in one shared world; each actor
keeps its own (state, action, reward, next state) rows in a local replay
buffer and logs the value surprise of every transition it lived through.
Scoring all actors on the same episodes matters: the team reward's noise is
common to every surprise stream, so windowed-variance comparisons between
actors cancel it and react to the per-actor value terms instead.  Actors
update first, each on a batch from its own buffer; the critic then fits on an
owner-tagged batch pooled from every buffer.  Whether an update is
sharpness-aware is decided per learner: the critic follows the mode flag
alone, actors additionally pass through the TD-variance gate.  Updates with
radius zero share the exact plain-Adam code path, so a run with sharpness
disabled is bit-identical to ordinary training.

All randomness is derived from (seed, iteration, episode) or (seed,
iteration, actor, round) tuples, so reruns reproduce trajectories exactly and
two configurations that differ only in update strategy share identical data
until their first parameter update.
"""

import time

import numpy as np
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import sac
from .env import ScenarioConfig, World
from .errors import ConfigError
from .nn import init_adam
from .sam import SamPolicy, TdStats, gate_open, rho_at, sam_step

# rng stream tags (SeedSequence entropy must stay nonnegative)
_TAG_INIT = 10
_TAG_EPISODE = 11
_TAG_ACTIONS = 12
_TAG_ACTOR_BATCH = 13
_TAG_CRITIC_BATCH = 14
_TAG_TARGET = 15
_TAG_EVAL = 21


def _derive_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class TrainConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sam: SamPolicy = field(default_factory=SamPolicy)
    n_iterations: int = 1000
    n_episodes: int = 10
    batch_size: int = 128
    updates_per_iter: int = 1
    buffer_capacity: int = 50000
    actor_hidden: tuple = (300, 400, 400)
    critic_hidden: tuple = (300, 400, 400)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    beta: float = 0.2
    gamma: float = 0.99
    l2_reg: float = 0.0
    # early stop on a flat reward trace; off by default so runs always
    # complete n_iterations and stay comparable across configurations
    stop_on_convergence: bool = False
    converge_window: int = 50
    converge_tol: float = 1e-3
    n_workers: int = 1

    def __post_init__(self):
        if min(self.n_iterations, self.n_episodes, self.batch_size, self.n_workers,
               self.updates_per_iter) < 1:
            raise ConfigError("iteration, episode, batch and worker counts must be positive")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer capacity below batch size can never serve a batch")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")
        if self.beta < 0 or self.l2_reg < 0:
            raise ConfigError("beta and l2_reg must be nonnegative")
        if self.converge_window < 1 or self.converge_tol < 0:
            raise ConfigError("convergence window must be positive and tolerance nonnegative")


@dataclass
class RunMetrics:
    rewards: np.ndarray  # (n_iterations,) mean episode return of the shared rollouts
    actor_rewards: np.ndarray  # (n_iterations, n_actors) same value per actor: one team, one world
    slice_qos: np.ndarray  # (n_iterations, n_slices) mean fresh-step QoS per slice
    critic_losses: np.ndarray  # (n_iterations,)
    actor_losses: np.ndarray  # (n_iterations, n_actors)
    rhos: np.ndarray  # (n_iterations,)
    gates: np.ndarray  # (n_iterations, n_actors) bool
    td_variances: np.ndarray  # (n_iterations, n_actors) nan when undefined
    wall_clock: float = 0.0  # seconds; the one field reruns never reproduce


def _truncate(m, n):
    return RunMetrics(
        rewards=m.rewards[:n],
        actor_rewards=m.actor_rewards[:n],
        slice_qos=m.slice_qos[:n],
        critic_losses=m.critic_losses[:n],
        actor_losses=m.actor_losses[:n],
        rhos=m.rhos[:n],
        gates=m.gates[:n],
        td_variances=m.td_variances[:n],
        wall_clock=m.wall_clock,
    )


@dataclass
class TrainResult:
    policies: list
    critic: object
    actor_states: list
    critic_state: object
    metrics: RunMetrics
    stats: TdStats
    config: TrainConfig
    seed: int


def _with_l2(loss_and_grad, l2):
    if l2 == 0.0:
        return loss_and_grad

    def wrapped(params):
        loss, grads = loss_and_grad(params)
        sq = 0.0
        for arrs, gs in ((params.weights, grads.weights), (params.biases, grads.biases)):
            for a, g in zip(arrs, gs):
                g += l2 * a
                sq += float(np.sum(a * a))
        return loss + 0.5 * l2 * sq, grads

    return wrapped


def _collect(cfg, policies, critic, seed, t):
    """Play one iteration's episodes jointly; every actor logs its own view.

    Each transition yields one (s_i, a_i, r, s'_i) row per actor, all carrying
    the same team reward, plus that actor's value surprise.  Per step the rng
    serves the joint action first, then the surprise draws in actor order.
    """
    world = World(cfg.scenario, seed=_derive_seed(seed, _TAG_EPISODE, t, 0))
    n = len(policies)
    rows = [[] for _ in range(n)]
    deltas = [[] for _ in range(n)]
    returns = []
    qos = []
    for e in range(cfg.n_episodes):
        s = world.reset(_derive_seed(seed, _TAG_EPISODE, t, e))
        rng = np.random.default_rng([seed, _TAG_ACTIONS, t, e])
        ep_return = 0.0
        for _ in range(cfg.scenario.episode_len):
            a = np.stack([sac.sample_action(pol, s[j], rng) for j, pol in enumerate(policies)])
            s2, r, done, info = world.step(a)
            for i in range(n):
                rows[i].append((s[i], a[i], r, s2[i]))
                deltas[i].append(sac.td_error(critic, policies[i], s[i], r, s2[i], rng,
                                              beta=cfg.beta, gamma=cfg.gamma))
            ep_return += r
            qos.append(info["qos"])
            s = s2
            if done:
                break
        returns.append(ep_return)
    return rows, deltas, float(np.mean(returns)), np.mean(qos, axis=0)


def aggregate_experiences(buffers, capacity):
    """Pool per-actor rows into one owner-tagged buffer, newest winning on overflow."""
    merged = PooledBuffer(capacity)
    for i, buf in enumerate(buffers):
        for s, a, r, s2 in buf.items:
            merged.add(i, s, a, r, s2)
    return merged


class PooledBuffer:
    """Replay over everyone's rows; each row remembers which actor made it."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("capacity must be at least 1")
        self.items = deque(maxlen=int(capacity))

    def __len__(self):
        return len(self.items)

    def add(self, owner, state, action, reward, next_state):
        self.items.append((int(owner), state, action, reward, next_state))

    def sample(self, rng, batch_size):
        if not self.items:
            return None
        idx = rng.integers(0, len(self.items), size=batch_size)
        picked = [self.items[int(k)] for k in idx]
        return {
            "owners": np.array([p[0] for p in picked]),
            "states": np.stack([p[1] for p in picked]),
            "actions": np.stack([p[2] for p in picked]),
            "rewards": np.array([p[3] for p in picked]),
            "next_states": np.stack([p[4] for p in picked]),
        }


def train(cfg, seed):
    """Full run; returns policies, critic, optimizer states and the metric traces."""
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    started = time.perf_counter()
    scen = cfg.scenario
    n_actors = scen.n_dus
    adim = scen.action_dim

    rng = np.random.default_rng([seed, _TAG_INIT])
    policies = [sac.init_policy(scen.state_dim, adim, cfg.actor_hidden, rng) for _ in range(n_actors)]
    critic = sac.init_critic(scen.state_dim, adim, cfg.critic_hidden, rng)
    actor_states = [init_adam(p, learning_rate=cfg.actor_lr) for p in policies]
    critic_state = init_adam(critic, learning_rate=cfg.critic_lr)
    buffers = [sac.ReplayBuffer(cfg.buffer_capacity) for _ in range(n_actors)]
    stats = TdStats(n_actors=n_actors, window=cfg.sam.window)

    n_slices = len(scen.slices)
    m = RunMetrics(
        rewards=np.zeros(cfg.n_iterations),
        actor_rewards=np.zeros((cfg.n_iterations, n_actors)),
        slice_qos=np.zeros((cfg.n_iterations, n_slices)),
        critic_losses=np.full(cfg.n_iterations, np.nan),
        actor_losses=np.full((cfg.n_iterations, n_actors), np.nan),
        rhos=np.zeros(cfg.n_iterations),
        gates=np.zeros((cfg.n_iterations, n_actors), dtype=bool),
        td_variances=np.full((cfg.n_iterations, n_actors), np.nan),
    )

    pool = ThreadPoolExecutor(max_workers=cfg.n_workers) if cfg.n_workers > 1 else None
    done_iters = cfg.n_iterations
    for t in range(cfg.n_iterations):
        rho = rho_at(cfg.sam, t, cfg.n_iterations)
        m.rhos[t] = rho

        rows, deltas, mean_return, qos = _collect(cfg, policies, critic, seed, t)
        for i in range(n_actors):
            for s, a, r, s2 in rows[i]:
                buffers[i].add(s, a, r, s2)
            stats.record_many(i, deltas[i])
            m.actor_rewards[t, i] = mean_return
        m.slice_qos[t] = qos
        m.rewards[t] = float(np.mean(m.actor_rewards[t]))

        # gate decisions hold for the whole iteration: the TD windows only
        # move at collection time
        gates = [gate_open(cfg.sam, stats, i) for i in range(n_actors)]
        for i in range(n_actors):
            m.gates[t, i] = gates[i]
            v = stats.variance(i)
            m.td_variances[t, i] = np.nan if v is None else v

        merged = aggregate_experiences(buffers, cfg.buffer_capacity)
        for u in range(cfg.updates_per_iter):
            # actors first, each on its own experience; independent given the
            # frozen critic, so rounds may fan out across threads
            def update_actor(i):
                rng_a = np.random.default_rng([seed, _TAG_ACTOR_BATCH, t, i, u])
                abatch = buffers[i].sample(rng_a, cfg.batch_size)
                noise = rng_a.standard_normal((cfg.batch_size, adim))
                closure = _with_l2(
                    lambda p: sac.policy_loss_and_grad(
                        p, critic, abatch["states"], noise, beta=cfg.beta
                    ),
                    cfg.l2_reg,
                )
                rho_i = rho if gates[i] else 0.0
                policies[i], actor_states[i], info = sam_step(policies[i], closure, rho_i, actor_states[i])
                m.actor_losses[t, i] = info["loss"]

            if pool is not None:
                list(pool.map(update_actor, range(n_actors)))
            else:
                for i in range(n_actors):
                    update_actor(i)

            # then the shared critic on the pooled experience
            rng_c = np.random.default_rng([seed, _TAG_CRITIC_BATCH, t, u])
            batch = merged.sample(rng_c, cfg.batch_size)
            targets = sac.critic_target(
                critic, policies, batch["owners"], batch["rewards"], batch["states"],
                batch["actions"], batch["next_states"],
                np.random.default_rng([seed, _TAG_TARGET, t, u]),
                beta=cfg.beta, gamma=cfg.gamma,
            )
            closure = _with_l2(
                lambda p: sac.critic_loss_and_grad(p, batch["states"], batch["actions"], targets),
                cfg.l2_reg,
            )
            rho_c = rho if cfg.sam.critic_eligible else 0.0
            critic, critic_state, info = sam_step(critic, closure, rho_c, critic_state)
            m.critic_losses[t] = info["loss"]

        if cfg.stop_on_convergence and converged(
            m.rewards[: t + 1], cfg.converge_window, cfg.converge_tol
        ):
            done_iters = t + 1
            break

    if pool is not None:
        pool.shutdown()

    if done_iters < cfg.n_iterations:
        m = _truncate(m, done_iters)
    m.wall_clock = time.perf_counter() - started
    return TrainResult(policies, critic, actor_states, critic_state, m, stats, cfg, seed)


def eval_rollout(policies, scenario, seed, n_episodes=5):
    """Deterministic-policy rollout traces, one row per control step.

    Returns a dict of stacked arrays: rewards (T,), qos and violations
    (T, n_slices), ue_rates (T, n_ues) averaged over sub-slots, plus the
    static slice_of_ue map.
    """
    world = World(scenario, seed=_derive_seed(seed, _TAG_EVAL, 0))
    rewards, qos, violations, ue_rates = [], [], [], []
    for e in range(n_episodes):
        s = world.reset(_derive_seed(seed, _TAG_EVAL, e))
        for _ in range(scenario.episode_len):
            a = np.stack([sac.deterministic_action(pol, s[j]) for j, pol in enumerate(policies)])
            s, r, done, info = world.step(a)
            rewards.append(r)
            qos.append(info["qos"])
            violations.append(info["violations"])
            ue_rates.append(info["rates"].mean(axis=0))
            if done:
                break
    return {
        "rewards": np.asarray(rewards),
        "qos": np.stack(qos),
        "violations": np.stack(violations),
        "ue_rates": np.stack(ue_rates),
        "slice_of_ue": world.slice_of_ue.copy(),
    }


def evaluate(policies, scenario, seed, n_episodes=5):
    """Mean step reward under deterministic actions, fresh worlds per episode."""
    return float(np.mean(eval_rollout(policies, scenario, seed, n_episodes)["rewards"]))


def converged(rewards, window=50, tol=1e-3):
    """True when the last two reward windows differ by strictly less than tol."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size < 2 * window:
        return False
    recent = float(np.mean(rewards[-window:]))
    previous = float(np.mean(rewards[-2 * window : -window]))
    return abs(recent - previous) < tol

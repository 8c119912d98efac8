import numpy as np
import pytest

from sam_marl import env, training
from sam_marl.errors import ConfigError
from sam_marl.sam import SamPolicy


def tiny_scenario(**kw):
    base = dict(
        n_dus=2,
        n_ues=4,
        n_rbs=3,
        episode_len=4,
        n_subslots=2,
        slices=env.default_slices()[:2],
    )
    base.update(kw)
    return env.ScenarioConfig(**base)


def tiny_config(**kw):
    base = dict(
        scenario=tiny_scenario(),
        sam=SamPolicy(mode="both-sam", rho_start=0.1, rho_end=0.01, window=10),
        n_iterations=4,
        n_episodes=1,
        batch_size=4,
        buffer_capacity=64,
        actor_hidden=(8,),
        critic_hidden=(8,),
        actor_lr=1e-3,
        critic_lr=1e-3,
    )
    base.update(kw)
    return training.TrainConfig(**base)


def params_equal(a, b):
    return all(
        np.array_equal(x, y)
        for x, y in zip(a.weights + a.biases, b.weights + b.biases)
    )


class TestConfig:
    def test_rejects_tiny_buffer(self):
        with pytest.raises(ConfigError):
            tiny_config(buffer_capacity=2, batch_size=4)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ConfigError):
            tiny_config(gamma=0.0)

    def test_rejects_negative_seed(self):
        with pytest.raises(ConfigError):
            training.train(tiny_config(n_iterations=1), seed=-1)


class TestAggregate:
    def test_merges_in_actor_order_with_owners(self):
        from sam_marl.sac import ReplayBuffer

        b0, b1 = ReplayBuffer(8), ReplayBuffer(8)
        tr = lambda r: (np.zeros(2), np.zeros(1), r, np.zeros(2))
        b0.add(*tr(1.0))
        b0.add(*tr(2.0))
        b1.add(*tr(3.0))
        merged = training.aggregate_experiences([b0, b1], capacity=8)
        assert [it[3] for it in merged.items] == [1.0, 2.0, 3.0]
        assert [it[0] for it in merged.items] == [0, 0, 1]

    def test_overflow_keeps_newest(self):
        from sam_marl.sac import ReplayBuffer

        b0 = ReplayBuffer(8)
        tr = lambda r: (np.zeros(2), np.zeros(1), r, np.zeros(2))
        for r in range(5):
            b0.add(*tr(float(r)))
        merged = training.aggregate_experiences([b0], capacity=3)
        assert [it[3] for it in merged.items] == [2.0, 3.0, 4.0]

    def test_pooled_sample_carries_owner_tags(self):
        from sam_marl.sac import ReplayBuffer

        b0, b1 = ReplayBuffer(8), ReplayBuffer(8)
        b0.add(np.zeros(2), np.zeros(1), 0.0, np.zeros(2))
        b1.add(np.ones(2), np.ones(1), 1.0, np.ones(2))
        merged = training.aggregate_experiences([b0, b1], capacity=8)
        batch = merged.sample(np.random.default_rng(0), 16)
        # the owner tag always identifies the source buffer
        assert np.array_equal(batch["owners"].astype(float), batch["rewards"])
        assert batch["states"].shape == (16, 2)


class TestTrainLoop:
    def test_metric_shapes_and_accounting(self):
        cfg = tiny_config()
        res = training.train(cfg, seed=0)
        n_t, n_a = cfg.n_iterations, cfg.scenario.n_dus
        n_l = len(cfg.scenario.slices)
        assert res.metrics.rewards.shape == (n_t,)
        assert res.metrics.actor_rewards.shape == (n_t, n_a)
        assert res.metrics.slice_qos.shape == (n_t, n_l)
        assert res.metrics.actor_losses.shape == (n_t, n_a)
        assert res.metrics.gates.shape == (n_t, n_a)
        assert res.metrics.rhos[0] == cfg.sam.rho_start
        assert len(res.policies) == n_a
        assert np.all(np.isfinite(res.metrics.rewards))
        assert np.allclose(res.metrics.rewards, res.metrics.actor_rewards.mean(axis=1))
        assert res.metrics.wall_clock > 0

    def test_rho_trace_follows_schedule(self):
        cfg = tiny_config(n_iterations=5)
        res = training.train(cfg, seed=1)
        from sam_marl.sam import rho_at

        want = [rho_at(cfg.sam, t, 5) for t in range(5)]
        assert np.allclose(res.metrics.rhos, want)

    def test_single_iteration_single_actor_accounting(self):
        # the smallest run still performs exactly 1 actor and 1 critic update
        cfg = tiny_config(scenario=tiny_scenario(n_dus=1), n_iterations=1, n_episodes=1)
        res = training.train(cfg, seed=2)
        assert len(res.metrics.rewards) == 1
        assert res.actor_states[0].step_count == 1
        assert res.critic_state.step_count == 1
        assert np.isfinite(res.metrics.critic_losses[0])
        assert np.isfinite(res.metrics.actor_losses[0, 0])

    def test_update_counts_scale_with_updates_per_iter(self):
        cfg = tiny_config(n_iterations=3, updates_per_iter=2)
        res = training.train(cfg, seed=3)
        assert res.critic_state.step_count == 6
        assert all(st.step_count == 6 for st in res.actor_states)

    def test_stops_early_when_asked(self):
        # window 1 with a huge tolerance converges at the second iteration
        cfg = tiny_config(n_iterations=6, stop_on_convergence=True,
                          converge_window=1, converge_tol=1e9)
        res = training.train(cfg, seed=3)
        assert len(res.metrics.rewards) == 2
        assert res.metrics.gates.shape[0] == 2
        full = training.train(tiny_config(n_iterations=6), seed=3)
        assert len(full.metrics.rewards) == 6
        assert np.array_equal(full.metrics.rewards[:2], res.metrics.rewards)

    def test_deterministic_rerun(self):
        cfg = tiny_config()
        r1 = training.train(cfg, seed=7)
        r2 = training.train(tiny_config(), seed=7)
        assert np.array_equal(r1.metrics.rewards, r2.metrics.rewards)
        assert np.array_equal(r1.metrics.critic_losses, r2.metrics.critic_losses,
                              equal_nan=True)
        for p1, p2 in zip(r1.policies, r2.policies):
            assert params_equal(p1, p2)
        assert params_equal(r1.critic, r2.critic)

    def test_seed_changes_run(self):
        r1 = training.train(tiny_config(), seed=7)
        r2 = training.train(tiny_config(), seed=8)
        assert not np.array_equal(r1.metrics.rewards, r2.metrics.rewards)

    def test_modes_share_data_until_first_update(self):
        on = training.train(tiny_config(sam=SamPolicy(mode="both-sam", selective=False,
                                                      rho_start=0.2, rho_end=0.2,
                                                      schedule="constant")), seed=5)
        off = training.train(tiny_config(sam=SamPolicy(mode="no-sam")), seed=5)
        # iteration 0 data is collected before any parameter update
        assert on.metrics.rewards[0] == off.metrics.rewards[0]
        # afterwards the update rules genuinely diverge
        assert not params_equal(on.policies[0], off.policies[0])
        assert not params_equal(on.critic, off.critic)

    def test_no_sam_never_gates(self):
        res = training.train(tiny_config(sam=SamPolicy(mode="no-sam")), seed=4)
        assert res.metrics.gates.sum() == 0

    def test_critic_sam_keeps_actor_gate_closed(self):
        res = training.train(tiny_config(sam=SamPolicy(mode="critic-sam")), seed=4)
        assert res.metrics.gates.sum() == 0

    def test_relative_gate_opens_for_someone(self):
        cfg = tiny_config(sam=SamPolicy(mode="both-sam", threshold="relative", window=10),
                          n_iterations=4)
        res = training.train(cfg, seed=6)
        # once variances exist, the top actor is always at or above the mean
        late = res.metrics.gates[1:]
        assert np.all(late.sum(axis=1) >= 1)

    def test_nonselective_gates_all_actors(self):
        cfg = tiny_config(sam=SamPolicy(mode="both-sam", selective=False))
        res = training.train(cfg, seed=6)
        assert res.metrics.gates.all()

    def test_thread_workers_match_serial(self):
        r1 = training.train(tiny_config(n_workers=1), seed=9)
        r2 = training.train(tiny_config(n_workers=2), seed=9)
        assert np.array_equal(r1.metrics.rewards, r2.metrics.rewards)
        for p1, p2 in zip(r1.policies, r2.policies):
            assert params_equal(p1, p2)
        assert params_equal(r1.critic, r2.critic)

    def test_l2_variant_changes_updates(self):
        base = training.train(tiny_config(sam=SamPolicy(mode="no-sam")), seed=10)
        reg = training.train(tiny_config(sam=SamPolicy(mode="no-sam"), l2_reg=0.1), seed=10)
        assert not params_equal(base.policies[0], reg.policies[0])

    def test_td_variances_recorded(self):
        res = training.train(tiny_config(), seed=11)
        assert np.all(np.isfinite(res.metrics.td_variances[-1]))
        assert np.all(res.metrics.td_variances[-1] >= 0)


class TestEvaluate:
    def test_deterministic(self):
        res = training.train(tiny_config(), seed=12)
        e1 = training.evaluate(res.policies, tiny_scenario(), seed=3, n_episodes=2)
        e2 = training.evaluate(res.policies, tiny_scenario(), seed=3, n_episodes=2)
        assert e1 == e2

    def test_seed_matters(self):
        res = training.train(tiny_config(), seed=12)
        e1 = training.evaluate(res.policies, tiny_scenario(), seed=3, n_episodes=2)
        e2 = training.evaluate(res.policies, tiny_scenario(), seed=4, n_episodes=2)
        assert e1 != e2


class TestConverged:
    def test_short_trace_not_converged(self):
        assert not training.converged(np.ones(10), window=50)

    def test_flat_trace_converges(self):
        assert training.converged(np.ones(100), window=50, tol=1e-3)

    def test_trending_trace_does_not(self):
        assert not training.converged(np.arange(100.0), window=50, tol=1e-3)

    def test_boundary_is_strict(self):
        # windows differing by exactly tol must not count as converged
        trace = np.concatenate([np.zeros(50), np.full(50, 1e-3)])
        assert not training.converged(trace, window=50, tol=1e-3)

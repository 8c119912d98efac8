import numpy as np
import pytest

from sam_marl.checkpoint import (
    FORMAT_VERSION,
    load_checkpoint,
    save_checkpoint,
)
from sam_marl.errors import CheckpointError
from sam_marl.nn import GradientSet, adam_step, forward, init_adam, init_mlp


def random_grads(params, rng):
    return GradientSet(
        [rng.normal(size=w.shape) for w in params.weights],
        [rng.normal(size=b.shape) for b in params.biases],
    )


def make_agents(seed, n_actors=3, steps=4):
    """Actors, critic and optimizer states with populated Adam moments."""
    rng = np.random.default_rng(seed)
    policies, states = [], []
    for _ in range(n_actors):
        p = init_mlp((5, 8, 2), rng, output_activation="sigmoid")
        s = init_adam(p, learning_rate=3e-4)
        for _ in range(steps):
            p, s = adam_step(p, random_grads(p, rng), s)
        policies.append(p)
        states.append(s)
    critic = init_mlp((9, 16, 1), rng)
    critic_state = init_adam(critic, learning_rate=1e-3)
    for _ in range(steps):
        critic, critic_state = adam_step(critic, random_grads(critic, rng), critic_state)
    return policies, critic, states, critic_state


def assert_nets_identical(a, sa, b, sb):
    assert a.layer_sizes == b.layer_sizes
    assert a.hidden_activation == b.hidden_activation
    assert a.output_activation == b.output_activation
    for l in range(a.n_layers):
        assert np.array_equal(a.weights[l], b.weights[l])
        assert np.array_equal(a.biases[l], b.biases[l])
        assert np.array_equal(sa.first_moment.weights[l], sb.first_moment.weights[l])
        assert np.array_equal(sa.first_moment.biases[l], sb.first_moment.biases[l])
        assert np.array_equal(sa.second_moment.weights[l], sb.second_moment.weights[l])
        assert np.array_equal(sa.second_moment.biases[l], sb.second_moment.biases[l])
    assert sa.step_count == sb.step_count
    assert sa.learning_rate == sb.learning_rate
    assert (sa.beta1, sa.beta2, sa.epsilon) == (sb.beta1, sb.beta2, sb.epsilon)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        policies, critic, states, cstate = make_agents(0)
        path = tmp_path / "run.npz"
        save_checkpoint(path, policies, critic, states, cstate)
        lp, lc, ls, lcs = load_checkpoint(path)
        assert len(lp) == len(policies)
        for p, s, q, t in zip(policies, states, lp, ls):
            assert_nets_identical(p, s, q, t)
        assert_nets_identical(critic, cstate, lc, lcs)

    def test_resumed_optimizer_matches_uninterrupted(self, tmp_path):
        # continuing from a loaded checkpoint must equal never having saved
        policies, critic, states, cstate = make_agents(7, n_actors=1)
        path = tmp_path / "run.npz"
        save_checkpoint(path, policies, critic, states, cstate)
        (lp,), lc, (ls,), lcs = load_checkpoint(path)

        rng_a = np.random.default_rng(99)
        rng_b = np.random.default_rng(99)
        pa, sa = policies[0], states[0]
        pb, sb = lp, ls
        for _ in range(5):
            pa, sa = adam_step(pa, random_grads(pa, rng_a), sa)
            pb, sb = adam_step(pb, random_grads(pb, rng_b), sb)
        assert_nets_identical(pa, sa, pb, sb)

    def test_forward_pass_preserved(self, tmp_path):
        policies, critic, states, cstate = make_agents(3)
        path = tmp_path / "run.npz"
        save_checkpoint(path, policies, critic, states, cstate)
        lp, lc, _, _ = load_checkpoint(path)
        x = np.random.default_rng(1).normal(size=(6, 5))
        for p, q in zip(policies, lp):
            assert np.array_equal(forward(p, x), forward(q, x))
        xc = np.random.default_rng(2).normal(size=(6, 9))
        assert np.array_equal(forward(critic, xc), forward(lc, xc))

    def test_zero_actors(self, tmp_path):
        _, critic, _, cstate = make_agents(4, n_actors=1)
        path = tmp_path / "run.npz"
        save_checkpoint(path, [], critic, [], cstate)
        lp, lc, ls, _ = load_checkpoint(path)
        assert lp == [] and ls == []
        assert lc.layer_sizes == critic.layer_sizes


class TestRejection:
    def test_state_count_mismatch(self, tmp_path):
        policies, critic, states, cstate = make_agents(0, n_actors=2)
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.npz", policies, critic, states[:1], cstate)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.npz")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"this is not a zip archive")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, stuff=np.arange(3))
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)

    def test_future_version(self, tmp_path):
        policies, critic, states, cstate = make_agents(0, n_actors=1)
        path = tmp_path / "run.npz"
        save_checkpoint(path, policies, critic, states, cstate)
        with np.load(path, allow_pickle=False) as data:
            entries = {k: data[k] for k in data.files}
        entries["format_version"] = np.int64(FORMAT_VERSION + 1)
        np.savez(path, **entries)
        with pytest.raises(CheckpointError, match="not supported"):
            load_checkpoint(path)

    def test_missing_entry(self, tmp_path):
        policies, critic, states, cstate = make_agents(0, n_actors=1)
        path = tmp_path / "run.npz"
        save_checkpoint(path, policies, critic, states, cstate)
        with np.load(path, allow_pickle=False) as data:
            entries = {k: data[k] for k in data.files}
        del entries["critic_w0"]
        np.savez(path, **entries)
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(path)

"""Single-file persistence for trained agents.

One .npz holds every actor, the critic, and all Adam moments, keyed by a
stable prefix scheme (actor_<i>_*, critic_*).  Arrays go in as float64 and
come back bit-identical, so a resumed optimizer continues exactly where the
saved one stopped.  The format is versioned; loading anything else fails
loudly rather than guessing.
"""

import numpy as np

from .errors import CheckpointError
from .nn import AdamState, GradientSet, MlpParams

FORMAT_VERSION = 1


def _pack_net(out, prefix, params, state):
    out[f"{prefix}_sizes"] = np.asarray(params.layer_sizes, dtype=np.int64)
    out[f"{prefix}_acts"] = np.array([params.hidden_activation, params.output_activation])
    for l in range(params.n_layers):
        out[f"{prefix}_w{l}"] = params.weights[l]
        out[f"{prefix}_b{l}"] = params.biases[l]
        out[f"{prefix}_mw{l}"] = state.first_moment.weights[l]
        out[f"{prefix}_mb{l}"] = state.first_moment.biases[l]
        out[f"{prefix}_vw{l}"] = state.second_moment.weights[l]
        out[f"{prefix}_vb{l}"] = state.second_moment.biases[l]
    out[f"{prefix}_adam"] = np.array(
        [state.step_count, state.learning_rate, state.beta1, state.beta2, state.epsilon]
    )


def _unpack_net(data, prefix):
    try:
        sizes = tuple(int(s) for s in data[f"{prefix}_sizes"])
        hidden_act, output_act = (str(a) for a in data[f"{prefix}_acts"])
        n_layers = len(sizes) - 1
        weights = [np.array(data[f"{prefix}_w{l}"]) for l in range(n_layers)]
        biases = [np.array(data[f"{prefix}_b{l}"]) for l in range(n_layers)]
        params = MlpParams(sizes, weights, biases, hidden_act, output_act)
        first = GradientSet(
            [np.array(data[f"{prefix}_mw{l}"]) for l in range(n_layers)],
            [np.array(data[f"{prefix}_mb{l}"]) for l in range(n_layers)],
        )
        second = GradientSet(
            [np.array(data[f"{prefix}_vw{l}"]) for l in range(n_layers)],
            [np.array(data[f"{prefix}_vb{l}"]) for l in range(n_layers)],
        )
        meta = data[f"{prefix}_adam"]
        state = AdamState(
            first, second, int(meta[0]), float(meta[1]), float(meta[2]), float(meta[3]),
            float(meta[4]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing entry {exc}") from exc
    return params, state


def save_checkpoint(path, policies, critic, actor_states, critic_state):
    if len(policies) != len(actor_states):
        raise CheckpointError("one optimizer state per actor required")
    out = {
        "format_version": np.int64(FORMAT_VERSION),
        "n_actors": np.int64(len(policies)),
    }
    for i, (p, s) in enumerate(zip(policies, actor_states)):
        _pack_net(out, f"actor_{i}", p, s)
    _pack_net(out, "critic", critic, critic_state)
    np.savez(path, **out)


def load_checkpoint(path):
    """Returns (policies, critic, actor_states, critic_state)."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "format_version" not in data:
            raise CheckpointError("not a checkpoint: no format version")
        found = int(data["format_version"])
        if found != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format {found} not supported (expected {FORMAT_VERSION})"
            )
        n = int(data["n_actors"])
        policies, states = [], []
        for i in range(n):
            p, s = _unpack_net(data, f"actor_{i}")
            policies.append(p)
            states.append(s)
        critic, critic_state = _unpack_net(data, "critic")
    return policies, critic, states, critic_state

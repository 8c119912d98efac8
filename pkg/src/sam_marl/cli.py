"""Command-line surface: train, eval, ablate, sweep, diagnose.

Every subcommand resolves its full config before touching the filesystem,
writes only inside one output directory, and drops a manifest there from
which the run can be re-executed identically.  Figures are rendered next to
the CSVs they summarize.
"""

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import sac
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    PRESETS,
    apply_overrides,
    load_config,
    preset,
    read_manifest,
    write_manifest,
)
from .diagnostics import cdf, max_eigenvalue, rho_sweep
from .env import World
from .errors import ActionProtocolError, CheckpointError, ConfigError, NumericsError
from .plots import plot_cdf, plot_gate_rates, plot_rewards, plot_sharpness, plot_sweep
from .sam import MODES
from .training import eval_rollout, train

OUTPUT_ROOT_VAR = "SAM_MARL_OUTPUT_ROOT"

STATIC_RHO = 0.05
L2_STRENGTH = 1e-4


def ablation_variants(cfg):
    """Five-way component knockout grid around the given base config."""
    sam = cfg.sam

    def with_sam(**kw):
        return dataclasses.replace(cfg, sam=dataclasses.replace(sam, **kw))

    return {
        "full": with_sam(mode="both-sam", selective=True),
        "no-selective": with_sam(mode="both-sam", selective=False),
        "static-rho": with_sam(
            mode="both-sam", selective=True, schedule="constant",
            rho_start=STATIC_RHO, rho_end=STATIC_RHO,
        ),
        "no-sam": with_sam(mode="no-sam"),
        "l2-reg": dataclasses.replace(
            cfg, sam=dataclasses.replace(sam, mode="no-sam"), l2_reg=L2_STRENGTH
        ),
    }


def _resolve(args):
    """(config, seed, manifest extra) from flags; no filesystem writes here."""
    extra = {}
    if getattr(args, "from_manifest", None):
        cfg, seed, extra = read_manifest(args.from_manifest)
    else:
        cfg = load_config(args.config) if args.config else preset(args.preset)
        seed = 0
    if args.seed is not None:
        seed = args.seed
    overrides = []
    if getattr(args, "mode", None):
        overrides.append(f"sam.mode={args.mode}")
    overrides.extend(args.set or [])
    if getattr(args, "workers", None):
        overrides.append(f"n_workers={args.workers}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg, seed, extra or {}


def _out_dir(args, command):
    out = args.out or os.path.join(os.environ.get(OUTPUT_ROOT_VAR, "runs"), command)
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _parse_ints(text):
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _check_checkpoint(policies, critic, scenario):
    sdim, adim = scenario.state_dim, scenario.action_dim
    ok = (
        len(policies) == scenario.n_dus
        and all(p.layer_sizes[0] == sdim and p.layer_sizes[-1] == 2 * adim for p in policies)
        and critic.layer_sizes[0] == sdim + adim
    )
    if not ok:
        raise CheckpointError("checkpoint shapes do not match the configured scenario")


def cmd_train(args):
    cfg, seed, _ = _resolve(args)
    out = _out_dir(args, "train")
    result = train(cfg, seed)
    m = result.metrics

    write_manifest(os.path.join(out, "manifest.yaml"), cfg, seed, extra={"command": "train"})
    n = cfg.scenario.n_dus
    names = [s.name for s in cfg.scenario.slices]
    header = (
        ["iteration", "reward"]
        + [f"reward_{i}" for i in range(n)]
        + [f"qos_{nm}" for nm in names]
        + ["critic_loss", "rho"]
        + [f"actor_loss_{i}" for i in range(n)]
        + [f"gate_{i}" for i in range(n)]
        + [f"td_var_{i}" for i in range(n)]
    )
    rows = [
        [t, m.rewards[t], *m.actor_rewards[t], *m.slice_qos[t],
         m.critic_losses[t], m.rhos[t],
         *m.actor_losses[t], *m.gates[t].astype(int), *m.td_variances[t]]
        for t in range(len(m.rewards))
    ]
    _write_csv(os.path.join(out, "metrics.csv"), header, rows)
    save_checkpoint(
        os.path.join(out, "checkpoint.npz"),
        result.policies, result.critic, result.actor_states, result.critic_state,
    )
    plot_rewards({cfg.sam.mode: m.rewards}, os.path.join(out, "reward_curve.png"))
    plot_gate_rates(m.gates, os.path.join(out, "gate_rates.png"))
    print(
        f"trained {len(m.rewards)} iterations: final reward {m.rewards[-1]:.4f}, "
        f"best {np.max(m.rewards):.4f}"
    )
    print(f"outputs in {out}")
    return 0


def cmd_eval(args):
    cfg, seed, _ = _resolve(args)
    policies, critic, _, _ = load_checkpoint(args.checkpoint)
    _check_checkpoint(policies, critic, cfg.scenario)
    out = _out_dir(args, "eval")

    trace = eval_rollout(policies, cfg.scenario, seed, n_episodes=args.episodes)
    names = [s.name for s in cfg.scenario.slices]
    header = (
        ["step", "reward"]
        + [f"qos_{n}" for n in names]
        + [f"violation_{n}" for n in names]
    )
    steps = len(trace["rewards"])
    rows = [
        [t, trace["rewards"][t], *trace["qos"][t], *trace["violations"][t]]
        for t in range(steps)
    ]
    _write_csv(os.path.join(out, "eval.csv"), header, rows)

    sl = trace["slice_of_ue"]
    tp_rows = [
        [t, u, names[sl[u]], trace["ue_rates"][t, u]]
        for t in range(steps)
        for u in range(trace["ue_rates"].shape[1])
    ]
    _write_csv(os.path.join(out, "ue_throughput.csv"), ["step", "ue", "slice", "rate_bps"], tp_rows)

    write_manifest(
        os.path.join(out, "manifest.yaml"), cfg, seed,
        extra={"command": "eval", "checkpoint": os.path.abspath(args.checkpoint),
               "episodes": args.episodes},
    )
    plot_cdf(
        {n: trace["qos"][:, l] for l, n in enumerate(names)},
        os.path.join(out, "qos_cdf.png"), xlabel="slice QoS",
    )
    plot_cdf(
        {n: trace["ue_rates"][:, sl == l].ravel() for l, n in enumerate(names)},
        os.path.join(out, "throughput_cdf.png"), xlabel="per-UE throughput (bit/s)",
    )
    print(f"mean step reward {float(np.mean(trace['rewards'])):.4f} over {args.episodes} episodes")
    print(f"outputs in {out}")
    return 0


def cmd_ablate(args):
    cfg, seed, extra = _resolve(args)
    if args.seeds:
        seeds = _parse_ints(args.seeds)
    elif extra.get("seeds"):
        seeds = [int(s) for s in extra["seeds"]]
    else:
        seeds = [seed + k for k in range(3)]
    variants = ablation_variants(cfg)
    out = _out_dir(args, "ablate")

    names = [s.name for s in cfg.scenario.slices]
    rows, summary, curves = [], [], {}
    for vname, vcfg in variants.items():
        finals, sats, traces = [], [], []
        for s in seeds:
            res = train(vcfg, s)
            roll = eval_rollout(res.policies, vcfg.scenario, s)
            sat = (roll["violations"] == 0).mean(axis=0)
            finals.append(float(res.metrics.rewards[-1]))
            sats.append(sat)
            traces.append(res.metrics.rewards)
            rows.append(
                [vname, s, finals[-1], float(np.max(res.metrics.rewards)), *sat]
            )
        sats = np.mean(sats, axis=0)
        summary.append(
            [vname, float(np.mean(finals)), float(np.std(finals)), *sats]
        )
        curves[vname] = np.mean(traces, axis=0)

    sat_cols = [f"qos_sat_{n}" for n in names]
    _write_csv(
        os.path.join(out, "ablation.csv"),
        ["variant", "seed", "final_reward", "best_reward"] + sat_cols, rows,
    )
    _write_csv(
        os.path.join(out, "ablation_summary.csv"),
        ["variant", "final_reward_mean", "final_reward_std"] + sat_cols, summary,
    )
    plot_rewards(curves, os.path.join(out, "ablation.png"))
    write_manifest(
        os.path.join(out, "manifest.yaml"), cfg, seed,
        extra={"command": "ablate", "seeds": seeds},
    )
    for vname, mean, std, *_ in summary:
        print(f"{vname:>14}: final reward {mean:.4f} +/- {std:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_sweep(args):
    cfg, seed, extra = _resolve(args)
    rhos = _parse_floats(args.rhos) if args.rhos else [
        float(x) for x in extra.get("rhos", (0.01, 0.05, 0.1, 0.5))
    ]
    modes = args.modes.split(",") if args.modes else [
        str(x) for x in extra.get("modes", MODES)
    ]
    if args.seeds:
        seeds = _parse_ints(args.seeds)
    elif extra.get("seeds"):
        seeds = [int(s) for s in extra["seeds"]]
    else:
        seeds = [seed + k for k in range(3)]
    out = _out_dir(args, "sweep")

    rows = rho_sweep(cfg, rhos, modes, seeds)
    _write_csv(
        os.path.join(out, "sweep.csv"),
        ["mode", "rho", "seed", "score", "final_reward"],
        [[r["mode"], r["rho"], r["seed"], r["score"], r["final_reward"]] for r in rows],
    )
    plot_sweep(rows, os.path.join(out, "sweep.png"))
    write_manifest(
        os.path.join(out, "manifest.yaml"), cfg, seed,
        extra={"command": "sweep", "rhos": rhos, "modes": modes, "seeds": seeds},
    )
    best = max(rows, key=lambda r: r["score"])
    print(f"best score {best['score']:.4f} at mode={best['mode']} rho={best['rho']}")
    print(f"outputs in {out}")
    return 0


def _probe_batch(policies, scenario, seed, n):
    """On-policy per-agent rows stacked into training-shaped batch arrays."""
    world = World(scenario, seed=seed)
    rng = np.random.default_rng([seed, 7])
    s = world.reset(seed)
    owners, states, actions, rewards, nexts = [], [], [], [], []
    while len(states) < n:
        a = np.stack([sac.sample_action(pol, s[j], rng) for j, pol in enumerate(policies)])
        s2, r, done, _ = world.step(a)
        for i in range(scenario.n_dus):
            owners.append(i)
            states.append(s[i])
            actions.append(a[i])
            rewards.append(r)
            nexts.append(s2[i])
        s = world.reset(seed + len(states)) if done else s2
    return {
        "owners": np.asarray(owners[:n]),
        "states": np.stack(states[:n]),
        "actions": np.stack(actions[:n]),
        "rewards": np.asarray(rewards[:n]),
        "next_states": np.stack(nexts[:n]),
    }


def cmd_diagnose(args):
    cfg, seed, _ = _resolve(args)
    policies, critic, _, _ = load_checkpoint(args.checkpoint)
    _check_checkpoint(policies, critic, cfg.scenario)
    out = _out_dir(args, "diagnose")

    batch = _probe_batch(policies, cfg.scenario, seed, args.probe)
    targets = sac.critic_target(
        critic, policies, batch["owners"], batch["rewards"], batch["states"],
        batch["actions"], batch["next_states"], np.random.default_rng([seed, 31]),
        beta=cfg.beta, gamma=cfg.gamma,
    )
    eig_rows, eigs = [], {}
    rep = max_eigenvalue(
        lambda p: sac.critic_loss_and_grad(p, batch["states"], batch["actions"], targets),
        critic, np.random.default_rng([seed, 32]),
    )
    eig_rows.append(
        ["critic", cfg.sam.mode, seed, rep.eigenvalue, rep.residual, rep.iterations,
         int(rep.converged)]
    )
    eigs["critic"] = [rep.eigenvalue]
    for i, pol in enumerate(policies):
        own = batch["states"][batch["owners"] == i]
        noise = np.random.default_rng([seed, 33, i]).standard_normal(
            (own.shape[0], cfg.scenario.action_dim)
        )
        rep = max_eigenvalue(
            lambda p, st=own, nz=noise: sac.policy_loss_and_grad(
                p, critic, st, nz, beta=cfg.beta
            ),
            pol, np.random.default_rng([seed, 34, i]),
        )
        eig_rows.append(
            [f"actor_{i}", cfg.sam.mode, seed, rep.eigenvalue, rep.residual,
             rep.iterations, int(rep.converged)]
        )
        eigs[f"actor_{i}"] = [rep.eigenvalue]
    _write_csv(
        os.path.join(out, "sharpness.csv"),
        ["network", "mode", "seed", "eigenvalue", "residual", "iterations", "converged"],
        eig_rows,
    )

    roll = eval_rollout(policies, cfg.scenario, seed, n_episodes=args.episodes)
    names = [s.name for s in cfg.scenario.slices]
    qos_rows = []
    for l, name in enumerate(names):
        xs, ps = cdf(roll["qos"][:, l])
        qos_rows.extend([name, x, p] for x, p in zip(xs, ps))
    _write_csv(os.path.join(out, "cdf_qos.csv"), ["slice", "value", "p"], qos_rows)
    sl = roll["slice_of_ue"]
    tp_rows = []
    tp_groups = {}
    for l, name in enumerate(names):
        samples = roll["ue_rates"][:, sl == l].ravel()
        if samples.size == 0:
            continue
        tp_groups[name] = samples
        xs, ps = cdf(samples)
        tp_rows.extend([name, x, p] for x, p in zip(xs, ps))
    _write_csv(os.path.join(out, "cdf_throughput.csv"), ["slice", "rate_bps", "p"], tp_rows)

    plot_sharpness(eigs, os.path.join(out, "sharpness.png"))
    plot_cdf(
        {n: roll["qos"][:, l] for l, n in enumerate(names)},
        os.path.join(out, "qos_cdf.png"), xlabel="slice QoS",
    )
    plot_cdf(tp_groups, os.path.join(out, "throughput_cdf.png"),
             xlabel="per-UE throughput (bit/s)")
    write_manifest(
        os.path.join(out, "manifest.yaml"), cfg, seed,
        extra={"command": "diagnose", "checkpoint": os.path.abspath(args.checkpoint),
               "probe": args.probe, "episodes": args.episodes},
    )
    for row in eig_rows:
        print(f"{row[0]}: lambda_max {row[3]:.6g} (residual {row[4]:.2g})")
    print(f"outputs in {out}")
    return 0


def _common(sp, with_mode=False):
    sp.add_argument("--preset", default="default", choices=PRESETS, help="named base config")
    sp.add_argument("--config", help="YAML config file (wins over --preset)")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted config override, repeatable")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", help=f"output directory (default: under ${OUTPUT_ROOT_VAR} or ./runs)")
    sp.add_argument("--from-manifest", dest="from_manifest",
                    help="re-run the config and seed stored in a manifest")
    if with_mode:
        sp.add_argument("--mode", choices=MODES, help="shortcut for --set sam.mode=...")


def build_parser():
    p = argparse.ArgumentParser(
        prog="sam-marl",
        description="network-slicing simulator with sharpness-aware multi-agent training",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train agents; writes metrics, figures and a checkpoint")
    _common(t, with_mode=True)
    t.add_argument("--workers", type=int, default=None, help="parallel collection threads")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="deterministic rollout of a checkpoint with trace export")
    _common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=5)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="component-knockout grid over shared seeds")
    _common(a)
    a.add_argument("--seeds", help="comma-separated seeds (default: 3 starting at --seed)")
    a.set_defaults(func=cmd_ablate)

    w = sub.add_parser("sweep", help="grid over constant rho values and modes")
    _common(w)
    w.add_argument("--rhos", help="comma-separated rho values")
    w.add_argument("--modes", help="comma-separated mode names")
    w.add_argument("--seeds", help="comma-separated seeds")
    w.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diagnose", help="loss-sharpness and CDF diagnostics for a checkpoint")
    _common(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--probe", type=int, default=256, help="probe batch size")
    d.add_argument("--episodes", type=int, default=5)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ActionProtocolError, NumericsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

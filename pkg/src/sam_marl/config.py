"""Config serialization, named presets, and run manifests.

A run is fully determined by (TrainConfig, seed).  Manifests capture exactly
that pair as YAML, so any finished run can be re-executed bit for bit from
its manifest alone.
"""

import dataclasses

import numpy as np
import yaml

from .env import ScenarioConfig, SliceSpec, default_slices
from .errors import ConfigError
from .sam import SamPolicy
from .training import TrainConfig

MANIFEST_FORMAT = 1

PRESETS = ("default", "wideband", "micro", "acceptance")


def preset(name):
    """A ready-to-run TrainConfig by name.

    default: full-scale scenario (6 DUs, 200 UEs, 100 RBs, long run).
    wideband: 100 MHz carrier with 30 kHz subcarriers, fewer but busier DUs.
    micro: single DU, 2 UEs, 3 RBs, two slices; fast smoke runs.
    acceptance: 2 DUs, 20 UEs, 10 RBs sized for the acceptance suite.
    """
    if name == "default":
        return TrainConfig()
    if name == "wideband":
        scenario = ScenarioConfig(
            n_dus=3, n_ues=60, n_rbs=270, rb_bandwidth_hz=360e3,
            total_bandwidth_hz=100e6, scs_hz=30e3,
        )
        return TrainConfig(scenario=scenario, n_iterations=500)
    if name == "micro":
        scenario = ScenarioConfig(
            n_dus=1, n_ues=2, n_rbs=3, episode_len=20, n_subslots=4,
            slices=default_slices()[:2],
        )
        return TrainConfig(
            scenario=scenario, n_iterations=50, n_episodes=1, batch_size=16,
            buffer_capacity=2000, actor_hidden=(16, 16), critic_hidden=(16, 16),
            actor_lr=1e-3, critic_lr=1e-3,
        )
    if name == "acceptance":
        # bounded penalties and a short value horizon keep the reward scale
        # learnable inside the small iteration budget
        scenario = ScenarioConfig(
            n_dus=2, n_ues=20, n_rbs=10, episode_len=20, zeta=0.25,
        )
        return TrainConfig(
            scenario=scenario, n_iterations=200, n_episodes=4, batch_size=128,
            updates_per_iter=8, buffer_capacity=50000,
            actor_hidden=(64, 64), critic_hidden=(64, 64),
            actor_lr=1e-3, critic_lr=3e-3, beta=0.02, gamma=0.9,
        )
    raise ConfigError(f"unknown preset {name!r}, available: {', '.join(PRESETS)}")


def _plain(v):
    """Recursively strip dataclasses, tuples and numpy scalars to YAML types."""
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def to_dict(cfg):
    return _plain(cfg)


def _build(cls, d):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


def from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config document must be a mapping")
    d = dict(d)
    kwargs = {}
    if "scenario" in d:
        scen = dict(d.pop("scenario"))
        if "slices" in scen:
            slices = []
            for s in scen["slices"]:
                s = dict(s)
                if "qos_weights" in s:
                    s["qos_weights"] = tuple(s["qos_weights"])
                slices.append(_build(SliceSpec, s))
            scen["slices"] = slices
        if "heading_offsets" in scen:
            scen["heading_offsets"] = tuple(scen["heading_offsets"])
        kwargs["scenario"] = _build(ScenarioConfig, scen)
    if "sam" in d:
        kwargs["sam"] = _build(SamPolicy, dict(d.pop("sam")))
    for key in ("actor_hidden", "critic_hidden"):
        if key in d:
            d[key] = tuple(d[key])
    kwargs.update(d)
    return _build(TrainConfig, kwargs)


def save_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)


def load_config(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return from_dict(doc)


def apply_overrides(cfg, assignments):
    """New config with dotted-key overrides applied, e.g. sam.rho_start=0.3.

    Keys must already exist in the config tree; values are parsed as YAML, so
    numbers, booleans, lists and strings all work.
    """
    doc = to_dict(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value in {item!r}: {exc}") from exc
        if isinstance(value, str):
            # YAML leaves shorthand like 1e5 as text; numbers are never
            # meant literally here, so retry them as python literals
            for cast in (int, float):
                try:
                    value = cast(value)
                    break
                except ValueError:
                    pass
        node = doc
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return from_dict(doc)


def write_manifest(path, cfg, seed, extra=None):
    doc = {"format": MANIFEST_FORMAT, "seed": int(seed), "config": to_dict(cfg)}
    if extra:
        doc["extra"] = _plain(dict(extra))
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def read_manifest(path):
    """Returns (cfg, seed, extra) from a manifest written by write_manifest."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(doc, dict) or "config" not in doc or "seed" not in doc:
        raise ConfigError(f"{path} is not a run manifest")
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"manifest format {doc.get('format')} not supported")
    return from_dict(doc["config"]), int(doc["seed"]), doc.get("extra", {})

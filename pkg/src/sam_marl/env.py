"""Downlink radio world shared by a handful of distributed units.

Each distributed unit (DU) owns a fixed roster of user equipments (UEs), every
UE belongs to one service slice, and an action assigns each resource block
(RB) first to a slice and then to a UE inside it.  Rates follow a standard
log2(1+SINR) model with distance path loss, unit-mean Rayleigh fading redrawn
every sub-slot, and inter-DU interference on shared RBs.  Traffic is a fluid
queue: each epoch every UE accrues a Poisson number of packets into its
backlog and drains it at the served rate, so latency is queue depth over
drain speed and bad scheduling compounds over time.  Slice KPIs (latency, throughput,
availability, demand satisfaction) fold into a weighted quality score per
slice, and the team reward is a sigmoid of the normalized scores minus
penalties for resource overuse and missed service floors.
"""

import numpy as np
from dataclasses import dataclass, field

from .errors import ActionProtocolError, ConfigError
from .nn import _sigmoid

# rng stream tags so init/step draws never collide
_INIT_STREAM = 101
_STEP_STREAM = 202

HEADING_OFFSETS = (
    0.0,
    np.pi / 12,
    -np.pi / 12,
    np.pi / 6,
    -np.pi / 6,
    np.pi / 3,
    -np.pi / 3,
)


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SliceSpec:
    """One service class and the scoring knobs attached to it.

    qos_weights order: (latency, throughput, availability, demand
    satisfaction); they weight the normalized KPI vector.  arrival_bps is the
    mean offered load per UE feeding the fluid queue.  floor_kind is the
    hard service floor used for the reward penalty: "min_throughput" compares
    aggregate slice throughput against floor_target, "min_density_throughput"
    scales the aggregate by the demand-satisfaction fraction first, and
    "max_latency" bounds the worst per-UE latency.
    """

    name: str
    qos_weights: tuple
    demand_bps: float
    arrival_bps: float
    latency_ref_s: float
    packet_bits: float
    priority: float
    floor_kind: str
    floor_target: float

    def __post_init__(self):
        if len(self.qos_weights) != 4:
            raise ConfigError(f"slice {self.name}: need 4 qos weights")
        if abs(sum(self.qos_weights) - 1.0) > 1e-9:
            raise ConfigError(f"slice {self.name}: qos weights must sum to 1")
        if self.floor_kind not in ("min_throughput", "min_density_throughput", "max_latency"):
            raise ConfigError(f"slice {self.name}: unknown floor kind {self.floor_kind!r}")
        if min(self.demand_bps, self.latency_ref_s, self.packet_bits, self.priority) <= 0:
            raise ConfigError(f"slice {self.name}: rates, refs and priority must be positive")
        if self.arrival_bps < 0:
            raise ConfigError(f"slice {self.name}: arrival load cannot be negative")
        if self.floor_target <= 0:
            raise ConfigError(f"slice {self.name}: floor target must be positive")


def default_slices():
    """Broadband, machine-type and low-latency classes with usual priorities."""
    return [
        SliceSpec(
            name="embb",
            qos_weights=(0.05, 0.70, 0.15, 0.10),
            demand_bps=2e6,
            arrival_bps=1.5e6,
            latency_ref_s=0.05,
            packet_bits=12000.0,
            priority=1.0,
            floor_kind="min_throughput",
            floor_target=10e6,
        ),
        SliceSpec(
            name="mmtc",
            qos_weights=(0.05, 0.25, 0.20, 0.50),
            demand_bps=1e5,
            arrival_bps=5e4,
            latency_ref_s=0.5,
            packet_bits=1000.0,
            priority=0.5,
            floor_kind="min_density_throughput",
            floor_target=50e6,
        ),
        SliceSpec(
            name="urllc",
            qos_weights=(0.70, 0.10, 0.15, 0.05),
            demand_bps=5e5,
            arrival_bps=1e5,
            latency_ref_s=0.002,
            packet_bits=2048.0,
            priority=2.0,
            floor_kind="max_latency",
            floor_target=0.002,
        ),
    ]


@dataclass
class ScenarioConfig:
    n_dus: int = 6
    n_ues: int = 200
    n_rbs: int = 100
    rb_bandwidth_hz: float = 200e3
    total_bandwidth_hz: float = 20e6
    scs_hz: float = 15e3
    tx_power_dbm: float = 56.0
    noise_psd_dbm_hz: float = -173.0
    path_loss_exp: float = 3.0
    inter_site_m: float = 500.0
    area_margin_m: float = 100.0
    episode_len: int = 20
    n_subslots: int = 4
    epoch_duration_s: float = 1.0
    speed_min_mps: float = 10.0
    speed_max_mps: float = 20.0
    heading_offsets: tuple = HEADING_OFFSETS
    zeta: float = 1.0
    rate_floor_bps: float = 1e3
    slices: list = field(default_factory=default_slices)
    du_ue_counts: list = None  # even split when omitted

    def __post_init__(self):
        if min(self.n_dus, self.n_ues, self.n_rbs, self.episode_len, self.n_subslots) < 1:
            raise ConfigError("counts and lengths must be at least 1")
        if not self.slices:
            raise ConfigError("need at least one slice")
        if self.speed_min_mps > self.speed_max_mps or self.speed_min_mps < 0:
            raise ConfigError("bad speed range")
        if self.du_ue_counts is not None:
            if len(self.du_ue_counts) != self.n_dus:
                raise ConfigError("du_ue_counts length must equal n_dus")
            if sum(self.du_ue_counts) != self.n_ues:
                raise ConfigError("du_ue_counts must sum to n_ues")
            if min(self.du_ue_counts) < 0:
                raise ConfigError("du_ue_counts must be nonnegative")
        if self.rb_bandwidth_hz <= 0 or self.epoch_duration_s <= 0:
            raise ConfigError("bandwidth and epoch duration must be positive")
        if self.n_rbs * self.rb_bandwidth_hz > self.total_bandwidth_hz:
            raise ConfigError("RB grid exceeds the total carrier bandwidth")

    @property
    def n_slices(self):
        return len(self.slices)

    @property
    def action_dim(self):
        return 2 * self.n_rbs

    @property
    def p_rb_watts(self):
        # total DU power split equally across the grid
        return dbm_to_watts(self.tx_power_dbm - 10.0 * np.log10(self.n_rbs))

    @property
    def noise_rb_watts(self):
        return dbm_to_watts(self.noise_psd_dbm_hz) * self.rb_bandwidth_hz

    @property
    def state_dim(self):
        return 2 * self.n_slices + self.action_dim

    def ue_counts(self):
        if self.du_ue_counts is not None:
            return list(self.du_ue_counts)
        base, extra = divmod(self.n_ues, self.n_dus)
        return [base + (1 if i < extra else 0) for i in range(self.n_dus)]

    def alphas(self):
        """Per-slice reward steepness from priorities, mean-normalized."""
        w = np.array([s.priority for s in self.slices], dtype=float)
        return w * len(w) / w.sum()


def du_positions(n_dus, inter_site_m):
    """DUs on a ring with adjacent sites inter_site_m apart (origin if one)."""
    if n_dus == 1:
        return np.zeros((1, 2))
    radius = inter_site_m / (2.0 * np.sin(np.pi / n_dus))
    ang = 2.0 * np.pi * np.arange(n_dus) / n_dus
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def area_halfwidth(cfg):
    """Half-width of the square service area centered on each DU site."""
    return cfg.inter_site_m / 2.0 + cfg.area_margin_m


@dataclass
class DecodedAction:
    """RB grid of one DU after decoding a raw [0,1]^{2K} vector."""

    slice_of_rb: np.ndarray  # (K,) slice index
    ue_of_rb: np.ndarray  # (K,) local roster UE id, -1 when the slice is empty
    rb_per_slice: np.ndarray  # (n_slices,) RBs actually carrying traffic


def decode_action(raw, n_slices, rosters):
    """Map a raw action to an RB assignment that cannot overshoot.

    First half of raw picks the slice per RB, second half the UE inside that
    slice's roster, both by flooring into the valid index range.  An RB
    pointed at an empty slice is left unused.  rosters holds, per slice, the
    UE ids owned by this DU sorted ascending.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size % 2 != 0:
        raise ActionProtocolError(f"raw action must be flat with even length, got shape {raw.shape}")
    if raw.size == 0:
        raise ActionProtocolError("empty action")
    if np.any(~np.isfinite(raw)) or raw.min() < 0.0 or raw.max() > 1.0:
        raise ActionProtocolError("raw action entries must lie in [0, 1]")
    if len(rosters) != n_slices:
        raise ConfigError("one roster per slice required")
    k = raw.size // 2
    slice_of_rb = np.minimum((raw[:k] * n_slices).astype(int), n_slices - 1)
    ue_of_rb = np.full(k, -1, dtype=int)
    for i in range(k):
        roster = rosters[slice_of_rb[i]]
        n = len(roster)
        if n == 0:
            continue
        ue_of_rb[i] = roster[min(int(raw[k + i] * n), n - 1)]
    rb_per_slice = np.zeros(n_slices, dtype=int)
    for l in range(n_slices):
        rb_per_slice[l] = int(np.sum((slice_of_rb == l) & (ue_of_rb >= 0)))
    return DecodedAction(slice_of_rb, ue_of_rb, rb_per_slice)


def compute_rates(alloc, gain, h2, rb_bandwidth_hz, noise_watts):
    """Per-sub-slot per-UE downlink rate in bit/s.

    alloc: (n_dus, K) global UE id per RB, -1 for silent RBs.
    gain: (n_ues, n_dus) average received power in watts (tx power times
      path loss), fading excluded.
    h2: (n_subslots, n_dus, K, n_ues) fading power gains.
    A DU transmits only on its allocated RBs; every other DU active on the
    same RB interferes at the victim UE.
    """
    alloc = np.asarray(alloc)
    n_sub, n_dus, k, n_ues = h2.shape
    if alloc.shape != (n_dus, k):
        raise ConfigError("alloc shape does not match fading tensor")
    used = alloc >= 0
    rates = np.zeros((n_sub, n_ues))
    if not used.any():
        return rates
    # total received power on (sub-slot, rb, ue) from every active DU
    total = np.einsum("sjku,uj,jk->sku", h2, gain, used.astype(float))
    js, ks = np.nonzero(used)
    us = alloc[js, ks]
    sig = gain[us, js] * h2[:, js, ks, us]
    interference = total[:, ks, us] - sig
    snr = sig / (interference + noise_watts)
    per_rb = rb_bandwidth_hz * np.log2(1.0 + snr)
    for s in range(n_sub):
        np.add.at(rates[s], us, per_rb[s])
    return rates


def compute_kpis(rates, backlog, slice_of_ue, slices, rate_floor_bps):
    """Slice KPI table from a window of per-sub-slot rates and queue depths.

    rates: (n_subslots, n_ues), backlog: (n_ues,) bits left after serving the
    window.  Returns (n_slices, 4) rows of (worst latency s, mean throughput
    bps, availability, demand satisfaction).  Latency is the time to drain
    the remaining backlog at the window-average rate, floored at
    rate_floor_bps so starved UEs stay finite.  A slice with no UEs anywhere
    reports (0, 0, 1, 1): nothing to serve, nothing missed.
    """
    rates = np.asarray(rates, dtype=float)
    backlog = np.asarray(backlog, dtype=float)
    slice_of_ue = np.asarray(slice_of_ue)
    avg = rates.mean(axis=0)
    out = np.zeros((len(slices), 4))
    for l, spec in enumerate(slices):
        members = np.nonzero(slice_of_ue == l)[0]
        if members.size == 0:
            out[l] = (0.0, 0.0, 1.0, 1.0)
            continue
        c = avg[members]
        latencies = backlog[members] / np.maximum(c, rate_floor_bps)
        out[l, 0] = latencies.max()
        out[l, 1] = c.mean()
        out[l, 2] = float(np.mean(rates[:, members] >= spec.demand_bps))
        out[l, 3] = float(np.mean(c >= spec.demand_bps))
    return out


def normalize_kpis(kpi_row, spec):
    """KPI row to a unitless 4-vector in [0, 1].

    Latency maps through 1/(1 + l/l_ref) (1 when instant, 0.5 at the
    reference), throughput through c/(c + demand) (0.5 exactly at demand);
    availability and satisfaction are already fractions.
    """
    l_d, mu_r, s_a, d_s = kpi_row
    return np.array(
        [1.0 / (1.0 + l_d / spec.latency_ref_s), mu_r / (mu_r + spec.demand_bps), s_a, d_s]
    )


def slice_qos(weights, normalized):
    """Weighted quality score; expects the normalized KPI vector."""
    weights = np.asarray(weights, dtype=float)
    normalized = np.asarray(normalized, dtype=float)
    if weights.shape != (4,) or normalized.shape != (4,):
        raise ConfigError("qos takes 4 weights and 4 normalized components")
    return float(np.dot(weights, normalized))


def floor_violation(spec, kpi_row, n_in_slice):
    """Normalized miss against the slice's hard service floor.

    0 when met, 1 at a full miss; the latency ratio is clipped there too so a
    deeply starved queue cannot blow the penalty past the other slices.
    """
    l_d, mu_r, s_a, d_s = kpi_row
    if spec.floor_kind == "max_latency":
        return min(1.0, max(0.0, (l_d - spec.floor_target) / spec.floor_target))
    value = mu_r * n_in_slice
    if spec.floor_kind == "min_density_throughput":
        value *= d_s
    return min(1.0, max(0.0, (spec.floor_target - value) / spec.floor_target))


class QosTracker:
    """Running min/max normalizer for slice quality scores.

    update() folds the new scores into the running range first, then returns
    them rescaled to [0, 1]; a degenerate range maps to 0.5.
    """

    def __init__(self, n_slices):
        self.lo = np.full(n_slices, np.inf)
        self.hi = np.full(n_slices, -np.inf)

    def update(self, qos):
        qos = np.asarray(qos, dtype=float)
        self.lo = np.minimum(self.lo, qos)
        self.hi = np.maximum(self.hi, qos)
        span = self.hi - self.lo
        out = np.full(qos.shape, 0.5)
        ok = span > 0
        out[ok] = (qos[ok] - self.lo[ok]) / span[ok]
        return out


def compute_reward(qbar, alphas, rb_overuse, violations, zeta=1.0):
    """Team reward: sigmoid-squashed slice qualities minus penalties.

    qbar: normalized quality per slice, alphas: per-slice steepness,
    rb_overuse: RBs requested beyond the grid (0 with protocol-decoded
    actions), violations: per-slice normalized floor misses.
    """
    qbar = np.asarray(qbar, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    gain = float(np.sum(_sigmoid(alphas * qbar)))
    return gain - zeta * max(0.0, float(rb_overuse)) - zeta * float(np.sum(violations))


def advance_mobility(positions, velocities, dt, centers, halfwidth, heading_offsets, rng):
    """One epoch of the random-direction walk with wall reflection.

    Every UE turns by an offset drawn uniformly from heading_offsets, then
    moves for dt seconds; leaving its own service square (centers gives the
    per-UE square center, halfwidth its size) folds the position back and
    flips the offending velocity component.
    """
    n = positions.shape[0]
    theta = np.asarray(heading_offsets)[rng.integers(0, len(heading_offsets), size=n)]
    cos, sin = np.cos(theta), np.sin(theta)
    vx = cos * velocities[:, 0] - sin * velocities[:, 1]
    vy = sin * velocities[:, 0] + cos * velocities[:, 1]
    vel = np.stack([vx, vy], axis=1)
    pos = positions + vel * dt - centers
    for axis in range(2):
        over = pos[:, axis] > halfwidth
        pos[over, axis] = 2 * halfwidth - pos[over, axis]
        vel[over, axis] = -vel[over, axis]
        under = pos[:, axis] < -halfwidth
        pos[under, axis] = -2 * halfwidth - pos[under, axis]
        vel[under, axis] = -vel[under, axis]
    return pos + centers, vel


class World:
    """Stateful scenario: call reset() once, then step() per scheduling epoch.

    All randomness derives from (seed, step index) so a rerun with the same
    seed and action sequence reproduces every draw bit for bit.
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.seed = int(seed)
        self.du_xy = du_positions(cfg.n_dus, cfg.inter_site_m)
        self.halfwidth = area_halfwidth(cfg)
        counts = cfg.ue_counts()
        self.du_of_ue = np.repeat(np.arange(cfg.n_dus), counts)
        self.area_center = self.du_xy[self.du_of_ue]
        self.slice_of_ue = np.arange(cfg.n_ues) % cfg.n_slices
        # per (du, slice) rosters, ascending UE ids, fixed for the run
        self.rosters = [
            [
                np.nonzero((self.du_of_ue == d) & (self.slice_of_ue == l))[0]
                for l in range(cfg.n_slices)
            ]
            for d in range(cfg.n_dus)
        ]
        # mean packets per epoch feeding each UE's queue
        arrival = np.array([s.arrival_bps for s in cfg.slices])
        packet = np.array([s.packet_bits for s in cfg.slices])
        self._lam = arrival[self.slice_of_ue] * cfg.epoch_duration_s / packet[self.slice_of_ue]
        self._packet = packet[self.slice_of_ue]
        self._t = None

    def reset(self, seed=None):
        if seed is not None:
            self.seed = int(seed)
        cfg = self.cfg
        rng = np.random.default_rng([self.seed, _INIT_STREAM])
        offsets = rng.uniform(-self.halfwidth, self.halfwidth, size=(cfg.n_ues, 2))
        self.ue_xy = self.area_center + offsets
        speed = rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps, size=cfg.n_ues)
        heading = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_ues)
        self.ue_v = speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        self.backlog = np.zeros(cfg.n_ues)
        self.tracker = QosTracker(cfg.n_slices)
        self.qbar = np.full(cfg.n_slices, 0.5)
        self.prev_actions = np.full((cfg.n_dus, cfg.action_dim), 0.5)
        self._t = 0
        return self.states()

    def states(self):
        """Per-DU observation: slice qualities, own roster sizes, last action."""
        cfg = self.cfg
        out = np.zeros((cfg.n_dus, cfg.state_dim))
        for d in range(cfg.n_dus):
            counts = np.array([len(r) for r in self.rosters[d]], dtype=float)
            out[d] = np.concatenate([self.qbar, counts, self.prev_actions[d]])
        return out

    def _gain(self):
        d = np.linalg.norm(self.ue_xy[:, None, :] - self.du_xy[None, :, :], axis=2)
        d = np.maximum(d, 1.0)  # clamp inside 1 m to keep path loss finite
        return self.cfg.p_rb_watts * d ** (-self.cfg.path_loss_exp)

    def step(self, actions):
        """Apply one joint action (n_dus, 2K); returns (states, reward, done, info)."""
        cfg = self.cfg
        if self._t is None:
            raise ConfigError("call reset() before step()")
        if self._t >= cfg.episode_len:
            raise ConfigError("episode over, call reset()")
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (cfg.n_dus, cfg.action_dim):
            raise ActionProtocolError(
                f"expected actions of shape {(cfg.n_dus, cfg.action_dim)}, got {actions.shape}"
            )

        decoded = [decode_action(actions[d], cfg.n_slices, self.rosters[d]) for d in range(cfg.n_dus)]
        alloc = np.stack([dec.ue_of_rb for dec in decoded])
        rb_per_slice = np.stack([dec.rb_per_slice for dec in decoded])

        rng = np.random.default_rng([self.seed, _STEP_STREAM, self._t])
        h2 = rng.exponential(1.0, size=(cfg.n_subslots, cfg.n_dus, cfg.n_rbs, cfg.n_ues))
        gain = self._gain()
        rates = compute_rates(alloc, gain, h2, cfg.rb_bandwidth_hz, cfg.noise_rb_watts)

        arrivals = rng.poisson(self._lam) * self._packet
        served = rates.mean(axis=0) * cfg.epoch_duration_s
        self.backlog = np.maximum(self.backlog + arrivals - served, 0.0)

        kpis = compute_kpis(rates, self.backlog, self.slice_of_ue, cfg.slices, cfg.rate_floor_bps)
        qos = np.array(
            [slice_qos(s.qos_weights, normalize_kpis(kpis[l], s)) for l, s in enumerate(cfg.slices)]
        )
        self.qbar = self.tracker.update(qos)
        counts = np.array([(self.slice_of_ue == l).sum() for l in range(cfg.n_slices)])
        violations = np.array(
            [floor_violation(s, kpis[l], counts[l]) for l, s in enumerate(cfg.slices)]
        )
        overuse = float(np.maximum(rb_per_slice.sum(axis=1) - cfg.n_rbs, 0).sum())
        reward = compute_reward(self.qbar, cfg.alphas(), overuse, violations, cfg.zeta)

        info = {
            "kpis": kpis,
            "qos": qos,
            "qbar": self.qbar.copy(),
            "violations": violations,
            "rb_per_slice": rb_per_slice,
            "alloc": alloc,
            "rates": rates,
            "fading": h2,
            "gain": gain,
            "ue_xy": self.ue_xy.copy(),
            "backlog": self.backlog.copy(),
            "rb_overuse": overuse,
        }

        self.ue_xy, self.ue_v = advance_mobility(
            self.ue_xy, self.ue_v, cfg.epoch_duration_s, self.area_center, self.halfwidth,
            cfg.heading_offsets, rng,
        )
        self.prev_actions = actions.copy()
        self._t += 1
        done = self._t >= cfg.episode_len
        return self.states(), float(reward), done, info

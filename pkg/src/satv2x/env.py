"""Satellite-aided vehicular network as a partially observable multi-agent env.

Each step every vehicle picks a (mode, subchannel, power level) triple.
Modes are indexed ``RSU=0`` (V2I), ``SAT=1`` (V2S) and ``V2V=2``. Subchannels
``0..K^V-1`` form the shared terrestrial pool and ``K^V..K-1`` the dedicated
satellite pool. A vehicle carries one message of ``L`` bits; it stays silent
once the message is delivered.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, TextIO

import numpy as np

from . import channel as ch
from .config import RunConfig

log = logging.getLogger(__name__)

RSU, SAT, V2V = 0, 1, 2
MODES = ("V2I", "V2S", "V2V")
N_MODES = 3
OBS_DIM = 2 * N_MODES
TRACE_COLUMNS = ("episode", "t", "agent", "mode", "k", "P_dBm", "SINR", "C", "r")


class Action(NamedTuple):
    mode: int
    subchannel: int
    power_level: int


@dataclass
class VehicleState:
    id: int
    position: np.ndarray
    speed: float
    heading: np.ndarray
    v2v_peer: int
    load: float
    delivered: float

    @property
    def remaining(self) -> float:
        return max(self.load - self.delivered, 0.0)


@dataclass
class WorldState:
    t: int
    positions: np.ndarray  # [I, 2]
    speeds: np.ndarray  # [I]
    headings: np.ndarray  # [I, 2]
    peers: np.ndarray  # [I]
    load: np.ndarray  # [I] bits
    delivered: np.ndarray  # [I] bits
    shadow_rsu: np.ndarray  # [I, R] dB
    shadow_veh: np.ndarray  # [I, I] dB
    fast_rsu: np.ndarray  # [I, R, K^V]
    fast_veh: np.ndarray  # [I, I, K^V]
    prev_sinr: np.ndarray  # [I, 3]

    @property
    def remaining(self) -> np.ndarray:
        return np.maximum(self.load - self.delivered, 0.0)

    @property
    def completed(self) -> np.ndarray:
        return self.delivered >= self.load

    def vehicle(self, i: int) -> VehicleState:
        return VehicleState(i, self.positions[i].copy(), float(self.speeds[i]), self.headings[i].copy(),
                            int(self.peers[i]), float(self.load[i]), float(self.delivered[i]))


@dataclass(frozen=True)
class StepResult:
    rewards: np.ndarray
    global_reward: float
    utility: np.ndarray
    capacity: np.ndarray
    done: bool
    sinr: np.ndarray
    interference: np.ndarray
    transmitted: np.ndarray  # agent was active and the action was granted
    active: np.ndarray  # agent still had data at the start of the step
    violations: int = 0
    contention_losses: int = 0


class CommGraph(NamedTuple):
    """Neighbors within radius, nearest first, padded with -1 to ``max_neighbors``."""

    index: np.ndarray  # [I, N] int
    exists: np.ndarray  # [I, N] bool


class NeighborViews(NamedTuple):
    index: np.ndarray  # [I, N]
    shared: np.ndarray  # [I, N] bool, subset of graph.exists


# ---------------------------------------------------------------- scalar semantics

def reward(utility: float, remaining: float, load: float, w: float) -> float:
    return utility - w * remaining / load


def utility_pulse(delivered: float, delivered_prev: float, load: float) -> int:
    return int(delivered >= load > delivered_prev)


def episode_utility(delivered_final: float, load: float) -> int:
    return int(delivered_final >= load)


# ---------------------------------------------------------------- geometry

def rsu_lattice(n: int, width: float, height: float) -> np.ndarray:
    cols = max(1, int(round(np.sqrt(n * width / height))))
    rows = int(np.ceil(n / cols))
    xs = (np.arange(cols) + 0.5) * width / cols
    ys = (np.arange(rows) + 0.5) * height / rows
    grid = np.array([(x, y) for y in ys for x in xs])
    return grid[:n]


def place_vehicles(rng: np.random.Generator, n: int, cfg) -> tuple[np.ndarray, np.ndarray]:
    """Random positions on a rectangular road grid with axis-aligned headings."""
    nx = max(1, int(cfg.width // cfg.road_spacing))
    ny = max(1, int(cfg.height // cfg.road_spacing))
    road_x = (np.arange(nx) + 0.5) * cfg.width / nx  # vertical roads
    road_y = (np.arange(ny) + 0.5) * cfg.height / ny  # horizontal roads
    pos = np.empty((n, 2))
    head = np.empty((n, 2))
    for i in range(n):
        lane = rng.integers(cfg.lanes_per_direction)
        direction = rng.choice((-1.0, 1.0))
        offset = direction * (lane + 0.5) * cfg.lane_width
        if rng.random() < 0.5:
            pos[i] = (rng.uniform(0, cfg.width), road_y[rng.integers(ny)] + offset)
            head[i] = (direction, 0.0)
        else:
            pos[i] = (road_x[rng.integers(nx)] + offset, rng.uniform(0, cfg.height))
            head[i] = (0.0, direction)
    return pos, head


def advance_mobility(positions: np.ndarray, speeds: np.ndarray, headings: np.ndarray, dt: float,
                     width: float, height: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    new = positions + speeds[:, None] * headings * dt
    return np.mod(new, (width, height))


def pairwise_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))


def comm_graph(positions: np.ndarray, radius: float, max_neighbors: int) -> CommGraph:
    n = len(positions)
    d = pairwise_distance(positions, positions)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :max_neighbors]
    dsorted = np.take_along_axis(d, order, axis=1)
    exists = dsorted <= radius
    index = np.where(exists, order, -1)
    if index.shape[1] < max_neighbors:
        pad = max_neighbors - index.shape[1]
        index = np.pad(index, ((0, 0), (0, pad)), constant_values=-1)
        exists = np.pad(exists, ((0, 0), (0, pad)), constant_values=False)
    del n
    return CommGraph(index, exists)


def build_neighbor_views(graph: CommGraph, sharing: float, rng: np.random.Generator) -> NeighborViews:
    """Keep each existing edge independently with probability ``sharing``."""
    if not 0.0 <= sharing <= 1.0:
        raise ValueError("sharing level must be in [0, 1]")
    keep = rng.random(graph.exists.shape) < sharing
    return NeighborViews(graph.index, graph.exists & keep)


def shared_observations(views: NeighborViews, obs: np.ndarray) -> list[list[np.ndarray]]:
    """Per agent: its own observation followed by every neighbor observation it received."""
    out = []
    for i in range(len(obs)):
        nbrs = views.index[i][views.shared[i]]
        out.append([obs[i]] + [obs[j] for j in nbrs])
    return out


# ---------------------------------------------------------------- environment

class SatV2XEnv:
    def __init__(self, cfg: RunConfig, trace: TextIO | None = None):
        self.cfg = cfg
        self.sc = cfg.scenario
        self.link = cfg.link
        sc, lk = self.sc, self.link
        self.n_agents = sc.n_vehicles
        self.kv, self.ks = sc.n_terrestrial, sc.n_satellite
        self.n_subchannels = self.kv + self.ks
        self.rsu = rsu_lattice(sc.n_rsu, sc.width, sc.height)
        self.power_sets = [np.asarray(sc.power_v2i), np.asarray(sc.power_v2s), np.asarray(sc.power_v2v)]
        self.power_mw = [ch.dbm_to_mw(p) for p in self.power_sets]
        self.n_power_levels = max(len(p) for p in self.power_sets)
        self.noise_rsu = ch.noise_power(sc.bw_terrestrial, lk.noise_figure_bs, lk.noise_psd)
        self.noise_veh = ch.noise_power(sc.bw_terrestrial, lk.noise_figure_vehicle, lk.noise_psd)
        self.noise_sat = ch.noise_power(sc.bw_satellite, lk.noise_figure_sat, lk.noise_psd)
        self.g_sat = ch.satellite_gain(lk, ch.slant_range(lk.sat_altitude, lk.elevation_deg))
        self.ant_v2i = float(ch.db_to_linear(lk.antenna_gain_vehicle + lk.antenna_gain_bs))
        self.ant_v2v = float(ch.db_to_linear(2 * lk.antenna_gain_vehicle))
        self.dh_rsu = lk.antenna_height_bs - lk.antenna_height_vehicle
        self.rng = np.random.default_rng(0)
        self.state: WorldState | None = None
        self.trace = csv.writer(trace, lineterminator="\n") if trace is not None else None
        self.episode = -1
        if self.trace is not None:
            self.trace.writerow(TRACE_COLUMNS)

    # masks used by policies -------------------------------------------------
    def subchannel_mask(self, mode: int) -> np.ndarray:
        m = np.zeros(self.n_subchannels, bool)
        if mode == SAT:
            m[self.kv:] = True
        else:
            m[:self.kv] = True
        return m

    def power_mask(self, mode: int) -> np.ndarray:
        m = np.zeros(self.n_power_levels, bool)
        m[:len(self.power_sets[mode])] = True
        return m

    def mode_mask(self) -> np.ndarray:
        return np.array([True, True, self.sc.v2v_enabled])

    def is_feasible(self, a: Action) -> bool:
        if not 0 <= a.mode < N_MODES or not self.mode_mask()[a.mode]:
            return False
        if not 0 <= a.subchannel < self.n_subchannels or not 0 <= a.power_level < self.n_power_levels:
            return False
        return bool(self.subchannel_mask(a.mode)[a.subchannel] and self.power_mask(a.mode)[a.power_level])

    # lifecycle -------------------------------------------------------------
    def reset(self, seed: int | None = None) -> tuple[WorldState, np.ndarray]:
        sc, lk = self.sc, self.link
        self.episode += 1
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        rng = self.rng
        n, r = self.n_agents, len(self.rsu)
        pos, head = place_vehicles(rng, n, sc)
        speeds = rng.uniform(sc.speed_min, sc.speed_max, n) if sc.mobility else np.zeros(n)
        d = pairwise_distance(pos, pos)
        np.fill_diagonal(d, np.inf)
        peers = np.argmin(d, axis=1) if n > 1 else np.zeros(n, int)
        sh = rng.normal(0.0, lk.shadowing_std, (n, n))
        shadow_veh = np.triu(sh, 1) + np.triu(sh, 1).T
        self.state = WorldState(
            t=0, positions=pos, speeds=speeds, headings=head, peers=peers,
            load=np.full(n, sc.load_bits), delivered=np.zeros(n),
            shadow_rsu=rng.normal(0.0, lk.shadowing_std, (n, r)), shadow_veh=shadow_veh,
            fast_rsu=rng.exponential(1.0, (n, r, self.kv)), fast_veh=rng.exponential(1.0, (n, n, self.kv)),
            prev_sinr=np.zeros((n, N_MODES)),
        )
        return self.state, self.observe(self.state)

    def observe(self, state: WorldState) -> np.ndarray:
        """Raw observation rows: SINR of the previous step per mode, then remaining bits per mode."""
        rem = state.remaining
        return np.concatenate([state.prev_sinr, np.repeat(rem[:, None], N_MODES, axis=1)], axis=1)

    def graph(self, state: WorldState | None = None) -> CommGraph:
        state = state or self.state
        return comm_graph(state.positions, self.sc.neighbor_radius, self.sc.max_neighbors)

    def serving_rsu(self, state: WorldState) -> np.ndarray:
        return np.argmin(pairwise_distance(state.positions, self.rsu), axis=1)

    def link_gains(self, state: WorldState) -> tuple[np.ndarray, np.ndarray]:
        """Gains vehicle j -> RSU r and vehicle j -> vehicle m on every terrestrial subchannel."""
        lk, sc = self.link, self.sc
        d_rsu = np.sqrt(pairwise_distance(state.positions, self.rsu) ** 2 + self.dh_rsu ** 2)
        d_veh = np.maximum(pairwise_distance(state.positions, state.positions), sc.min_distance)
        g_rsu = ch.terrestrial_gain(d_rsu[..., None], lk.pathloss_exponent_v2i,
                                    ch.FadingDraw(state.shadow_rsu[..., None], state.fast_rsu)) * self.ant_v2i
        g_veh = ch.terrestrial_gain(d_veh[..., None], lk.pathloss_exponent_v2v,
                                    ch.FadingDraw(state.shadow_veh[..., None], state.fast_veh)) * self.ant_v2v
        idx = np.arange(len(d_veh))
        g_veh[idx, idx, :] = 0.0
        return g_rsu, g_veh

    def step(self, actions) -> tuple[WorldState, np.ndarray, StepResult]:
        st = self.state
        sc = self.sc
        n = self.n_agents
        acts = np.asarray(actions, dtype=np.int64).reshape(n, 3)
        mode, sub, plev = acts[:, 0], acts[:, 1], acts[:, 2]
        active = ~st.completed
        feasible = np.array([self.is_feasible(Action(*a)) for a in acts])
        violations = int(np.sum(active & ~feasible))
        if violations:
            log.debug("t=%d: %d infeasible action(s) treated as zero transmission", st.t, violations)
        tx = active & feasible
        power = np.zeros(n)
        for m in range(N_MODES):
            sel = tx & (mode == m)
            power[sel] = self.power_mw[m][plev[sel]]

        # dedicated satellite subchannels: lowest agent id wins a contested one
        lost = 0
        sat_tx = tx & (mode == SAT)
        seen: set[int] = set()
        for i in np.flatnonzero(sat_tx):
            if sub[i] in seen:
                sat_tx[i] = False
                tx[i] = False
                lost += 1
            else:
                seen.add(int(sub[i]))
        if lost:
            log.debug("t=%d: %d satellite subchannel contention loss(es)", st.t, lost)

        g_rsu, g_veh = self.link_gains(st)
        serving = self.serving_rsu(st)
        terr = tx & (mode != SAT)
        ksafe = np.where(mode == SAT, 0, np.clip(sub, 0, self.kv - 1))
        # cross[i, j]: gain from j to the receiver of i on i's subchannel
        cross_rsu = g_rsu[:, serving, ksafe].T  # [i, j]
        cross_veh = g_veh[:, st.peers, ksafe].T
        cross = np.where((mode == RSU)[:, None], cross_rsu, cross_veh)
        interference = ch.interference_vector(np.where(terr, sub, -1), power, cross, terr)
        interference[~terr] = 0.0
        assert np.all(interference[sat_tx] == 0.0)

        signal = np.zeros(n)
        signal[terr] = cross[terr, np.flatnonzero(terr)]
        noise = np.where(mode == RSU, self.noise_rsu, self.noise_veh)
        bw = np.where(mode == SAT, sc.bw_satellite, sc.bw_terrestrial)
        signal[sat_tx] = self.g_sat
        noise = np.where(mode == SAT, self.noise_sat, noise)
        sinr = np.where(tx, ch.sinr(power, signal, noise, interference), 0.0)
        cap = np.where(tx, bw * np.log2(1.0 + sinr), 0.0)

        prev = st.delivered
        delivered = prev + cap * sc.dt
        util = ((delivered >= st.load) & (st.load > prev)).astype(float)
        remaining = np.maximum(st.load - delivered, 0.0)
        rewards = util - sc.penalty_w * remaining / st.load

        obs_sinr = self._observed_sinr(st, mode, sub, tx, active, feasible, sinr, power, g_rsu, g_veh,
                                       serving, terr)

        t_next = st.t + 1
        rng = self.rng
        positions = (advance_mobility(st.positions, st.speeds, st.headings, sc.dt, sc.width, sc.height)
                     if sc.mobility else st.positions.copy())
        nxt = WorldState(
            t=t_next, positions=positions, speeds=st.speeds, headings=st.headings, peers=st.peers,
            load=st.load, delivered=delivered, shadow_rsu=st.shadow_rsu, shadow_veh=st.shadow_veh,
            fast_rsu=rng.exponential(1.0, st.fast_rsu.shape), fast_veh=rng.exponential(1.0, st.fast_veh.shape),
            prev_sinr=obs_sinr,
        )
        self.state = nxt
        res = StepResult(rewards=rewards, global_reward=float(np.mean(rewards)), utility=util, capacity=cap,
                         done=t_next >= sc.horizon, sinr=sinr, interference=interference, transmitted=tx,
                         active=active, violations=violations, contention_losses=lost)
        if self.trace is not None:
            for i in range(n):
                p_dbm = self.power_sets[mode[i]][plev[i]] if feasible[i] else float("nan")
                self.trace.writerow((self.episode, st.t, i, MODES[mode[i]] if 0 <= mode[i] < 3 else "?", int(sub[i]),
                                     p_dbm, sinr[i], cap[i], rewards[i]))
        return nxt, self.observe(nxt), res

    def _observed_sinr(self, st, mode, sub, tx, active, feasible, sinr, power, g_rsu, g_veh, serving, terr):
        """Achieved SINR for the mode used; hypothetical minimum-power SINR for the others."""
        n = self.n_agents
        onehot = np.zeros((n, self.kv))
        ti = np.flatnonzero(terr)
        onehot[ti, sub[ti]] = power[ti]  # transmit power per (j, k)
        # interference at each agent's serving RSU and at its peer, per subchannel, excluding itself
        i_rsu = np.einsum("jk,jik->ik", onehot, g_rsu[:, serving, :])
        i_rsu -= onehot * g_rsu[np.arange(n), serving, :]
        i_veh = np.einsum("jk,jik->ik", onehot, g_veh[:, st.peers, :])
        i_veh -= onehot * g_veh[np.arange(n), st.peers, :]
        gi = g_rsu[np.arange(n), serving, :]
        gv = g_veh[np.arange(n), st.peers, :]
        hyp_rsu = self.power_mw[RSU].min() * gi / (self.noise_rsu + i_rsu)
        hyp_veh = self.power_mw[V2V].min() * gv / (self.noise_veh + i_veh)
        used_terr = terr | (active & feasible & (mode != SAT))
        kk = np.clip(sub, 0, self.kv - 1)
        out = np.empty((n, N_MODES))
        rows = np.arange(n)
        out[:, RSU] = np.where(used_terr, hyp_rsu[rows, kk], hyp_rsu.mean(axis=1))
        out[:, V2V] = np.where(used_terr, hyp_veh[rows, kk], hyp_veh.mean(axis=1))
        out[:, SAT] = self.power_mw[SAT].min() * self.g_sat / self.noise_sat
        attempted = active & (mode >= 0) & (mode < N_MODES)
        m_ok = np.clip(mode, 0, N_MODES - 1)
        out[rows[attempted], m_ok[attempted]] = np.where(tx, sinr, 0.0)[attempted]
        return out

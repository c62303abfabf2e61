"""2D push-to-goal environment with a scripted expert and seeded disturbances.

An agent disc pushes a block disc toward a goal inside the unit square.
Dynamics are analytic: the agent moves by a clipped velocity command, and
when it overlaps the block the block is displaced along the contact
normal until the discs separate.  Disturbances are either a constant
block drift with a per-episode direction or temporally correlated
(Ornstein-Uhlenbeck) actuator noise, both scaled by a level ``p``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PERTURB_KINDS = ("block_drift", "actuator_noise")

# Ornstein-Uhlenbeck actuator noise: mean reversion and the kick scale that
# makes the stationary per-dimension std equal to the level p.
_OU_DECAY = 0.9
_OU_KICK = np.sqrt(1.0 - _OU_DECAY**2)


@dataclass(frozen=True)
class PushEnvConfig:
    max_steps: int = 300
    contact_radius: float = 0.05
    goal_radius: float = 0.05
    max_speed: float = 0.02
    success_hold: int = 5


@dataclass
class EnvState:
    agent: np.ndarray
    block: np.ndarray
    goal: np.ndarray
    step_index: int = 0
    hold: int = 0
    initial_dist: float = 0.0
    done: bool = False
    success: bool = False
    aborted: bool = False

    def copy(self) -> "EnvState":
        return EnvState(
            self.agent.copy(), self.block.copy(), self.goal.copy(),
            self.step_index, self.hold, self.initial_dist,
            self.done, self.success, self.aborted,
        )


@dataclass
class Perturbation:
    p: float = 0.0
    kind: str = "block_drift"
    drift_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    ou_state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.p < 0:
            raise ConfigError(f"perturbation level must be >= 0, got {self.p}")
        if self.kind not in PERTURB_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")


def sample_drift_direction(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(theta), np.sin(theta)])


def make_perturbation(p: float, kind: str, rng: np.random.Generator) -> Perturbation:
    """Per-episode disturbance; the drift direction is fixed at episode start."""
    return Perturbation(p=p, kind=kind, drift_dir=sample_drift_direction(rng), rng=rng)


def sample_initial_state(rng: np.random.Generator, cfg: PushEnvConfig) -> EnvState:
    """Seeded episode layout; keeps block clear of walls and the task feasible."""
    agent = rng.uniform(0.05, 0.95, 2)
    block = rng.uniform(0.25, 0.75, 2)
    while True:
        goal = rng.uniform(0.10, 0.90, 2)
        d = goal - block
        dist = np.sqrt(d[0] * d[0] + d[1] * d[1])
        if 0.2 <= dist <= 0.55:
            break
    while True:
        d = block - agent
        if np.sqrt(d[0] * d[0] + d[1] * d[1]) >= 1.5 * cfg.contact_radius:
            break
        agent = rng.uniform(0.05, 0.95, 2)
    state = EnvState(agent=agent, block=block, goal=goal)
    g = block - goal
    state.initial_dist = np.sqrt(g[0] * g[0] + g[1] * g[1])
    return state


def obs_vec(state: EnvState) -> np.ndarray:
    """Observation = [agent | block | goal]."""
    return np.concatenate([state.agent, state.block, state.goal])


def coverage(state: EnvState) -> float:
    """Distance-based score in [0, 1]: 1 at the goal, 0 at the initial distance."""
    g = state.block - state.goal
    dist = np.sqrt(g[0] * g[0] + g[1] * g[1])
    return float(max(0.0, 1.0 - dist / state.initial_dist))


def env_step(
    state: EnvState,
    action: np.ndarray,
    perturb: Perturbation,
    cfg: PushEnvConfig,
) -> tuple[EnvState, bool, float]:
    """Advance one step in place; returns (state, done, current coverage)."""
    a = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        state.aborted = True
        state.done = True
        state.success = False
        return state, True, coverage(state)
    move = np.clip(a, -1.0, 1.0) * cfg.max_speed
    if perturb.kind == "actuator_noise" and perturb.p > 0:
        perturb.ou_state *= _OU_DECAY
        perturb.ou_state += perturb.p * _OU_KICK * perturb.rng.standard_normal(2)
        move = move + perturb.ou_state
    state.agent = np.clip(state.agent + move, 0.0, 1.0)

    d = state.block - state.agent
    dist = np.sqrt(d[0] * d[0] + d[1] * d[1])
    if dist < cfg.contact_radius:
        normal = d / dist if dist > 1e-9 else np.array([1.0, 0.0])
        state.block = state.agent + normal * cfg.contact_radius
    if perturb.kind == "block_drift" and perturb.p > 0:
        state.block = state.block + perturb.p * perturb.drift_dir
    state.block = np.clip(state.block, 0.0, 1.0)

    state.step_index += 1
    g = state.block - state.goal
    goal_dist = np.sqrt(g[0] * g[0] + g[1] * g[1])
    state.hold = state.hold + 1 if goal_dist < cfg.goal_radius else 0
    state.success = state.hold >= cfg.success_hold
    state.done = state.success or state.step_index >= cfg.max_steps
    return state, state.done, coverage(state)


def _cap(v: np.ndarray) -> np.ndarray:
    """Scale a velocity command into the unit disc, preserving direction."""
    n = np.sqrt(v[0] * v[0] + v[1] * v[1])
    return v / n if n > 1.0 else v


def scripted_expert(state: EnvState, cfg: PushEnvConfig) -> np.ndarray:
    """Two-phase proportional pusher: line up behind the block, then push.

    Output is a velocity command inside the unit disc (so always inside the
    action box).  The approach phase detours around the block when the
    straight path would disturb it.
    """
    to_goal = state.goal - state.block
    dg = np.sqrt(to_goal[0] ** 2 + to_goal[1] ** 2)
    if dg < 0.2 * cfg.goal_radius:
        return np.zeros(2)
    push_dir = to_goal / dg
    standoff = 1.15 * cfg.contact_radius
    to_block = state.block - state.agent
    dab = np.sqrt(to_block[0] ** 2 + to_block[1] ** 2)
    align = float(np.dot(to_block, push_dir) / dab) if dab > 1e-9 else -1.0

    if align > 0.92 and dab < standoff + 0.02:
        # push phase: track a point well inside contact range so the block is
        # driven at full speed; the contact resolution caps the actual push
        desired = state.block - push_dir * (0.5 * cfg.contact_radius)
        return _cap((desired - state.agent) / cfg.max_speed)

    behind = state.block - push_dir * standoff
    to_behind = behind - state.agent
    db = np.sqrt(to_behind[0] ** 2 + to_behind[1] ** 2)
    if db < 1e-9:
        return np.zeros(2)
    dir_b = to_behind / db
    # detour if the straight run to the lineup point would hit the block
    along = float(np.dot(to_block, dir_b))
    if 0.0 < along < db + standoff:
        miss = to_block - dir_b * along
        if np.sqrt(miss[0] ** 2 + miss[1] ** 2) < cfg.contact_radius + 0.01 and dab < db:
            radial_in = to_block / dab
            t1 = np.array([-radial_in[1], radial_in[0]])
            tang = t1 if np.dot(t1, dir_b) >= np.dot(-t1, dir_b) else -t1
            return _cap(tang - 0.5 * radial_in)
    return _cap(to_behind / cfg.max_speed)


class ObservationWindow:
    """Recent observations, newest last, with access to earlier windows.

    Before ``history_len + lookback`` observations exist, the buffer is
    padded by repeating the first observation, so the window one step back
    equals the current window at episode start.
    """

    def __init__(self, first_obs: np.ndarray, history_len: int = 2, lookback: int = 1):
        if history_len < 1 or lookback < 0:
            raise ConfigError("history_len must be >= 1 and lookback >= 0")
        self.history_len = history_len
        self.lookback = lookback
        cap = history_len + lookback
        self._buf: deque[np.ndarray] = deque(maxlen=cap)
        for _ in range(cap):
            self._buf.append(np.asarray(first_obs, dtype=np.float64))

    def push(self, obs: np.ndarray) -> None:
        self._buf.append(np.asarray(obs, dtype=np.float64))

    def latest(self) -> np.ndarray:
        return self._buf[-1]

    def stacked(self, delta: int = 0) -> np.ndarray:
        """Flattened window ending ``delta`` steps in the past, oldest first."""
        if not 0 <= delta <= self.lookback:
            raise ConfigError(f"delta {delta} outside [0, {self.lookback}]")
        items = list(self._buf)
        end = len(items) - delta
        return np.concatenate(items[end - self.history_len : end])


class VecPushEnv:
    """Lockstep batch of independent episodes sharing one config.

    Row-wise arithmetic matches :func:`env_step` exactly, so a batch of one
    reproduces the scalar environment bit for bit.
    """

    def __init__(
        self,
        cfg: PushEnvConfig,
        env_rngs: list[np.random.Generator],
        perturb_rngs: list[np.random.Generator],
        p: float,
        kind: str = "block_drift",
    ):
        if kind not in PERTURB_KINDS:
            raise ConfigError(f"unknown perturbation kind {kind!r}")
        self.cfg = cfg
        self.n = len(env_rngs)
        self.p = p
        self.kind = kind
        states = [sample_initial_state(r, cfg) for r in env_rngs]
        self.agent = np.stack([s.agent for s in states])
        self.block = np.stack([s.block for s in states])
        self.goal = np.stack([s.goal for s in states])
        self.initial_dist = np.array([s.initial_dist for s in states])
        self.drift_dir = np.stack([sample_drift_direction(r) for r in perturb_rngs])
        self.perturb_rngs = perturb_rngs
        self.ou = np.zeros((self.n, 2))
        self.step_index = np.zeros(self.n, dtype=int)
        self.hold = np.zeros(self.n, dtype=int)
        self.done = np.zeros(self.n, dtype=bool)
        self.success = np.zeros(self.n, dtype=bool)
        self.aborted = np.zeros(self.n, dtype=bool)

    def obs(self, idx: np.ndarray) -> np.ndarray:
        return np.concatenate([self.agent[idx], self.block[idx], self.goal[idx]], axis=1)

    def alive_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.done)

    def step(self, actions: np.ndarray, idx: np.ndarray) -> None:
        """Advance the episodes in ``idx`` by one step with the given actions."""
        actions = np.asarray(actions, dtype=np.float64)
        bad = ~np.all(np.isfinite(actions), axis=1)
        if bad.any():
            dead = idx[bad]
            self.aborted[dead] = True
            self.done[dead] = True
            idx = idx[~bad]
            actions = actions[~bad]
            if idx.size == 0:
                return
        move = np.clip(actions, -1.0, 1.0) * self.cfg.max_speed
        if self.kind == "actuator_noise" and self.p > 0:
            kick = np.stack([self.perturb_rngs[i].standard_normal(2) for i in idx])
            self.ou[idx] = self.ou[idx] * _OU_DECAY + self.p * _OU_KICK * kick
            move = move + self.ou[idx]
        agent = np.clip(self.agent[idx] + move, 0.0, 1.0)

        block = self.block[idx]
        d = block - agent
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
        contact = dist < self.cfg.contact_radius
        if contact.any():
            dc = d[contact]
            distc = dist[contact][:, None]
            normal = dc / np.maximum(distc, 1e-300)
            normal[distc.ravel() <= 1e-9] = np.array([1.0, 0.0])
            block = block.copy()
            block[contact] = agent[contact] + normal * self.cfg.contact_radius
        if self.kind == "block_drift" and self.p > 0:
            block = block + self.p * self.drift_dir[idx]
        block = np.clip(block, 0.0, 1.0)

        self.agent[idx] = agent
        self.block[idx] = block
        self.step_index[idx] += 1
        g = block - self.goal[idx]
        goal_dist = np.sqrt(g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1])
        in_goal = goal_dist < self.cfg.goal_radius
        self.hold[idx] = np.where(in_goal, self.hold[idx] + 1, 0)
        succ = self.hold[idx] >= self.cfg.success_hold
        self.success[idx] = succ
        self.done[idx] = succ | (self.step_index[idx] >= self.cfg.max_steps)

    def coverage(self) -> np.ndarray:
        g = self.block - self.goal
        dist = np.sqrt(g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1])
        return np.maximum(0.0, 1.0 - dist / self.initial_dist)

"""Expert demonstration generation, normalization stats, and the dataset file.

Dataset files are binary: magic ``DEMO``, a u32 format version, a header of
u32 dims (obs_dim, action_dim, num_episodes), the per-dimension
normalization bounds as little-endian float64 arrays (obs_lo, obs_hi,
act_lo, act_hi), then each episode as: seed u64, length u32, success u32,
observations (length x obs_dim) and actions (length x action_dim) as
little-endian float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import EnvState, Perturbation, PushEnvConfig, env_step, obs_vec, sample_initial_state, scripted_expert
from .errors import ConfigError, DataError

_MAGIC = b"DEMO"
_VERSION = 1


@dataclass
class Demonstration:
    observations: np.ndarray  # (T, obs_dim), observation before each action
    actions: np.ndarray       # (T, action_dim)
    seed: int
    success: bool


@dataclass(frozen=True)
class NormStats:
    """Per-dimension min/max bounds mapping data into [-1, 1]."""

    obs_lo: np.ndarray
    obs_hi: np.ndarray
    act_lo: np.ndarray
    act_hi: np.ndarray

    def norm_obs(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.obs_lo) / (self.obs_hi - self.obs_lo) - 1.0

    def norm_act(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * (a - self.act_lo) / (self.act_hi - self.act_lo) - 1.0

    def denorm_act(self, a: np.ndarray) -> np.ndarray:
        return (a + 1.0) / 2.0 * (self.act_hi - self.act_lo) + self.act_lo

    def to_dict(self) -> dict:
        return {
            "obs_lo": self.obs_lo.tolist(),
            "obs_hi": self.obs_hi.tolist(),
            "act_lo": self.act_lo.tolist(),
            "act_hi": self.act_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("obs_lo", "obs_hi", "act_lo", "act_hi")))


def rollout_expert(
    env_cfg: PushEnvConfig,
    rng: np.random.Generator,
    p: float = 0.0,
    kind: str = "block_drift",
    perturb_rng: np.random.Generator | None = None,
) -> Demonstration:
    """Roll the scripted expert for one episode and record the trajectory."""
    state = sample_initial_state(rng, env_cfg)
    if perturb_rng is None:
        perturb_rng = rng
    if p > 0:
        from .env import make_perturbation

        perturb = make_perturbation(p, kind, perturb_rng)
    else:
        perturb = Perturbation(p=0.0, kind=kind)
    observations, actions = [], []
    done = False
    while not done:
        observations.append(obs_vec(state))
        action = scripted_expert(state, env_cfg)
        actions.append(action)
        state, done, _ = env_step(state, action, perturb, env_cfg)
    return Demonstration(
        observations=np.array(observations),
        actions=np.array(actions),
        seed=0,
        success=state.success,
    )


def generate_demonstrations(
    num_episodes: int,
    seed: int,
    env_cfg: PushEnvConfig,
    max_attempts: int | None = None,
) -> list[Demonstration]:
    """Collect successful expert episodes at the static (p=0) setting."""
    if num_episodes < 1:
        raise ConfigError("need at least one demonstration episode")
    if max_attempts is None:
        max_attempts = 3 * num_episodes
    demos: list[Demonstration] = []
    attempt = 0
    while len(demos) < num_episodes and attempt < max_attempts:
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        demo = rollout_expert(env_cfg, rng)
        demo.seed = attempt
        attempt += 1
        if demo.success:
            demos.append(demo)
    if len(demos) < num_episodes:
        raise DataError(
            f"only {len(demos)} successful expert episodes in {attempt} attempts"
        )
    return demos


def compute_stats(demos: list[Demonstration]) -> NormStats:
    obs = np.concatenate([d.observations for d in demos])
    act = np.concatenate([d.actions for d in demos])

    def bounds(x):
        lo, hi = x.min(axis=0), x.max(axis=0)
        narrow = hi - lo < 1e-6
        lo = np.where(narrow, lo - 0.5, lo)
        hi = np.where(narrow, hi + 0.5, hi)
        return lo, hi

    obs_lo, obs_hi = bounds(obs)
    act_lo, act_hi = bounds(act)
    return NormStats(obs_lo, obs_hi, act_lo, act_hi)


def save_demos(path: str | Path, demos: list[Demonstration], stats: NormStats) -> None:
    obs_dim = demos[0].observations.shape[1]
    act_dim = demos[0].actions.shape[1]
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<3I", obs_dim, act_dim, len(demos))
    for arr in (stats.obs_lo, stats.obs_hi, stats.act_lo, stats.act_hi):
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    for d in demos:
        blob += struct.pack("<QII", d.seed, d.observations.shape[0], int(d.success))
        blob += np.ascontiguousarray(d.observations, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(d.actions, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_demos(path: str | Path) -> tuple[list[Demonstration], NormStats]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a dataset file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    obs_dim, act_dim, n_episodes = struct.unpack_from("<3I", raw, 8)
    off = 20
    arrays = []
    for dim in (obs_dim, obs_dim, act_dim, act_dim):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy())
        off += 8 * dim
    stats = NormStats(*arrays)
    demos = []
    for _ in range(n_episodes):
        seed, length, success = struct.unpack_from("<QII", raw, off)
        off += 16
        obs = np.frombuffer(raw, dtype="<f8", count=length * obs_dim, offset=off).reshape(length, obs_dim).copy()
        off += 8 * length * obs_dim
        act = np.frombuffer(raw, dtype="<f8", count=length * act_dim, offset=off).reshape(length, act_dim).copy()
        off += 8 * length * act_dim
        demos.append(Demonstration(obs, act, seed, bool(success)))
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in dataset")
    return demos, stats


def training_pairs(
    demos: list[Demonstration],
    horizon: int,
    history_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Slice episodes into (stacked window, H-step action chunk) pairs.

    Windows are repetition-padded at episode start; chunks running past the
    episode end repeat the last action.
    """
    windows, chunks = [], []
    for d in demos:
        T = d.observations.shape[0]
        for t in range(T):
            rows = [d.observations[max(t - (history_len - 1) + j, 0)] for j in range(history_len)]
            windows.append(np.concatenate(rows))
            chunk = d.actions[t : t + horizon]
            if chunk.shape[0] < horizon:
                pad = np.repeat(d.actions[-1:], horizon - chunk.shape[0], axis=0)
                chunk = np.concatenate([chunk, pad])
            chunks.append(chunk)
    return np.array(windows), np.array(chunks)

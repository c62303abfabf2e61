"""Conditional MLP noise-prediction network and its checkpoint format.

The network predicts the noise injected into a flattened action chunk,
conditioned on a stacked observation window (plus a null-conditioning flag
used for classifier-free guidance) and a sinusoidal embedding of the
diffusion step.  All arithmetic is float64.

Checkpoint files are binary: magic ``CHKF``, a u32 format version, the
architecture dimensions as little-endian u32 values
(horizon, action_dim, obs_dim, history_len, time_embed_dim, number of
hidden layers, then each hidden width), followed by every parameter array
as little-endian float64 in declaration order (w0, b0, w1, b1, ...).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, silu
from .errors import ConfigError

_MAGIC = b"CHKF"
_VERSION = 1


def time_embedding(k, dim: int) -> np.ndarray:
    """Sinusoidal embedding of diffusion step ``k``.

    ``k`` may be a scalar or a 1-D array (one step per batch row) and may be
    fractional.  Layout is interleaved [sin(k*w0), cos(k*w0), sin(k*w1), ...]
    with geometrically decreasing frequencies, so ``dim`` must be even.
    """
    if dim % 2 != 0 or dim < 2:
        raise ConfigError(f"time embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    k = np.asarray(k, dtype=np.float64)
    angles = k[..., None] * freqs
    out = np.empty(angles.shape[:-1] + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class DenoiserArch:
    """Shape of the denoiser MLP; fully determines the parameter count."""

    horizon: int = 16
    action_dim: int = 2
    obs_dim: int = 6
    history_len: int = 2
    time_embed_dim: int = 16
    hidden_sizes: tuple[int, ...] = (256, 256, 256)

    @property
    def chunk_dim(self) -> int:
        return self.horizon * self.action_dim

    @property
    def cond_dim(self) -> int:
        # stacked observation window plus one null-conditioning flag
        return self.obs_dim * self.history_len + 1

    @property
    def input_dim(self) -> int:
        return self.chunk_dim + self.cond_dim + self.time_embed_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_sizes, self.chunk_dim]
        return list(zip(dims[:-1], dims[1:]))


class ForwardCounter:
    """Counts network invocations and total batch rows; diagnostics only."""

    __slots__ = ("calls", "rows")

    def __init__(self):
        self.calls = 0
        self.rows = 0

    def reset(self) -> None:
        self.calls = 0
        self.rows = 0


class MLPDenoiser:
    """Noise predictor: [chunk | condition | step embedding] -> predicted noise."""

    def __init__(self, arch: DenoiserArch, params: list[tuple[Tensor, Tensor]]):
        self.arch = arch
        self.params = params
        self.counter = ForwardCounter()
        self._emb_cache: dict[int, np.ndarray] = {}

    @classmethod
    def init(cls, arch: DenoiserArch, seed: int) -> "MLPDenoiser":
        """Scaled-uniform fan-in initialization, deterministic per seed."""
        rng = np.random.default_rng(seed)
        params = []
        for i, (fan_in, fan_out) in enumerate(arch.layer_dims()):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            params.append(
                (
                    Tensor(w, requires_grad=True, name=f"w{i}"),
                    Tensor(b, requires_grad=True, name=f"b{i}"),
                )
            )
        return cls(arch, params)

    def named_params(self) -> dict[str, Tensor]:
        return {t.name: t for pair in self.params for t in pair}

    def zero_grads(self) -> None:
        for pair in self.params:
            for t in pair:
                t.zero_grad()

    def null_cond(self, batch: int) -> np.ndarray:
        """All-zeros observation with the null flag set."""
        cond = np.zeros((batch, self.arch.cond_dim))
        cond[:, -1] = 1.0
        return cond

    def _embed(self, k, batch: int) -> np.ndarray:
        if np.isscalar(k) or np.asarray(k).ndim == 0:
            ki = float(k)
            if ki.is_integer():
                key = int(ki)
                emb = self._emb_cache.get(key)
                if emb is None:
                    emb = time_embedding(ki, self.arch.time_embed_dim)
                    self._emb_cache[key] = emb
            else:
                emb = time_embedding(ki, self.arch.time_embed_dim)
            return np.broadcast_to(emb, (batch, self.arch.time_embed_dim))
        k = np.asarray(k, dtype=np.float64)
        if k.shape != (batch,):
            raise ConfigError(f"per-row steps must have shape ({batch},), got {k.shape}")
        return time_embedding(k, self.arch.time_embed_dim)

    def forward(self, noisy: np.ndarray, cond: np.ndarray, k, record: bool = False):
        """Predict the injected noise for each batch row.

        ``noisy`` is (B, chunk_dim), ``cond`` is (B, cond_dim), ``k`` is a
        scalar or per-row array of diffusion steps.  With ``record=True`` the
        result is a graph-attached :class:`Tensor` suitable for ``backward``;
        otherwise a plain array.  Inference mutates nothing but the
        diagnostics counter.
        """
        noisy = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        batch = noisy.shape[0]
        if noisy.shape[1] != self.arch.chunk_dim:
            raise ConfigError(
                f"chunk dim mismatch: expected {self.arch.chunk_dim}, got {noisy.shape[1]}"
            )
        if cond.shape != (batch, self.arch.cond_dim):
            raise ConfigError(
                f"condition shape mismatch: expected ({batch}, {self.arch.cond_dim}), got {cond.shape}"
            )
        self.counter.calls += 1
        self.counter.rows += batch

        emb = self._embed(k, batch)
        x = np.concatenate([noisy, cond, emb], axis=1)
        n_layers = len(self.params)
        if record:
            h = Tensor(x)
            for i, (w, b) in enumerate(self.params):
                h = h @ w + b
                if i < n_layers - 1:
                    h = silu(h)
            return h
        for i, (w, b) in enumerate(self.params):
            x = x @ w.data + b.data
            if i < n_layers - 1:
                x = silu(x)
        return x

    # -- checkpoint io -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        a = self.arch
        dims = [a.horizon, a.action_dim, a.obs_dim, a.history_len, a.time_embed_dim,
                len(a.hidden_sizes), *a.hidden_sizes]
        blob = bytearray()
        blob += _MAGIC
        blob += struct.pack("<I", _VERSION)
        blob += struct.pack(f"<{len(dims)}I", *dims)
        for w, b in self.params:
            blob += np.ascontiguousarray(w.data, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(b.data, dtype="<f8").tobytes()
        Path(path).write_bytes(bytes(blob))

    @classmethod
    def load(cls, path: str | Path) -> "MLPDenoiser":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        off = 8
        horizon, action_dim, obs_dim, history_len, ted, n_hidden = struct.unpack_from("<6I", raw, off)
        off += 24
        hidden = struct.unpack_from(f"<{n_hidden}I", raw, off)
        off += 4 * n_hidden
        arch = DenoiserArch(horizon, action_dim, obs_dim, history_len, ted, tuple(hidden))
        params = []
        for i, (fan_in, fan_out) in enumerate(arch.layer_dims()):
            w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
            off += 8 * fan_in * fan_out
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
            off += 8 * fan_out
            params.append(
                (
                    Tensor(w.copy(), requires_grad=True, name=f"w{i}"),
                    Tensor(b.copy(), requires_grad=True, name=f"b{i}"),
                )
            )
        if off != len(raw):
            raise ConfigError(f"{path}: trailing bytes in checkpoint")
        return cls(arch, params)

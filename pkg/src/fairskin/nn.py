"""Minimal dense-network core shared by the denoiser and the classifier.

Parameters live in one flat float64 vector so the optimizer and the
gradient checker can treat every model the same way.  Layer weights and
biases are reshaped views into that vector; in-place updates to the flat
vector are immediately visible to the forward pass.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .numerics import Rng


class Mlp:
    """Fully connected network with tanh hidden layers and a linear head.

    ``sizes`` lists layer widths input-first, e.g. ``(320, 256, 256, 256)``.
    """

    def __init__(self, sizes: tuple[int, ...], theta: np.ndarray):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output layer")
        if theta.shape != (self.n_params(self.sizes),):
            raise ValueError(
                f"theta has {theta.shape} entries, expected {self.n_params(self.sizes)}"
            )
        self.theta = theta
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        ofs = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(theta[ofs : ofs + n_in * n_out].reshape(n_in, n_out))
            ofs += n_in * n_out
            self.biases.append(theta[ofs : ofs + n_out])
            ofs += n_out

    @staticmethod
    def n_params(sizes: tuple[int, ...]) -> int:
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    @staticmethod
    def init_theta(sizes: tuple[int, ...], rng: Rng) -> np.ndarray:
        """Glorot-style init: weights ~ N(0, 1/fan_in), biases zero."""
        parts = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=n_in * n_out))
            parts.append(np.zeros(n_out))
        return np.concatenate(parts)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass on a batch ``(B, sizes[0])``.

        Returns the linear output ``(B, sizes[-1])`` and the activation
        cache needed by :meth:`backward`.
        """
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Backpropagate ``dout`` through a cached forward pass.

        Returns ``(dx, dtheta)`` where ``dtheta`` is flat in the same layout
        as ``theta``.
        """
        grads_w: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        grads_b: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            if i != len(self.weights) - 1:
                g = g * (1.0 - cache[i + 1] ** 2)  # d tanh(z) = 1 - tanh(z)^2
            grads_w[i] = h_in.T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        flat = np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)]
        )
        return g, flat


class Adam:
    """Plain Adam on a flat parameter vector, updated in place."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sine/cosine embedding of integer timesteps, shape ``(B, dim)``."""
    if dim % 2 != 0:
        raise ValueError("embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


CHECKPOINT_MAGIC = b"FSKC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, theta: np.ndarray) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic, uint32 version, uint32 JSON length, JSON header with the
    model kind and architecture config, uint64 parameter count, parameters
    as little-endian float64.
    """
    header = json.dumps({"kind": kind, "config": config}, sort_keys=True).encode()
    body = np.ascontiguousarray(theta, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", theta.size))
        fh.write(body)


def load_checkpoint(path, kind: str, expected_config: dict | None = None) -> tuple[dict, np.ndarray]:
    """Read a checkpoint, validating framing, kind, and (optionally) config."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: checkpoint kind {header.get('kind')!r}, expected {kind!r}")
    config = header.get("config", {})
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"{path}: architecture config mismatch: stored {config}, expected {expected_config}"
        )
    (count,) = struct.unpack_from("<Q", blob, 12 + hlen)
    data = blob[12 + hlen + 8 :]
    if len(data) != count * 8:
        raise CheckpointError(f"{path}: truncated parameter block")
    theta = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return config, theta

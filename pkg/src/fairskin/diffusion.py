"""Level 2: class-conditional denoising diffusion with a diversity penalty.

The denoiser predicts the noise added by a fixed forward process given the
noised image, the timestep, and a learned class embedding.  On top of the
usual noise-prediction loss, a regularizer penalizes how far the
prediction under the true label drifts from the predictions under every
other label at the same input, scaled linearly with the timestep.  Early
(high-noise) steps are pushed toward class-shared structure, which is what
keeps rare classes from collapsing onto majority behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import N_LABELS, Sample, count_samples, label_index
from .errors import DivergenceError, EmptyCorpusError, PreconditionError
from .nn import Adam, Mlp, load_checkpoint, save_checkpoint, sinusoidal_embedding
from .numerics import Rng
from .resampling import Scheme, scheme_weights, uniform_weights, weighted_sampler


class NoiseSchedule:
    """Forward-process variances: beta_t for t = 1..T plus derived products.

    ``alpha_bar(t)`` is the cumulative signal-retention coefficient, with
    ``alpha_bar(0) = 1`` so the t -> 0 limit is the identity.
    """

    def __init__(self, betas: np.ndarray):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise PreconditionError("betas must be a nonempty 1-d array")
        if not (betas[0] > 0.0 and betas[-1] < 1.0 and np.all(np.diff(betas) >= 0.0)):
            raise PreconditionError("betas must be nondecreasing within (0, 1)")
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        if not np.all(np.diff(self.alpha_bars) < 0.0) and betas.size > 1:
            raise PreconditionError("cumulative alpha products must be strictly decreasing")

    @classmethod
    def linear(cls, t_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, t_steps))

    @property
    def t_steps(self) -> int:
        return self.betas.size

    def alpha_bar(self, t) -> np.ndarray:
        """Cumulative product at timestep(s) t in 0..T (vectorized)."""
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.t_steps):
            raise PreconditionError(f"timestep out of range 0..{self.t_steps}")
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]


def forward_noise(schedule: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Noised image x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise PreconditionError(f"noise shape {eps.shape} != image shape {x0.shape}")
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 1) or np.any(t > schedule.t_steps):
        raise PreconditionError(f"timestep out of range 1..{schedule.t_steps}")
    ab = schedule.alpha_bar(t)
    if x0.ndim == 2 and ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


class DenoiserModel:
    """Noise-prediction network over flattened images.

    Input is the noised image concatenated with a fixed sinusoidal timestep
    embedding and a learned per-class embedding row; both the dense-layer
    parameters and the embedding table live in one flat theta so a single
    optimizer step updates everything.
    """

    T_DIM = 32
    Y_DIM = 32
    # Class rows start at sd 2 rather than the Glorot-ish sd 1: the larger
    # spread parks each label's hidden units at distinct tanh operating
    # points, so the conditioning pathway differentiates classes from the
    # first step instead of having to grow apart from a label-blind fit.
    EMBED_INIT_SD = 2.0

    def __init__(self, height: int, width: int, theta: np.ndarray | None = None,
                 n_labels: int = N_LABELS, hidden: tuple[int, ...] = (256, 256)):
        self.height = int(height)
        self.width = int(width)
        self.n_labels = int(n_labels)
        self.hidden = tuple(int(h) for h in hidden)
        self.dim = self.height * self.width
        self.sizes = (self.dim + self.T_DIM + self.Y_DIM, *self.hidden, self.dim)
        n_mlp = Mlp.n_params(self.sizes)
        self.n_params = n_mlp + self.n_labels * self.Y_DIM
        if theta is None:
            theta = np.zeros(self.n_params)
        if theta.shape != (self.n_params,):
            raise PreconditionError(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        self.theta = theta
        self.mlp = Mlp(self.sizes, theta[:n_mlp])
        self.embed = theta[n_mlp:].reshape(self.n_labels, self.Y_DIM)

    @classmethod
    def init(cls, height: int, width: int, rng: Rng, n_labels: int = N_LABELS,
             hidden: tuple[int, ...] = (256, 256)) -> "DenoiserModel":
        model = cls(height, width, n_labels=n_labels, hidden=hidden)
        n_mlp = Mlp.n_params(model.sizes)
        theta = np.empty(model.n_params)
        theta[:n_mlp] = Mlp.init_theta(model.sizes, rng)
        theta[n_mlp:] = rng.normal(0.0, cls.EMBED_INIT_SD, size=model.n_labels * model.Y_DIM)
        return cls(height, width, theta=theta, n_labels=n_labels, hidden=hidden)

    def arch_config(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "n_labels": self.n_labels,
            "hidden": list(self.hidden),
        }

    def forward(self, x_t: np.ndarray, y: np.ndarray, t: np.ndarray):
        """Predict the noise for a batch; returns (eps_hat, cache)."""
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        y = np.asarray(y, dtype=np.int64)
        t_emb = sinusoidal_embedding(np.asarray(t), self.T_DIM)
        inp = np.concatenate([x_t, t_emb, self.embed[y]], axis=1)
        out, mlp_cache = self.mlp.forward(inp)
        return out, (mlp_cache, y)

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. theta given d loss / d eps_hat."""
        mlp_cache, y = cache
        dx, dmlp = self.mlp.backward(mlp_cache, dout)
        demb_rows = dx[:, self.dim + self.T_DIM :]
        demb = np.zeros((self.n_labels, self.Y_DIM))
        np.add.at(demb, y, demb_rows)
        return np.concatenate([dmlp, demb.ravel()])


def loss_dm_at(model: DenoiserModel, x_t: np.ndarray, y: np.ndarray, t: np.ndarray,
               eps: np.ndarray, weights: np.ndarray | None = None):
    """Noise-prediction loss at fixed draws; returns (loss, dtheta).

    Per sample the loss is the pixel sum of squares of (eps - eps_hat);
    the batch reduction is (1/B) sum of w_i * l_i, with w_i = 1 when no
    weights are given.
    """
    b = x_t.shape[0]
    eps_hat, cache = model.forward(x_t, y, t)
    diff = eps_hat - eps
    per_sample = np.sum(diff * diff, axis=1)
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float(np.sum(w * per_sample) / b)
    dout = (2.0 / b) * w[:, None] * diff
    return loss, model.backward(cache, dout)


def draw_noising(schedule: NoiseSchedule, x0: np.ndarray, rng: Rng):
    """Draw per-sample (t, eps) and form x_t for a batch of clean images."""
    b, d = x0.shape
    t = rng.integers(1, schedule.t_steps + 1, size=b)
    eps = rng.standard_normal((b, d))
    return t, eps, forward_noise(schedule, x0, t, eps)


def loss_dm(model: DenoiserModel, x0: np.ndarray, y: np.ndarray, schedule: NoiseSchedule,
            rng: Rng, weights: np.ndarray | None = None):
    """Noise-prediction loss with internal (t, eps) draws; returns (loss, dtheta)."""
    if x0.shape[0] == 0:
        raise EmptyCorpusError("empty batch")
    t, eps, x_t = draw_noising(schedule, x0, rng)
    return loss_dm_at(model, x_t, y, t, eps, weights)


def loss_cbdm(model: DenoiserModel, x_t: np.ndarray, y: np.ndarray, t: np.ndarray,
              stop_gradient: bool = False):
    """Class-diversity regularizer; returns (L_r, dtheta).

    Per sample: (t/|Y|) * sum over every label y' (including the true one)
    of the pixel sum of squares between the prediction under the true label
    and the prediction under y'.  Batch reduction is the plain mean.  The
    true-label branch receives gradient unless ``stop_gradient`` is set.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    b = x_t.shape[0]
    n_labels = model.n_labels
    # one forward over all (label, sample) pairs; block l holds the whole
    # batch relabeled to l, so outs[l] matches a per-label forward exactly
    x_tile = np.tile(x_t, (n_labels, 1))
    t_tile = np.tile(t, n_labels)
    y_tile = np.repeat(np.arange(n_labels), b)
    flat, cache = model.forward(x_tile, y_tile, t_tile)
    outs = flat.reshape(n_labels, b, -1)
    e_true = outs[y, np.arange(b)]
    scale = t.astype(np.float64) / n_labels
    c = (scale / b)[:, None]
    per = np.zeros(b)
    diffs = e_true[None, :, :] - outs
    for label in range(n_labels):
        per += np.sum(diffs[label] * diffs[label], axis=1)
    value = float(np.mean(scale * per))
    # d value / d outs[label][i] = -2 c_i (e_true_i - outs[label][i]); the
    # true-label prediction additionally collects + sum_label 2 c_i diff,
    # routed through the forward block that produced it (label == y_i).
    dflat = np.tile(-2.0 * c, (n_labels, 1)) * diffs.reshape(n_labels * b, -1)
    if not stop_gradient:
        true_branch = 2.0 * c * diffs.sum(axis=0)
        dflat[y * b + np.arange(b)] += true_branch
    return value, model.backward(cache, dflat)


@dataclass
class DiffusionTrainConfig:
    """Hyperparameters for denoiser training."""

    steps: int = 20000
    batch_size: int = 32
    lr: float = 1e-3
    gamma: float = 0.1
    weight_scheme: Scheme = Scheme.UNIFORM
    weight_mode: str = "sample"
    seed: int = 0
    t_steps: int = 100
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0:
            raise PreconditionError("steps and batch_size must be positive")
        if self.gamma < 0.0:
            raise PreconditionError("gamma must be >= 0")
        if self.weight_mode not in ("sample", "loss"):
            raise PreconditionError(f"unknown weight_mode {self.weight_mode!r}")


@dataclass
class LossRecord:
    step: int
    loss_dm: float
    loss_r: float
    total: float


def train(samples: list[Sample], config: DiffusionTrainConfig,
          rng: Rng | None = None) -> tuple[DenoiserModel, NoiseSchedule, list[LossRecord]]:
    """Train a denoiser on the given corpus; deterministic given the seed.

    Batches are drawn through the level-1 weighted sampler when
    ``weight_mode = sample``; with ``weight_mode = loss`` draws are uniform
    and the class weights multiply each sample's loss instead.

    The network sees pixels centered to [-1, 1] (the usual diffusion
    convention, so the standard-normal endpoint of the forward process
    matches the data mean); ``sample`` maps its output back to [0, 1].
    """
    if not samples:
        raise EmptyCorpusError("training corpus is empty")
    if rng is None:
        rng = Rng(config.seed)
    height, width = samples[0].image.shape
    schedule = NoiseSchedule.linear(config.t_steps)
    model = DenoiserModel.init(height, width, rng.stream("init"))
    counts = count_samples(samples)
    class_weights = scheme_weights(config.weight_scheme, counts)
    if config.weight_mode == "sample":
        sampler = weighted_sampler(samples, class_weights, rng.stream("draw"))
        loss_weight_of = None
    else:
        sampler = weighted_sampler(samples, uniform_weights(counts), rng.stream("draw"))
        loss_weight_of = class_weights
    noise_rng = rng.stream("noise")
    opt = Adam(model.n_params, config.lr)
    records: list[LossRecord] = []
    for step in range(1, config.steps + 1):
        batch = [next(sampler) for _ in range(config.batch_size)]
        x0 = np.stack([s.image.ravel() for s in batch]) * 2.0 - 1.0
        y = np.array([label_index(s.race, s.disease) for s in batch])
        w = None if loss_weight_of is None else loss_weight_of.sample_weights(batch)
        t, eps, x_t = draw_noising(schedule, x0, noise_rng)
        ld, grad = loss_dm_at(model, x_t, y, t, eps, w)
        lr_val = 0.0
        if config.gamma > 0.0:
            lr_val, grad_r = loss_cbdm(model, x_t, y, t)
            grad = grad + config.gamma * grad_r
        total = ld + config.gamma * lr_val
        if not (np.isfinite(total) and np.isfinite(grad).all()):
            raise DivergenceError(step, last_good_theta=model.theta.copy())
        if step == 1 or step % config.log_every == 0 or step == config.steps:
            records.append(LossRecord(step, ld, lr_val, total))
        opt.step(model.theta, grad)
    return model, schedule, records


def sample(model: DenoiserModel, schedule: NoiseSchedule, label: int, n: int,
           rng: Rng, chunk: int = 256) -> np.ndarray:
    """Generate ``n`` images for one condition label by ancestral sampling.

    Image i draws all of its noise from the child stream named ``str(i)``,
    so the random draws are independent of chunking and any subset can be
    regenerated in isolation; identical calls are bit-identical, different
    chunk sizes agree to float rounding.  The reverse recursion runs in the
    centered [-1, 1] space the denoiser was trained on; the result is
    mapped back to pixel range and clamped, giving shape
    ``(n, height, width)`` in [0, 1].
    """
    if n < 1:
        raise PreconditionError("need n >= 1 samples")
    d = model.dim
    t_steps = schedule.t_steps
    out = np.empty((n, d))
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        streams = [rng.stream(str(start + i)) for i in range(m)]
        x = np.stack([s.standard_normal(d) for s in streams])
        labels = np.full(m, label)
        for t in range(t_steps, 0, -1):
            eps_hat, _ = model.forward(x, labels, np.full(m, t))
            alpha = schedule.alphas[t - 1]
            ab = schedule.alpha_bars[t - 1]
            x = (x - ((1.0 - alpha) / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
            if t > 1:
                z = np.stack([s.standard_normal(d) for s in streams])
                x += np.sqrt(schedule.betas[t - 1]) * z
        out[start : start + m] = x
    return np.clip((out + 1.0) / 2.0, 0.0, 1.0).reshape(n, model.height, model.width)


def save_denoiser(path, model: DenoiserModel, schedule: NoiseSchedule) -> None:
    config = model.arch_config() | {
        "t_steps": schedule.t_steps,
        "beta_start": schedule.betas[0],
        "beta_end": schedule.betas[-1],
    }
    save_checkpoint(path, "denoiser", config, model.theta)


def load_denoiser(path) -> tuple[DenoiserModel, NoiseSchedule]:
    config, theta = load_checkpoint(path, "denoiser")
    model = DenoiserModel(
        config["height"], config["width"], theta=theta,
        n_labels=config["n_labels"], hidden=tuple(config["hidden"]),
    )
    schedule = NoiseSchedule.linear(config["t_steps"], config["beta_start"], config["beta_end"])
    return model, schedule

"""DDPM schedule, noise predictor, training objective and the band-guided sampler.

Step indices are 1-based as in the usual DDPM notation: ``betas[t - 1]`` is
the variance added at step t, and step 0 is clean data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from clar.autodiff import Adam, Dense, Module, Tape, Tensor, ops
from clar.signal import haar_high, haar_low, warp_aggregate_rows


class DiffusionError(ValueError):
    pass


NOISE_FORMS = ("std", "variance")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas2: np.ndarray
    noise_form: str = "std"

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def noise_scale(self) -> np.ndarray:
        """Multiplier of the fresh noise in a reverse step.

        "std" draws from N(mu, sigma_t^2 I), i.e. adds sigma_t * eps. "variance"
        adds sigma_t^2 * eps literally; it under-disperses and is kept for
        comparison only.
        """
        return np.sqrt(self.sigmas2) if self.noise_form == "std" else self.sigmas2

    def check_step(self, t, lo: int = 1) -> None:
        arr = np.asarray(t)
        if arr.size and (arr.min() < lo or arr.max() > self.T):
            raise DiffusionError(f"step {t} outside [{lo}, {self.T}]")


def make_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, noise_form: str = "std"
) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive."""
    if noise_form not in NOISE_FORMS:
        raise DiffusionError(f"noise_form must be one of {NOISE_FORMS}, got {noise_form!r}")
    if T < 1:
        raise DiffusionError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start < 1.0 or not 0.0 < beta_end < 1.0:
        raise DiffusionError(f"betas must lie in (0, 1), got {beta_start}, {beta_end}")
    if T > 1 and not beta_start < beta_end:
        raise DiffusionError(f"need beta_start < beta_end, got {beta_start} >= {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alphas = 1.0 - betas
    return NoiseSchedule(
        betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas), sigmas2=betas.copy(), noise_form=noise_form
    )


def scaled_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, noise_form: str = "std"
) -> NoiseSchedule:
    """Schedule whose betas are stretched by 1000 / T, keeping the total noise budget of T = 1000."""
    scale = 1000.0 / T
    return make_schedule(T, beta_start * scale, beta_end * scale, noise_form)


def forward_sample(z0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps; ``t`` may be an int or one step per row."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise DiffusionError(f"noise shape {eps.shape} does not match data shape {z0.shape}")
    sched.check_step(t)
    ab = sched.alpha_bars[np.asarray(t) - 1]
    if np.ndim(ab):
        ab = ab.reshape(-1, *([1] * (z0.ndim - 1)))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


# ------------------------------------------------------------ noise network


def step_embedding(t, dim: int = 16) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class EpsNet(Module):
    """Noise predictor: z_t + MLP([z_t, emb(t)]), MLP = tanh(128) -> tanh(128) -> length.

    The identity term carries z_t straight to the output, which is the right
    answer at high noise; the MLP only models the residual. Without it the
    128-unit bottleneck cannot reproduce all 128 input directions and the
    reverse chain amplifies the missed ones by 1/sqrt(alpha_t) per step.
    """

    def __init__(self, length: int, rng: np.random.Generator, hidden: int = 128, emb_dim: int = 16):
        self.length = length
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.fc1 = Dense(length + emb_dim, hidden, rng)
        self.fc2 = Dense(hidden, hidden, rng)
        self.fc3 = Dense(hidden, length, rng)
        self.steps_trained = 0

    @property
    def trained(self) -> bool:
        return self.steps_trained > 0

    def __call__(self, z: Tensor, t) -> Tensor:
        if z.shape[-1] != self.length:
            raise DiffusionError(f"EpsNet built for length {self.length}, got {z.shape[-1]}")
        t = np.broadcast_to(np.asarray(t), (z.shape[0],))
        h = ops.concatenate([z, Tensor(step_embedding(t, self.emb_dim))], axis=1)
        h = ops.tanh(self.fc1(h))
        h = ops.tanh(self.fc2(h))
        return z + self.fc3(h)

    def predict(self, z: np.ndarray, t) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        squeeze = z.ndim == 1
        out = self(Tensor(np.atleast_2d(z)), t).data
        return out[0] if squeeze else out


def ddpm_train_loss(net, z0: np.ndarray, sched: NoiseSchedule, rng: np.random.Generator) -> Tensor:
    """Mean squared error between injected noise and the network's estimate."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    if z0.shape[0] == 0:
        raise DiffusionError("empty batch")
    t = rng.integers(1, sched.T + 1, size=z0.shape[0])
    eps = rng.standard_normal(z0.shape)
    zt = forward_sample(z0, t, eps, sched)
    pred = net(Tensor(zt), t)
    return ops.mean(ops.square(pred - Tensor(eps)))


def train_ddpm(
    net: EpsNet,
    data: np.ndarray,
    sched: NoiseSchedule,
    steps: int,
    batch: int,
    lr: float,
    rng: np.random.Generator,
    optimizer: Adam | None = None,
    on_step: Callable[[int, float], None] | None = None,
    decay_total: int | None = None,
) -> list[float]:
    """Adam on the noise-matching loss; returns the per-step loss history.

    With ``decay_total`` the learning rate follows a cosine from ``lr`` down
    to 0 over that many steps, indexed by ``net.steps_trained`` so that a
    resumed run picks up the schedule where it stopped.
    """
    data = np.asarray(data, dtype=np.float64)
    opt = optimizer or Adam(net.parameters(), lr=lr)
    history = []
    for _ in range(steps):
        if decay_total:
            opt.lr = max(lr * 0.5 * (1.0 + math.cos(math.pi * min(net.steps_trained, decay_total) / decay_total)), 1e-12)
        idx = rng.choice(len(data), size=min(batch, len(data)), replace=False)
        opt.zero_grad()
        with Tape() as tape:
            loss = ddpm_train_loss(net, data[idx], sched, rng)
        tape.backward(loss)
        opt.step()
        net.steps_trained += 1
        history.append(float(loss.data))
        if on_step is not None:
            on_step(net.steps_trained, history[-1])
    return history


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray
    t: int


def reverse_step(state: LatentState, net, sched: NoiseSchedule, rng) -> LatentState:
    """One ancestral step z_t -> z_{t-1}; noise is dropped at t = 1."""
    t = state.t
    if t < 1:
        raise DiffusionError("cannot step below t = 0")
    sched.check_step(t)
    a = sched.alphas[t - 1]
    ab = sched.alpha_bars[t - 1]
    pred = net.predict(state.z, t)
    z = (state.z - (1.0 - a) / math.sqrt(1.0 - ab) * pred) / math.sqrt(a)
    if t > 1:
        z = z + sched.noise_scale[t - 1] * rng.standard_normal(np.shape(state.z))
    return LatentState(z=z, t=t - 1)


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_h: float
    lambda_l: float
    n_h: float = 1.0
    n_l: float = 1.0

    def __post_init__(self):
        if self.lambda_h <= 0 or self.lambda_l <= 0:
            raise DiffusionError("guidance decay/growth constants must be positive")
        for name in ("n_h", "n_l"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DiffusionError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def default(cls, T: int) -> "GuidanceConfig":
        return cls(lambda_h=5.0 / T, lambda_l=5.0 / T)

    @property
    def disabled(self) -> bool:
        return self.n_h == 0.0 and self.n_l == 0.0


def guidance_weights(t: int, cfg: GuidanceConfig, T: int) -> tuple[float, float]:
    """(high-band weight, low-band weight) applied when producing z_{t-1}."""
    if not 1 <= t <= T:
        raise DiffusionError(f"step {t} outside [1, {T}]")
    omega_h = cfg.n_h * math.exp(-cfg.lambda_h * (t - 1))
    omega_l = cfg.n_l * math.exp(-cfg.lambda_l * (T - t))
    return omega_h, omega_l


def _check_net(net) -> None:
    if net is None:
        raise DiffusionError("a noise-prediction network is required")
    if getattr(net, "trained", True) is False:
        raise DiffusionError("noise-prediction network has not been trained")


def conditioned_generate_batch(
    z_src: np.ndarray,
    z_ref: np.ndarray,
    net,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Generate one augmented series per (source, reference) row.

    The source is noised to step T to form the prior; during the reverse
    chain the reference's high and low Haar bands, noised to the current
    level, are blended in through warping-path aggregation with
    step-dependent weights.
    """
    _check_net(net)
    z_src = np.atleast_2d(np.asarray(z_src, dtype=np.float64))
    z_ref = np.atleast_2d(np.asarray(z_ref, dtype=np.float64))
    if z_src.shape != z_ref.shape:
        raise DiffusionError(f"source shape {z_src.shape} != reference shape {z_ref.shape}")
    if z_src.shape[1] < 2:
        raise DiffusionError("series must have at least 2 samples")
    T = sched.T
    high, low = haar_high(z_ref), haar_low(z_ref)
    z = forward_sample(z_src, T, rng.standard_normal(z_src.shape), sched)
    for t in range(T, 0, -1):
        z_hat = reverse_step(LatentState(z, t), net, sched, rng).z
        w_h, w_l = guidance_weights(t, cfg, T)
        z = z_hat
        if w_h != 0.0:
            cond = high if t == 1 else forward_sample(high, t - 1, rng.standard_normal(high.shape), sched)
            z = z + w_h * (haar_high(warp_aggregate_rows(z_hat, cond)) - haar_high(z_hat))
        if w_l != 0.0:
            cond = low if t == 1 else forward_sample(low, t - 1, rng.standard_normal(low.shape), sched)
            z = z + w_l * (haar_low(warp_aggregate_rows(z_hat, cond)) - haar_low(z_hat))
    return z


def conditioned_generate(z_src, z_ref, net, sched, cfg, rng) -> np.ndarray:
    """Single-series form of :func:`conditioned_generate_batch`."""
    z_src = np.asarray(z_src, dtype=np.float64)
    z_ref = np.asarray(z_ref, dtype=np.float64)
    if z_src.ndim != 1 or z_src.shape != z_ref.shape:
        raise DiffusionError(f"source/reference must be equal-length 1-D, got {z_src.shape}, {z_ref.shape}")
    return conditioned_generate_batch(z_src[None], z_ref[None], net, sched, cfg, rng)[0]


def sample_from_source(z_src, net, sched: NoiseSchedule, rng) -> np.ndarray:
    """Unconditional reverse chain started from the noised source."""
    _check_net(net)
    z_src = np.asarray(z_src, dtype=np.float64)
    batched = z_src.ndim == 2
    z = np.atleast_2d(z_src)
    z = forward_sample(z, sched.T, rng.standard_normal(z.shape), sched)
    state = LatentState(z, sched.T)
    while state.t > 0:
        state = reverse_step(state, net, sched, rng)
    return state.z if batched else state.z[0]

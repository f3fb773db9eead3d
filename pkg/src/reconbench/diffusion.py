"""Forward noising chain, reverse denoising chain, and guided reconstruction.

Conventions
-----------
A sample is a plain float ndarray, 1-D (vector worlds) or 2-D (image
worlds). Step indices run 1..T; index 0 is the clean state. The schedule
arrays are laid out with a slot for index 0 so that ``betas[t]`` is the
noise injected by step t and ``alpha_bars[0] == 1``.

The reverse step is parameterized by a prediction of the clean sample
(x0-parameterization) and uses the lower posterior variance
``beta_tilde_t = beta_t * (1 - abar_{t-1}) / (1 - abar_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError
from .rng import as_rng


@dataclass(frozen=True)
class NoiseSchedule:
    """Coefficient table of the noising chain.

    ``betas``, ``alphas`` and ``alpha_bars`` all have length T+1; index 0 is
    the clean state (beta 0, alpha 1, alpha_bar 1).
    """

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.num_steps < 1:
            raise ParameterError("schedule needs at least one step")
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.num_steps + 1,) or betas[0] != 0.0:
            raise ParameterError("betas must have length T+1 with betas[0] == 0")
        steps = betas[1:]
        if not np.all(np.isfinite(steps)) or np.any(steps <= 0.0) or np.any(steps >= 1.0):
            raise ParameterError("every beta_t must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    def check_step(self, s: int, minimum: int = 0) -> int:
        s = int(s)
        if s < minimum or s > self.num_steps:
            raise ParameterError(
                f"step s={s} outside [{minimum}, {self.num_steps}]"
            )
        return s


@dataclass(frozen=True)
class AttackSpec:
    """Recipe for one reconstruction attack."""

    s: int
    denoiser_id: str
    estimator_id: str
    seed: int

    def __post_init__(self):
        if self.s < 0:
            raise ParameterError("attack step count s must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


def build_schedule(kind: str, T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Construct a noise schedule.

    ``linear`` interpolates beta evenly from beta_min to beta_max inclusive;
    ``constant`` uses beta_min for every step.
    """
    if T < 1:
        raise ParameterError("T must be a positive integer")
    if not (np.isfinite(beta_min) and np.isfinite(beta_max)):
        raise ParameterError("beta bounds must be finite")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError("need 0 < beta_min <= beta_max < 1")
    if kind == "linear":
        steps = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    elif kind == "constant":
        steps = np.full(T, beta_min)
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}")
    betas = np.concatenate([[0.0], steps])
    return NoiseSchedule(num_steps=T, betas=betas)


def forward_marginal_sample(
    x0: np.ndarray, s: int, sched: NoiseSchedule, rng_seed: int | np.random.Generator
) -> np.ndarray:
    """One draw of x_s from the closed-form marginal given x0.

    x_s = sqrt(abar_s) * x0 + sqrt(1 - abar_s) * eps with eps ~ N(0, I).
    s = 0 returns x0 unchanged.
    """
    s = sched.check_step(s)
    x0 = np.asarray(x0, dtype=np.float64)
    if s == 0:
        return x0.copy()
    rng = as_rng(rng_seed)
    abar = sched.alpha_bars[s]
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def forward_chain_sample(
    x0: np.ndarray, s: int, sched: NoiseSchedule, rng_seed: int | np.random.Generator
) -> np.ndarray:
    """One draw of x_s by stepping the Markov chain x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps_t.

    Distributionally equivalent to :func:`forward_marginal_sample`; one
    standard-normal draw is consumed per step, in order t = 1..s.
    """
    s = sched.check_step(s)
    x = np.asarray(x0, dtype=np.float64).copy()
    if s == 0:
        return x
    rng = as_rng(rng_seed)
    for t in range(1, s + 1):
        eps = rng.standard_normal(x.shape)
        x = np.sqrt(sched.alphas[t]) * x + np.sqrt(sched.betas[t]) * eps
    return x


def reverse_posterior_coeffs(s: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Coefficients (c_x0, c_xs, var) of the reverse posterior at step s."""
    s = sched.check_step(s, minimum=1)
    beta = sched.betas[s]
    abar = sched.alpha_bars[s]
    abar_prev = sched.alpha_bars[s - 1]
    denom = 1.0 - abar
    c_x0 = np.sqrt(abar_prev) * beta / denom
    c_xs = np.sqrt(sched.alphas[s]) * (1.0 - abar_prev) / denom
    var = beta * (1.0 - abar_prev) / denom
    return float(c_x0), float(c_xs), float(var)


def reverse_step(
    x_s: np.ndarray,
    s: int,
    x0_hat: np.ndarray,
    sched: NoiseSchedule,
    rng_seed: int | np.random.Generator,
) -> np.ndarray:
    """One reverse (denoising) step: sample x_{s-1} given x_s and a clean estimate.

    At s = 1 the posterior variance is zero and the result is exactly x0_hat.
    """
    s = sched.check_step(s, minimum=1)
    x_s = np.asarray(x_s, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x0_hat.shape != x_s.shape:
        raise ContractError(
            f"x0_hat shape {x0_hat.shape} does not match x_s shape {x_s.shape}"
        )
    c_x0, c_xs, var = reverse_posterior_coeffs(s, sched)
    mean = c_x0 * x0_hat + c_xs * x_s
    if var == 0.0:
        return mean
    rng = as_rng(rng_seed)
    return mean + np.sqrt(var) * rng.standard_normal(x_s.shape)


def reconstruct_attack(
    y0: np.ndarray,
    spec: AttackSpec,
    sched: NoiseSchedule,
    denoiser,
    estimator,
    value_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Turn a fake sample into an attack by partial noising plus guided denoising.

    The start state is drawn from N(sqrt(abar_s) * E(y0), (1 - abar_s) I),
    then s reverse steps are taken with the denoiser's clean-sample
    predictions. spec.s = 0 returns y0 unchanged. The final output (only) is
    clamped to ``value_range`` when given. Deterministic given spec.seed.
    """
    s = sched.check_step(spec.s)
    y0 = np.asarray(y0, dtype=np.float64)
    if s == 0:
        return y0.copy()
    guide = np.asarray(estimator.restore(y0), dtype=np.float64)
    if guide.shape != y0.shape:
        raise ContractError(
            f"estimator output shape {guide.shape} does not match input shape {y0.shape}"
        )
    rng = as_rng(spec.seed)
    abar = sched.alpha_bars[s]
    x = np.sqrt(abar) * guide + np.sqrt(1.0 - abar) * rng.standard_normal(y0.shape)
    for t in range(s, 0, -1):
        x0_hat = np.asarray(denoiser.predict_x0(x, t, sched), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise ContractError("denoiser changed the sample shape")
        x = reverse_step(x, t, x0_hat, sched, rng)
    if value_range is not None:
        lo, hi = value_range
        x = np.clip(x, lo, hi)
    return x


def reconstruct_attack_batch(
    y0s: np.ndarray,
    s: int,
    seeds: np.ndarray,
    sched: NoiseSchedule,
    denoiser,
    estimator,
    value_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Vectorized :func:`reconstruct_attack` over a stack of fakes.

    ``seeds[i]`` drives sample i's private noise stream, so the result is
    bit-identical to looping reconstruct_attack with per-sample AttackSpecs
    regardless of batch size or ordering.
    """
    y0s = np.asarray(y0s, dtype=np.float64)
    n = y0s.shape[0]
    if len(seeds) != n:
        raise ContractError("need one seed per sample")
    s = sched.check_step(s)
    if s == 0:
        return y0s.copy()
    guide = np.asarray(estimator.restore(y0s), dtype=np.float64)
    if guide.shape != y0s.shape:
        raise ContractError("estimator output shape does not match input shape")
    shape = y0s.shape[1:]
    rngs = [as_rng(int(sd)) for sd in seeds]

    def draw():
        return np.stack([r.standard_normal(shape) for r in rngs])

    abar = sched.alpha_bars[s]
    x = np.sqrt(abar) * guide + np.sqrt(1.0 - abar) * draw()
    for t in range(s, 0, -1):
        x0_hat = np.asarray(denoiser.predict_x0(x, t, sched), dtype=np.float64)
        c_x0, c_xs, var = reverse_posterior_coeffs(t, sched)
        x = c_x0 * x0_hat + c_xs * x
        if var > 0.0:
            x = x + np.sqrt(var) * draw()
    if value_range is not None:
        lo, hi = value_range
        x = np.clip(x, lo, hi)
    return x

"""Clean-sample predictors and guidance estimators for the reverse chain.

Three denoiser kinds are provided:

* ``exact_gmm`` — the closed-form posterior mean E[x0 | x_s] under a
  Gaussian-mixture prior; serves as the oracle in vector worlds.
* ``trained_mlp`` — a noise-predicting MLP trained with plain SGD;
  ``hidden_sizes=()`` degenerates to an affine model, which is the
  committed choice for image worlds (the optimal denoiser of a Gaussian
  random field is affine, and a narrow nonlinear bottleneck cannot
  represent per-mode spectral shrinkage).
* ``identity`` — passes the noisy state through; baseline only.

Estimators are shape-preserving restorations applied to a fake before the
noising stage: ``identity`` or ``ridge_restorer`` (closed-form regularized
linear map with unpenalized intercept, fit on degraded/clean pairs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ContractError, ParameterError, TrainingError
from .rng import as_rng


@dataclass(frozen=True)
class GMMParams:
    """Isotropic Gaussian mixture over d-dimensional vectors."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.shape[0] != w.shape[0] or v.shape != w.shape:
            raise ParameterError("weights, means and variances disagree on K")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ParameterError("mixture weights must sum to 1")
        if np.any(v <= 0.0):
            raise ParameterError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


def gmm_sample(gmm: GMMParams, n: int, rng_seed) -> np.ndarray:
    """Draw n i.i.d. vectors from the mixture."""
    rng = as_rng(rng_seed)
    comps = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    eps = rng.standard_normal((n, gmm.dim))
    return gmm.means[comps] + np.sqrt(gmm.variances[comps])[:, None] * eps


def gmm_log_density(x: np.ndarray, gmm: GMMParams) -> np.ndarray:
    """Exact log-density of the mixture at x, shape (n,) for x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = gmm.dim
    if x.shape[1] != d:
        raise ContractError(f"points have dim {x.shape[1]}, mixture has dim {d}")
    delta = x[:, None, :] - gmm.means[None, :, :]
    sq = np.sum(delta * delta, axis=2)
    logs = (
        np.log(gmm.weights)[None, :]
        - 0.5 * d * np.log(2.0 * np.pi * gmm.variances)[None, :]
        - 0.5 * sq / gmm.variances[None, :]
    )
    peak = logs.max(axis=1, keepdims=True)
    return (peak + np.log(np.sum(np.exp(logs - peak), axis=1, keepdims=True)))[:, 0]


def gmm_posterior_x0(
    x_s: np.ndarray, s: int, sched: NoiseSchedule, gmm: GMMParams
) -> np.ndarray:
    """Exact posterior mean E[x0 | x_s] under the mixture prior.

    Responsibilities come from the component marginals of x_s; each
    component contributes its Gaussian-conditioning mean
    mu_k + (sqrt(abar) var_k / (abar var_k + 1 - abar)) (x_s - sqrt(abar) mu_k).
    """
    s = sched.check_step(s, minimum=1)
    x = np.asarray(x_s, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    d = gmm.dim
    if x2.shape[1] != d:
        raise ContractError(f"sample dim {x2.shape[1]} does not match mixture dim {d}")
    abar = sched.alpha_bars[s]
    marg_var = abar * gmm.variances + (1.0 - abar)
    delta = x2[:, None, :] - np.sqrt(abar) * gmm.means[None, :, :]
    sq = np.sum(delta * delta, axis=2)
    logs = (
        np.log(gmm.weights)[None, :]
        - 0.5 * d * np.log(2.0 * np.pi * marg_var)[None, :]
        - 0.5 * sq / marg_var[None, :]
    )
    logs -= logs.max(axis=1, keepdims=True)
    resp = np.exp(logs)
    resp /= resp.sum(axis=1, keepdims=True)
    gain = np.sqrt(abar) * gmm.variances / marg_var
    comp_means = gmm.means[None, :, :] + gain[None, :, None] * delta
    out = np.sum(resp[:, :, None] * comp_means, axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class MLPHyper:
    """Hyperparameters of the SGD-trained noise predictor."""

    hidden_sizes: tuple[int, ...] = (64, 64)
    lr: float = 0.05
    epochs: int = 200
    batch: int = 64
    seed: int = 0
    fixed_s: int | None = None


class Denoiser:
    """Predicts the clean sample from a noisy state at a given step."""

    def __init__(self, kind: str, dim: int | None = None, gmm: GMMParams | None = None,
                 layers: list[tuple[np.ndarray, np.ndarray]] | None = None,
                 hyper: MLPHyper | None = None, final_loss: float | None = None):
        if kind not in ("exact_gmm", "trained_mlp", "identity"):
            raise ParameterError(f"unknown denoiser kind {kind!r}")
        self.kind = kind
        self.dim = dim
        self.gmm = gmm
        self.layers = layers
        self.hyper = hyper
        self.final_loss = final_loss

    def _mlp_forward(self, inp: np.ndarray) -> np.ndarray:
        h = inp
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if i != last:
                h = np.tanh(h)
        return h

    def predict_eps(self, x_s: np.ndarray, s: int, sched: NoiseSchedule) -> np.ndarray:
        """Noise estimate at step s (derived from the x0 prediction where needed)."""
        s = sched.check_step(s, minimum=1)
        x = np.asarray(x_s, dtype=np.float64)
        if self.kind == "trained_mlp":
            if x.size % self.dim != 0:
                raise ContractError(f"input size {x.size} incompatible with model dim {self.dim}")
            flat = x.reshape(-1, self.dim)
            cond = np.full((flat.shape[0], 1), s / sched.num_steps)
            eps = self._mlp_forward(np.concatenate([flat, cond], axis=1))
            return eps.reshape(x.shape)
        abar = sched.alpha_bars[s]
        x0 = self.predict_x0(x, s, sched)
        return (x - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)

    def predict_x0(self, x_s: np.ndarray, s: int, sched: NoiseSchedule) -> np.ndarray:
        s = sched.check_step(s, minimum=1)
        x = np.asarray(x_s, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "exact_gmm":
            shape = x.shape
            flat = x.reshape(-1, self.gmm.dim)
            return gmm_posterior_x0(flat, s, sched, self.gmm).reshape(shape)
        abar = sched.alpha_bars[s]
        eps = self.predict_eps(x, s, sched)
        return (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def exact_gmm_denoiser(gmm: GMMParams) -> Denoiser:
    return Denoiser("exact_gmm", dim=gmm.dim, gmm=gmm)


def identity_denoiser() -> Denoiser:
    return Denoiser("identity")


def train_mlp_denoiser(
    train_x0: list[np.ndarray] | np.ndarray,
    sched: NoiseSchedule,
    hyper: MLPHyper,
) -> Denoiser:
    """Fit the noise predictor by minibatch SGD on the eps-regression loss.

    Steps s are drawn uniformly from 1..T per example (or pinned to
    hyper.fixed_s); the noisy input gets s/T appended as a conditioning
    channel. Fully deterministic given hyper.seed.
    """
    X = np.asarray(train_x0, dtype=np.float64)
    if X.size == 0:
        raise ParameterError("training set must be non-empty")
    X = X.reshape(X.shape[0], -1)
    n, d = X.shape
    if hyper.fixed_s is not None:
        sched.check_step(hyper.fixed_s, minimum=1)
    rng = as_rng(hyper.seed)

    sizes = [d + 1, *hyper.hidden_sizes, d]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        layers.append([W, np.zeros(fan_out)])

    def forward(inp):
        acts = [inp]
        last = len(layers) - 1
        h = inp
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    T = sched.num_steps
    sqrt_ab = np.sqrt(sched.alpha_bars)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bars)
    batch = max(1, min(hyper.batch, n))
    final_loss = np.nan
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            m = len(idx)
            if hyper.fixed_s is not None:
                s = np.full(m, hyper.fixed_s)
            else:
                s = rng.integers(1, T + 1, size=m)
            eps = rng.standard_normal((m, d))
            xs = sqrt_ab[s][:, None] * X[idx] + sqrt_1mab[s][:, None] * eps
            inp = np.concatenate([xs, (s / T)[:, None]], axis=1)
            pred, acts = forward(inp)
            diff = pred - eps
            losses.append(float(np.mean(diff * diff)))
            # Backprop of the mean-squared loss through the tanh stack.
            grad = 2.0 * diff / diff.size
            for i in range(len(layers) - 1, -1, -1):
                W, b = layers[i]
                gW = acts[i].T @ grad
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = (grad @ W.T) * (1.0 - acts[i] * acts[i])
                W -= hyper.lr * gW
                b -= hyper.lr * gb
        final_loss = float(np.mean(losses))
        if not np.isfinite(final_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
    frozen = [(W.copy(), b.copy()) for W, b in layers]
    return Denoiser("trained_mlp", dim=d, layers=frozen, hyper=hyper,
                    final_loss=final_loss)


@dataclass
class Estimator:
    """Shape-preserving restoration map applied before the noising stage."""

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    residual: float | None = None

    def restore(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "identity":
            return y
        d = self.weight.shape[0]
        flat = y.reshape(-1, d)
        if flat.shape[1] != d:
            raise ContractError(f"input dim {flat.shape[1]} does not match map dim {d}")
        out = flat @ self.weight + self.bias
        return out.reshape(y.shape)


def identity_estimator() -> Estimator:
    return Estimator("identity")


def fit_ridge_restorer(
    pairs: list[tuple[np.ndarray, np.ndarray]], lam: float
) -> Estimator:
    """Closed-form ridge fit of a degraded -> clean linear map with intercept.

    The intercept is not penalized (centered normal equations).
    """
    if lam <= 0.0:
        raise ParameterError("lambda must be positive")
    if len(pairs) == 0:
        raise ParameterError("need at least one training pair")
    degr = np.asarray([np.asarray(a, dtype=np.float64).ravel() for a, _ in pairs])
    clean = np.asarray([np.asarray(b, dtype=np.float64).ravel() for _, b in pairs])
    if degr.shape != clean.shape:
        raise ContractError("degraded/clean pairs disagree on shape")
    d = degr.shape[1]
    xm = degr.mean(axis=0)
    ym = clean.mean(axis=0)
    Xc = degr - xm
    Yc = clean - ym
    W = np.linalg.solve(Xc.T @ Xc + lam * np.eye(d), Xc.T @ Yc)
    b = ym - xm @ W
    resid = float(np.mean((degr @ W + b - clean) ** 2))
    return Estimator("ridge_restorer", weight=W, bias=b, residual=resid)

"""Closed-form diffusion mathematics over frame-importance score sequences.

Implements the forward noising process, its posterior quantities, score
scaling between the annotation range [0, 1] and the working range [-1, 1],
and the ancestral denoising loop used at generation time:

    forward:  x_t = sqrt(abar_t) * x_0 + sqrt(1 - abar_t) * eps
    reverse:  x_{t-1} = (x_t - (1 - a_t)/sqrt(1 - abar_t) * eps_hat) / sqrt(a_t)
                        + sigma_t * z

Step indices are 1-based; abar_0 == 1 by convention, which makes sigma_1 == 0
and the final denoising step deterministic.

All tables are float64. Intermediate noisy sequences are never clamped; only
the final unscaling back to [0, 1] clips out-of-range values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, StepError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha-bar tables plus the active horizon.

    ``beta[i]`` holds beta at step ``i + 1``; accessor methods take 1-based
    step indices so the arithmetic reads like the update equations.
    """

    t_base: int
    t_active: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def beta_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(self.alpha_bar[t - 1])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.t_base:
            raise StepError(f"step {t} outside [1, {self.t_base}]")


@dataclass(frozen=True)
class RawScores:
    """Per-frame importance scores in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ShapeError("scores must be a 1-D vector")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            bad = int(np.argmax((values < 0.0) | (values > 1.0)))
            raise DomainError(f"score {values[bad]!r} at frame {bad} outside [0, 1]")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ScaledScores:
    """Per-frame scores linearly mapped into [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ShapeError("scores must be a 1-D vector")
        if values.size and (values.min() < -1.0 or values.max() > 1.0):
            bad = int(np.argmax((values < -1.0) | (values > 1.0)))
            raise DomainError(f"scaled score {values[bad]!r} at frame {bad} outside [-1, 1]")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class NoisyScores:
    """A partially noised score sequence together with its step index."""

    values: np.ndarray
    step: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ShapeError("scores must be a 1-D vector")
        if self.step < 0:
            raise StepError(f"step {self.step} is negative")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class GaussianDraw:
    """A standard-normal vector with a provenance tag for reproducibility."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator, source: str = "") -> "GaussianDraw":
        return cls(values=rng.standard_normal(n), source=source)

    @classmethod
    def zeros(cls, n: int) -> "GaussianDraw":
        return cls(values=np.zeros(n), source="zeros")


def build_schedule(
    t_base: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    t_active: int = 200,
) -> NoiseSchedule:
    """Build a linear variance schedule and its cumulative products.

    ``beta`` rises linearly from ``beta_start`` at step 1 to ``beta_end`` at
    step ``t_base``. ``t_active`` selects how many of the leading steps the
    sampler actually walks; 0 is allowed and means the denoising loop is
    skipped entirely.
    """
    if t_base < 1:
        raise ParameterError(f"t_base must be >= 1, got {t_base}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if not 0 <= t_active <= t_base:
        raise ParameterError(f"t_active {t_active} outside [0, {t_base}]")
    if t_base == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        steps = np.arange(t_base, dtype=np.float64)
        beta = beta_start + (beta_end - beta_start) * steps / (t_base - 1)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if not (beta > 0).all() or not (beta < 1).all():
        raise ParameterError("schedule produced beta outside (0, 1)")
    return NoiseSchedule(
        t_base=t_base, t_active=t_active, beta=beta, alpha=alpha, alpha_bar=alpha_bar
    )


def scale_scores(x: RawScores) -> ScaledScores:
    """Map [0, 1] scores to [-1, 1] via the fixed affine map 2x - 1."""
    return ScaledScores(values=2.0 * x.values - 1.0)


def unscale_scores(x: np.ndarray) -> RawScores:
    """Invert :func:`scale_scores`, clipping sampler overshoot into [0, 1]."""
    values = (np.asarray(x, dtype=np.float64) + 1.0) / 2.0
    return RawScores(values=np.clip(values, 0.0, 1.0))


def q_sample(s: NoiseSchedule, x0: ScaledScores, t: int, eps: GaussianDraw) -> NoisyScores:
    """Noise clean scores directly to step ``t`` in closed form."""
    if not 1 <= t <= s.t_active:
        raise StepError(f"step {t} outside active range [1, {s.t_active}]")
    if len(x0) != len(eps):
        raise ShapeError(f"x0 has {len(x0)} frames but eps has {len(eps)}")
    ab = s.alpha_bar_at(t)
    values = np.sqrt(ab) * x0.values + np.sqrt(1.0 - ab) * eps.values
    return NoisyScores(values=values, step=t)


def q_sample_stepwise(
    s: NoiseSchedule, x0: ScaledScores, t: int, rng: np.random.Generator
) -> NoisyScores:
    """Noise clean scores by iterating the one-step recursion ``t`` times.

    Test-oracle counterpart of :func:`q_sample`; the two agree in
    distribution but not sample-for-sample.
    """
    if not 1 <= t <= s.t_active:
        raise StepError(f"step {t} outside active range [1, {s.t_active}]")
    x = x0.values.copy()
    n = x.size
    for k in range(1, t + 1):
        beta_k = s.beta_at(k)
        x = np.sqrt(1.0 - beta_k) * x + np.sqrt(beta_k) * rng.standard_normal(n)
    return NoisyScores(values=x, step=t)


def posterior_mean(s: NoiseSchedule, x_t: NoisyScores, x0: ScaledScores) -> np.ndarray:
    """Mean of the forward-process posterior q(x_{t-1} | x_t, x_0)."""
    t = x_t.step
    if t < 1:
        raise StepError("posterior undefined at step 0")
    if len(x_t) != len(x0):
        raise ShapeError(f"x_t has {len(x_t)} frames but x0 has {len(x0)}")
    ab_t = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t - 1)
    beta_t = s.beta_at(t)
    alpha_t = s.alpha_at(t)
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    return coef_x0 * x0.values + coef_xt * x_t.values


def predict_x0_from_eps(s: NoiseSchedule, x_t: NoisyScores, eps_hat: np.ndarray) -> np.ndarray:
    """Invert the closed-form noising given a noise estimate."""
    t = x_t.step
    if t < 1:
        raise StepError("inversion undefined at step 0")
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.values.shape:
        raise ShapeError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.values.shape}")
    ab = s.alpha_bar_at(t)
    return (x_t.values - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def sigma(s: NoiseSchedule, t: int) -> float:
    """Standard deviation of the reverse transition at step ``t``.

    sigma_1 == 0 because abar_0 == 1, so the last step adds no noise.
    """
    if not 1 <= t <= s.t_active:
        raise StepError(f"step {t} outside active range [1, {s.t_active}]")
    ab_t = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t - 1)
    return float(np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * s.beta_at(t)))


def denoise_step(
    s: NoiseSchedule,
    predictor,
    x_t: NoisyScores,
    f: np.ndarray,
    z: GaussianDraw,
) -> NoisyScores:
    """One reverse step: subtract predicted noise, then add sigma_t * z.

    ``predictor`` is any callable ``(values, features, t) -> eps_hat``.
    The reverse covariance is fixed at sigma_t^2 * I; ``z`` must be the zero
    vector at t == 1.
    """
    t = x_t.step
    if t < 1:
        raise StepError("cannot denoise below step 1")
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != len(x_t):
        raise ShapeError(f"features have {f.shape[0]} frames but x_t has {len(x_t)}")
    if len(z) != len(x_t):
        raise ShapeError(f"z has {len(z)} entries but x_t has {len(x_t)}")
    eps_hat = np.asarray(predictor(x_t.values, f, t), dtype=np.float64)
    if eps_hat.shape != x_t.values.shape:
        raise ShapeError(f"predictor returned shape {eps_hat.shape}, expected {x_t.values.shape}")
    alpha_t = s.alpha_at(t)
    ab_t = s.alpha_bar_at(t)
    mean = (x_t.values - (1.0 - alpha_t) / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha_t)
    values = mean + sigma(s, t) * z.values
    return NoisyScores(values=values, step=t - 1)


def generate_scores(
    s: NoiseSchedule,
    predictor,
    f: np.ndarray,
    init: RawScores | None,
    rng: np.random.Generator,
) -> RawScores:
    """Run the full denoising loop from an initializer down to clean scores.

    The initializer is scaled into [-1, 1] and treated as the step-t_active
    state. ``init=None`` starts from a standard-normal draw instead, which is
    only meaningful when t_active == t_base (denoising from pure noise).
    Deterministic given the generator state.
    """
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    if init is None:
        start = rng.standard_normal(n)
    else:
        if len(init) != n:
            raise ShapeError(f"init has {len(init)} frames but features have {n}")
        start = scale_scores(init).values
    x = NoisyScores(values=start, step=s.t_active)
    for t in range(s.t_active, 0, -1):
        if t > 1:
            z = GaussianDraw.sample(n, rng, source=f"t={t}")
        else:
            z = GaussianDraw.zeros(n)
        x = denoise_step(s, predictor, x, f, z)
    return unscale_scores(x.values)


def schedule_rows(s: NoiseSchedule):
    """Yield (t, beta, alpha_bar, sqrt_ab, sqrt_1mab, sigma) for every step.

    Sigma values beyond t_active use the same formula; the active horizon
    only matters for the sampler.
    """
    for t in range(1, s.t_base + 1):
        ab_t = s.alpha_bar_at(t)
        ab_prev = s.alpha_bar_at(t - 1)
        sig = float(np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * s.beta_at(t)))
        yield (
            t,
            s.beta_at(t),
            ab_t,
            float(np.sqrt(ab_t)),
            float(np.sqrt(1.0 - ab_t)),
            sig,
        )

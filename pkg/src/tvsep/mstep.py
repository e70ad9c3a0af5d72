"""Parameter updates and the variational objective.

``expected_complete_loglik`` is the expectation of the joint log-density
under the factorized posterior; ``free_energy`` adds the posterior entropies
and is the quantity the VEM iterations never decrease.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .estep import channel_moment
from .numerics import DEFAULT_JITTER, hermitianize, logdet_hpd

NOISE_FLOOR = 1e-7
LOG_PI = np.log(np.pi)
LOG_PI_E = np.log(np.pi * np.e)


@dataclass
class ChannelPrior:
    mean: np.ndarray  # (F, IJ) prior mean of the first mixing vector
    evolution_cov: np.ndarray  # (F, IJ, IJ)
    noise_var: np.ndarray  # (F,)

    def __post_init__(self):
        self.noise_var = np.asarray(self.noise_var, dtype=float)
        if np.any(self.noise_var <= 0):
            raise ValueError("noise variances must be positive")

    def copy(self):
        return ChannelPrior(self.mean.copy(), self.evolution_cov.copy(), self.noise_var.copy())


def _residual_power(x, A, s_mean, U, Qs):
    """Per-bin ``E||x - A s||^2`` under the factorized posterior, ``(F, L)``."""
    As = np.einsum("...ij,...j->...i", A, s_mean)
    cross = np.einsum("...i,...i->...", np.conj(x), As).real
    trUQ = np.einsum("...jr,...rj->...", U, Qs).real
    return np.sum(np.abs(x) ** 2, axis=-1) - 2.0 * cross + trUQ


def update_noise_variance(x, A, s_mean, U, Qs, regularizer=NOISE_FLOOR):
    """Closed-form noise variance per frequency, ``(F,)``.

    Inputs are per-bin arrays with shape ``(F, L, ...)``.
    """
    I = x.shape[-1]
    raw = np.mean(_residual_power(x, A, s_mean, U, Qs), axis=-1) / I
    if np.any(raw < 0):
        warnings.warn(
            f"negative noise variance in {int(np.sum(raw < 0))} bins, clamped",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.maximum(raw, 0.0) + regularizer


def update_prior_mean(a_mean):
    """The first-frame posterior mean, ``(F, IJ)``."""
    return np.array(a_mean[..., 0, :])


def _difference_moment(pair_moment):
    """``E[(a_{l+1} - a_l)(a_{l+1} - a_l)^H]`` summed over frames."""
    n = pair_moment.shape[-1] // 2
    Q11 = pair_moment[..., :n, :n]
    Q12 = pair_moment[..., :n, n:]
    Q21 = pair_moment[..., n:, :n]
    Q22 = pair_moment[..., n:, n:]
    return Q11 - Q12 - Q21 + Q22


def update_evolution_cov(pair_moment, first_cov, n_frames, jitter=DEFAULT_JITTER):
    """Closed-form evolution covariance, hermitianized and PSD-repaired."""
    cov = hermitianize((_difference_moment(pair_moment) + first_cov) / n_frames)
    eig_min = np.linalg.eigvalsh(cov)[..., 0]
    bad = eig_min < 0
    if np.any(bad):
        warnings.warn(
            f"evolution covariance not PSD in {int(bad.sum())} bins, repaired",
            RuntimeWarning,
            stacklevel=2,
        )
        n = cov.shape[-1]
        shift = np.where(bad, jitter - eig_min, 0.0)
        cov = cov + shift[..., None, None] * np.eye(n)
    return cov


def _pair_moment_exact(mix):
    outer = mix.pair_mean[..., :, None] * np.conj(mix.pair_mean[..., None, :])
    return np.sum(mix.pair_cov + outer, axis=-3)


def loglik_terms(x, mix, src, model, prior):
    """The four parts of the expected complete-data log-likelihood.

    Returns a dict with ``observation``, ``components``, ``transition`` and
    ``initial`` scalars.
    """
    F, L, I = x.shape
    n = mix.mean.shape[-1]
    cm = channel_moment(mix.mean, mix.cov, I)
    v = prior.noise_var
    resid = _residual_power(x, cm.A, src.mean, cm.U, src.moment)
    observation = np.sum(-I * (LOG_PI + np.log(v))[:, None] - resid / v[:, None])

    d = model.component_variances()  # (F, L, K)
    Qcc = np.moveaxis(src.comp_moment, 0, -1)
    components = np.sum(-LOG_PI - np.log(d) - Qcc / d)

    P = np.linalg.inv(prior.evolution_cov)
    logdet = logdet_hpd(prior.evolution_cov).real + n * LOG_PI
    transition = 0.0
    if L > 1:
        D = _difference_moment(_pair_moment_exact(mix))
        transition = np.sum(-(L - 1) * logdet - np.einsum("fij,fji->f", P, D).real)

    e = mix.mean[:, 0, :] - prior.mean
    E0 = mix.cov[:, 0] + e[:, :, None] * np.conj(e[:, None, :])
    initial = np.sum(-logdet - np.einsum("fij,fji->f", P, E0).real)
    return {
        "observation": float(observation),
        "components": float(components),
        "transition": float(transition),
        "initial": float(initial),
    }


def expected_complete_loglik(x, mix, src, model, prior):
    """Expected complete-data log-likelihood under the current posteriors.

    ``x`` is the mixture arranged ``(F, L, I)``.
    """
    return sum(loglik_terms(x, mix, src, model, prior).values())


def chain_entropy(mix):
    """Entropy of the Markov posterior over each frequency's mixing chain."""
    L = mix.mean.shape[-2]
    n = mix.mean.shape[-1]
    if L == 1:
        return float(np.sum(n * LOG_PI_E + logdet_hpd(mix.cov[..., 0, :, :]).real))
    pair = np.sum(2 * n * LOG_PI_E + logdet_hpd(mix.pair_cov).real)
    inner = np.sum(n * LOG_PI_E + logdet_hpd(mix.cov[..., 1:-1, :, :]).real)
    return float(pair - inner)


def component_entropy(src):
    """Entropy of the component posteriors, frozen when they were computed."""
    K = src.comp_moment.shape[0]
    return float(np.sum(K * LOG_PI_E + src.comp_logdet))


def free_energy(x, mix, src, model, prior):
    """Variational lower bound on the log-evidence."""
    return (
        expected_complete_loglik(x, mix, src, model, prior)
        + chain_entropy(mix)
        + component_entropy(src)
    )

"""Forward-backward smoothing of the mixing-vector chain (E-A step).

Per frequency bin the mixing vector follows a random walk
``a_l = a_{l-1} + N(0, evolution_cov)`` started at ``N(prior_mean,
evolution_cov)``. Each frame contributes a Gaussian factor in precision form
(``precision``, ``info``) built from the source posterior, so the problem is a
linear-Gaussian chain.

The recursions only add Hermitian matrices and invert them. The backward
messages are kept in information form and start from a flat message at the
last frame, which keeps the last frame from being counted twice.

All arrays carry arbitrary leading batch axes (typically the frequency axis),
followed by the frame axis where relevant.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .numerics import DEFAULT_JITTER, hermitianize, kron_identity, regularized_inverse


@dataclass
class InstantStats:
    precision: np.ndarray  # (..., L, n, n)
    info: np.ndarray  # (..., L, n): precision @ measured vector

    @property
    def n_frames(self):
        return self.info.shape[-2]


@dataclass
class ForwardStats:
    mean: np.ndarray  # (..., L, n)
    cov: np.ndarray  # (..., L, n, n)
    precision: np.ndarray  # (..., L, n, n)


@dataclass
class BackwardStats:
    """Backward messages; frame ``l`` summarizes the data of frames ``> l``.

    ``precision``/``shift`` describe the message at each frame in information
    form (zero at the last frame). ``zeta_cov``/``zeta_mean`` describe the
    same data as seen by the next state, before the transition noise is
    added; they have ``L - 1`` frames.
    """

    precision: np.ndarray  # (..., L, n, n)
    shift: np.ndarray  # (..., L, n)
    zeta_cov: np.ndarray  # (..., L-1, n, n)
    zeta_precision: np.ndarray  # (..., L-1, n, n)
    zeta_mean: np.ndarray  # (..., L-1, n)
    evolution_cov: np.ndarray  # (..., n, n)

    @property
    def cov(self):
        """Message covariances for frames ``< L``; the last one is infinite."""
        return self.evolution_cov[..., None, :, :] + self.zeta_cov

    @property
    def mean(self):
        return self.zeta_mean


@dataclass
class MixingPosterior:
    mean: np.ndarray  # (..., L, n)
    cov: np.ndarray  # (..., L, n, n)
    pair_mean: np.ndarray  # (..., L-1, 2n) stacked [a_{l+1}; a_l]
    pair_cov: np.ndarray  # (..., L-1, 2n, 2n)
    pair_moment: np.ndarray  # (..., 2n, 2n) summed over l

    @property
    def second_moment(self):
        m = self.mean
        return hermitianize(self.cov + m[..., :, None] * np.conj(m[..., None, :]))


def instantaneous_stats(x, s_hat, Qs, v):
    """Per-frame Gaussian factor on the mixing vector in precision form.

    ``x`` is ``(..., I)``, ``s_hat`` ``(..., J)``, ``Qs`` ``(..., J, J)`` and
    ``v`` broadcasts against the leading axes. Returns
    ``precision = kron(Qs^T, I_I) / v`` and ``info = vec(x s_hat^H) / v``.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("noise variance must be positive")
    x = np.asarray(x)
    s_hat = np.asarray(s_hat)
    I = x.shape[-1]
    J = s_hat.shape[-1]
    precision = kron_identity(np.swapaxes(Qs, -1, -2), I) / v[..., None, None]
    outer = np.conj(s_hat)[..., :, None] * x[..., None, :]  # (..., J, I)
    info = outer.reshape(outer.shape[:-2] + (J * I,)) / v[..., None]
    return InstantStats(hermitianize(precision), info)


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def forward_pass(prior_mean, evolution_cov, stats, jitter=DEFAULT_JITTER):
    """Filtering recursion; frame 1 fuses the prior with the first factor."""
    Lam, b = stats.precision, stats.info
    L = b.shape[-2]
    if L < 1:
        raise ValueError("need at least one frame")
    prior_prec = regularized_inverse(evolution_cov, jitter)
    mean = np.empty_like(b)
    cov = np.empty_like(Lam)
    prec = np.empty_like(Lam)

    prec[..., 0, :, :] = hermitianize(Lam[..., 0, :, :] + prior_prec)
    cov[..., 0, :, :] = regularized_inverse(prec[..., 0, :, :], jitter)
    mean[..., 0, :] = _mv(cov[..., 0, :, :], b[..., 0, :] + _mv(prior_prec, prior_mean))
    for l in range(1, L):
        pred_prec = regularized_inverse(cov[..., l - 1, :, :] + evolution_cov, jitter)
        prec[..., l, :, :] = hermitianize(Lam[..., l, :, :] + pred_prec)
        cov[..., l, :, :] = regularized_inverse(prec[..., l, :, :], jitter)
        mean[..., l, :] = _mv(cov[..., l, :, :], b[..., l, :] + _mv(pred_prec, mean[..., l - 1, :]))
    return ForwardStats(mean, cov, prec)


def backward_pass(evolution_cov, stats, jitter=DEFAULT_JITTER):
    """Backward information recursion started from a flat message at frame L."""
    Lam, b = stats.precision, stats.info
    L = b.shape[-2]
    n = b.shape[-1]
    batch = b.shape[:-2]
    precision = np.zeros(batch + (L, n, n), dtype=complex)
    shift = np.zeros(batch + (L, n), dtype=complex)
    zeta_cov = np.empty(batch + (L - 1, n, n), dtype=complex)
    zeta_prec = np.empty(batch + (L - 1, n, n), dtype=complex)
    zeta_mean = np.empty(batch + (L - 1, n), dtype=complex)
    for l in range(L - 2, -1, -1):
        zeta_prec[..., l, :, :] = hermitianize(Lam[..., l + 1, :, :] + precision[..., l + 1, :, :])
        zeta_cov[..., l, :, :] = regularized_inverse(zeta_prec[..., l, :, :], jitter)
        zeta_mean[..., l, :] = _mv(zeta_cov[..., l, :, :], b[..., l + 1, :] + shift[..., l + 1, :])
        precision[..., l, :, :] = regularized_inverse(evolution_cov + zeta_cov[..., l, :, :], jitter)
        shift[..., l, :] = _mv(precision[..., l, :, :], zeta_mean[..., l, :])
    return BackwardStats(precision, shift, zeta_cov, zeta_prec, zeta_mean, np.asarray(evolution_cov))


def marginal_posterior(fwd, bwd, jitter=DEFAULT_JITTER):
    """Fuse forward and backward messages into per-frame marginals.

    The last frame has no backward information, so its marginal is the
    filtered estimate itself.
    """
    cov = regularized_inverse(fwd.precision + bwd.precision, jitter)
    info = _mv(fwd.precision, fwd.mean) + bwd.shift
    mean = _mv(cov, info)
    cov[..., -1, :, :] = fwd.cov[..., -1, :, :]
    mean[..., -1, :] = fwd.mean[..., -1, :]
    return mean, cov


def pairwise_joint(evolution_cov, fwd, bwd, jitter=DEFAULT_JITTER):
    """Joint posteriors of ``[a_{l+1}; a_l]`` for ``l = 1..L-1``."""
    n = fwd.mean.shape[-1]
    L = fwd.mean.shape[-2]
    batch = fwd.mean.shape[:-2]
    if L < 2:
        return (
            np.zeros(batch + (0, 2 * n), dtype=complex),
            np.zeros(batch + (0, 2 * n, 2 * n), dtype=complex),
        )
    P = regularized_inverse(evolution_cov, jitter)[..., None, :, :]
    joint_prec = np.empty(batch + (L - 1, 2 * n, 2 * n), dtype=complex)
    joint_prec[..., :n, :n] = bwd.zeta_precision + P
    joint_prec[..., :n, n:] = -P
    joint_prec[..., n:, :n] = -P
    joint_prec[..., n:, n:] = fwd.precision[..., :-1, :, :] + P
    pair_cov = regularized_inverse(joint_prec, jitter)
    info = np.concatenate(
        [
            _mv(bwd.zeta_precision, bwd.zeta_mean),
            _mv(fwd.precision[..., :-1, :, :], fwd.mean[..., :-1, :]),
        ],
        axis=-1,
    )
    return _mv(pair_cov, info), pair_cov


def pairwise_and_accumulate(evolution_cov, fwd, bwd, jitter=DEFAULT_JITTER):
    """Pairwise joints plus their summed second moment.

    Each joint covariance is regularized by ``jitter * I`` before it enters
    the accumulated moment. Returns ``(moment, pair_mean, pair_cov)``.
    """
    pair_mean, pair_cov = pairwise_joint(evolution_cov, fwd, bwd, jitter)
    n2 = pair_mean.shape[-1]
    if pair_mean.shape[-2] == 0:
        warnings.warn("fewer than two frames: no pairwise moments", RuntimeWarning, stacklevel=2)
    reg = pair_cov + jitter * np.eye(n2)
    outer = pair_mean[..., :, None] * np.conj(pair_mean[..., None, :])
    moment = hermitianize(np.sum(reg + outer, axis=-3))
    return moment, pair_mean, pair_cov


def smooth(prior_mean, evolution_cov, stats, jitter=DEFAULT_JITTER):
    """Run the full E-A step and return a :class:`MixingPosterior`."""
    fwd = forward_pass(prior_mean, evolution_cov, stats, jitter)
    bwd = backward_pass(evolution_cov, stats, jitter)
    mean, cov = marginal_posterior(fwd, bwd, jitter)
    if stats.n_frames >= 2:
        moment, pair_mean, pair_cov = pairwise_and_accumulate(evolution_cov, fwd, bwd, jitter)
    else:
        n = mean.shape[-1]
        moment = np.zeros(mean.shape[:-2] + (2 * n, 2 * n), dtype=complex)
        pair_mean, pair_cov = pairwise_joint(evolution_cov, fwd, bwd, jitter)
    return MixingPosterior(mean, cov, pair_mean, pair_cov, moment)

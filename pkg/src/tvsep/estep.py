"""Source and component posteriors (E-S and E-C steps).

Given the current mixing posterior, every time-frequency bin gets a
multichannel Wiener estimate of the sources. Component statistics reuse the
``J x J`` source quantities, so no ``K x K`` matrix is ever formed.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import DEFAULT_JITTER, hermitianize, regularized_inverse, unvec

PRIOR_FLOOR = 1e-12


@dataclass
class ChannelMoment:
    U: np.ndarray  # (..., J, J), U[j, r] = E[a_j^H a_r]
    A: np.ndarray  # (..., I, J) posterior mean mixing matrix


@dataclass
class SourcePosterior:
    mean: np.ndarray  # (F, L, J)
    cov: np.ndarray  # (F, L, J, J)
    moment: np.ndarray  # (F, L, J, J)
    comp_mean: np.ndarray  # (F, L, K)
    comp_var: np.ndarray  # (F, L, K) diagonal of the component covariance
    comp_moment: np.ndarray  # (K, F, L) posterior E|c_k|^2
    comp_logdet: np.ndarray  # (F, L) log-determinant of the component covariance


def channel_moment(a_mean, a_cov, n_channels):
    """``U`` and the mean mixing matrix from the mixing-vector posterior.

    ``a_mean`` is ``(..., I*J)`` in column-wise vec order and ``a_cov`` the
    matching covariance.
    """
    I = n_channels
    n = a_mean.shape[-1]
    J = n // I
    Q = a_cov + a_mean[..., :, None] * np.conj(a_mean[..., None, :])
    blocks = Q.reshape(Q.shape[:-2] + (J, I, J, I))
    # U[j, r] = tr Q_{rj} where Q_{rj} is the (r, j) block
    U = np.einsum("...riji->...jr", blocks)
    return ChannelMoment(hermitianize(U), unvec(a_mean, I))


def source_posterior(cm, prior_var, x, v, jitter=DEFAULT_JITTER):
    """Posterior mean, covariance and second moment of the sources.

    ``prior_var`` is ``(..., J)``, ``x`` ``(..., I)`` and ``v`` broadcasts
    against the leading axes.
    """
    v = np.asarray(v, dtype=float)[..., None, None]
    prior_var = np.maximum(prior_var, PRIOR_FLOOR)
    J = prior_var.shape[-1]
    prec = cm.U / v
    idx = np.arange(J)
    prec[..., idx, idx] += 1.0 / prior_var
    cov = regularized_inverse(prec, jitter)
    Ahx = np.einsum("...ij,...i->...j", np.conj(cm.A), x)
    mean = np.einsum("...jr,...r->...j", cov, Ahx) / v[..., 0]
    moment = hermitianize(cov + mean[..., :, None] * np.conj(mean[..., None, :]))
    return mean, cov, moment


def component_posterior_diag(cm, comp_var, partition, s_mean, s_cov, x, v):
    """Diagonal component posterior from the source posterior.

    ``comp_var`` holds the prior variances ``w_fk h_kl`` as ``(..., K)``.
    Returns ``(mean, variance, second_moment)``, each ``(..., K)``.
    """
    v = np.asarray(v, dtype=float)[..., None]
    comp_var = np.maximum(comp_var, PRIOR_FLOOR)
    J = s_mean.shape[-1]
    src_var = np.zeros(comp_var.shape[:-1] + (J,))
    for j in range(J):
        src_var[..., j] = comp_var[..., partition == j].sum(axis=-1)
    US = np.einsum("...jr,...rj->...j", cm.U, s_cov).real
    var = comp_var * (1.0 - comp_var * US[..., partition] / (v * src_var[..., partition]))
    var = np.clip(var, 0.0, comp_var)
    Ahx = np.einsum("...ij,...i->...j", np.conj(cm.A), x)
    Us = np.einsum("...jr,...r->...j", cm.U, s_mean)
    resid = (Ahx - Us) / v
    mean = comp_var * resid[..., partition]
    return mean, var, var + np.abs(mean) ** 2


def component_logdet(cm, comp_var, src_var, v):
    """``log|Sigma_c|`` without forming it, by the determinant lemma.

    ``log|Sigma_c| = sum_k log(w h) - log|I + U diag(p) / v|`` with ``p`` the
    prior source variances.
    """
    v = np.asarray(v, dtype=float)[..., None, None]
    comp_var = np.maximum(comp_var, PRIOR_FLOOR)
    src_var = np.maximum(src_var, PRIOR_FLOOR)
    J = src_var.shape[-1]
    M = np.eye(J) + cm.U * src_var[..., None, :] / v
    _, logdet = np.linalg.slogdet(M)
    return np.sum(np.log(comp_var), axis=-1) - logdet.real


def estep_sources(x, a_mean, a_cov, model, v, jitter=DEFAULT_JITTER):
    """Run E-S then E-C for every bin.

    ``x`` is ``(F, L, I)``, ``a_mean``/``a_cov`` are the mixing posterior
    arrays ``(F, L, IJ)``/``(F, L, IJ, IJ)`` and ``v`` is ``(F,)``.
    """
    I = x.shape[-1]
    cm = channel_moment(a_mean, a_cov, I)
    v_fl = np.broadcast_to(np.asarray(v, dtype=float)[:, None], x.shape[:2])
    src_var = model.source_variances()
    comp_var = model.component_variances()
    mean, cov, moment = source_posterior(cm, src_var, x, v_fl, jitter)
    c_mean, c_var, c_moment = component_posterior_diag(
        cm, comp_var, model.partition, mean, cov, x, v_fl
    )
    logdet = component_logdet(cm, comp_var, src_var, v_fl)
    post = SourcePosterior(mean, cov, moment, c_mean, c_var, np.moveaxis(c_moment, -1, 0), logdet)
    return post, cm

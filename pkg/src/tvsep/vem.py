"""Variational EM driver: initialization, iterations and image rebuild."""

from dataclasses import dataclass, field
import time

import numpy as np

from . import nmf as nmf_mod
from .estep import channel_moment, estep_sources
from .mstep import (
    ChannelPrior,
    free_energy,
    update_evolution_cov,
    update_noise_variance,
    update_prior_mean,
)
from .numerics import DEFAULT_JITTER
from .smoother import instantaneous_stats, smooth
from .stft import TfTensor, synthesize


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared during the iterations."""


@dataclass
class VemConfig:
    iterations: int = 100
    components_per_source: int = 25
    jitter: float = DEFAULT_JITTER
    init_noise_scale: float = 1000.0
    init_posterior_cov_scale: float = 1e3
    init_evolution_cov_scale: float = 1.0
    evolution_cov_mode: str = "learned"  # or "pinned"
    pinned_evolution_cov: float = 1e-10
    seed: int = 0
    # evaluate the free energy after every individual E/M update (slow)
    monitor_steps: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.components_per_source < 1:
            raise ValueError("components_per_source must be >= 1")
        if self.evolution_cov_mode not in ("learned", "pinned"):
            raise ValueError("evolution_cov_mode must be 'learned' or 'pinned'")
        for name in (
            "init_noise_scale",
            "init_posterior_cov_scale",
            "init_evolution_cov_scale",
            "pinned_evolution_cov",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class InitBundle:
    a_mean: np.ndarray  # (F, L, IJ)
    a_cov: np.ndarray  # (F, L, IJ, IJ)
    model: nmf_mod.NmfModel
    prior: ChannelPrior


@dataclass
class SeparationResult:
    images: np.ndarray  # (J, I, T)
    image_coefs: np.ndarray  # (J, I, F, L)
    model: nmf_mod.NmfModel
    prior: ChannelPrior
    mixing: object
    sources: object
    trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)


def mixture_bins(x):
    """``(I, F, L)`` tensor data rearranged to ``(F, L, I)``."""
    data = x.data if isinstance(x, TfTensor) else np.asarray(x)
    return np.ascontiguousarray(np.transpose(data, (1, 2, 0)))


def make_init(x, model, a_init="ones", cfg=None):
    """Initial posterior statistics and parameters.

    ``a_init`` is ``"ones"`` (all mixing entries set to one) or an array of
    shape ``(F, L, I*J)`` holding the initial mixing-vector sequence.
    """
    cfg = cfg or VemConfig()
    X = mixture_bins(x)
    F, L, I = X.shape
    J = model.n_sources
    n = I * J
    if model.W.shape[0] != F or model.H.shape[1] != L:
        raise ValueError("NMF factors do not match the mixture dimensions")
    if np.any(model.W <= 0) or np.any(model.H <= 0):
        raise ValueError("NMF factors must be strictly positive")
    if isinstance(a_init, str):
        if a_init != "ones":
            raise ValueError(f"unknown mixing initialization {a_init!r}")
        a_mean = np.ones((F, L, n), dtype=complex)
    else:
        a_mean = np.array(a_init, dtype=complex)
        if a_mean.shape != (F, L, n):
            raise ValueError(f"provided mixing sequence must have shape {(F, L, n)}")
    eye = np.eye(n, dtype=complex)
    a_cov = np.broadcast_to(cfg.init_posterior_cov_scale * eye, (F, L, n, n)).copy()
    if cfg.evolution_cov_mode == "pinned":
        evo = cfg.pinned_evolution_cov
    else:
        evo = cfg.init_evolution_cov_scale
    prior = ChannelPrior(
        mean=a_mean[:, 0, :].copy(),
        evolution_cov=np.broadcast_to(evo * eye, (F, n, n)).copy(),
        noise_var=cfg.init_noise_scale * np.mean(np.abs(X) ** 2, axis=(1, 2)),
    )
    return InitBundle(a_mean, a_cov, model.copy(), prior)


def _check_finite(name, arr, iteration):
    """Raise :class:`NonFiniteError` naming the first bad bin (and frame).

    ``arr`` is indexed by frequency first and, for per-frame quantities,
    by frame second; ``iteration=0`` means before the first iteration.
    """
    arr = np.asarray(arr)
    if np.all(np.isfinite(arr)):
        return
    loc = np.argwhere(~np.isfinite(arr))[0]
    where = f"bin f={loc[0]}"
    if arr.ndim >= 2 and name not in ("noise variance",):
        where += f", frame l={loc[1]}"
    when = f"iteration {iteration}" if iteration else "input check"
    raise NonFiniteError(f"non-finite {name} at {when}, {where}")


def reconstruct_images(a_mean, s_mean, n_channels, template=None):
    """Source-image coefficients ``A[:, j] * s_j`` and their time signals.

    Returns ``(coefs, images)`` with ``coefs`` shaped ``(J, I, F, L)``;
    ``images`` is ``None`` without an STFT ``template``.
    """
    A = a_mean.reshape(a_mean.shape[:-1] + (-1, n_channels))  # (F, L, J, I)
    coefs = np.transpose(A * s_mean[..., :, None], (2, 3, 0, 1))
    if template is None:
        return coefs, None
    images = np.stack([synthesize(template.with_data(c)) for c in coefs])
    return coefs, images


def run_vem(x, init, cfg=None, callback=None):
    """Run the variational EM iterations on an STFT mixture.

    Each iteration runs E-S, E-C, then the E-A smoother, then the noise,
    channel and NMF updates. The free energy is recorded after every
    iteration; ``callback(iteration, state)`` is called if given.
    """
    cfg = cfg or VemConfig()
    X = mixture_bins(x)
    F, L, I = X.shape
    model = init.model.copy()
    prior = init.prior.copy()
    J = model.n_sources
    n = I * J
    if init.a_mean.shape != (F, L, n) or init.a_cov.shape != (F, L, n, n):
        raise ValueError("initial mixing posterior does not match the mixture")
    if model.W.shape[0] != F or model.H.shape[1] != L:
        raise ValueError("NMF factors do not match the mixture dimensions")
    if prior.mean.shape != (F, n) or prior.evolution_cov.shape != (F, n, n):
        raise ValueError("channel prior does not match the mixture")
    _check_finite("mixture", X, 0)
    _check_finite("initial mixing posterior", init.a_mean, 0)
    jitter = cfg.jitter
    a_mean, a_cov = init.a_mean, init.a_cov
    mix = None
    trace = []
    step_trace = []
    start = time.perf_counter()

    for it in range(1, cfg.iterations + 1):
        src, _ = estep_sources(X, a_mean, a_cov, model, prior.noise_var, jitter)
        _check_finite("source posterior", src.mean, it)
        if cfg.monitor_steps and mix is not None:
            step_trace.append((it, "E-S/C", free_energy(X, mix, src, model, prior)))

        stats = instantaneous_stats(X, src.mean, src.moment, prior.noise_var[:, None])
        mix = smooth(prior.mean, prior.evolution_cov, stats, jitter)
        _check_finite("mixing posterior", mix.mean, it)
        a_mean, a_cov = mix.mean, mix.cov
        if cfg.monitor_steps:
            step_trace.append((it, "E-A", free_energy(X, mix, src, model, prior)))

        cm = channel_moment(a_mean, a_cov, I)
        noise_var = update_noise_variance(X, cm.A, src.mean, cm.U, src.moment)
        _check_finite("noise variance", noise_var, it)
        prior = ChannelPrior(prior.mean, prior.evolution_cov, noise_var)
        if cfg.monitor_steps:
            step_trace.append((it, "M-v", free_energy(X, mix, src, model, prior)))

        mean = update_prior_mean(a_mean)
        evo = prior.evolution_cov
        if cfg.evolution_cov_mode == "learned":
            evo = update_evolution_cov(mix.pair_moment, a_cov[:, 0], L, jitter)
        _check_finite("evolution covariance", evo, it)
        prior = ChannelPrior(mean, evo, prior.noise_var)
        if cfg.monitor_steps:
            step_trace.append((it, "M-A", free_energy(X, mix, src, model, prior)))

        model = nmf_mod.rescale(nmf_mod.mstep_update(model, src.comp_moment))
        _check_finite("NMF factors", model.W, it)
        _check_finite("NMF factors", model.H.T, it)

        fe = free_energy(X, mix, src, model, prior)
        if cfg.monitor_steps:
            step_trace.append((it, "M-C", fe))
        trace.append((it, fe, time.perf_counter() - start))
        if callback is not None:
            callback(it, {"mixing": mix, "sources": src, "model": model, "prior": prior})

    template = x if isinstance(x, TfTensor) else None
    coefs, images = reconstruct_images(a_mean, src.mean, I, template)
    return SeparationResult(images, coefs, model, prior, mix, src, trace, step_trace)


def write_trace(path, trace):
    """Write ``iteration free_energy wall_time`` lines."""
    with open(path, "w") as fh:
        fh.write("# iteration free_energy wall_time_s\n")
        for it, fe, t in trace:
            fh.write(f"{it} {fe:.12e} {t:.6f}\n")

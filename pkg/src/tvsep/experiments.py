"""End-to-end scenarios: simulate, separate, score.

Seeds are split with :class:`numpy.random.SeedSequence` so every stage draws
from its own stream: ``spawn`` order is (sources/model, channel, mixture,
NMF initialization).
"""

from dataclasses import dataclass, replace

import numpy as np

from .metrics import bss_metrics
from .mixsim import (
    TrajectorySpec,
    generate_stft_mixture,
    random_channel,
    random_fir,
    random_nmf_model,
    render_moving_mixture,
    semi_blind_nmf_init,
    semi_blind_nmf_init_tf,
    synthetic_source,
)
from .nmf import NmfModel
from .stft import TfTensor, analyze, synthesize
from .vem import VemConfig, make_init, run_vem


def split_seed(seed, n=4):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class TrialResult:
    input_sdr: np.ndarray
    input_sir: np.ndarray
    output_sdr: np.ndarray
    output_sir: np.ndarray
    free_energy: np.ndarray

    @property
    def sdr_gain(self):
        return float(np.mean(self.output_sdr - self.input_sdr))


def _score(estimates, references, mixture, proj_taps):
    out = bss_metrics(estimates, references, proj_taps)
    inp = bss_metrics(np.broadcast_to(mixture, references.shape), references, proj_taps)
    return inp, out


def model_matched_trial(
    seed,
    cfg=None,
    F=129,
    L=64,
    n_channels=2,
    n_sources=2,
    components_per_source=10,
    evolution_var=0.01,
    noise_var=0.01,
    snr_db=20.0,
    a_init="center",
    proj_taps=32,
):
    """Separate a mixture sampled from the model itself.

    ``a_init`` is ``"ones"``, ``"center"`` (true mixing vector of the middle
    frame repeated over all frames) or ``"truth"``.
    """
    cfg = cfg or VemConfig(components_per_source=components_per_source)
    s_model, s_chan, s_mix, s_init = split_seed(seed)
    truth = random_nmf_model(F, L, components_per_source, n_sources, seed=s_model)
    channel = random_channel(F, n_channels, n_sources, evolution_var, noise_var, seed=s_chan)
    mix = generate_stft_mixture(truth, channel, n_channels, seed=s_mix)

    init_seeds = np.random.SeedSequence(s_init).spawn(n_sources)
    factors = []
    for j in range(n_sources):
        others = [mix.sources[..., r] for r in range(n_sources) if r != j]
        factors.append(
            semi_blind_nmf_init_tf(
                mix.sources[..., j], others, snr_db, components_per_source,
                seed=int(init_seeds[j].generate_state(1)[0]),
            )
        )
    model = NmfModel.stack(factors)
    if a_init == "center":
        a0 = np.repeat(mix.mixing[:, L // 2 : L // 2 + 1, :], L, axis=1)
    elif a_init == "truth":
        a0 = mix.mixing
    else:
        a0 = a_init
    init = make_init(mix.x, model, a0, cfg)
    res = run_vem(mix.x, init, cfg)

    refs = np.stack([synthesize(mix.x.with_data(img)) for img in mix.images])
    mixture = synthesize(mix.x)
    inp, out = _score(res.images, refs, mixture, proj_taps)
    fe = np.array([t[1] for t in res.trace])
    return TrialResult(inp.sdr, inp.sir, out.sdr, out.sir, fe)


@dataclass
class MovingScene:
    mixture: np.ndarray  # (I, T)
    images: np.ndarray  # (J, I, T)
    sources: np.ndarray  # (J, T)
    trajectories: list
    sample_rate: float


def moving_fir_scene(seed, n_channels=2, n_sources=2, duration=2.0, sample_rate=16000.0, taps=32):
    """Speech-like sources rendered through crossfading random FIR filters."""
    s_src, s_filt, _, _ = split_seed(seed)
    rng_src = np.random.default_rng(s_src)
    rng_filt = np.random.default_rng(s_filt)
    T = int(round(duration * sample_rate))
    sources = np.stack([synthetic_source(rng_src, T, sample_rate) for _ in range(n_sources)])
    trajectories = [
        TrajectorySpec.linear(random_fir(rng_filt, n_channels, taps), random_fir(rng_filt, n_channels, taps))
        for _ in range(n_sources)
    ]
    mixture, images = render_moving_mixture(sources, trajectories)
    return MovingScene(mixture, images, sources, trajectories, sample_rate)


def separate_signal(mixture, nmf_factors, cfg, window_size=512, sample_rate=16000.0, a_init="ones"):
    """STFT, VEM and inverse STFT of an ``(I, T)`` mixture."""
    x = analyze(mixture, window_size, sample_rate=sample_rate)
    model = NmfModel.stack(nmf_factors)
    init = make_init(x, model, a_init, cfg)
    return run_vem(x, init, cfg)


def semi_blind_factors(sources, snr_db, components_per_source, window_size, seed, iterations=200):
    seeds = np.random.SeedSequence(seed).spawn(len(sources))
    factors = []
    for j, target in enumerate(sources):
        others = [s for r, s in enumerate(sources) if r != j]
        factors.append(
            semi_blind_nmf_init(
                target, others, snr_db, components_per_source, window_size,
                seed=int(seeds[j].generate_state(1)[0]), iterations=iterations,
            )
        )
    return factors


def moving_fir_trial(
    seed,
    cfg=None,
    n_channels=2,
    n_sources=2,
    duration=2.0,
    sample_rate=16000.0,
    taps=32,
    snr_db=20.0,
    window_size=512,
    proj_taps=32,
):
    """Moving-source scene, semi-blind NMF start, all-ones mixing start."""
    cfg = cfg or VemConfig()
    scene = moving_fir_scene(seed, n_channels, n_sources, duration, sample_rate, taps)
    s_init = split_seed(seed)[3]
    factors = semi_blind_factors(
        scene.sources, snr_db, cfg.components_per_source, window_size, s_init
    )
    res = separate_signal(scene.mixture, factors, cfg, window_size, sample_rate)
    inp, out = _score(res.images, scene.images, scene.mixture, proj_taps)
    fe = np.array([t[1] for t in res.trace])
    return TrialResult(inp.sdr, inp.sir, out.sdr, out.sir, fe)

"""Synthetic mixtures with known ground truth.

Two generators are provided: one samples the probabilistic model directly in
the STFT domain, the other renders time-domain signals through FIR filters
that are linearly interpolated from sample to sample.
"""

from dataclasses import dataclass

import numpy as np

from .mstep import ChannelPrior
from .nmf import NmfModel, kl_nmf_fit
from .stft import TfTensor, analyze


def complex_normal(rng, shape, var=1.0):
    """Proper complex Gaussian samples with the given variance."""
    scale = np.sqrt(np.asarray(var) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class StftMixture:
    x: TfTensor
    images: np.ndarray  # (J, I, F, L) true image coefficients
    mixing: np.ndarray  # (F, L, IJ) true mixing vectors
    sources: np.ndarray  # (F, L, J)
    components: np.ndarray  # (F, L, K)
    noise: np.ndarray  # (F, L, I)


def generate_stft_mixture(model, channel, n_channels, seed=None, sample_rate=16000.0):
    """Sample components, a mixing random walk, noise and their mixture.

    ``channel.mean`` and ``channel.evolution_cov`` drive the mixing walk and
    ``channel.noise_var`` the sensor noise. The window size of the returned
    tensor is ``2 (F - 1)``.
    """
    rng = np.random.default_rng(seed)
    F, K = model.W.shape
    L = model.H.shape[1]
    I = n_channels
    J = model.n_sources
    n = I * J
    if channel.mean.shape != (F, n):
        raise ValueError(f"channel mean must have shape {(F, n)}")
    comps = complex_normal(rng, (F, L, K), model.component_variances())
    sources = np.zeros((F, L, J), dtype=complex)
    for j in range(J):
        sources[..., j] = comps[..., model.partition == j].sum(axis=-1)

    chol = np.linalg.cholesky(channel.evolution_cov + 1e-300 * np.eye(n))
    steps = np.einsum("fij,flj->fli", chol, complex_normal(rng, (F, L, n)))
    mixing = channel.mean[:, None, :] + np.cumsum(steps, axis=1)

    A = mixing.reshape(F, L, J, I)  # A[f, l, j, :] is column j
    images = np.transpose(A * sources[..., :, None], (2, 3, 0, 1))  # (J, I, F, L)
    noise = complex_normal(rng, (F, L, I), channel.noise_var[:, None, None])
    x = images.sum(axis=0) + np.transpose(noise, (2, 0, 1))
    window = 2 * (F - 1)
    tf = TfTensor(x, float(sample_rate), window, window // 2, window // 2 * L)
    return StftMixture(tf, images, mixing, sources, comps, noise)


def random_nmf_model(F, L, components_per_source, n_sources, seed=None, shape=0.5):
    """Gamma-distributed NMF factors, a sparse-ish spectrogram per source."""
    rng = np.random.default_rng(seed)
    K = components_per_source * n_sources
    W = rng.gamma(shape, 1.0 / shape, size=(F, K))
    H = rng.gamma(shape, 1.0 / shape, size=(K, L))
    W = np.maximum(W, 1e-3)
    H = np.maximum(H, 1e-3)
    partition = np.repeat(np.arange(n_sources), components_per_source)
    return NmfModel(W, H, partition)


def random_channel(F, n_channels, n_sources, evolution_var, noise_var, seed=None):
    """Random mixing prior with an isotropic evolution covariance."""
    rng = np.random.default_rng(seed)
    n = n_channels * n_sources
    mean = complex_normal(rng, (F, n))
    evo = np.broadcast_to(evolution_var * np.eye(n, dtype=complex), (F, n, n)).copy()
    return ChannelPrior(mean, evo, np.full(F, float(noise_var)))


# -- time-domain rendering -------------------------------------------------


@dataclass
class TrajectorySpec:
    """Filter keyframes of one source, evenly spaced over the signal.

    ``keyframes`` has shape ``(P, I, taps)`` with ``P >= 1``; a single
    keyframe is a static source.
    """

    keyframes: np.ndarray

    def __post_init__(self):
        self.keyframes = np.asarray(self.keyframes, dtype=float)
        if self.keyframes.ndim != 3 or self.keyframes.shape[0] < 1:
            raise ValueError("keyframes must be (positions, channels, taps)")

    @classmethod
    def linear(cls, start, end):
        return cls(np.stack([start, end]))

    @property
    def n_channels(self):
        return self.keyframes.shape[1]


def interpolate_filters(start_taps, end_taps, num_positions):
    """Per-tap linear interpolation between two filters."""
    start = np.asarray(start_taps, dtype=float)
    end = np.asarray(end_taps, dtype=float)
    if start.shape != end.shape:
        raise ValueError("start and end filters must have the same shape")
    if num_positions < 2:
        raise ValueError("need at least two positions")
    alpha = np.linspace(0.0, 1.0, num_positions).reshape((-1,) + (1,) * start.ndim)
    out = (1.0 - alpha) * start + alpha * end
    out[0] = start
    out[-1] = end
    return out


def keyframe_weights(n_keyframes, length):
    """Hat-function weights ``(P, T)`` placing keyframes evenly in time."""
    if n_keyframes == 1:
        return np.ones((1, length))
    pos = np.linspace(0.0, n_keyframes - 1, length)
    centers = np.arange(n_keyframes)[:, None]
    return np.maximum(0.0, 1.0 - np.abs(pos[None, :] - centers))


def render_image(source, trajectory):
    """Time-varying convolution of one mono source, ``(I, T)``.

    Each output sample uses the filter interpolated at that sample position;
    because the interpolation is linear, this equals the weighted sum of the
    keyframe convolutions.
    """
    s = np.asarray(source, dtype=float)
    T = s.shape[0]
    weights = keyframe_weights(trajectory.keyframes.shape[0], T)
    out = np.zeros((trajectory.n_channels, T))
    for wp, taps in zip(weights, trajectory.keyframes):
        for i, h in enumerate(taps):
            out[i] += wp * np.convolve(s, h)[:T]
    return out


def render_moving_mixture(sources, trajectories):
    """Render every source image and their sum.

    ``sources`` is ``(J, T)``; returns ``(mixture (I, T), images (J, I, T))``.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    if len(trajectories) != sources.shape[0]:
        raise ValueError("one trajectory per source is required")
    images = np.stack([render_image(s, tr) for s, tr in zip(sources, trajectories)])
    return images.sum(axis=0), images


def signal_power(x):
    return float(np.mean(np.asarray(x, dtype=float) ** 2))


def add_noise(signal, snr_db, seed=None):
    """Add white Gaussian noise at an exact empirical SNR."""
    signal = np.asarray(signal, dtype=float)
    if np.isinf(snr_db) and snr_db > 0:
        return signal.copy()
    p = signal_power(signal)
    if not np.isfinite(p) or p == 0:
        raise ValueError("signal must have finite nonzero power")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(signal.shape)
    noise *= np.sqrt(p / (signal_power(noise) * 10 ** (snr_db / 10)))
    return signal + noise


def mix_at_snr(target, interference, snr_db):
    """``target + g * interference`` with power ratio ``snr_db``."""
    target = np.asarray(target)
    if np.isinf(snr_db) and snr_db > 0:
        return target.copy()
    pt = np.mean(np.abs(target) ** 2)
    pi = np.mean(np.abs(interference) ** 2)
    if pi == 0:
        return target.copy()
    gain = np.sqrt(pt / (pi * 10 ** (snr_db / 10)))
    return target + gain * np.asarray(interference)


def power_spectrogram(tf_data):
    """Channel-averaged power of ``(I, F, L)`` or ``(F, L)`` coefficients."""
    p = np.abs(np.asarray(tf_data)) ** 2
    return p.mean(axis=0) if p.ndim == 3 else p


def semi_blind_nmf_init_tf(target, interferers, snr_db, n_components, seed=None, iterations=200):
    """KL-NMF of a corrupted STFT-domain source.

    ``target`` and each interferer are coefficient arrays ``(F, L)`` or
    ``(I, F, L)``.
    """
    interference = np.sum(np.asarray(interferers), axis=0) if len(interferers) else 0 * target
    corrupted = mix_at_snr(target, interference, snr_db)
    return kl_nmf_fit(power_spectrogram(corrupted), n_components, iterations, seed)


def semi_blind_nmf_init(
    target, interferers, snr_db, n_components, window_size=512, seed=None, iterations=200
):
    """KL-NMF of a source signal corrupted by the other sources at ``snr_db``.

    Time signals may be mono ``(T,)`` or multichannel ``(I, T)``; the power
    spectrogram is averaged over channels.
    """
    target = np.asarray(target, dtype=float)
    interferers = [np.asarray(s, dtype=float) for s in interferers]
    for s in interferers:
        if s.shape[-1] != target.shape[-1]:
            raise ValueError("signals must be aligned in length")
    interference = np.sum(interferers, axis=0) if interferers else np.zeros_like(target)
    corrupted = mix_at_snr(target, interference, snr_db)
    spec = analyze(corrupted, window_size).data
    return kl_nmf_fit(power_spectrogram(spec), n_components, iterations, seed)


# -- synthetic scene material ----------------------------------------------


def random_fir(rng, n_channels, taps=32, decay=6.0):
    """Exponentially decaying random filters with a small leading delay."""
    t = np.arange(taps)
    h = rng.standard_normal((n_channels, taps)) * np.exp(-t / decay)
    for i in range(n_channels):
        delay = rng.integers(0, 4)
        h[i] = np.roll(h[i], delay)
        h[i, :delay] = 0.0
        h[i, delay] += 1.0 if rng.random() < 0.5 else -1.0
    return h / np.sqrt(np.sum(h**2, axis=1, keepdims=True))


def synthetic_source(rng, length, sample_rate=16000.0, syllable=0.25):
    """Speech-like test signal: gated harmonic notes with varying pitch.

    Each note of roughly ``syllable`` seconds has a random fundamental between
    100 and 400 Hz, a 1/h harmonic roll-off and a raised-cosine envelope;
    a little noise is mixed in.
    """
    out = np.zeros(length)
    n_note = max(1, int(syllable * sample_rate))
    t = np.arange(n_note) / sample_rate
    env = np.sin(np.pi * np.arange(n_note) / n_note) ** 2
    for start in range(0, length, n_note):
        if rng.random() < 0.15:
            continue
        f0 = rng.uniform(100.0, 400.0)
        note = np.zeros(n_note)
        for h in range(1, int(0.45 * sample_rate / f0) + 1):
            note += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
        seg = note * env * rng.uniform(0.5, 1.0)
        stop = min(length, start + n_note)
        out[start:stop] += seg[: stop - start]
    out += 0.01 * rng.standard_normal(length)
    return out / np.sqrt(np.mean(out**2))

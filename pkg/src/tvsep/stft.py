"""Sine-window STFT with 50% overlap.

Analysis and synthesis both use ``w[n] = sin(pi (n + 0.5) / N)``. Since
``w^2`` sums to one over overlapping frames, plain overlap-add inverts the
analysis. Spectra use the orthonormal DFT scaling and keep the non-redundant
half (``F = N/2 + 1`` bins), so time-domain energy equals
``sum(|X_0|^2 + 2 |X_k|^2 + |X_{N/2}|^2)`` summed over frames.

Frame ``l`` covers samples ``[l*hop, l*hop + N)``. The signal is zero-padded
at the end to a multiple of ``hop`` plus one extra hop, so ``L = ceil(T/hop)``
and every sample except the first ``hop`` ones is covered by two frames.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class TfTensor:
    """Complex STFT coefficients indexed ``(channel, bin, frame)``."""

    data: np.ndarray
    sample_rate: float
    window_size: int
    hop: int
    length: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("TfTensor data must be (channels, bins, frames)")
        if self.hop * 2 != self.window_size:
            raise ValueError("hop must be window_size / 2")
        if self.data.shape[1] != self.window_size // 2 + 1:
            raise ValueError(
                f"expected {self.window_size // 2 + 1} bins, got {self.data.shape[1]}"
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def bins(self):
        return self.data.shape[1]

    @property
    def frames(self):
        return self.data.shape[2]

    def with_data(self, data):
        return TfTensor(data, self.sample_rate, self.window_size, self.hop, self.length)


def sine_window(window_size):
    n = np.arange(window_size)
    return np.sin(np.pi * (n + 0.5) / window_size)


def analyze(signal, window_size=512, hop=None, sample_rate=16000.0):
    """Forward STFT of a ``(channels, samples)`` or ``(samples,)`` array."""
    if window_size % 2:
        raise ValueError("window_size must be even")
    hop = window_size // 2 if hop is None else hop
    if hop * 2 != window_size:
        raise ValueError("only 50% overlap (hop = window_size / 2) is supported")
    x = np.atleast_2d(np.asarray(signal, dtype=float))
    length = x.shape[1]
    if length == 0:
        raise ValueError("empty signal")
    n_frames = -(-length // hop)
    padded = np.zeros((x.shape[0], (n_frames + 1) * hop))
    padded[:, :length] = x
    idx = np.arange(n_frames)[:, None] * hop + np.arange(window_size)[None, :]
    frames = padded[:, idx] * sine_window(window_size)
    spec = np.fft.rfft(frames, axis=-1, norm="ortho")
    return TfTensor(np.swapaxes(spec, 1, 2), float(sample_rate), window_size, hop, length)


def synthesize(tf):
    """Inverse STFT by windowed overlap-add; returns ``(channels, length)``."""
    if not isinstance(tf, TfTensor):
        raise TypeError("synthesize expects a TfTensor")
    N, hop = tf.window_size, tf.hop
    frames = np.fft.irfft(np.swapaxes(tf.data, 1, 2), n=N, axis=-1, norm="ortho")
    frames = frames * sine_window(N)
    n_ch, n_frames = frames.shape[0], frames.shape[1]
    out = np.zeros((n_ch, (n_frames + 1) * hop))
    # two interleaved half-frame sums implement the 50% overlap-add
    out[:, : n_frames * hop] += frames[:, :, :hop].reshape(n_ch, -1)
    out[:, hop : (n_frames + 1) * hop] += frames[:, :, hop:].reshape(n_ch, -1)
    return out[:, : tf.length]


def tf_energy(tf):
    """Time-domain-equivalent energy of a half-spectrum tensor."""
    weights = np.full(tf.bins, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return float(np.sum(weights[None, :, None] * np.abs(tf.data) ** 2))

"""SDR / SIR / SAR of multichannel source-image estimates.

Each estimate channel is decomposed by least squares onto delayed copies
(``0 .. proj_taps-1`` samples) of reference channels:

* ``s_target``: projection onto every channel of the matching reference,
* ``e_interf``: projection onto all references minus ``s_target``,
* ``e_artif``: what remains.

Energies are summed over channels before forming the ratios.
"""

from dataclasses import dataclass
import warnings

import numpy as np

SCORE_CAP = 200.0


@dataclass
class BssScores:
    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray

    def records(self, names=None):
        names = names or [f"source{j}" for j in range(len(self.sdr))]
        return [
            {"name": n, "sdr": float(a), "sir": float(b), "sar": float(c)}
            for n, a, b, c in zip(names, self.sdr, self.sir, self.sar)
        ]


@dataclass
class Decomposition:
    target: np.ndarray
    interf: np.ndarray
    artif: np.ndarray


def _ratio_db(num, den):
    if den <= 0:
        return SCORE_CAP
    if num <= 0:
        return -SCORE_CAP
    return float(np.clip(10 * np.log10(num / den), -SCORE_CAP, SCORE_CAP))


def delayed_basis(signals, taps):
    """Columns of every signal delayed by ``0 .. taps-1`` samples.

    ``signals`` is ``(M, T)``; returns ``(T + taps - 1, M * taps)``.
    """
    signals = np.atleast_2d(signals)
    M, T = signals.shape
    out = np.zeros((T + taps - 1, M * taps))
    for m in range(M):
        for d in range(taps):
            out[d : d + T, m * taps + d] = signals[m]
    return out


def _project(basis, targets):
    coef, _, rank, _ = np.linalg.lstsq(basis, targets, rcond=None)
    if rank < basis.shape[1]:
        warnings.warn(
            f"rank-deficient projection basis ({rank} < {basis.shape[1]}), "
            "using the minimum-norm solution",
            RuntimeWarning,
            stacklevel=3,
        )
    return basis @ coef


def decompose(estimates, references, proj_taps=32):
    """Orthogonal decomposition of every estimate, arrays ``(J, I, T + taps - 1)``."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(references, dtype=float)
    if est.ndim == 2:
        est = est[:, None, :]
        ref = ref[:, None, :]
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: estimates {est.shape}, references {ref.shape}")
    if proj_taps < 1:
        raise ValueError("proj_taps must be >= 1")
    J, I, T = est.shape
    padded = np.concatenate([est, np.zeros((J, I, proj_taps - 1))], axis=-1)
    all_basis = delayed_basis(ref.reshape(J * I, T), proj_taps)
    target = np.empty_like(padded)
    interf = np.empty_like(padded)
    artif = np.empty_like(padded)
    for j in range(J):
        own = delayed_basis(ref[j], proj_taps)
        p_own = _project(own, padded[j].T).T
        p_all = _project(all_basis, padded[j].T).T
        target[j] = p_own
        interf[j] = p_all - p_own
        artif[j] = padded[j] - p_all
    return Decomposition(target, interf, artif)


def bss_metrics(estimates, references, proj_taps=32):
    """Scores for index-aligned estimates and references, each ``(J, I, T)``."""
    dec = decompose(estimates, references, proj_taps)
    J = dec.target.shape[0]
    sdr, sir, sar = np.empty(J), np.empty(J), np.empty(J)
    for j in range(J):
        t = np.sum(dec.target[j] ** 2)
        i = np.sum(dec.interf[j] ** 2)
        a = np.sum(dec.artif[j] ** 2)
        sdr[j] = _ratio_db(t, np.sum((dec.interf[j] + dec.artif[j]) ** 2))
        sir[j] = _ratio_db(t, i)
        sar[j] = _ratio_db(np.sum((dec.target[j] + dec.interf[j]) ** 2), a)
    return BssScores(sdr, sir, sar)


def input_scores(mixture, references, proj_taps=32):
    """Scores obtained by using the mixture as every source's estimate."""
    ref = np.asarray(references, dtype=float)
    mix = np.broadcast_to(np.asarray(mixture, dtype=float), ref.shape)
    return bss_metrics(mix, ref, proj_taps)

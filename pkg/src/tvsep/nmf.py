"""NMF source-variance model.

Component ``k`` has variance ``W[f, k] * H[k, l]`` at bin ``(f, l)`` and
belongs to exactly one source ``partition[k]``; a source's variance is the
sum over its components.
"""

from dataclasses import dataclass

import numpy as np

FLOOR = 1e-12


@dataclass
class NmfModel:
    W: np.ndarray  # (F, K)
    H: np.ndarray  # (K, L)
    partition: np.ndarray  # (K,) source index of each component

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.partition = np.asarray(self.partition, dtype=int)
        K = self.W.shape[1]
        if self.H.shape[0] != K or self.partition.shape != (K,):
            raise ValueError("W, H and partition disagree on the component count")
        if np.any(self.W < 0) or np.any(self.H < 0):
            raise ValueError("NMF factors must be nonnegative")
        if self.partition.min() < 0:
            raise ValueError("partition indices must be nonnegative")
        missing = set(range(self.n_sources)) - set(self.partition.tolist())
        if missing:
            raise ValueError(f"sources without components: {sorted(missing)}")

    @property
    def n_sources(self):
        return int(self.partition.max()) + 1

    @property
    def selection(self):
        """Binary ``J x K`` matrix with a single one per column."""
        G = np.zeros((self.n_sources, self.W.shape[1]))
        G[self.partition, np.arange(self.W.shape[1])] = 1.0
        return G

    def component_variances(self):
        """``W[f, k] H[k, l]`` arranged as ``(F, L, K)``."""
        return self.W[:, None, :] * self.H.T[None, :, :]

    def source_variances(self):
        """Prior source variances for every bin, shape ``(F, L, J)``."""
        out = np.zeros(self.W.shape[:1] + self.H.shape[1:] + (self.n_sources,))
        for j in range(self.n_sources):
            sel = self.partition == j
            out[..., j] = self.W[:, sel] @ self.H[sel, :]
        return out

    def copy(self):
        return NmfModel(self.W.copy(), self.H.copy(), self.partition.copy())

    @classmethod
    def stack(cls, factors):
        """Build a model from per-source ``(W_j, H_j)`` pairs."""
        W = np.concatenate([w for w, _ in factors], axis=1)
        H = np.concatenate([h for _, h in factors], axis=0)
        partition = np.concatenate(
            [np.full(w.shape[1], j) for j, (w, _) in enumerate(factors)]
        )
        return cls(W, H, partition)


def prior_source_variance(model, f, l):
    """Vector of prior source variances at bin ``(f, l)``."""
    d = model.W[f, :] * model.H[:, l]
    return np.bincount(model.partition, weights=d, minlength=model.n_sources)


def kl_divergence(V, WH):
    """Generalized Kullback-Leibler divergence ``D(V | WH)``."""
    V = np.asarray(V, dtype=float)
    pos = V > 0
    out = np.sum(WH) - np.sum(V)
    out += np.sum(V[pos] * np.log(V[pos] / WH[pos]))
    return float(out)


def kl_nmf_fit(V, n_components, iterations=200, seed=None, return_trace=False):
    """KL-NMF with multiplicative updates from a random start.

    Returns ``(W, H)`` and, with ``return_trace``, the divergence after
    each iteration.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V < 0) or not np.all(np.isfinite(V)):
        raise ValueError("spectrogram must be finite and nonnegative")
    if not np.any(V > 0):
        raise ValueError("all-zero spectrogram cannot be factorized")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    F, L = V.shape
    scale = np.sqrt(V.mean() / n_components)
    W = scale * rng.uniform(0.5, 1.5, size=(F, n_components))
    H = scale * rng.uniform(0.5, 1.5, size=(n_components, L))
    trace = []
    for _ in range(iterations):
        H *= (W.T @ (V / (W @ H))) / W.sum(axis=0)[:, None]
        np.maximum(H, FLOOR, out=H)
        W *= ((V / (W @ H)) @ H.T) / H.sum(axis=1)[None, :]
        np.maximum(W, FLOOR, out=W)
        if return_trace:
            trace.append(kl_divergence(V, W @ H))
    if return_trace:
        return W, H, np.array(trace)
    return W, H


def mstep_update(model, Qcc):
    """One pass of the closed-form NMF updates from component second moments.

    ``Qcc[k, f, l]`` is the posterior second moment of component ``k`` at
    ``(f, l)``. W is refreshed first, then H using the new W.
    """
    Qcc = np.asarray(Qcc, dtype=float)
    K, F, L = Qcc.shape
    if np.any(Qcc < 0):
        raise ValueError("component moments must be nonnegative")
    W = np.maximum(np.mean(Qcc / model.H[:, None, :], axis=2).T, FLOOR)
    H = np.maximum(np.mean(Qcc / W.T[:, :, None], axis=1), FLOOR)
    return NmfModel(W, H, model.partition.copy())


def rescale(model):
    """Normalize W columns to unit L1 norm, pushing the scale into H."""
    sigma = model.W.sum(axis=0)
    return NmfModel(model.W / sigma[None, :], model.H * sigma[:, None], model.partition.copy())

import numpy as np
import pytest

from tvsep.estep import (
    ChannelMoment,
    channel_moment,
    component_logdet,
    component_posterior_diag,
    estep_sources,
    source_posterior,
)
from tvsep.nmf import NmfModel
from tvsep.numerics import hermitianize, is_hermitian_psd, unvec, vec
from oracles import dense_component_posterior, random_complex, random_hpd, wiener_oracle


def random_bin(rng, I, J, K):
    a = random_complex(rng, I * J)
    cov = random_hpd(rng, I * J, scale=0.2)
    partition = np.concatenate([np.arange(J), rng.integers(0, J, K - J)])
    comp_var = rng.uniform(0.1, 2.0, K)
    x = random_complex(rng, I)
    v = rng.uniform(0.05, 1.0)
    return a, cov, partition, comp_var, x, v


def source_var(comp_var, partition, J):
    return np.bincount(partition, weights=comp_var, minlength=J)


# -- channel moment ----------------------------------------------------------


def test_channel_moment_deterministic_limit():
    rng = np.random.default_rng(0)
    a = random_complex(rng, 6)
    cm = channel_moment(a, np.zeros((6, 6)), 2)
    A = unvec(a, 2)
    np.testing.assert_allclose(cm.U, A.conj().T @ A, atol=1e-14)
    np.testing.assert_array_equal(cm.A, A)


def test_channel_moment_identity_covariance():
    cm = channel_moment(np.zeros(6), np.eye(6), 2)
    np.testing.assert_allclose(cm.U, 2 * np.eye(3))


def test_channel_moment_matches_sampling():
    rng = np.random.default_rng(1)
    I, J = 2, 3
    a = random_complex(rng, I * J)
    S = random_hpd(rng, I * J, scale=0.5)
    cm = channel_moment(a, S, I)
    chol = np.linalg.cholesky(S)
    n_draws = 100_000
    z = (rng.standard_normal((n_draws, I * J)) + 1j * rng.standard_normal((n_draws, I * J))) / np.sqrt(2)
    draws = a + z @ chol.T
    A = unvec(draws, I)
    U_mc = np.mean(np.conj(np.swapaxes(A, -1, -2)) @ A, axis=0)
    assert np.linalg.norm(U_mc - cm.U) / np.linalg.norm(cm.U) < 0.01
    # posterior uncertainty only adds to the plug-in moment
    Am = unvec(a, I)
    assert is_hermitian_psd(hermitianize(cm.U - Am.conj().T @ Am), tol=1e-9)


# -- source posterior ---------------------------------------------------------


def test_scalar_wiener_limit():
    cm = ChannelMoment(np.array([[1.0]]), np.array([[1.0]]))
    p, v, x = 2.0, 0.5, np.array([1.0 + 2.0j])
    mean, cov, _ = source_posterior(cm, np.array([p]), x, v, jitter=0)
    np.testing.assert_allclose(mean, p / (p + v) * x, rtol=1e-12)
    assert cov[0, 0] == pytest.approx(p * v / (p + v))


def test_no_information_limit():
    rng = np.random.default_rng(2)
    a, S, _, _, x, _ = random_bin(rng, 2, 2, 2)
    cm = channel_moment(a, S, 2)
    p = np.array([0.3, 1.2])
    mean, cov, _ = source_posterior(cm, p, x, 1e12, jitter=0)
    assert np.max(np.abs(mean)) < 1e-9
    np.testing.assert_allclose(cov, np.diag(p), atol=1e-9)


def test_known_mixing_matches_joint_conditioning():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a, _, _, _, x, v = random_bin(rng, 2, 2, 2)
        cm = channel_moment(a, np.zeros((4, 4)), 2)
        p = rng.uniform(0.1, 2.0, 2)
        mean, cov, moment = source_posterior(cm, p, x, v, jitter=0)
        ref_mean, ref_cov = wiener_oracle(unvec(a, 2), p, x, v)
        np.testing.assert_allclose(mean, ref_mean, atol=1e-10)
        np.testing.assert_allclose(cov, ref_cov, atol=1e-10)
        np.testing.assert_allclose(moment, cov + np.outer(mean, mean.conj()), atol=1e-14)


# -- component posterior ------------------------------------------------------


def component_bin(rng, I, J, K, v_scale=1.0):
    a, S, partition, comp_var, x, v = random_bin(rng, I, J, K)
    v = v * v_scale
    cm = channel_moment(a, S, I)
    p = source_var(comp_var, partition, J)
    s_mean, s_cov, _ = source_posterior(cm, p, x, v, jitter=0)
    return cm, partition, comp_var, x, v, s_mean, s_cov


def test_components_match_dense_inversion():
    rng = np.random.default_rng(4)
    for _ in range(20):
        cm, part, d, x, v, s_mean, s_cov = component_bin(rng, 2, 2, 6)
        mean, var, moment = component_posterior_diag(cm, d, part, s_mean, s_cov, x, v)
        ref_mean, ref_cov = dense_component_posterior(cm.U, cm.A, x, v, d, part)
        np.testing.assert_allclose(mean, ref_mean, atol=1e-8)
        np.testing.assert_allclose(var, np.diag(ref_cov).real, atol=1e-8)
        np.testing.assert_allclose(moment, var + np.abs(mean) ** 2)
        G = np.zeros((2, 6))
        G[part, np.arange(6)] = 1
        np.testing.assert_allclose(G @ mean, s_mean, atol=1e-10)
        assert np.all(var >= 0) and np.all(var <= d)


def test_single_component_per_source():
    rng = np.random.default_rng(5)
    cm, part, d, x, v, s_mean, s_cov = component_bin(rng, 2, 3, 3)
    part = np.arange(3)
    p = d.copy()
    s_mean, s_cov, _ = source_posterior(cm, p, x, v, jitter=0)
    mean, var, _ = component_posterior_diag(cm, d, part, s_mean, s_cov, x, v)
    np.testing.assert_allclose(mean, s_mean, atol=1e-10)
    np.testing.assert_allclose(var, np.diag(s_cov).real, atol=1e-10)


def test_large_noise_keeps_prior_variance():
    rng = np.random.default_rng(6)
    cm, part, d, x, v, s_mean, s_cov = component_bin(rng, 2, 2, 6, v_scale=1e8)
    _, var, _ = component_posterior_diag(cm, d, part, s_mean, s_cov, x, v)
    np.testing.assert_allclose(var, d, rtol=1e-6)


def test_component_logdet_matches_dense():
    rng = np.random.default_rng(7)
    for _ in range(10):
        cm, part, d, x, v, _, _ = component_bin(rng, 2, 3, 8)
        _, ref_cov = dense_component_posterior(cm.U, cm.A, x, v, d, part)
        ref = np.linalg.slogdet(ref_cov)[1]
        assert component_logdet(cm, d, source_var(d, part, 3), v) == pytest.approx(ref, abs=1e-9)


# -- full E-step ---------------------------------------------------------------


def test_estep_sources_batched_shapes_and_invariants():
    rng = np.random.default_rng(8)
    F, L, I, J, Kj = 5, 4, 2, 2, 3
    model = NmfModel(
        rng.uniform(0.1, 1, (F, J * Kj)), rng.uniform(0.1, 1, (J * Kj, L)), np.repeat(np.arange(J), Kj)
    )
    x = random_complex(rng, F, L, I)
    a_mean = random_complex(rng, F, L, I * J)
    a_cov = np.broadcast_to(random_hpd(rng, I * J, scale=0.1), (F, L, I * J, I * J))
    v = rng.uniform(0.1, 1, F)
    post, cm = estep_sources(x, a_mean, a_cov, model, v, jitter=0)
    assert post.mean.shape == (F, L, J) and post.cov.shape == (F, L, J, J)
    assert post.comp_moment.shape == (J * Kj, F, L) and post.comp_logdet.shape == (F, L)
    assert is_hermitian_psd(post.moment)
    G = model.selection
    np.testing.assert_allclose(np.einsum("jk,flk->flj", G, post.comp_mean), post.mean, atol=1e-10)
    # the default jitter perturbs the source inverse, so the identity holds
    # only to the jitter level
    jit, _ = estep_sources(x, a_mean, a_cov, model, v)
    np.testing.assert_allclose(np.einsum("jk,flk->flj", G, jit.comp_mean), jit.mean, atol=1e-6)
    # bin (f, l) agrees with the single-bin path
    f, l = 3, 1
    mean, cov, _ = source_posterior(
        channel_moment(a_mean[f, l], a_cov[f, l], I), model.source_variances()[f, l], x[f, l], v[f], 0
    )
    np.testing.assert_allclose(post.mean[f, l], mean, atol=1e-12)
    np.testing.assert_allclose(vec(cm.A[f, l]), a_mean[f, l])

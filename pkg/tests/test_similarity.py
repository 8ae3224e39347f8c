import dataclasses

import numpy as np
import pytest
import torch

from motionssl.encoders import TokenSequence
from motionssl.similarity import (NonFiniteLossError, ProjectorPair, SceneEmbeddingPair,
                                  cross_correlation, pool_environment, pool_motion,
                                  pool_valid_tokens, similarity_loss)


def _pair(zm, ze):
    return SceneEmbeddingPair(torch.as_tensor(zm, dtype=torch.float64),
                              torch.as_tensor(ze, dtype=torch.float64))


def _seq(tokens, valid, modality="agent", pid=None):
    tokens = torch.as_tensor(tokens, dtype=torch.float64)
    valid = torch.as_tensor(valid, dtype=torch.bool)
    B, N = valid.shape
    if pid is None:
        pid = torch.arange(N).expand(B, N)
    return TokenSequence(tokens * valid[..., None], modality, pid,
                         torch.zeros(B, N, dtype=torch.int64), valid,
                         torch.arange(N).expand(B, N))


def test_loss_identity_is_zero():
    assert abs(similarity_loss(torch.eye(4, dtype=torch.float64)).item()) < 1e-9


def test_loss_zero_matrix():
    C = torch.zeros(4, 4, dtype=torch.float64)
    assert abs(similarity_loss(C).item() - 4.0) < 1e-9


def test_loss_all_ones_redundancy():
    C = torch.ones(3, 3, dtype=torch.float64)
    assert abs(similarity_loss(C, redundancy_weight=0.005).item() - 0.03) < 1e-9


def test_loss_requires_square():
    with pytest.raises(ValueError):
        similarity_loss(torch.zeros(2, 3, dtype=torch.float64))


def _hadamard8():
    h1 = np.array([[1.0]])
    h = h1
    while h.shape[0] < 8:
        h = np.block([[h, h], [h, -h]])
    return h  # 8 x 8, orthogonal columns, entries +-1


def test_cross_correlation_hadamard_identity():
    # mean-zero Hadamard columns are exactly decorrelated with unit
    # variance: the cross-correlation of a batch with itself is I
    z = _hadamard8()[:, 1:5]  # B=8 scenes, d=4 features
    C = cross_correlation(_pair(z, z), epsilon_std=1e-9)
    np.testing.assert_allclose(C.numpy(), np.eye(4), atol=1e-6)


def test_cross_correlation_column_permutation():
    z = _hadamard8()[:, 1:5]
    perm = [2, 0, 3, 1]
    C = cross_correlation(_pair(z, z[:, perm]), epsilon_std=1e-9)
    P = np.zeros((4, 4))
    P[perm, np.arange(4)] = 1.0  # C_ij = 1 iff motion col i == env col j
    np.testing.assert_allclose(C.numpy(), P, atol=1e-6)


def test_cross_correlation_centers_and_scales():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(16, 3)) * 7.0 + 5.0
    C = cross_correlation(_pair(z, z), epsilon_std=1e-12)
    np.testing.assert_allclose(np.diag(C.numpy()), 1.0, atol=1e-6)


def test_cross_correlation_needs_batch():
    with pytest.raises(ValueError):
        cross_correlation(_pair(np.ones((1, 4)), np.ones((1, 4))))


def test_cross_correlation_rejects_nonfinite():
    z = np.ones((4, 2))
    bad = z.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteLossError):
        cross_correlation(_pair(z, bad))


def test_pair_shape_check():
    with pytest.raises(ValueError):
        _pair(np.ones((4, 2)), np.ones((4, 3)))


def test_pool_ignores_invalid_and_order():
    rng = np.random.default_rng(1)
    tokens = rng.normal(size=(2, 5, 3))
    valid = np.array([[True, True, False, True, False],
                      [True, True, True, True, True]])
    seq = _seq(tokens, valid)
    pooled = pool_motion(seq)
    expect0 = tokens[0][[0, 1, 3]].mean(axis=0)
    np.testing.assert_allclose(pooled[0].numpy(), expect0, atol=1e-12)
    # permuting tokens (a set) leaves the pool unchanged
    perm = [4, 2, 0, 1, 3]
    seq_p = _seq(tokens[:, perm], valid[:, perm])
    np.testing.assert_allclose(pool_motion(seq_p).numpy(), pooled.numpy(), atol=1e-12)


def test_pool_environment_is_joint_mean():
    lanes = np.ones((1, 4, 2)) * 2.0
    lights = np.ones((1, 2, 2)) * 8.0
    pooled = pool_environment(_seq(lanes, np.ones((1, 4), bool), "lane"),
                              _seq(lights, np.ones((1, 2), bool), "light"))
    # joint mean over 6 tokens, not the mean of two per-modality means
    np.testing.assert_allclose(pooled.numpy(), (4 * 2.0 + 2 * 8.0) / 6.0, atol=1e-12)


def test_pool_skips_empty_sequences():
    lanes = np.ones((1, 3, 2))
    empty = _seq(np.zeros((1, 0, 2)), np.zeros((1, 0), bool), "light")
    pooled = pool_environment(_seq(lanes, np.ones((1, 3), bool), "lane"), empty)
    np.testing.assert_allclose(pooled.numpy(), 1.0, atol=1e-12)


def test_pool_raises_on_zero_valid_scene():
    valid = np.array([[True, True], [False, False]])
    with pytest.raises(ValueError):
        pool_motion(_seq(np.ones((2, 2, 3)), valid))


def test_projector_pair_shapes():
    torch.manual_seed(0)
    pair_net = ProjectorPair(8, 16, 4).double()
    out = pair_net(torch.randn(5, 8, dtype=torch.float64),
                   torch.randn(5, 8, dtype=torch.float64))
    assert out.z_motion.shape == out.z_environment.shape == (5, 4)
    # independent towers: motion projector does not see environment input
    names = {n for n, _ in pair_net.named_parameters()}
    assert any(n.startswith("motion.") for n in names)
    assert any(n.startswith("environment.") for n in names)

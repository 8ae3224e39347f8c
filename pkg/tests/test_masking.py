import numpy as np
import pytest
import torch

from motionssl.encoders import concatenate_sequences
from motionssl.masking import (LocalReconstructionDecoder, MaskSpec,
                               QueryReconstructionDecoder, apply_mask, huber,
                               reconstruction_loss, sample_mask)
from motionssl.models import build_pretrain_model
from tests.conftest import rng


def _seq(tokens, valid, modality="agent"):
    from motionssl.encoders import TokenSequence
    tokens = torch.as_tensor(tokens, dtype=torch.float64)
    valid = torch.as_tensor(valid, dtype=torch.bool)
    B, N = valid.shape
    return TokenSequence(tokens * valid[..., None], modality,
                         torch.zeros(B, N, dtype=torch.int64),
                         torch.zeros(B, N, dtype=torch.int64), valid,
                         torch.arange(N).expand(B, N))


def test_mask_exact_count_subset_deterministic():
    # 1000 random (N, seed) pairs: count floor(0.6 * n_valid), masked
    # only where valid, bit-identical per seed
    r = rng(42)
    for _ in range(1000):
        n = int(r.integers(1, 40))
        seed = int(r.integers(0, 2**31))
        valid = r.random(n) < 0.8
        spec = sample_mask({"agent": valid}, 0.6, seed)
        mask = spec.masks["agent"]
        assert mask.sum() == int(0.6 * valid.sum())
        assert not np.any(mask & ~valid)
        again = sample_mask({"agent": valid}, 0.6, seed)
        np.testing.assert_array_equal(again.masks["agent"], mask)


def test_mask_rows_independent():
    valid = np.ones((3, 20), dtype=bool)
    spec = sample_mask({"agent": valid}, 0.5, seed=7)
    m = spec.masks["agent"]
    assert m.shape == (3, 20)
    assert all(row.sum() == 10 for row in m)
    assert not np.array_equal(m[0], m[1])  # overwhelmingly likely per seed


def test_mask_ratio_zero_and_validation():
    valid = np.ones(10, dtype=bool)
    assert sample_mask({"agent": valid}, 0.0, 0).masks["agent"].sum() == 0
    with pytest.raises(ValueError):
        sample_mask({"agent": valid}, 1.0, 0)


def test_apply_mask_replaces_and_restricts():
    tokens = rng(3).normal(size=(2, 6, 4))
    valid = np.ones((2, 6), dtype=bool)
    valid[1, 5] = False
    seq = _seq(tokens, valid)
    mask = torch.zeros(2, 6, dtype=torch.bool)
    mask[0, 1] = mask[0, 4] = mask[1, 2] = True
    emb = torch.full((4,), 9.0, dtype=torch.float64)
    masked, allowed = apply_mask(seq, mask, emb)
    np.testing.assert_array_equal(masked.tokens[0, 1].numpy(), 9.0)
    np.testing.assert_array_equal(masked.tokens[0, 4].numpy(), 9.0)
    np.testing.assert_array_equal(masked.tokens[0, 0].numpy(), seq.tokens[0, 0].numpy())
    # unmasked queries cannot see masked keys; masked queries see everything
    for i in range(6):
        for j in range(6):
            want = not (bool(mask[0, j]) and not bool(mask[0, i]))
            assert bool(allowed[0, i, j]) == want


def test_apply_mask_rejects_invalid_targets():
    tokens = np.zeros((1, 3, 2))
    valid = np.array([[True, False, True]])
    seq = _seq(tokens, valid)
    mask = torch.tensor([[False, True, False]])
    with pytest.raises(ValueError):
        apply_mask(seq, mask, torch.zeros(2, dtype=torch.float64))


def test_huber_matches_formula():
    pred = torch.tensor([0.0, 0.5, 2.0, -3.0], dtype=torch.float64)
    target = torch.zeros(4, dtype=torch.float64)
    out = huber(pred, target, delta=1.0)
    np.testing.assert_allclose(out.numpy(), [0.0, 0.125, 1.5, 2.5], atol=1e-12)
    out2 = huber(pred, target, delta=2.0)
    np.testing.assert_allclose(out2.numpy(), [0.0, 0.125, 2.0, 2.0 * (3 - 1.0)], atol=1e-12)
    with pytest.raises(ValueError):
        huber(pred, target, delta=0.0)


def test_reconstruction_loss_masked_scope_oracle():
    # independent oracle: per-modality mean Huber over exactly the masked
    # rows, weighted sum across modalities
    r = rng(5)
    recon, targets, masks = {}, {}, {}
    for m, n in (("agent", 7), ("lane", 5), ("light", 4)):
        recon[m] = torch.as_tensor(r.normal(size=(2, n, 3)))
        targets[m] = torch.as_tensor(r.normal(size=(2, n, 3)))
        masks[m] = r.random((2, n)) < 0.5
    spec = MaskSpec(masks=masks, ratio=0.5, seed=0)
    weights = {"agent": 1.0, "lane": 2.0, "light": 0.5}
    total, per = reconstruction_loss(recon, targets, spec, weights=weights, delta=1.0)
    expect_total = 0.0
    for m in ("agent", "lane", "light"):
        rows = masks[m]
        diffs = (recon[m].numpy() - targets[m].numpy())[rows]
        h = np.where(np.abs(diffs) <= 1.0, 0.5 * diffs**2, np.abs(diffs) - 0.5)
        assert abs(per[m].item() - h.mean()) < 1e-12
        expect_total += weights[m] * h.mean()
    assert abs(total.item() - expect_total) < 1e-12


def test_reconstruction_loss_all_scope_and_empty():
    r = rng(6)
    recon = {"agent": torch.as_tensor(r.normal(size=(1, 4, 2)))}
    targets = {"agent": torch.as_tensor(r.normal(size=(1, 4, 2)))}
    valid = {"agent": torch.tensor([[True, True, False, True]])}
    spec = MaskSpec(masks={"agent": np.zeros((1, 4), dtype=bool)}, ratio=0.0, seed=0)
    total_masked, per_masked = reconstruction_loss(recon, targets, spec)
    assert total_masked.item() == 0.0 and per_masked["agent"].item() == 0.0
    total_all, _ = reconstruction_loss(recon, targets, spec, scope="all", valid=valid)
    diffs = (recon["agent"].numpy() - targets["agent"].numpy())[valid["agent"].numpy()]
    h = np.where(np.abs(diffs) <= 1.0, 0.5 * diffs**2, np.abs(diffs) - 0.5)
    assert abs(total_all.item() - h.mean()) < 1e-12
    with pytest.raises(ValueError):
        reconstruction_loss(recon, targets, spec, scope="all")


def test_local_decoder_row_alignment(small_cfg, dialect_w, scenes_w):
    model = build_pretrain_model(small_cfg, dialect_w, "late", seed=0)
    seqs = model.encoder.embed.embed_scene(scenes_w[0])
    concat = concatenate_sequences(seqs)
    recon = model.decoder(concat)
    for m, seq in seqs.items():
        assert recon[m].shape[:2] == (1, seq.count)


def test_query_decoder_exact_row_counts(small_cfg, dialect_w):
    # the latent set decompresses to exactly one output row per input
    # token, whatever the input length
    import torch as t
    from motionssl.encoders import ConcatTokens
    t.manual_seed(0)
    decoder = QueryReconstructionDecoder(small_cfg, dialect_w).double()
    from motionssl.encoders import EarlyFusionLatent
    for n in (1, 64, 128, 300, 512):
        n_agent = n // 2
        segments = {"agent": slice(0, n_agent), "lane": slice(n_agent, n),
                    "light": slice(n, n)}
        concat = ConcatTokens(
            tokens=t.zeros(1, n, small_cfg.width, dtype=t.float64),
            valid=t.ones(1, n, dtype=t.bool),
            positions_1d=t.arange(n)[None],
            polyline_id=t.zeros(1, n, dtype=t.int64),
            within_index=t.zeros(1, n, dtype=t.int64),
            segments=segments)
        latent = EarlyFusionLatent(
            latent=t.zeros(1, small_cfg.latent_count, small_cfg.width, dtype=t.float64),
            source=concat)
        recon = decoder(latent)
        total_rows = sum(recon[m].shape[1] for m in recon)
        assert total_rows == n
        assert recon["agent"].shape[1] == n_agent


def test_masked_encoding_hides_content_from_unmasked(small_cfg, dialect_w, scenes_w):
    # with the mask rule active, changing a masked token's original
    # features cannot leak into unmasked encodings
    model = build_pretrain_model(small_cfg, dialect_w, "late", seed=1)
    with torch.no_grad():
        seqs = model.encoder.embed.embed_scene(scenes_w[0])
        seq = seqs["agent"]
        mask = torch.zeros_like(seq.valid)
        target = int(torch.nonzero(seq.valid[0])[0])
        mask[0, target] = True
        emb = model.decoder.mask_embeddings["agent"]
        masked_a, allowed = apply_mask(seq, mask, emb)
        enc_a = model.encoder.stacks["agent"](masked_a.tokens, masked_a.positions_1d,
                                              masked_a.valid,
                                              masked_a.same_polyline_allowed() & allowed)
        # perturb the original token; after masking the input is identical
        seq2 = seq.replace_tokens(seq.tokens.clone())
        seq2.tokens[0, target] += 5.0
        masked_b, allowed_b = apply_mask(seq2, mask, emb)
        np.testing.assert_array_equal(masked_a.tokens.numpy(), masked_b.tokens.numpy())
        enc_b = model.encoder.stacks["agent"](masked_b.tokens, masked_b.positions_1d,
                                              masked_b.valid,
                                              masked_b.same_polyline_allowed() & allowed_b)
        np.testing.assert_array_equal(enc_a.numpy(), enc_b.numpy())

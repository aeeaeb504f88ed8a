import math

import numpy as np
import pytest
import torch

import oracles
from groundcap.errors import ConfigError, ValidationError
from groundcap.language import (
    BOS,
    EOS,
    PAD,
    LMConfig,
    TinyLM,
    Vocab,
    build_vocab,
    caption_loss,
    generate,
    lm_forward,
)


class TestVocab:
    def test_ordering(self):
        v = build_vocab(["a b", "b c"])
        assert [v.stoi[w] for w in ("b", "a", "c")] == [4, 5, 6]

    def test_single(self):
        assert build_vocab(["x x x"]).itos[4:] == ["x"]

    def test_deterministic(self):
        corpus = ["Two brick pile near the gate; recommend cover.", "one bin"]
        assert build_vocab(corpus) == build_vocab(corpus)

    def test_normalization(self):
        v = build_vocab(["Hello, World!", "hello"])
        assert v.itos[4:] == ["hello", "world"]

    def test_reserved(self):
        v = build_vocab(["a"])
        assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert v.encode("a zzz") == [4, 3]

    def test_empty(self):
        with pytest.raises(ValidationError):
            build_vocab([])

    def test_file_roundtrip(self, tmp_path):
        v = build_vocab(["b a c b"])
        v.save(tmp_path / "vocab.txt")
        lines = (tmp_path / "vocab.txt").read_text().splitlines()
        assert lines[4] == "b"  # line number = id
        assert Vocab.load(tmp_path / "vocab.txt") == v


def small_lm(v=9, width=8, depth=1, heads=2, seed=0, std=None):
    lm = TinyLM(LMConfig(v, width, depth, heads, 32), torch.Generator().manual_seed(seed)).double()
    if std is not None:
        g = torch.Generator().manual_seed(seed + 1)
        with torch.no_grad():
            for p in lm.parameters():
                p.add_(torch.randn(p.shape, generator=g, dtype=torch.float64) * std)
    return lm


class TestForward:
    def test_shape(self):
        lm = small_lm()
        out = lm_forward(torch.zeros(3, 8, dtype=torch.float64), [1, 4, 5, 6, 7], lm)
        assert out.shape == (5, 9)

    def test_prefix_connected(self):
        lm = small_lm(std=0.3)
        prefix = torch.randn(3, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(5))
        a = lm_forward(prefix, [1, 4, 5], lm)
        b = lm_forward(torch.zeros_like(prefix), [1, 4, 5], lm)
        assert not torch.allclose(a, b)

    def test_causal_oracle(self):
        lm = small_lm(v=6, width=4, depth=1, heads=2, std=0.4)
        with torch.no_grad():  # near-identity attention projections
            lm.blocks[0].attn.qkv.weight.add_(torch.cat([torch.eye(4)] * 3).double())
            lm.blocks[0].attn.out.weight.add_(torch.eye(4).double())
        prefix = [[0.5, -0.25, 1.0, 0.0]]
        ids = [BOS, 4]
        expected = oracles.lm_logits(prefix, ids, lm)
        with torch.no_grad():
            got = lm_forward(torch.tensor(prefix, dtype=torch.float64), ids, lm)
        np.testing.assert_allclose(got.numpy(), expected, rtol=1e-11, atol=1e-12)

    def test_causality(self):
        lm = small_lm(std=0.3)
        prefix = torch.randn(2, 8, dtype=torch.float64)
        a = lm_forward(prefix, [1, 4, 5, 6], lm)
        b = lm_forward(prefix, [1, 4, 7, 8], lm)
        torch.testing.assert_close(a[:2], b[:2])

    def test_gradient_reaches_prefix(self):
        lm = small_lm(std=0.3).freeze()
        prefix = torch.randn(2, 8, dtype=torch.float64, requires_grad=True)
        caption_loss(lm_forward(prefix, [1, 4, 5], lm), [4, 5, EOS]).backward()
        assert prefix.grad.abs().sum() > 0
        assert all(p.grad is None for p in lm.parameters())

    def test_id_out_of_range(self):
        with pytest.raises(ValidationError):
            lm_forward(torch.zeros(1, 8, dtype=torch.float64), [1, 9], small_lm())

    def test_prefix_width(self):
        with pytest.raises(ValidationError):
            lm_forward(torch.zeros(1, 5, dtype=torch.float64), [1], small_lm())


class TestLoss:
    def test_perfect(self):
        logits = torch.full((3, 5), -1e4, dtype=torch.float64)
        logits[[0, 1, 2], [4, 3, 2]] = 0.0
        assert float(caption_loss(logits, [4, 3, 2])) == 0.0

    def test_uniform(self):
        assert float(caption_loss(torch.zeros(4, 7, dtype=torch.float64), [4, 5, 6, 2])) == pytest.approx(math.log(7), rel=1e-15)

    def test_hand_computed(self):
        logits = torch.tensor([[2.0, 1.0, 0.0], [0.0, 0.0, 3.0]], dtype=torch.float64)
        # -(log softmax(row0)[1] + log softmax(row1)[2]) / 2
        assert float(caption_loss(logits, [1, 2])) == pytest.approx(0.7512644604326706, rel=1e-14)

    def test_pad_masked(self):
        logits = torch.randn(3, 6, dtype=torch.float64)
        full = caption_loss(logits[:2], [4, 5])
        padded = caption_loss(logits, [4, 5, PAD])
        assert float(full) == pytest.approx(float(padded), rel=1e-14)

    def test_batch_mean_of_caption_means(self):
        logits = torch.randn(2, 3, 6, dtype=torch.float64)
        tgt = torch.tensor([[4, 5, PAD], [4, 5, 3]])
        want = (caption_loss(logits[0, :2], [4, 5]) + caption_loss(logits[1], [4, 5, 3])) / 2
        assert float(caption_loss(logits, tgt)) == pytest.approx(float(want), rel=1e-14)

    def test_nonnegative(self):
        assert float(caption_loss(torch.randn(5, 9), [4, 5, 6, 7, 8])) >= 0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            caption_loss(torch.zeros(3, 5), [1, 2])


def _chain_lm():
    """Head maps the current token to its successor: BOS->4->5->6->EOS."""
    lm = TinyLM(LMConfig(7, 8, 1, 2, 16)).double()
    with torch.no_grad():
        lm.positions.zero_()
        lm.embedding.weight.copy_(torch.eye(7, 8))
        for blk in lm.blocks:  # residual-only blocks
            blk.attn.out.weight.zero_()
            blk.fc2.weight.zero_()
        lm.head.weight.zero_()
        lm.head.bias.zero_()
        for src, dst in ((BOS, 4), (4, 5), (5, 6), (6, EOS)):
            lm.head.weight[dst, src] = 10.0
    return lm


class TestGenerate:
    def test_immediate_eos(self):
        lm = small_lm()
        with torch.no_grad():
            lm.head.bias[EOS] = 1e3
        assert generate(torch.zeros(2, 8, dtype=torch.float64), lm, 10) == []

    def test_deterministic(self):
        lm = small_lm(std=0.5)
        prefix = torch.randn(2, 8, dtype=torch.float64)
        assert generate(prefix, lm, 12) == generate(prefix, lm, 12)

    def test_manual_trace(self):
        lm = _chain_lm()
        prefix = [[0.3] * 8]
        ids = [BOS]
        trace = []
        for _ in range(10):  # manual argmax over oracle logits
            row = oracles.lm_logits(prefix, ids, lm)[-1]
            nxt = row.index(max(row))
            if nxt == EOS:
                break
            trace.append(nxt)
            ids.append(nxt)
        assert trace == [4, 5, 6]
        assert generate(torch.tensor(prefix, dtype=torch.float64), lm, 10) == trace

    def test_max_len(self):
        assert len(generate(torch.zeros(1, 8, dtype=torch.float64), _chain_lm(), 2)) == 2
        with pytest.raises(ValidationError):
            generate(torch.zeros(1, 8, dtype=torch.float64), _chain_lm(), 0)

    def test_ties_break_to_lowest_id(self):
        lm = small_lm()
        with torch.no_grad():
            lm.head.weight.zero_()
            lm.head.bias.zero_()
            lm.head.bias[5] = lm.head.bias[7] = 1.0
        assert generate(torch.zeros(1, 8, dtype=torch.float64), lm, 3) == [5, 5, 5]


class TestFreeze:
    def test_frozen_flags(self):
        lm = small_lm().freeze()
        assert lm.frozen and not any(p.requires_grad for p in lm.parameters())

    def test_checkpoint_roundtrip(self):
        lm = TinyLM(LMConfig(11, 8, 1, 2, 16), torch.Generator().manual_seed(4))
        blob = lm.to_bytes()
        assert TinyLM.from_bytes(blob).to_bytes() == blob

    def test_pretrain_refuses_frozen(self):
        from groundcap.language import pretrain_lm
        with pytest.raises(ConfigError):
            pretrain_lm(small_lm().float().freeze(), [[4, 5]], 2)

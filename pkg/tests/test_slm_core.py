import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dialeval.amr import parse_penman
from dialeval.config import AblationConfig, ModelConfig
from dialeval.data import DialoguePair
from dialeval.slm import (
    Featurizer,
    ShapeError,
    SlmModel,
    classify,
    collate,
    encode_graph,
    encode_sequence,
    export_attention_maps,
    fuse_gate,
    load_checkpoint,
    save_checkpoint,
    score_pair,
    score_pairs,
    write_attention_bundle,
)
from dialeval.slm.features import GraphInput, TokenSequence
from dialeval.slm.ops import read_attention_tsv

from _support import central_difference, random_batch, relative_error, tiny_model


def _pair(ctx, resp, g_c, g_r, pid="p"):
    return DialoguePair(tuple(ctx), resp, 1, parse_penman(g_c), parse_penman(g_r), pid)


@pytest.fixture(scope="module")
def corpus():
    return [
        _pair(["would you recommend a place ?"], "the canyon is great .",
              "(r / recommend-01 :ARG0 (y / you) :ARG1 (p / place))", "(c / canyon :mod (g / great))", "a"),
        _pair(["is it worth seeing ?", "i heard so ."], "the movie was good .",
              "(w / worth-02 :ARG2 (s / see-01))", "(g / good-02 :ARG1 (m / movie))", "b"),
    ]


@pytest.fixture(scope="module")
def small(corpus):
    torch.manual_seed(0)
    feat = Featurizer.build(corpus, max_len=32)
    cfg = ModelConfig(d_model=8, n_layers=2, n_heads=2, dropout=0.0, max_len=32)
    model = SlmModel(len(feat.tokens), len(feat.concepts), len(feat.relations), cfg).double().eval()
    return model, feat


# ---------------------------------------------------------------------------
# sequence encoder

def test_sequence_shape_includes_separator(small):
    model, feat = small
    seq = TokenSequence((4, 5, 6, feat.tokens["<sep>"], 7, 8), 3, 2, ("a", "b", "c", "<sep>", "d", "e"))
    states = encode_sequence(seq, model.seq_encoder)
    assert states.hidden.shape == (6, 8)
    for attn in states.attention:
        assert torch.allclose(attn.sum(-1), torch.ones(attn.shape[:-1], dtype=attn.dtype), atol=1e-6)


def test_token_layout(small, corpus):
    _, feat = small
    seq = feat.encode_text(corpus[1].context, corpus[1].response)
    assert len(seq.tokens) == seq.context_len + seq.response_len + 1
    assert seq.labels[seq.context_len] == "<sep>"
    assert "<eot>" in seq.labels[: seq.context_len]


def test_padding_leaves_real_rows_unchanged(small, corpus):
    model, feat = small
    seq, _ = feat.encode_pair(corpus[0])
    plain = encode_sequence(seq, model.seq_encoder)
    padded = encode_sequence(seq, model.seq_encoder, pad_to=len(seq.tokens) + 5)
    n = len(seq.tokens)
    assert torch.allclose(plain.hidden, padded.hidden[:n], atol=1e-6)
    for a in padded.attention:
        assert float(a[:, :n, n:].detach().abs().max()) == 0.0


def test_vocabulary_overflow_raises(small):
    model, _ = small
    seq = TokenSequence((1, 10_000), 1, 0, ("x", "y"))
    with pytest.raises(ShapeError):
        encode_sequence(seq, model.seq_encoder)


# ---------------------------------------------------------------------------
# graph encoder

def test_single_node_graph(small):
    model, feat = small
    states = encode_graph(GraphInput((3,), ((feat.relations["<self>"],),), ("x",)), model.graph_encoder)
    assert states.hidden.shape == (1, 8)
    assert float(states.attention[0][:, 0, 0].detach().min()) == 1.0


def test_zero_projections_give_uniform_attention():
    model = tiny_model(0)
    enc = model.graph_encoder
    with torch.no_grad():
        for layer in enc.layers:
            for lin in (layer.attn.w_q, layer.attn.w_k, layer.attn.w_v, layer.attn.w_r):
                lin.weight.zero_()
            for lin in (layer.attn.w_q, layer.attn.w_k, layer.attn.w_v):
                lin.bias.zero_()
    g = GraphInput((2, 3), ((1, 3), (0, 1)), ("a", "b"))
    for attn in encode_graph(g, enc).attention:
        assert torch.allclose(attn, torch.full_like(attn, 0.5), atol=0)


def _relabel(batch, gen):
    """Change one labelled edge to a different non-reserved relation id; None if there is none."""
    rel = batch.relations.clone()
    edges = (rel >= 2).nonzero()
    if len(edges) == 0:
        return None
    b, i, j = edges[int(torch.randint(len(edges), (1,), generator=gen))].tolist()
    rel[b, i, j] = 2 + (int(rel[b, i, j]) - 2 + 1) % 4
    return rel


def test_relation_sensitivity():
    gen = torch.Generator().manual_seed(0)
    checked = 0
    for seed in range(30):
        model = tiny_model(seed)
        batch = random_batch(gen, b=1, max_nodes=5)
        if int(batch.node_mask.sum()) < 2:
            continue
        rel = _relabel(batch, gen)
        if rel is None:
            continue
        enc = model.graph_encoder
        with torch.no_grad():
            h0, a0 = enc(batch.concepts, batch.relations, batch.node_mask)
            h1, a1 = enc(batch.concepts, rel, batch.node_mask)
            assert max(float((x - y).detach().abs().max()) for x, y in zip(a0, a1)) > 1e-9
            for layer in enc.layers:
                layer.attn.w_r.weight.zero_()
            h0, a0 = enc(batch.concepts, batch.relations, batch.node_mask)
            h1, a1 = enc(batch.concepts, rel, batch.node_mask)
            assert torch.equal(h0, h1)
            assert all(torch.equal(x, y) for x, y in zip(a0, a1))
        checked += 1
    assert checked >= 20


def test_graph_attention_spans_all_nodes(small, corpus):
    model, feat = small
    _, g = feat.encode_pair(corpus[1])
    states = encode_graph(g, model.graph_encoder)
    for attn in states.attention:
        assert attn.shape[-1] == g.size
        assert float(attn.detach().min()) > 0.0  # no neighbourhood masking


# ---------------------------------------------------------------------------
# gate and classifier

def _states(model, feat, pair):
    seq, g = feat.encode_pair(pair)
    return encode_sequence(seq, model.seq_encoder), encode_graph(g, model.graph_encoder)


def test_zero_gate_is_half(small, corpus):
    model, feat = small
    h_s, h_a = _states(model, feat, corpus[0])
    gate = torch.nn.Linear(8, 1).double()
    with torch.no_grad():
        gate.weight.zero_()
        gate.bias.zero_()
    fused = fuse_gate(h_s, h_a, gate)
    assert float(fused.gate.detach()) == 0.5
    assert torch.allclose(fused.fused, (h_s.pooled + h_a.pooled) / 2, atol=1e-12)


def test_saturated_gate_selects_sequence(small, corpus):
    model, feat = small
    h_s, h_a = _states(model, feat, corpus[0])
    gate = torch.nn.Linear(8, 1).double()
    with torch.no_grad():
        gate.weight.zero_()
        gate.bias.fill_(30.0)
    fused = fuse_gate(h_s, h_a, gate)
    assert float(fused.gate.detach()) > 1 - 1e-9
    assert torch.allclose(fused.fused, h_s.pooled, atol=1e-6)


def test_fusion_is_exact_convex_combination(small, corpus):
    model, feat = small
    for pair in corpus:
        h_s, h_a = _states(model, feat, pair)
        f = fuse_gate(h_s, h_a, model.gate)
        assert 0.0 < float(f.gate.detach()) < 1.0
        assert torch.equal(f.fused - (f.gate * f.pooled_seq + (1 - f.gate) * f.pooled_graph),
                           torch.zeros_like(f.fused))


def test_gate_bias_gradient_matches_finite_difference(small, corpus):
    model, feat = small
    h_s, h_a = _states(model, feat, corpus[0])
    h_s.hidden, h_a.hidden = h_s.hidden.detach(), h_a.hidden.detach()
    gate = model.gate
    for k in range(8):
        def f():
            return fuse_gate(h_s, h_a, gate).fused[k]
        gate.zero_grad()
        f().backward()
        analytic = gate.bias.grad.clone()
        numeric = central_difference(f, gate.bias)
        assert relative_error(analytic, numeric) <= 1e-4


def test_width_mismatch_raises(small, corpus):
    model, feat = small
    h_s, h_a = _states(model, feat, corpus[0])
    h_a.hidden = torch.zeros(3, 4, dtype=torch.float64)
    with pytest.raises(ValueError):
        fuse_gate(h_s, h_a, model.gate)


def test_classifier_symmetric_and_biased():
    clf = torch.nn.Linear(8, 2).double()
    vec = torch.randn(8, dtype=torch.float64)
    with torch.no_grad():
        clf.weight.zero_()
        clf.bias.zero_()
    assert classify(vec, clf).p_positive == 0.5
    with torch.no_grad():
        clf.bias.copy_(torch.tensor([-10.0, 10.0]))
    assert classify(vec, clf).p_positive > 0.999


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50))
def test_probability_simplex(seed, scale):
    gen = torch.Generator().manual_seed(seed)
    clf = torch.nn.Linear(8, 2).double()
    vec = torch.randn(8, generator=gen, dtype=torch.float64) * scale
    s = classify(vec, clf)
    assert abs(s.p_positive + s.p_negative - 1.0) <= 1e-6
    assert 0.0 <= s.p_positive <= 1.0


def test_score_format_two_decimals():
    from dialeval.slm import SlmScore

    assert SlmScore(0.3214, 0.6786).formatted() == "0.32"
    assert SlmScore(0.0, 1.0).formatted() == "0.00"


# ---------------------------------------------------------------------------
# whole-pair scoring

def test_score_pair_is_deterministic_and_composed(small, corpus):
    model, feat = small
    a = score_pair(corpus[0], model, feat)
    b = score_pair(corpus[0], model, feat)
    assert a == b
    assert 0.0 < a.p_positive < 1.0
    h_s, h_a = _states(model, feat, corpus[0])
    manual = classify(fuse_gate(h_s, h_a, model.gate), model.classifier)
    assert math.isclose(manual.p_positive, a.p_positive, rel_tol=0, abs_tol=1e-12)


def test_batched_scoring_matches_single(small, corpus):
    model, feat = small
    batched = score_pairs(list(corpus), model, feat)
    for pair, s in zip(corpus, batched):
        assert math.isclose(s.p_positive, score_pair(pair, model, feat).p_positive, abs_tol=1e-9)


def test_missing_graph_is_rejected(small):
    from dialeval.data import MissingAmrError

    model, feat = small
    with pytest.raises(MissingAmrError):
        score_pair(DialoguePair(("hi",), "hello", 1), model, feat)


@pytest.mark.parametrize("variant", ["wo_gm", "graph_only", "sequence_only"])
def test_ablation_fusion(variant):
    model = tiny_model(1, ablation=AblationConfig.variant(variant))
    out = model(random_batch(torch.Generator().manual_seed(1), b=3))
    expected = {"wo_gm": 0.5, "graph_only": 0.0, "sequence_only": 1.0}[variant]
    assert torch.all(out.gate == expected)
    ref = out.pooled_graph if variant == "graph_only" else out.pooled_seq
    if variant == "wo_gm":
        ref = 0.5 * out.pooled_seq + 0.5 * out.pooled_graph
    assert torch.allclose(out.fused, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# attention export and checkpoints

def test_attention_export_shapes_and_rows(small, corpus, tmp_path):
    model, feat = small
    pair = corpus[1]
    seq, g = feat.encode_pair(pair)
    maps = export_attention_maps(pair, model, feat)
    seq_maps = [m for m in maps if m.encoder == "sequence"]
    graph_maps = [m for m in maps if m.encoder == "graph"]
    assert len(seq_maps) == len(graph_maps) == 2 * 2  # layers x heads
    n, m = len(seq.tokens), g.size
    assert all(len(x.weights) * len(x.weights[0]) == n * n for x in seq_maps)
    assert all(len(x.weights) * len(x.weights[0]) == m * m for x in graph_maps)
    paths = write_attention_bundle(maps, tmp_path)
    assert len(paths) == len(maps)
    for p in paths:
        labels, rows = read_attention_tsv(p)
        assert len(labels) == len(rows)
        for row in rows:
            assert abs(sum(row) - 1.0) <= 1e-6
    labels, _ = read_attention_tsv(tmp_path / "sequence_layer0_head0.tsv")
    assert labels == list(seq.labels)


def test_checkpoint_round_trip(small, corpus, tmp_path):
    model, feat = small
    path = save_checkpoint(tmp_path / "ck.pt", model.float(), feat, {"note": "x"})
    model.double()
    loaded, feat2, manifest = load_checkpoint(path)
    assert manifest["note"] == "x"
    assert manifest["model"]["d_model"] == 8
    assert feat2.digests() == feat.digests()
    a = score_pair(corpus[0], loaded, feat2).p_positive
    b = score_pair(corpus[0], model.float(), feat).p_positive
    model.double()
    assert abs(a - b) < 1e-6


def test_relation_vocab_has_reserved_entries(small):
    _, feat = small
    assert "<self>" in feat.relations and "<no-edge>" in feat.relations


def test_collate_pads_and_masks(small, corpus):
    _, feat = small
    batch = collate([feat.encode_pair(p) for p in corpus])
    assert batch.tokens.shape[0] == 2
    lens = batch.token_mask.sum(1).tolist()
    assert lens == [len(feat.encode_pair(p)[0].tokens) for p in corpus]


def test_gradients_reach_wr(corpus):
    model = tiny_model(3)
    gen = torch.Generator().manual_seed(3)
    batch = random_batch(gen, b=2)
    w_r = model.graph_encoder.layers[0].attn.w_r.weight

    def f():
        return model(batch).p_positive.sum()

    model.zero_grad()
    f().backward()
    analytic = w_r.grad.clone()
    numeric = central_difference(f, w_r)
    assert float(analytic.detach().abs().max()) > 0
    assert relative_error(analytic, numeric) <= 1e-4

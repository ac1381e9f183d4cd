import math

import numpy as np
import pytest

from svgrounding import corpus, cpc, grounder as G, vgcl
from svgrounding.numerics import checkpoint
from svgrounding.numerics import tensor as T
from svgrounding.numerics.gradcheck import check
from svgrounding.numerics.tensor import Tensor

from oracles import brute_cqa, brute_span


def _zero_biases(module):
    for name, p in module.named_parameters().items():
        if name.endswith((".b", ".b_ih", ".b_hh", ".shift")):
            p.data[:] = 0


# audio encoder

def test_audio_length():
    enc = G.AudioEncoder(128, 8, np.random.default_rng(0))
    assert enc(Tensor(np.zeros((1, 1024, 128)))).shape == (1, 256, 8)


def test_audio_zero_in_zero_out():
    enc = G.AudioEncoder(6, 4, np.random.default_rng(0))
    _zero_biases(enc)
    assert not enc(Tensor(np.zeros((2, 32, 6)))).data.any()


def test_residual_block_identity_with_zero_weights():
    blk = G.ResidualBlock(4, np.random.default_rng(0))
    blk.conv_b.w.data[:] = 0
    blk.conv_b.b.data[:] = 0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 5, 4)))
    assert blk(x).data.tobytes() == x.data.tobytes()


def test_video_encoder_shape():
    enc = G.VideoEncoder(5, 8, np.random.default_rng(0))
    assert enc(Tensor(np.zeros((3, 32, 5)))).shape == (3, 32, 8)


# cqa

def _fuse_input(block, v, a):
    captured = {}
    real = block.fuse

    def spy(x):
        captured["x"] = x.data
        return real(x)

    block.fuse = spy
    out = block(Tensor(v), Tensor(a))
    block.fuse = real
    return out, captured["x"]


def test_cqa_matches_brute_force():
    r = np.random.default_rng(0)
    block = G.CqaBlock(3, r)
    for _ in range(20):
        v, a = r.normal(size=(2, 3)), r.normal(size=(3, 3))
        out, x = _fuse_input(block, v, a)
        s_r, s_c, b1, b2 = brute_cqa(v, a, block.proj.w.data, block.proj.b.data)
        np.testing.assert_allclose(out.row.data, s_r, atol=1e-9)
        np.testing.assert_allclose(out.col.data, s_c, atol=1e-9)
        np.testing.assert_allclose(x, np.concatenate([v, b1, v * b1, v * b2], -1), atol=1e-9)


def test_cqa_singleton():
    block = G.CqaBlock(4, np.random.default_rng(1))
    v, a = np.random.default_rng(2).normal(size=(2, 1, 4))
    out, x = _fuse_input(block, v, a)
    assert out.row.data.tolist() == [[1.0]] and out.col.data.tolist() == [[1.0]]
    np.testing.assert_allclose(x[:, 4:8], a, atol=1e-15)
    np.testing.assert_allclose(x[:, 12:], v * v, atol=1e-15)


def test_cqa_identical_audio_frames():
    block = G.CqaBlock(4, np.random.default_rng(1))
    r = np.random.default_rng(3)
    frame = r.normal(size=4)
    _, x = _fuse_input(block, r.normal(size=(5, 4)), np.tile(frame, (6, 1)))
    np.testing.assert_allclose(x[:, 4:8], np.tile(frame, (5, 1)), atol=1e-14)


def test_cqa_softmax_normalization():
    block = G.CqaBlock(4, np.random.default_rng(1))
    r = np.random.default_rng(4)
    out = block(Tensor(r.normal(size=(2, 7, 4))), Tensor(r.normal(size=(2, 9, 4))))
    np.testing.assert_allclose(out.row.data.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(out.col.data.sum(-2), 1.0, atol=1e-9)
    assert out.fused.shape == (2, 7, 4)


def test_cqa_width_mismatch():
    block = G.CqaBlock(4, np.random.default_rng(1))
    with pytest.raises(ValueError, match="width"):
        block(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 5))))


# prediction heads

def test_heads_zero_input_uniform_start():
    heads = G.PredictHeads(4, np.random.default_rng(0))
    _zero_biases(heads)
    p_s, p_e, p_i = heads(Tensor(np.zeros((1, 32, 4))))
    assert p_s.shape == p_e.shape == p_i.shape == (1, 32)
    assert not (p_s.data.any() or p_e.data.any() or p_i.data.any())
    np.testing.assert_allclose(T.softmax(p_s).data, 1 / 32)


def test_heads_are_order_sensitive():
    heads = G.PredictHeads(4, np.random.default_rng(0))
    v = np.random.default_rng(1).normal(size=(1, 10, 4))
    fwd = heads(Tensor(v))[0].data[0]
    rev = heads(Tensor(v[:, ::-1].copy()))[0].data[0][::-1]
    assert not np.allclose(fwd, rev)


# losses

def test_perfect_prediction_has_zero_loss():
    n = 8
    s, e = 2, 5
    big = 1e4
    p_s = np.full(n, -big); p_s[s] = big
    p_e = np.full(n, -big); p_e[e] = big
    p_i = np.where((np.arange(n) >= s) & (np.arange(n) <= e), big, -big)
    parts = G.losses(Tensor(p_s), Tensor(p_e), Tensor(p_i), [(s, e)])
    assert parts.total.item() == pytest.approx(0.0, abs=1e-12)


def test_uniform_boundary_and_zero_inside():
    parts = G.losses(Tensor(np.zeros(32)), Tensor(np.zeros(32)), Tensor(np.zeros(32)), [(3, 9)])
    assert parts.bound.item() == pytest.approx(math.log(32), abs=1e-12)
    assert math.log(32) == pytest.approx(3.4657, abs=1e-4)
    assert parts.inside.item() == pytest.approx(32 * math.log(2), abs=1e-12)
    assert parts.total.item() == pytest.approx(math.log(32) + 32 * math.log(2), abs=1e-12)


@pytest.mark.parametrize("span", [(-1, 2), (3, 2), (0, 8)])
def test_loss_span_validation(span):
    z = Tensor(np.zeros(8))
    with pytest.raises(ValueError, match="span"):
        G.losses(z, z, z, [span])


def test_inside_loss_minimized_at_labels():
    labels = G.inside_labels(np.array([[2, 4]]), 7)[0]
    p_i = Tensor(np.zeros(7), requires_grad=True)
    z = Tensor(np.zeros(7))
    for _ in range(3000):
        p_i.grad = None
        G.losses(z, z, p_i, [(2, 4)]).inside.backward()
        p_i.data -= 1.0 * p_i.grad
    probs = 1 / (1 + np.exp(-p_i.data))
    np.testing.assert_allclose(probs, labels, atol=2e-3)


def test_total_loss_gradient_tiny_model():
    r = np.random.default_rng(0)
    model = G.Grounder(3, 2, 4, r, heads=2)
    video, audio = r.normal(size=(2, 6, 2)), r.normal(size=(2, 8, 3))
    spans = np.array([[1, 3], [0, 5]])

    def loss():
        return G.losses(*model(video, audio), spans).total

    assert check(loss, model.parameters()) < 1e-4


def test_chunked_loss_gradient():
    r = np.random.default_rng(1)
    model = G.Grounder(3, 2, 4, r, heads=2)
    video, audio = r.normal(size=(2, 6, 2)), r.normal(size=(2, 16, 3))
    spans = np.array([[1, 3], [0, 5]])
    loss = lambda: G.losses(*G.forward_chunked(model, video, audio, 2), spans).total
    assert check(loss, model.parameters()) < 1e-4


# decoding

def test_infer_span_examples():
    p_s, p_e = np.zeros(10), np.zeros(10)
    p_s[3] = p_e[7] = 5.0
    assert G.infer_span(p_s, p_e) == (3, 7)
    assert G.infer_span(np.zeros(10), np.zeros(10)) == (0, 0)
    p_s, p_e = np.zeros(10), np.zeros(10)
    p_s[7] = p_e[3] = 5.0
    got = G.infer_span(p_s, p_e)
    assert got != (7, 3) and got == brute_span(p_s, p_e)


def test_infer_span_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(1, 12))
        p_s, p_e = r.normal(scale=2, size=(2, n))
        got = G.infer_span(p_s, p_e)
        assert got[0] <= got[1] and got == brute_span(p_s, p_e)


def test_infer_span_single_frame():
    assert G.infer_span([1.0], [2.0]) == (0, 0)


# chunking

def test_single_chunk_equals_plain_forward():
    r = np.random.default_rng(0)
    model = G.Grounder(6, 5, 4, r)
    video, audio = r.normal(size=(2, 8, 5)), r.normal(size=(2, 32, 6))
    a = G.forward_chunked(model, video, audio, 1)
    v_hat = model.encode_video(video)
    b = model.heads(model.cqa(v_hat, model.audio(Tensor(audio))).fused)
    for x, y in zip(a, b):
        assert x.data.tobytes() == y.data.tobytes()


def test_repeated_chunks_average_to_one_chunk():
    r = np.random.default_rng(1)
    model = G.Grounder(6, 5, 4, r)
    video = r.normal(size=(1, 8, 5))
    piece = r.normal(size=(1, 16, 6))
    many = G.forward_chunked(model, video, np.tile(piece, (1, 8, 1)), 8)
    one = G.forward_chunked(model, video, piece, 1)
    for x, y in zip(many, one):
        np.testing.assert_allclose(x.data, y.data, atol=1e-12)


def test_chunk_geometry(monkeypatch):
    r = np.random.default_rng(2)
    model = G.Grounder(6, 5, 4, r)
    seen = []
    real = model.audio
    model.audio = lambda x: seen.append(x.shape) or real(x)
    G.forward_chunked(model, r.normal(size=(2, 8, 5)), r.normal(size=(2, 256, 6)), 8)
    assert seen == [(16, 32, 6)]


def test_uneven_audio_is_padded():
    r = np.random.default_rng(3)
    model = G.Grounder(6, 5, 4, r)
    out = G.forward_chunked(model, r.normal(size=(1, 8, 5)), r.normal(size=(1, 60, 6)), 8)
    assert out[0].shape == (1, 8)


# transplant

def _cpc_params(d=4, seed=0):
    return {k: v.data.copy() for k, v in
            cpc.transferable(cpc.Cpc(6, d, 2, np.random.default_rng(seed)), "cpc").items()}


def test_transplant_copies_stage_one():
    model = G.Grounder(6, 5, 4, np.random.default_rng(1))
    ck = _cpc_params()
    done = G.transplant(model, ck, "cpc")
    assert len(done) == len(ck) == 8
    saved = checkpoint.loads(checkpoint.dumps(model.named_parameters("grounder")))
    for k, v in ck.items():
        assert saved["grounder.audio." + k[len("cpc."):]].tobytes() == v.tobytes()


def test_transplant_from_vgcl_ignores_guide():
    model = G.Grounder(6, 5, 4, np.random.default_rng(1))
    src = vgcl.Vgcl(6, 5, 4, 2, np.random.default_rng(2))
    params = {k: v.data for k, v in src.named_parameters("vgcl").items()}
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    G.transplant(model, params, "vgcl")
    stage = {"audio." + k for k in model.audio.stage_one()}
    for k, v in model.named_parameters().items():
        if k in stage:
            assert np.array_equal(v.data, params["vgcl." + k[len("audio."):]])
        else:
            assert np.array_equal(v.data, before[k])


def test_transplant_shape_mismatch_names_parameter():
    model = G.Grounder(6, 5, 4, np.random.default_rng(1))
    with pytest.raises(checkpoint.CheckpointError, match=r"encoder.conv1.w.*expected.*got"):
        G.transplant(model, _cpc_params(d=6), "cpc")


def test_transplant_keeps_parameter_names():
    base = G.Grounder(6, 5, 4, np.random.default_rng(1))
    moved = G.Grounder(6, 5, 4, np.random.default_rng(1))
    G.transplant(moved, _cpc_params(), "cpc")
    a, b = base.named_parameters(), moved.named_parameters()
    assert list(a) == list(b)
    assert all(a[k].shape == b[k].shape for k in a)


# training loop

def test_short_training_reduces_loss():
    cfg = corpus.SynthConfig(n_train=32, n_val=2, n_test=2, n_a=64, n_mel=16, n_v=16, d_v=8)
    ds = corpus.synthesize(cfg, 0)["train"]
    model = G.Grounder(16, 8, 8, np.random.default_rng(0))
    hist = G.train(model, ds, G.TrainConfig(epochs=6, batch_size=8, lr=3e-3, warmup_steps=1,
                                            n_chunks=2), seed=0)
    assert hist[-1]["total"] < hist[0]["total"]
    spans = G.predict(model, ds, n_chunks=2)
    assert spans.shape == (32, 2) and np.all(spans[:, 0] <= spans[:, 1])

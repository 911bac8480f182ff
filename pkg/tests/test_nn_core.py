import numpy as np
import pytest

from phenoscribe.errors import CheckpointError, DimMismatch, EmptySequence, NonScalarLoss
from phenoscribe.nn import (
    Adam,
    EncoderBlock,
    GRUCell,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    Parameter,
    Tensor,
    TransformerEncoder,
    adam_step,
    concat,
    decode_checkpoint,
    encode_checkpoint,
    gru_step,
    load_checkpoint,
    save_checkpoint,
    stack,
)
from phenoscribe.nn.gradcheck import max_relative_error
from phenoscribe.nn.layers import causal_mask

GRAD_TOL = 1e-5


def weighted_sum(out, seed=99):
    """A generic scalar readout so every output element gets a distinct weight."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * w).sum()


# -- backward basics --------------------------------------------------------

def test_sum_grad(f64):
    x = Parameter(np.array([1.0, 2.0, 3.0]))
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_square_grad(f64):
    x = Parameter(np.array([1.0, 2.0, 3.0]))
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_non_scalar_loss():
    with pytest.raises(NonScalarLoss):
        Parameter(np.ones(3)).backward()


def test_unreached_grad_is_zero(f64):
    a, b = Parameter(np.ones(2)), Parameter(np.ones(2))
    (a * 2).sum().backward()
    np.testing.assert_array_equal(b.grad, 0)


def test_frozen_parameter_passes_gradient_through(f64):
    w = Parameter(np.full((2, 2), 2.0), frozen=True)
    x = Parameter(np.ones((1, 2)))
    (x @ w).sum().backward()
    np.testing.assert_array_equal(w.grad, 0)
    np.testing.assert_array_equal(x.grad, [[4.0, 4.0]])


# -- finite-difference checks, one per op family and layer type --------------

def test_elementwise_ops_gradcheck(f64, rng):
    x = Parameter(rng.uniform(0.2, 1.5, (3, 4)))
    y = Parameter(rng.uniform(0.2, 1.5, (3, 4)))

    def loss():
        z = (x * y + x / y - y ** 2).exp().log() + x.tanh() + y.sigmoid() + (x - 1.0).gelu() + (y - 0.8).relu()
        return weighted_sum(z.clamp(-5, 5) + x.softmax(-1) + y.log_softmax(0)) + z.mean()

    assert max_relative_error(loss, [x, y]) < GRAD_TOL


def test_shape_ops_gradcheck(f64, rng):
    x = Parameter(rng.standard_normal((2, 3, 4)))
    y = Parameter(rng.standard_normal((4, 3)))

    def loss():
        a = x.transpose(0, 2, 1).reshape(2, 12)
        b = concat([a[:, :6], a[:, 6:] * 2], axis=1)
        c = stack([x[0] @ y, x[1] @ y], axis=0)
        return weighted_sum(b) + weighted_sum(c, 3) + x[:, 1, ::2].sum() + x.sum(axis=1).mean()

    assert max_relative_error(loss, [x, y]) < GRAD_TOL


def test_linear_gradcheck(f64, rng):
    lin = Linear(5, 3, rng)
    x = Parameter(rng.standard_normal((4, 5)))
    assert max_relative_error(lambda: weighted_sum(lin(x)), lin.parameters() + [x]) < GRAD_TOL


def test_layer_norm_gradcheck(f64, rng):
    ln = LayerNorm(6)
    ln.gamma.assign(rng.uniform(0.5, 1.5, 6))
    ln.beta.assign(rng.standard_normal(6))
    x = Parameter(rng.standard_normal((3, 6)))
    assert max_relative_error(lambda: weighted_sum(ln(x)), ln.parameters() + [x]) < GRAD_TOL


def test_attention_gradcheck(f64, rng):
    attn = MultiHeadAttention(8, 2, rng)
    x = Parameter(rng.standard_normal((2, 4, 8)))
    mask = causal_mask(4)
    assert max_relative_error(lambda: weighted_sum(attn(x, mask)), attn.parameters() + [x]) < GRAD_TOL


def test_encoder_block_gradcheck(f64, rng):
    block = EncoderBlock(8, 2, 16, rng)
    x = Parameter(rng.standard_normal((1, 3, 8)))
    assert max_relative_error(lambda: weighted_sum(block(x)), block.parameters() + [x]) < GRAD_TOL


def test_gru_gradcheck(f64, rng):
    cell = GRUCell(4, 5, rng)
    for p in (cell.b_z, cell.b_r, cell.b_h):
        p.assign(rng.standard_normal(5) * 0.1)
    h = Parameter(rng.standard_normal(5))
    xs = [rng.standard_normal(4) for _ in range(3)]

    def loss():
        state = h
        for x in xs:
            state = gru_step(cell, state, x)
        return weighted_sum(state)

    assert max_relative_error(loss, cell.parameters() + [h]) < GRAD_TOL


def test_float32_gradcheck_looser(rng):
    lin = Linear(4, 3, rng)
    x = Parameter(rng.standard_normal((2, 4)))
    assert max_relative_error(lambda: weighted_sum(lin(x)), lin.parameters() + [x], eps=1e-2) < 1e-3


# -- GRU ------------------------------------------------------------------

def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def test_gru_zero_weights(f64):
    cell = GRUCell(3, 3, np.random.default_rng(0))
    for p in cell.parameters():
        p.assign(np.zeros_like(p.data))
    h = np.array([0.4, -1.0, 2.0])
    np.testing.assert_allclose(gru_step(cell, h, np.ones(3)).data, 0.5 * h)


def test_gru_zero_state_zero_input(f64):
    cell = GRUCell(3, 4, np.random.default_rng(1))
    np.testing.assert_array_equal(gru_step(cell, np.zeros(4), np.zeros(3)).data, 0)


def test_gru_matches_scalar_oracle(f64):
    rng = np.random.default_rng(2)
    cell = GRUCell(3, 4, rng)
    for p in (cell.b_z, cell.b_r, cell.b_h):
        p.assign(rng.standard_normal(4))
    h, x = rng.standard_normal(4), rng.standard_normal(3)
    W = {g: getattr(cell, f"W_{g}").data for g in "zrh"}
    U = {g: getattr(cell, f"U_{g}").data for g in "zrh"}
    b = {g: getattr(cell, f"b_{g}").data for g in "zrh"}
    out = []
    for j in range(4):
        z = _sigmoid(sum(x[i] * W["z"][i, j] for i in range(3)) + sum(h[k] * U["z"][k, j] for k in range(4)) + b["z"][j])
        r = [_sigmoid(sum(x[i] * W["r"][i, m] for i in range(3)) + sum(h[k] * U["r"][k, m] for k in range(4)) + b["r"][m])
             for m in range(4)]
        cand = np.tanh(sum(x[i] * W["h"][i, j] for i in range(3))
                       + sum(r[k] * h[k] * U["h"][k, j] for k in range(4)) + b["h"][j])
        out.append((1 - z) * h[j] + z * cand)
    np.testing.assert_allclose(gru_step(cell, h, x).data, out, atol=1e-12, rtol=0)


def test_gru_dim_mismatch():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    with pytest.raises(DimMismatch):
        gru_step(cell, np.zeros(4), np.zeros(5))


# -- transformer ------------------------------------------------------------

def test_zero_layers_is_identity(rng):
    enc = TransformerEncoder(8, 0, 2, 16, rng)
    x = rng.standard_normal((5, 8)).astype(np.float32)
    np.testing.assert_array_equal(enc(x).data, x)


def test_empty_sequence(rng):
    with pytest.raises(EmptySequence):
        TransformerEncoder(8, 1, 2, 16, rng)(np.zeros((0, 8)))


def test_attention_permutation_equivariance(f64, rng):
    attn = MultiHeadAttention(8, 2, rng)
    x = rng.standard_normal((1, 6, 8))
    perm = rng.permutation(6)
    np.testing.assert_allclose(attn(x[:, perm]).data, attn(x).data[:, perm], atol=1e-12)


def test_attention_weights_normalized(rng):
    attn = MultiHeadAttention(8, 4, rng)
    attn(rng.standard_normal((2, 7, 8)), causal_mask(7))
    np.testing.assert_allclose(attn.last_weights.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(np.triu(attn.last_weights[0, 0], 1) < 1e-6)


def test_layer_norm_statistics(f64, rng):
    out = LayerNorm(16)(rng.standard_normal((4, 16)) * 5 + 3).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
    assert np.all(np.abs(out.var(axis=-1) - 1) < 1e-4)


def test_softmax_rows(rng):
    s = Tensor(rng.standard_normal((3, 9)) * 10).softmax(-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


# -- optimizer ------------------------------------------------------------

def test_adam_zero_gradient_no_move():
    p = Parameter(np.array([1.0, -2.0]))
    before = p.data.copy()
    adam_step([p], [np.zeros(2)], {}, 0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_skips_frozen():
    p = Parameter(np.array([1.0]), frozen=True)
    adam_step([p], [np.array([5.0])], {}, 0.1)
    assert p.data[0] == 1.0


def test_adam_quadratic(f64):
    w = Parameter(np.array([0.0]))
    opt = Adam([w], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ((w - 3.0) ** 2).sum().backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.01


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        lin = Linear(4, 2, rng)
        opt = Adam(lin.parameters(), lr=0.01)
        x = rng.standard_normal((8, 4))
        for _ in range(20):
            opt.zero_grad()
            (lin(x).tanh() ** 2).mean().backward()
            opt.step()
        return [p.data.tobytes() for p in lin.parameters()]

    assert run() == run()


# -- checkpoints ----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    lin = Linear(3, 2, rng)
    lin.b.freeze()
    save_checkpoint(tmp_path / "c.ckpt", lin.named_parameters(), {"d": 3}, {"stage": "x"})
    blob = (tmp_path / "c.ckpt").read_bytes()
    assert blob[:8] == b"PHSC0001"
    header, arrays = load_checkpoint(tmp_path / "c.ckpt")
    assert header["config"] == {"d": 3} and header["extra"] == {"stage": "x"}
    assert [e["name"] for e in header["params"]] == ["W", "b"]
    assert [e["frozen"] for e in header["params"]] == [False, True]
    np.testing.assert_array_equal(arrays["W"], lin.W.data)
    assert arrays["W"].dtype == np.dtype("<f4")
    assert encode_checkpoint(lin.named_parameters(), {"d": 3}, {"stage": "x"}) == blob


def test_checkpoint_errors(tmp_path, rng):
    blob = encode_checkpoint(Linear(3, 2, rng).named_parameters())
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"XXXX0001" + blob[8:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")

import copy
import logging
import math

import numpy as np
import pytest

from phenoscribe.config import ModelConfig, TrainConfig
from phenoscribe.errors import DimMismatch, EmptyCohort, EmptySeries, UnsortedArms
from phenoscribe.fusion_mtl import (
    N_FEATURES,
    FusionModel,
    FusionWeights,
    VisitFeatures,
    encode_biomarkers,
    fuse,
    longitudinal_forward,
    mtl_objective,
    mtl_train,
    positive_weights,
    predict,
    task_loss,
    total_loss,
)
from phenoscribe.nn import Parameter, Tensor, encode_checkpoint, gru_step
from phenoscribe.nn.gradcheck import max_relative_error
from phenoscribe.nn.layers import sinusoidal_positions

TINY = ModelConfig(d_model=8, n_heads=2, d_ff=16, bio_layers=1)


def weighted_sum(out, seed=99):
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * w).sum()


def visit(rng, arm, n_windows=3, labels=(0, 0, 0), d=TINY.d_model):
    return VisitFeatures(arm, rng.standard_normal(d), rng.standard_normal((n_windows, N_FEATURES)), labels)


def trajectory(rng, arms=4, **kw):
    return [visit(rng, k, n_windows=2 + k % 3, **kw) for k in range(arms)]


# -- loss formulas --------------------------------------------------------

def test_task_loss_examples(f64):
    assert abs(task_loss(1, 0.5, 2.0).item() - 2 * math.log(2)) < 1e-12
    for w in (0.3, 1.0, 7.0):
        assert abs(task_loss(0, 0.5, w).item() - math.log(2)) < 1e-12
    assert task_loss(1, 1.0, 1.0).item() < 1e-6
    assert np.isfinite(task_loss(1, 0.0, 1.0).item()) and np.isfinite(task_loss(0, 1.0, 1.0).item())


def test_total_loss_examples():
    assert total_loss(1.0, 0.5, 0.5, 0.25) == 1.25
    assert total_loss(0.7, 0.4, 0.9, 0.0) == 0.7
    assert total_loss(0.7, 0.4, 0.9, 1.0) == 0.7 + 0.4 + 0.9


def _reference_task_loss(y, p, w):
    p = min(max(p, 1e-7), 1 - 1e-7)
    return -(w * y * math.log(p) + (1 - y) * math.log(1 - p))


def test_losses_match_reference_on_random_tuples(f64):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        ys = rng.integers(0, 2, 3)
        ps = rng.uniform(-0.05, 1.05, 3).clip(0, 1)
        ws = rng.uniform(0.1, 10, 3)
        lam = rng.uniform(0, 1)
        ours = [task_loss(ys[t], ps[t], ws[t]).item() for t in range(3)]
        ref = [_reference_task_loss(int(ys[t]), float(ps[t]), float(ws[t])) for t in range(3)]
        worst = max(worst, *(abs(a - b) for a, b in zip(ours, ref)))
        worst = max(worst, abs(total_loss(*ours, lam) - (ref[0] + lam * (ref[1] + ref[2]))))
    assert worst < 1e-12


def test_mtl_objective_is_batch_mean(f64, rng):
    labels = rng.integers(0, 2, (5, 3))
    probs = rng.uniform(0.05, 0.95, (5, 3))
    w, lam = (2.0, 3.0, 0.5), 0.4
    per_task = [np.mean([_reference_task_loss(labels[i, t], probs[i, t], w[t]) for i in range(5)]) for t in range(3)]
    expected = per_task[0] + lam * (per_task[1] + per_task[2])
    assert abs(mtl_objective(labels, Tensor(probs), w, lam).item() - expected) < 1e-12


def test_positive_weights(caplog):
    assert positive_weights([[0, 1, 0], [1, 0, 1], [0, 1, 0], [1, 0, 0]]) == [1.0, 1.0, 3.0]
    with caplog.at_level(logging.WARNING):
        assert positive_weights([[0, 1, 1], [1, 1, 0]])[1] == 1.0
    assert "single class" in caplog.text


# -- fusion ---------------------------------------------------------------

def test_fuse_equal_logits_is_mean(rng):
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    np.testing.assert_allclose(fuse(a, b, FusionWeights()).data, (a + b) / 2, atol=1e-6)


def test_fuse_saturated_logits(f64, rng):
    fw = FusionWeights()
    fw.logits.assign(np.array([20.0, -20.0]))
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    np.testing.assert_allclose(fuse(a, b, fw).data, a, atol=1e-6)


def test_fuse_weights_positive_and_normalized(rng):
    fw = FusionWeights()
    fw.logits.assign(rng.standard_normal(2) * 5)
    a = fw.weights().data
    assert np.all(a > 0) and abs(a.sum() - 1) < 1e-6


def test_fuse_gradcheck(f64, rng):
    fw = FusionWeights()
    fw.logits.assign(np.array([0.3, -0.4]))
    a, b = Parameter(rng.standard_normal(6)), Parameter(rng.standard_normal(6))
    assert max_relative_error(lambda: weighted_sum(fuse(a, b, fw)), [a, b, fw.logits]) < 1e-5
    weighted_sum(fuse(a, b, fw)).backward()
    assert np.all(a.grad != 0) and np.all(b.grad != 0)


def test_fuse_dim_mismatch(rng):
    with pytest.raises(DimMismatch):
        fuse(rng.standard_normal(4), rng.standard_normal(5), FusionWeights())


def test_logit_shift_invariance(rng):
    model = FusionModel(TINY, 0)
    traj = trajectory(rng)
    before = predict(model, [traj])
    model.fusion.logits.assign(model.fusion.logits.data + 3.0)
    np.testing.assert_allclose(predict(model, [traj]), before, atol=1e-6)


# -- biomarker encoder ----------------------------------------------------

def test_encoder_single_window_is_that_position(rng):
    enc = FusionModel(TINY, 0).bio_enc
    w = rng.standard_normal((1, N_FEATURES))
    x = enc.proj((w - enc.norm_mean.data) / enc.norm_std.data) + sinusoidal_positions(1, TINY.d_model)
    np.testing.assert_allclose(encode_biomarkers(enc, w).data, enc.encoder(x).data[0], atol=1e-6)


def test_encoder_duplicate_windows_without_positions(rng):
    enc = FusionModel(ModelConfig(**{**TINY.__dict__, "bio_positional": False}), 0).bio_enc
    w = rng.standard_normal((1, N_FEATURES))
    np.testing.assert_allclose(encode_biomarkers(enc, np.vstack([w, w])).data, encode_biomarkers(enc, w).data, atol=1e-6)


def test_encoder_output_dim_and_padding(rng):
    enc = FusionModel(TINY, 0).bio_enc
    mats = [rng.standard_normal((n, N_FEATURES)) for n in (1, 4, 9)]
    batched = enc(mats).data
    assert batched.shape == (3, TINY.d_model)
    for i, m in enumerate(mats):
        np.testing.assert_allclose(encode_biomarkers(enc, m).data, batched[i], atol=1e-5)


def test_encoder_errors(rng):
    enc = FusionModel(TINY, 0).bio_enc
    with pytest.raises(EmptySeries):
        encode_biomarkers(enc, np.zeros((0, N_FEATURES)))
    with pytest.raises(DimMismatch):
        enc([rng.standard_normal((2, N_FEATURES - 1))])


# -- gradient integrity of the whole model ---------------------------------

def test_fusion_model_gradcheck(f64, rng):
    model = FusionModel(TINY, 0)
    for p in model.parameters():
        if not p.frozen:
            p.assign(p.data + rng.standard_normal(p.shape) * 0.05)
    traj = trajectory(rng, arms=3, labels=(1, 0, 1))
    labels = np.array([v.labels for v in traj], float)
    picks = [model.fusion.logits, model.gru.W_z, model.gru.U_h, model.gru.b_r,
             model.bio_enc.proj.W, model.bio_enc.encoder.blocks[0].attn.q.W]
    picks += [p for head in model.head.values() for p in head.parameters()]
    err = max_relative_error(lambda: mtl_objective(labels, model(traj), (2.0, 1.0, 0.5), 0.25), picks)
    assert err < 1e-5


# -- longitudinal propagation ---------------------------------------------

def test_single_visit_base_case(f64, rng):
    model = FusionModel(TINY, 0)
    v = [visit(rng, 0)]
    fused = fuse(v[0].e_lm, model.bio_enc([v[0].bio])[0], model.fusion)
    expected = gru_step(model.gru, np.zeros(TINY.d_model), fused).data
    np.testing.assert_allclose(longitudinal_forward(model, v, "longitudinal").data[0], expected, atol=1e-12)
    np.testing.assert_allclose(longitudinal_forward(model, v, "cross_sectional").data[0], fused.data, atol=1e-12)


def test_cross_sectional_permutation(rng):
    model = FusionModel(TINY, 0, "cross_sectional")
    traj = trajectory(rng)
    perm = [2, 0, 3, 1]
    shuffled = [VisitFeatures(k, traj[j].e_lm, traj[j].bio, traj[j].labels) for k, j in enumerate(perm)]
    np.testing.assert_allclose(model.representations(shuffled).data, model.representations(traj).data[perm], atol=1e-6)


def test_state_carries_forward_and_is_causal(rng):
    model = FusionModel(TINY, 0, "longitudinal")
    traj = trajectory(rng)
    base = model.representations(traj).data
    changed = copy.copy(traj)
    changed[0] = VisitFeatures(0, traj[0].e_lm, traj[0].bio + 1.0, traj[0].labels)
    assert not np.allclose(model.representations(changed).data[2], base[2])
    later = copy.copy(traj)
    later[3] = VisitFeatures(3, traj[3].e_lm + 1.0, traj[3].bio, traj[3].labels)
    np.testing.assert_array_equal(model.representations(later).data[:3], base[:3])
    cross = longitudinal_forward(model, changed, "cross_sectional").data
    np.testing.assert_allclose(cross[2], longitudinal_forward(model, traj, "cross_sectional").data[2], atol=1e-6)


def test_unsorted_arms(rng):
    model = FusionModel(TINY, 0)
    with pytest.raises(UnsortedArms):
        model.representations([visit(rng, 1), visit(rng, 0)])
    with pytest.raises(UnsortedArms):
        model.representations([visit(rng, 1), visit(rng, 1)])


def test_probability_fusion_mode(rng):
    model = FusionModel(ModelConfig(**{**TINY.__dict__, "fusion": "probability"}), 0)
    out = model(trajectory(rng)).data
    assert out.shape == (4, 3) and np.all((out > 0) & (out < 1))


# -- training -------------------------------------------------------------

def test_lambda_zero_trunk_gradient_equals_single_task(f64, rng):
    model = FusionModel(TINY, 0)
    traj = trajectory(rng, labels=(1, 0, 1))
    labels = np.array([v.labels for v in traj], float)
    w = (2.0, 3.0, 0.5)
    trunk = [(n, p) for n, p in model.named_parameters() if not n.startswith("head.") and not p.frozen]

    def grads(loss_fn):
        for p in model.parameters():
            p.zero_grad()
        loss_fn().backward()
        return {n: p.grad.copy() for n, p in trunk}

    multi = grads(lambda: mtl_objective(labels, model(traj), w, 0.0))
    single = grads(lambda: task_loss(labels[:, 0], model(traj)[:, 0], w[0]).mean())
    assert any(np.abs(g).max() > 0 for g in single.values())
    assert max(np.abs(multi[n] - single[n]).max() for n in multi) < 1e-12


def _cohort(rng, n=6, arms=3):
    out = []
    for i in range(n):
        y = i % 2
        out.append([VisitFeatures(k, rng.standard_normal(TINY.d_model) + y,
                                  rng.standard_normal((3, N_FEATURES)) + y, (y, 1 - y, y)) for k in range(arms)])
    return out


def test_training_is_deterministic():
    data = _cohort(np.random.default_rng(4))
    tcfg = TrainConfig(epochs=3)
    a, info_a = mtl_train(data[:4], data[4:], TINY, tcfg, seed=1)
    b, info_b = mtl_train(data[:4], data[4:], TINY, tcfg, seed=1)
    assert encode_checkpoint(a.named_parameters()) == encode_checkpoint(b.named_parameters())
    assert info_a == info_b
    assert info_a["w_plus"] == [1.0, 1.0, 1.0]


def test_training_only_touches_fusion_prefixes():
    data = _cohort(np.random.default_rng(4))
    model, _ = mtl_train(data[:4], data[4:], TINY, TrainConfig(epochs=2), seed=0, mode="cross_sectional")
    prefixes = ("bio_enc.", "fusion.", "gru.", "head.depression.", "head.si.", "head.sleep.")
    assert all(n.startswith(prefixes) for n, _ in model.named_parameters())
    assert all(p.frozen for p in model.parameters())


def test_training_learns_separable_signal():
    data = _cohort(np.random.default_rng(5), n=10)
    model, info = mtl_train(data[:8], data[8:], TINY, TrainConfig(epochs=30, lr=1e-2), seed=0)
    probs = predict(model, data[:8])[:, 0]
    labels = np.array([v.labels[0] for t in data[:8] for v in t])
    assert probs[labels == 1].min() > probs[labels == 0].max()
    assert info["loss"][-1] < info["loss"][0]


def test_empty_cohort():
    with pytest.raises(EmptyCohort):
        mtl_train([], [], TINY, TrainConfig(epochs=1), seed=0)

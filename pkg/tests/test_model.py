"""Model graph tests: fusion rule, token construction, decoder contract,
mask-derived enhancement, task gating and the sequence discriminator."""

import numpy as np
import pytest

from mtliver import tensor as T
from mtliver.errors import ConfigError, ShapeError
from mtliver.model import (ModelConfig, MultiTaskModel, SequenceDiscriminator,
                           derive_enhancement, fuse_features)
from mtliver.tensor import Tensor, backward


def small_config(**kw):
    base = dict(h=32, w=32, channels=(2, 2, 4, 4), depth=1, d_k=8)
    base.update(kw)
    return ModelConfig(**base)


def rand_phases(seed=0, h=32, w=32):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 255.0, size=(4, h, w))


# ---------------------------------------------------------------- fusion ----

def test_fusion_weights_complement_to_one():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(5, 3, 3)))
    b = Tensor(rng.normal(size=(5, 3, 3)))
    _, w = fuse_features(a, b)
    assert np.allclose(w.gamma_spa + w.gamma_spe, 1.0, atol=1e-12)


def test_fusion_equal_pooled_means_gives_triple_sum():
    # identical pooled statistics -> both gates are 1/2 -> fused = 1.5*(a+b)
    a = Tensor(np.full((2, 2, 2), 3.0))
    b = Tensor(np.full((2, 2, 2), 3.0))
    fused, w = fuse_features(a, b)
    assert np.allclose(w.gamma_spa, 0.5)
    assert np.allclose(fused.data, 1.5 * (a.data + b.data))


def test_fusion_gate_closed_form_at_logit_difference():
    # pooled means differ by ln(3): sigmoid(ln 3) = 0.75 exactly
    d = np.log(3.0)
    a = Tensor(np.full((1, 4, 4), d))
    b = Tensor(np.zeros((1, 4, 4)))
    fused, w = fuse_features(a, b)
    assert np.allclose(w.gamma_spa, 0.75, atol=1e-12)
    assert np.allclose(w.gamma_spe, 0.25, atol=1e-12)
    assert np.allclose(fused.data, a.data * 1.75 + b.data * 1.25)


def test_fusion_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        fuse_features(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 4, 4))))


def test_fusion_gradients_flow_to_both_inputs():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    fused, _ = fuse_features(a, b)
    backward(T.tsum(fused * fused))
    assert a.grad is not None and np.any(a.grad != 0)
    assert b.grad is not None and np.any(b.grad != 0)


# ------------------------------------------------------ ablation reroutes ---

def test_no_spectral_branch_doubles_spatial_features():
    cfg = small_config(use_spe=False)
    model = MultiTaskModel(cfg, seed=0)
    x = Tensor(np.arange(float(cfg.c * cfg.p * cfg.p)).reshape(cfg.c, cfg.p, cfg.p))
    fused, w = model.fuse_phase(x, None)
    assert np.allclose(fused.data, 2.0 * x.data)
    assert np.allclose(w.gamma_spa, 1.0) and np.allclose(w.gamma_spe, 0.0)


def test_no_spatial_branch_doubles_spectral_features():
    cfg = small_config(use_spa=False)
    model = MultiTaskModel(cfg, seed=0)
    x = Tensor(np.ones((cfg.c, cfg.p, cfg.p)) * 0.3)
    fused, w = model.fuse_phase(None, x)
    assert np.allclose(fused.data, 2.0 * x.data)
    assert np.allclose(w.gamma_spe, 1.0)


def test_no_entropy_fusion_falls_back_to_plain_sum():
    cfg = small_config(use_mdief=False)
    model = MultiTaskModel(cfg, seed=0)
    rng = np.random.default_rng(2)
    a = Tensor(rng.normal(size=(cfg.c, cfg.p, cfg.p)))
    b = Tensor(rng.normal(size=(cfg.c, cfg.p, cfg.p)))
    fused, w = model.fuse_phase(a, b)
    assert np.allclose(fused.data, a.data + b.data)
    assert np.allclose(w.gamma_spa, 0.5) and np.allclose(w.gamma_spe, 0.5)


def test_both_branches_off_is_rejected():
    with pytest.raises(ConfigError):
        small_config(use_spa=False, use_spe=False)


# ------------------------------------------------------------- tokens -------

def test_token_construction_oracle():
    cfg = small_config()
    model = MultiTaskModel(cfg, seed=0)
    rng = np.random.default_rng(3)
    fused = [Tensor(rng.normal(size=(cfg.c, cfg.p, cfg.p))) for _ in range(4)]
    tokens = model.build_tokens(fused)
    assert tokens.data.shape == (cfg.n_tokens, cfg.p * cfg.p)
    for j in range(4):
        for k in range(cfg.c):
            row = j * cfg.c + k
            expect = fused[j].data[k].reshape(-1) + model.pe[row]
            assert np.allclose(tokens.data[row], expect)


def test_phase_order_changes_head_outputs():
    cfg = small_config()
    model = MultiTaskModel(cfg, seed=0)
    model.eval_mode()
    phases = rand_phases(4)
    out_a = model.forward(phases)
    out_b = model.forward(phases[::-1].copy())
    assert not np.allclose(out_a.seg_logits.data, out_b.seg_logits.data)


# ------------------------------------------------------------ forward -------

def test_forward_output_shapes_and_invariants():
    cfg = small_config()
    model = MultiTaskModel(cfg, seed=0)
    out = model.forward(rand_phases(5))
    assert out.seg_logits.data.shape == (cfg.h, cfg.w)
    assert out.seg_prob.data.shape == (cfg.h, cfg.w)
    assert np.all((out.seg_prob.data > 0) & (out.seg_prob.data < 1))
    assert out.reg.data.shape == (4,)
    assert out.cls_prob.data.shape == (2,)
    assert np.isclose(out.cls_prob.data.sum(), 1.0, atol=1e-12)
    assert np.all(out.cls_prob.data > 0)
    assert out.derived_enhancement.data.shape == (4,)
    assert len(out.fusion_weights) == 4


def test_forward_rejects_wrong_phase_shape():
    model = MultiTaskModel(small_config(), seed=0)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((3, 32, 32)))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((4, 16, 32)))


def test_seg_only_config_skips_trunk_and_extras():
    cfg = small_config(tasks=("seg",))
    model = MultiTaskModel(cfg, seed=0)
    assert not cfg.trunk_enabled and not cfg.tim_enabled and not cfg.tdd_enabled
    assert model.trunk == []
    assert not hasattr(model, "reg_head") and not hasattr(model, "cls_head")
    out = model.forward(rand_phases(6))
    assert out.seg_prob is not None
    assert out.reg is None and out.cls_prob is None
    assert out.derived_enhancement is None


def test_tim_and_tdd_gating_follow_tasks():
    assert small_config(use_tim=True, tasks=("seg", "cls")).tim_enabled is False
    assert small_config(use_tdd=True, tasks=("seg", "reg")).tdd_enabled is False
    assert small_config(use_tim=False).tim_enabled is False
    assert small_config().tim_enabled and small_config().tdd_enabled


def test_forward_determinism_for_fixed_seed():
    cfg = small_config()
    phases = rand_phases(7)
    out1 = MultiTaskModel(cfg, seed=11).forward(phases)
    out2 = MultiTaskModel(cfg, seed=11).forward(phases)
    assert np.array_equal(out1.seg_logits.data, out2.seg_logits.data)
    assert np.array_equal(out1.reg.data, out2.reg.data)


# ------------------------------------------------ derived enhancement -------

def test_derived_enhancement_full_mask_equals_image_mean():
    rng = np.random.default_rng(8)
    phases = rng.uniform(0, 255, size=(4, 6, 6))
    prob = Tensor(np.ones((6, 6)))
    out = derive_enhancement(prob, phases)
    assert np.allclose(out.data, phases.mean(axis=(1, 2)), atol=1e-9)


def test_derived_enhancement_hard_mask_is_exact_region_mean():
    phases = np.zeros((4, 4, 4))
    phases[:, 1:3, 1:3] = np.array([10.0, 200.0, 90.0, 40.0]).reshape(4, 1, 1)
    prob = np.zeros((4, 4))
    prob[1:3, 1:3] = 1.0
    out = derive_enhancement(Tensor(prob), phases)
    assert np.allclose(out.data, [10.0, 200.0, 90.0, 40.0], atol=1e-9)


def test_derived_enhancement_empty_mask_is_finite():
    phases = np.full((4, 4, 4), 100.0)
    out = derive_enhancement(Tensor(np.zeros((4, 4))), phases)
    assert np.all(np.isfinite(out.data))
    assert np.all(out.data >= 0)


def test_derived_enhancement_gradient_reaches_mask_only():
    rng = np.random.default_rng(9)
    phases = rng.uniform(0, 255, size=(4, 5, 5))
    prob = Tensor(rng.uniform(0.1, 0.9, size=(5, 5)), requires_grad=True)
    out = derive_enhancement(prob, phases)
    backward(T.tsum(out))
    assert prob.grad is not None and np.any(prob.grad != 0)


# ---------------------------------------------------------- config ----------

def test_config_validation_errors():
    with pytest.raises(ConfigError):
        ModelConfig(h=30, w=32)
    with pytest.raises(ConfigError):
        small_config(channels=(2, 2, 4))
    with pytest.raises(ConfigError):
        small_config(depth=0)
    with pytest.raises(ConfigError):
        small_config(tasks=("seg", "bogus"))
    with pytest.raises(ConfigError):
        small_config(tasks=("reg", "cls"))
    with pytest.raises(ConfigError):
        small_config(disc_dim=7)


def test_config_round_trips_through_dict():
    cfg = small_config(use_tim=False, tasks=("seg", "reg"))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_shared_encoders_reuse_parameters():
    cfg = small_config(shared_encoders=True)
    model = MultiTaskModel(cfg, seed=0)
    assert model.enc_spe is model.enc_spa
    separate = MultiTaskModel(small_config(), seed=0)
    assert separate.enc_spe is not separate.enc_spa
    assert len(model.params.names()) < len(separate.params.names())


# ------------------------------------------------------ discriminator -------

def test_discriminator_output_is_probability_scalar():
    disc = SequenceDiscriminator(small_config(), seed=0)
    s = disc(Tensor(np.linspace(0.0, 1.0, 6)))
    assert s.data.shape == ()
    assert 0.0 < float(s.data) < 1.0


def test_discriminator_rejects_bad_inputs():
    disc = SequenceDiscriminator(small_config(), seed=0)
    with pytest.raises(ShapeError):
        disc(Tensor(np.zeros(5)))
    with pytest.raises(ShapeError):
        disc(Tensor(np.zeros((6, 1))))


def test_discriminator_distinguishes_inputs_and_backprops():
    disc = SequenceDiscriminator(small_config(), seed=0)
    a = disc(Tensor(np.full(6, 0.1)))
    b = disc(Tensor(np.full(6, 0.9)))
    assert not np.isclose(a.data, b.data)
    x = Tensor(np.linspace(0.1, 0.9, 6), requires_grad=True)
    backward(disc(x))
    assert x.grad is not None and np.any(x.grad != 0)

import numpy as np
import pytest
import torch

from terradiff.diffusion import (
    DiffusionConfig,
    GuidanceHook,
    ModelState,
    TrainBatch,
    ancestral_sample,
    flip_augment,
    load_checkpoint,
    predict_eps,
    sample,
    save_checkpoint,
    train_step,
    training_loss,
    _reverse_step_mean,
)
from terradiff.errors import ConfigError, DataError
from terradiff.schedule import build_schedule, forward_noise

from conftest import make_proc_pairs, micro_config, pairs_to_batch


def micro_state(seed=0, lr=1e-3, **kw):
    cfg = micro_config(**kw)
    return ModelState.build(cfg, seed=seed, lr=lr), build_schedule(cfg.T)


def micro_batch(b=2, seed=0, in_channels=3, class_ids=(1, 2)):
    g = torch.Generator().manual_seed(seed)
    x0 = torch.rand((b, 3, 16, 16), generator=g) * 2 - 1
    cond = torch.rand((b, 3, 16, 16), generator=g) * 2 - 1 if in_channels == 6 else None
    return TrainBatch(x0=x0, cond_image=cond, class_ids=torch.tensor(class_ids[:b], dtype=torch.long))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            DiffusionConfig(in_channels=4)
        with pytest.raises(ConfigError):
            DiffusionConfig(resolution=20)
        with pytest.raises(ConfigError):
            DiffusionConfig(cfg_dropout=1.0)

    def test_hash_stable_and_sensitive(self):
        a = DiffusionConfig()
        assert a.config_hash() == DiffusionConfig().config_hash()
        assert a.config_hash() != DiffusionConfig(base_channels=16).config_hash()

    def test_paper_scale_preset(self):
        cfg = DiffusionConfig.paper_scale(in_channels=6, class_count=153)
        assert cfg.resolution == 512 and cfg.base_channels == 128 and cfg.T == 1000


class TestBuildDeterminism:
    def test_same_seed_bit_identical(self):
        a, _ = micro_state(seed=5)
        b, _ = micro_state(seed=5)
        for (na, pa), (nb, pb) in zip(a.net.named_parameters(), b.net.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_param_count_pure_function_of_config(self):
        a, _ = micro_state(seed=1)
        b, _ = micro_state(seed=2)
        assert a.parameter_count() == b.parameter_count()
        c, _ = micro_state(seed=1, base_channels=16)
        assert c.parameter_count() != a.parameter_count()


class TestTrainStep:
    def test_lr_zero_keeps_parameters(self):
        state, sched = micro_state(lr=0.0)
        before = [p.detach().clone() for p in state.net.parameters()]
        loss = train_step(state, micro_batch(), sched, torch.Generator().manual_seed(0))
        assert np.isfinite(loss)
        for p0, p1 in zip(before, state.net.parameters()):
            assert torch.equal(p0, p1)
        assert state.iteration == 1

    def test_parameters_change_with_lr(self):
        state, sched = micro_state(lr=1e-3)
        before = [p.detach().clone() for p in state.net.parameters()]
        train_step(state, micro_batch(), sched, torch.Generator().manual_seed(0))
        changed = any(not torch.equal(p0, p1) for p0, p1 in zip(before, state.net.parameters()))
        assert changed

    def test_empty_batch_rejected(self):
        state, sched = micro_state()
        empty = TrainBatch(torch.zeros((0, 3, 16, 16)), None, torch.zeros((0,), dtype=torch.long))
        with pytest.raises(DataError):
            train_step(state, empty, sched, torch.Generator())

    def test_basemap_required_for_6ch(self):
        state, sched = micro_state(in_channels=6)
        with pytest.raises(DataError):
            train_step(state, micro_batch(in_channels=3), sched, torch.Generator())

    def test_basemap_forbidden_for_3ch(self):
        state, sched = micro_state(in_channels=3)
        with pytest.raises(DataError):
            train_step(state, micro_batch(in_channels=6), sched, torch.Generator())

    def test_unknown_city_id_errors(self):
        state, sched = micro_state()  # class_count=3 -> valid ids 0..2
        bad = micro_batch(class_ids=(1, 7))
        with pytest.raises(IndexError):
            train_step(state, bad, sched, torch.Generator().manual_seed(0))

    def test_overfit_single_pair_loss_halves(self):
        # 200 steps on one fixed example: loss well below the starting average
        state, sched = micro_state(lr=2e-3, in_channels=6, resolution=16)
        pairs = make_proc_pairs(1, 16, seed=3)
        batch = pairs_to_batch(pairs, [1])
        rng = torch.Generator().manual_seed(0)
        losses = [train_step(state, batch, sched, rng) for _ in range(200)]
        start = np.mean(losses[:10])
        assert np.mean(losses[-10:]) < 0.5 * start


class TestFlipAugment:
    def test_joint_flip(self):
        batch = micro_batch(in_channels=6)
        g = torch.Generator().manual_seed(1)  # first draw flips at least one axis
        out = flip_augment(batch, g)
        assert out.x0.shape == batch.x0.shape
        # conditioning flipped the same way: relative structure preserved
        if not torch.equal(out.x0, batch.x0):
            assert not torch.equal(out.cond_image, batch.cond_image)


class TestPredictEps:
    def test_cfg_endpoints_bit_exact(self):
        state, sched = micro_state()
        g = torch.Generator().manual_seed(0)
        x = torch.randn((2, 3, 16, 16), generator=g)
        t = 3
        tv = torch.full((2,), t, dtype=torch.long)
        with torch.no_grad():
            cond_direct = state.net(x, tv, torch.tensor([1, 1]))
            null_direct = state.net(x, tv, torch.tensor([0, 0]))
        assert torch.equal(predict_eps(state, x, t, class_id=1, cfg_scale=1.0), cond_direct)
        assert torch.equal(predict_eps(state, x, t, class_id=1, cfg_scale=0.0), null_direct)
        assert torch.equal(predict_eps(state, x, t, class_id=None), null_direct)

    def test_cfg_linear_combination(self):
        state, sched = micro_state()
        x = torch.randn((1, 3, 16, 16), generator=torch.Generator().manual_seed(4))
        s = 2.0
        out = predict_eps(state, x, 2, class_id=2, cfg_scale=s)
        cond = predict_eps(state, x, 2, class_id=2, cfg_scale=1.0)
        uncond = predict_eps(state, x, 2, class_id=2, cfg_scale=0.0)
        ref = uncond + s * (cond - uncond)
        assert torch.allclose(out, ref, atol=1e-6)
        assert torch.allclose(out, 2 * cond - uncond, atol=1e-6)

    def test_unknown_class_rejected(self):
        state, _ = micro_state()
        x = torch.zeros((1, 3, 16, 16))
        with pytest.raises(IndexError):
            predict_eps(state, x, 0, class_id=99)


class TestSample:
    def test_deterministic_given_seed(self):
        state, sched = micro_state()
        a = sample(state, sched, seed=9, class_id=1)
        b = sample(state, sched, seed=9, class_id=1)
        assert torch.equal(a, b)
        c = sample(state, sched, seed=10, class_id=1)
        assert not torch.equal(a, c)

    def test_output_range(self):
        state, sched = micro_state()
        img = sample(state, sched, seed=0)
        assert img.shape == (3, 16, 16)
        assert img.min() >= -1.0 and img.max() <= 1.0

    def test_guidance_scale_zero_bitwise_noop(self):
        state, sched = micro_state()

        def scorer(x, t, ctx):
            return torch.zeros(x.shape[0]), torch.ones_like(x) * 123.0

        hook = GuidanceHook(scorer=scorer, scale=0.0)
        a = sample(state, sched, seed=3, class_id=1)
        b = sample(state, sched, seed=3, class_id=1, guidance=hook)
        assert torch.equal(a, b)

    def test_guidance_shifts_mean(self):
        state, sched = micro_state()

        def scorer(x, t, ctx):
            return torch.zeros(x.shape[0]), torch.full_like(x, 0.01)

        hook = GuidanceHook(scorer=scorer, scale=1.0)
        a = sample(state, sched, seed=3, class_id=1)
        b = sample(state, sched, seed=3, class_id=1, guidance=hook)
        assert not torch.equal(a, b)

    def test_nonfinite_guidance_scale_rejected(self):
        with pytest.raises(ConfigError):
            GuidanceHook(scorer=lambda x, t, c: (0, x), scale=float("inf"))


class TestReverseStepConsistency:
    def test_oracle_eps_recovers_posterior_mean(self):
        # eps-parameterized step mean equals the analytic posterior mean
        # mu = (sqrt(ab_prev) * beta * x0 + sqrt(alpha) * (1 - ab_prev) * x_t) / (1 - ab)
        sched = build_schedule(50)
        rng = np.random.default_rng(0)
        for t in (1, 10, 49):
            x0 = torch.from_numpy(rng.uniform(-1, 1, size=(1, 3, 8, 8))).float()
            eps = torch.from_numpy(rng.standard_normal((1, 3, 8, 8))).float()
            x_t = forward_noise(x0, t, eps, sched)
            mean = _reverse_step_mean(x_t, eps, t, sched, clip_denoised=True)
            ab, abp = sched.alpha_bar[t], sched.alpha_bar_prev[t]
            analytic = (np.sqrt(abp) * sched.beta[t] * x0 + np.sqrt(sched.alpha[t]) * (1 - abp) * x_t) / (1 - ab)
            assert torch.allclose(mean, analytic.float(), atol=1e-5)


class TestGradientSanity:
    def test_finite_difference_agreement(self):
        state, sched = micro_state(seed=2)
        state.net.double()
        g = torch.Generator().manual_seed(0)
        batch = TrainBatch(
            x0=(torch.rand((2, 3, 16, 16), generator=g, dtype=torch.float64) * 2 - 1),
            cond_image=None,
            class_ids=torch.tensor([1, 2]),
        )
        t = torch.tensor([2, 5])
        eps = torch.randn((2, 3, 16, 16), generator=g, dtype=torch.float64)

        loss = training_loss(state, batch, sched, t, eps)
        state.net.zero_grad()
        loss.backward()

        params = list(state.net.parameters())
        flat_grads = torch.cat([p.grad.flatten() for p in params])
        rng = np.random.default_rng(7)
        idxs = rng.choice(flat_grads.numel(), size=16, replace=False)

        sizes = [p.numel() for p in params]
        offsets = np.cumsum([0] + sizes)
        h = 1e-6
        for flat_idx in idxs:
            pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            local = int(flat_idx - offsets[pi])
            p = params[pi]
            orig = p.data.flatten()[local].item()
            with torch.no_grad():
                p.data.flatten()[local] = orig + h
                lp = training_loss(state, batch, sched, t, eps).item()
                p.data.flatten()[local] = orig - h
                lm = training_loss(state, batch, sched, t, eps).item()
                p.data.flatten()[local] = orig
            fd = (lp - lm) / (2 * h)
            bp = flat_grads[flat_idx].item()
            denom = max(abs(fd), abs(bp), 1e-8)
            assert abs(fd - bp) / denom < 1e-3, f"param {pi}[{local}]: fd={fd} bp={bp}"


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        state, sched = micro_state(lr=1e-3)
        rng = torch.Generator().manual_seed(0)
        for _ in range(3):
            train_step(state, micro_batch(), sched, rng)
        path = tmp_path / "ck.pt"
        save_checkpoint(state, path, kind="image", cities=["a", "b"])
        loaded, meta = load_checkpoint(path)
        assert meta["kind"] == "image" and meta["cities"] == ["a", "b"]
        assert loaded.iteration == 3
        for (na, pa), (nb, pb) in zip(state.net.named_parameters(), loaded.net.named_parameters()):
            assert na == nb and torch.equal(pa, pb)
        sa, sb = state.optimizer.state_dict(), loaded.optimizer.state_dict()
        for k_a, k_b in zip(sa["state"], sb["state"]):
            for field in sa["state"][k_a]:
                va, vb = sa["state"][k_a][field], sb["state"][k_b][field]
                if isinstance(va, torch.Tensor):
                    assert torch.equal(va, vb)
                else:
                    assert va == vb

    def test_config_hash_mismatch_refused(self, tmp_path):
        state, _ = micro_state()
        path = tmp_path / "ck.pt"
        save_checkpoint(state, path)
        other = micro_config(base_channels=16)
        with pytest.raises(ConfigError):
            load_checkpoint(path, expected_config=other)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "nope.pt")

import math

import numpy as np
import pytest
import torch

from hoidiff.diffusion import (DiffusionLossWeights, NoiseSchedule, blend_features, diffusion_batch_losses,
                               diffusion_losses, make_schedule, q_sample, reverse_step, sample_with_correction,
                               train_diffusion_step)
from hoidiff.errors import ConfigError, ShapeError, StepError, TrainingError

# product of (1 - beta) over linspace(1e-4, 0.02, 100), evaluated with mpmath at 50 digits
ALPHA_BAR_100 = 0.36356324805549192
SQRT_075 = 0.8660254037844386
SQRT_019 = 0.4358898943540674


def test_linear_endpoints_product_oracle():
    s = make_schedule(100, "linear", beta_start=1e-4, beta_end=0.02)
    assert s.alpha_bars[100] == pytest.approx(ALPHA_BAR_100, rel=1e-12)
    assert s.alpha_bars[100] == pytest.approx(0.366, rel=0.01)


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_alpha_bar_zero_is_one_and_decreasing(kind):
    s = make_schedule(100, kind)
    assert s.alpha_bars[0] == 1.0
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[-1] < 0.01


def test_cosine_strictly_decreasing_over_many_lengths():
    for T in (2, 10, 50, 100, 1000):
        assert np.all(np.diff(make_schedule(T, "cosine").alpha_bars) < 0)


@pytest.mark.parametrize("T", [0, 1, 2.5])
def test_bad_step_count(T):
    with pytest.raises(ConfigError):
        make_schedule(T)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        make_schedule(10, "sigmoid")


def test_schedule_validates_betas():
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([0.1, 0.2, 0.3]))


def hand_schedule(*betas):
    return NoiseSchedule(np.array((0.0,) + betas))


def test_q_sample_t0_exact():
    s = make_schedule(10)
    x0 = np.random.default_rng(0).standard_normal((4, 7))
    np.testing.assert_array_equal(q_sample(x0, 0, s, np.ones_like(x0)), x0)


def test_q_sample_hand_case():
    s = hand_schedule(0.75, 0.5)
    x0, eps = np.array([2.0, -4.0]), np.array([1.0, 1.0])
    np.testing.assert_allclose(q_sample(x0, 1, s, eps), 0.5 * x0 + SQRT_075 * eps, rtol=0, atol=1e-15)


def test_q_sample_variance_monte_carlo():
    s = make_schedule(100)
    rng = np.random.default_rng(0)
    for t in (10, 50, 90):
        x = q_sample(np.zeros(100_000), t, s, rng.standard_normal(100_000))
        assert abs(x.var() - (1 - s.alpha_bars[t])) / (1 - s.alpha_bars[t]) < 0.02


def test_q_sample_per_sample_steps_torch():
    s = make_schedule(20)
    x0 = torch.ones(3, 2, 4, dtype=torch.float64)
    noise = torch.zeros_like(x0)
    out = q_sample(x0, torch.tensor([0, 5, 20]), s, noise)
    for i, t in enumerate((0, 5, 20)):
        assert torch.allclose(out[i], torch.full((2, 4), math.sqrt(s.alpha_bars[t]), dtype=torch.float64))


def test_q_sample_errors():
    s = make_schedule(10)
    with pytest.raises(ShapeError):
        q_sample(np.zeros(3), 1, s, np.zeros(4))
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), 11, s, np.zeros(3))


def identity_denoiser(x, t, cond):
    return x


def test_reverse_step_t1_returns_clean_estimate():
    s = make_schedule(10)
    x = np.random.default_rng(0).standard_normal(5)
    den = lambda x_t, t, c: 2 * x_t  # noqa: E731
    x_tilde, x_prev = reverse_step(x, 1, den, None, s, np.ones(5))
    np.testing.assert_array_equal(x_prev, x_tilde)
    np.testing.assert_array_equal(x_tilde, 2 * x)


def test_reverse_step_hand_case():
    s = hand_schedule(0.19, 0.5)
    x, eps = np.array([1.0, -2.0]), np.array([0.5, 1.0])
    _, x_prev = reverse_step(x, 2, identity_denoiser, None, s, eps)
    np.testing.assert_allclose(x_prev, 0.9 * x + SQRT_019 * eps, rtol=0, atol=1e-15)


def test_reverse_step_shape_contract():
    s = make_schedule(10)
    with pytest.raises(ShapeError):
        reverse_step(np.zeros(4), 3, lambda x, t, c: np.zeros(3), None, s, np.zeros(4))


def plain_ddpm(denoiser, schedule, shape, seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(shape, generator=gen, dtype=torch.float32)
    for t in range(schedule.T, 0, -1):
        x_tilde, x = reverse_step(x, t, denoiser, None, schedule, torch.randn(shape, generator=gen))
    return denoiser(x, 0, None)


def toy_denoiser(x, t, cond):
    return 0.9 * x + 0.01 * t


def test_disabled_corrector_is_plain_sampling():
    s = make_schedule(30)
    out, reports = sample_with_correction(None, toy_denoiser, s, (2, 5, 4), None, seed=7)
    assert torch.equal(out, plain_ddpm(toy_denoiser, s, (2, 5, 4), 7))
    assert reports == []


def test_same_seed_same_trajectory():
    s = make_schedule(20)
    a, _ = sample_with_correction(None, toy_denoiser, s, (3, 4), seed=1)
    b, _ = sample_with_correction(None, toy_denoiser, s, (3, 4), seed=1)
    c, _ = sample_with_correction(None, toy_denoiser, s, (3, 4), seed=2)
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_always_fire_with_identical_estimate_changes_nothing():
    s = make_schedule(30)
    calls = []

    def hook(x_tilde, t, T, cond):
        calls.append(t)
        return x_tilde.clone(), np.ones(x_tilde.shape[0], dtype=bool), [t]

    plain, _ = sample_with_correction(None, toy_denoiser, s, (2, 5, 4), None, seed=3)
    out, reports = sample_with_correction(None, toy_denoiser, s, (2, 5, 4), hook, seed=3,
                                          object_channels=slice(1, 3))
    assert torch.equal(out, plain)
    assert calls == list(range(30, -1, -1)) and reports == calls


def test_hook_blends_object_channels_only():
    s = make_schedule(10)

    def hook(x_tilde, t, T, cond):
        return torch.full_like(x_tilde, 5.0), np.array([True, False]), []

    out, _ = sample_with_correction(None, lambda x, t, c: torch.zeros_like(x), s, (2, 3, 4), hook, seed=0,
                                    object_channels=slice(2, 4))
    # at t = 0 the blend weight on the estimate is 0
    assert torch.all(out[0, :, 2:] == 5.0) and torch.all(out[0, :, :2] == 0.0)
    assert torch.all(out[1] == 0.0)


def test_hook_failure_reports_step():
    s = make_schedule(10)

    def hook(x_tilde, t, T, cond):
        if t == 4:
            raise RuntimeError("boom")
        return None, np.zeros(1, dtype=bool), []

    with pytest.raises(StepError) as info:
        sample_with_correction(None, toy_denoiser, s, (1, 3), hook, seed=0)
    assert info.value.step == 4


def test_oracle_denoiser_reproduces_ground_truth():
    s = make_schedule(50)
    gt = torch.randn(2, 6, 5, generator=torch.Generator().manual_seed(0))
    out, _ = sample_with_correction(None, lambda x, t, c: gt.clone(), s, gt.shape, seed=9)
    assert torch.equal(out, gt)


def test_blend_features_endpoints_and_midpoint():
    a = torch.zeros(1, 2, 4)
    b = torch.ones(1, 2, 4) * 3
    ch = slice(1, 4)
    assert torch.equal(blend_features(a, b, 10, 10, ch), a)
    out0 = blend_features(a, b, 0, 10, ch)
    assert torch.equal(out0[..., 1:], b[..., 1:]) and torch.equal(out0[..., :1], a[..., :1])
    assert torch.allclose(blend_features(a, b, 5, 10, ch)[..., 1:], torch.full((1, 2, 3), 1.5))


# ---------------------------------------------------------------- losses

J = 2
D = 3 * J + 9


def toy_batch(seed=0, b=3, h=2, f=4):
    g = torch.Generator().manual_seed(seed)
    return {"past": torch.randn(b, h, D, generator=g, dtype=torch.float64),
            "future": torch.randn(b, f, D, generator=g, dtype=torch.float64),
            "shape": torch.randn(b, 5, 3, generator=g, dtype=torch.float64)}


class ToyDenoiser(torch.nn.Module):
    """Per-channel gain on x_t plus scalar past and step terms: 17 parameters."""

    def __init__(self, dim=D):
        super().__init__()
        g = torch.Generator().manual_seed(1)
        self.gain = torch.nn.Parameter(torch.rand(dim, generator=g, dtype=torch.float64))
        self.past_w = torch.nn.Parameter(torch.tensor(0.3, dtype=torch.float64))
        self.t_w = torch.nn.Parameter(torch.tensor(-0.01, dtype=torch.float64))

    def forward(self, x_t, t, past, shape):
        return self.gain * x_t + self.past_w * past[:, -1:] + self.t_w * t.to(x_t.dtype)[:, None, None]


class OracleModel(torch.nn.Module):
    def __init__(self, target):
        super().__init__()
        self.target = target
        self.dummy = torch.nn.Parameter(torch.zeros(()))

    def forward(self, x_t, t, past, shape):
        return self.target + 0 * self.dummy


def test_oracle_denoiser_has_zero_losses():
    batch = toy_batch()
    s = make_schedule(10)
    t = torch.tensor([0, 4, 10])
    losses = diffusion_batch_losses(OracleModel(batch["future"]), batch, s, J, t, torch.randn(3, 4, D,
                                    dtype=torch.float64), velocity="match")
    assert all(float(v.detach()) == 0.0 for v in losses.values())


def test_human_only_weights():
    batch = toy_batch()
    pred = batch["future"] + 0.1
    losses = diffusion_losses(pred, batch["future"], batch["past"][:, -1], J, DiffusionLossWeights(1, 0, 0, 0))
    assert float(losses["total"]) == float(losses["human"])
    assert float(losses["human"]) == pytest.approx(0.01)


def test_default_weights():
    w = DiffusionLossWeights()
    assert (w.human, w.obj, w.human_vel, w.obj_vel) == (1.0, 0.1, 0.2, 0.02)


@pytest.mark.parametrize("velocity", ["smooth", "match"])
def test_gradient_matches_finite_differences(velocity):
    model = ToyDenoiser()
    n_params = sum(p.numel() for p in model.parameters())
    assert n_params <= 20
    batch = toy_batch(2)
    s = make_schedule(10)
    t = torch.tensor([1, 5, 9])
    noise = torch.randn(3, 4, D, generator=torch.Generator().manual_seed(3), dtype=torch.float64)

    def loss():
        return diffusion_batch_losses(model, batch, s, J, t, noise, velocity=velocity)["total"]

    model.zero_grad()
    loss().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in model.parameters()])
    numeric = []
    h = 1e-6
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss().item()
                flat[i] = old - h
                down = loss().item()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    rel = (analytic - numeric).abs() / numeric.abs().clamp_min(1e-8)
    assert rel.max() < 1e-4


def test_train_step_updates_and_reports():
    model = ToyDenoiser()
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    before = model.gain.detach().clone()
    out = train_diffusion_step(model, opt, toy_batch(), make_schedule(10), J, generator=torch.Generator().manual_seed(0))
    assert set(out) == {"human", "obj", "human_vel", "obj_vel", "total"}
    assert not torch.equal(before, model.gain)


def test_non_finite_loss_raises():
    model = ToyDenoiser()
    batch = toy_batch()
    batch["future"][0, 0, 0] = float("nan")
    with pytest.raises(TrainingError):
        train_diffusion_step(model, torch.optim.SGD(model.parameters(), lr=0.1), batch, make_schedule(10), J)


def test_unknown_velocity_mode():
    batch = toy_batch()
    with pytest.raises(ValueError):
        diffusion_losses(batch["future"], batch["future"], batch["past"][:, -1], J, velocity="jerk")

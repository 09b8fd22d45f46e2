import numpy as np
import pytest

from sert.degradation import NoiseSpec
from sert.hsio import load_checkpoint
from sert.model import init_weights, toy_config
from sert.synthesis import texture_cube, texture_patches
from sert.training import (
    TrainSettings,
    epochs_to_steps,
    lr_at,
    run_training,
    train_model,
)

NOISE = NoiseSpec("gaussian_iid", {"sigma": 50.0})


@pytest.fixture(scope="module")
def patches():
    return texture_patches(10, 8, 8, 4, seed=77)


def test_lr_schedule_divides_by_ten_after_five_eighths():
    assert lr_at(1e-4, 0, 80) == 1e-4
    assert lr_at(1e-4, 49, 80) == 1e-4
    assert lr_at(1e-4, 50, 80) == pytest.approx(1e-5)
    assert lr_at(1e-4, 79, 80) == pytest.approx(1e-5)


def test_epochs_to_steps_ceil():
    assert epochs_to_steps(2, 10, 4) == 6
    assert epochs_to_steps(1, 8, 4) == 2


def test_training_is_deterministic(patches):
    results = []
    for _ in range(2):
        model = init_weights(toy_config(), seed=5)
        settings = TrainSettings(total_steps=3, seed=5, noise=NOISE, batch_size=2)
        train_model(model, patches[:8], patches[8:], settings)
        results.append({n: p.data.copy() for n, p in model.params.items()})
    for name in results[0]:
        assert np.array_equal(results[0][name], results[1][name]), name


def test_resume_matches_uninterrupted(tmp_path, patches):
    cfg = toy_config()
    full_settings = TrainSettings(total_steps=10, seed=9, noise=NOISE, batch_size=2)
    straight = run_training(cfg, patches[:8], patches[8:], full_settings, str(tmp_path / "full.ck"))

    half_settings = TrainSettings(total_steps=5, seed=9, noise=NOISE, batch_size=2)
    run_training(cfg, patches[:8], patches[8:], half_settings, str(tmp_path / "half.ck"))
    resumed = run_training(
        cfg, patches[:8], patches[8:], full_settings, str(tmp_path / "resumed.ck"),
        resume_from=str(tmp_path / "half.ck"),
    )

    model_full, step_full, _, adam_full = load_checkpoint(tmp_path / "full.ck")
    model_res, step_res, _, adam_res = load_checkpoint(tmp_path / "resumed.ck")
    assert step_full == step_res == 10
    for name in model_full.params:
        assert np.array_equal(model_full.params[name].data, model_res.params[name].data), name
        assert np.array_equal(adam_full.m[name], adam_res.m[name]), name
        assert np.array_equal(adam_full.v[name], adam_res.v[name]), name
    assert straight.final_train_loss == resumed.final_train_loss


def test_resume_with_wrong_seed_rejected(tmp_path, patches):
    cfg = toy_config()
    settings = TrainSettings(total_steps=2, seed=1, noise=NOISE, batch_size=1)
    run_training(cfg, patches[:4], [], settings, str(tmp_path / "a.ck"))
    from sert.errors import ParameterError

    bad = TrainSettings(total_steps=4, seed=2, noise=NOISE, batch_size=1)
    with pytest.raises(ParameterError, match="seed"):
        run_training(cfg, patches[:4], [], bad, str(tmp_path / "b.ck"), resume_from=str(tmp_path / "a.ck"))


def test_loss_decreases_on_average(patches):
    model = init_weights(toy_config(), seed=21)
    settings = TrainSettings(total_steps=60, seed=21, noise=NOISE, batch_size=2, eval_every=30)
    result = train_model(model, patches[:8], patches[8:], settings)
    assert result.history, "expected periodic evaluations"
    assert result.val_psnr_denoised > result.val_psnr_noisy - 0.5  # not diverging

    fresh = init_weights(toy_config(), seed=21)
    first_losses = []
    probe = TrainSettings(total_steps=5, seed=21, noise=NOISE, batch_size=2)
    res = train_model(fresh, patches[:8], patches[8:], probe)
    first_losses.append(res.final_train_loss)
    assert result.final_train_loss < first_losses[0] * 1.5


def test_validation_noise_is_fixed(patches):
    from sert.training import noisy_validation

    a = noisy_validation(patches[:3], NOISE, seed=4)
    b = noisy_validation(patches[:3], NOISE, seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)

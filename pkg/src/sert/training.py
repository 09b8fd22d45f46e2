"""Desk-scale training loop with bitwise-reproducible resume.

Every random decision at global step ``s`` (batch sampling, per-sample noise)
is drawn from a counter-based stream keyed by (seed, tag, s, ...), so training
is a pure function of (config, data, settings, start step): stopping at any
step, checkpointing, and continuing gives exactly the bits of an
uninterrupted run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .degradation import NoiseSpec, derive_seed, generator
from .errors import ParameterError
from .hsio import load_checkpoint, save_checkpoint
from .metrics import psnr
from .model import ModelConfig, SertModel, init_weights
from .numerics import AdamState, Tape, Tensor, adam_step, zero_grads

_T_BATCH = 201
_T_NOISE = 202
_T_VAL = 203

DEFAULT_LR = 1e-4
LR_DROP_NUM = 5
LR_DROP_DEN = 8
LR_DROP_FACTOR = 0.1


def lr_at(base_lr: float, step: int, total_steps: int) -> float:
    """The published schedule: one division by 10 after 5/8 of the budget."""
    if total_steps > 0 and step >= (LR_DROP_NUM * total_steps) // LR_DROP_DEN:
        return base_lr * LR_DROP_FACTOR
    return base_lr


@dataclass
class TrainSettings:
    total_steps: int
    seed: int
    noise: NoiseSpec
    lr: float = DEFAULT_LR
    batch_size: int = 4
    eval_every: int = 0  # 0 = only at the end

    def __post_init__(self):
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be positive, got {self.total_steps}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")


@dataclass
class TrainResult:
    steps: int
    final_lr: float
    final_train_loss: float
    val_psnr_noisy: float
    val_psnr_denoised: float
    history: list[tuple[int, float, float]] = field(default_factory=list)  # (step, loss, val psnr)


def epochs_to_steps(epochs: int, train_count: int, batch_size: int) -> int:
    """One nominal epoch visits each training patch once (ceil division)."""
    return epochs * max(1, -(-train_count // batch_size))


def noisy_validation(val_patches: list[np.ndarray], noise: NoiseSpec, seed: int) -> list[np.ndarray]:
    """Fixed noisy versions of the validation patches (stable across the run)."""
    return [noise.apply(x, seed=derive_seed(seed, _T_VAL, i)) for i, x in enumerate(val_patches)]


def _mean_psnr(pairs) -> float:
    return float(np.mean([psnr(a, b) for a, b in pairs]))


def validation_psnr(model: SertModel, noisy: list[np.ndarray], clean: list[np.ndarray]) -> float:
    return _mean_psnr((model.denoise(y), x) for y, x in zip(noisy, clean))


def train_model(
    model: SertModel,
    train_patches: list[np.ndarray],
    val_patches: list[np.ndarray],
    settings: TrainSettings,
    adam: AdamState | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Advance ``model`` from ``start_step`` to ``settings.total_steps``.

    Loss is mean squared error between the denoised and clean patch, averaged
    over the batch; gradients accumulate sample by sample on separate tapes.
    """
    if not train_patches:
        raise ParameterError("no training patches")
    if adam is None:
        adam = AdamState(lr=settings.lr)
    params = model.named_parameters()
    n = len(train_patches)
    val_noisy = noisy_validation(val_patches, settings.noise, settings.seed)
    psnr_noisy = _mean_psnr(zip(val_noisy, val_patches)) if val_patches else float("nan")

    history: list[tuple[int, float, float]] = []
    last_loss = float("nan")
    last_lr = settings.lr
    for step in range(start_step, settings.total_steps):
        indices = generator(settings.seed, _T_BATCH, step).integers(0, n, settings.batch_size)
        zero_grads(params)
        batch_loss = 0.0
        for j, idx in enumerate(indices):
            clean = train_patches[int(idx)]
            noisy = settings.noise.apply(clean, seed=derive_seed(settings.seed, _T_NOISE, step, j))
            with Tape() as tape:
                out = model.forward(Tensor(noisy))
                loss = nm.scale(nm.mse(out, Tensor(clean)), 1.0 / settings.batch_size)
            tape.backward(loss)
            batch_loss += loss.item()
        grads = {name: p.grad for name, p in params.items()}
        last_lr = lr_at(settings.lr, step, settings.total_steps)
        adam_step(params, grads, adam, lr=last_lr)
        last_loss = batch_loss
        if settings.eval_every and (step + 1) % settings.eval_every == 0 and val_patches:
            history.append((step + 1, batch_loss, validation_psnr(model, val_noisy, val_patches)))

    psnr_denoised = validation_psnr(model, val_noisy, val_patches) if val_patches else float("nan")
    return TrainResult(
        steps=settings.total_steps,
        final_lr=last_lr,
        final_train_loss=last_loss,
        val_psnr_noisy=psnr_noisy,
        val_psnr_denoised=psnr_denoised,
        history=history,
    )


def run_training(
    config: ModelConfig,
    train_patches: list[np.ndarray],
    val_patches: list[np.ndarray],
    settings: TrainSettings,
    ckpt_out: str,
    resume_from: str | None = None,
) -> TrainResult:
    """Initialize or resume, train to the step budget, write the checkpoint."""
    if resume_from:
        model, start_step, seed, adam = load_checkpoint(resume_from, expect_config=config)
        if seed != settings.seed:
            raise ParameterError(
                f"checkpoint was trained with seed {seed}, cannot resume with seed {settings.seed}"
            )
        if adam is None:
            adam = AdamState(lr=settings.lr)
    else:
        model, start_step, adam = init_weights(config, settings.seed), 0, AdamState(lr=settings.lr)
    result = train_model(model, train_patches, val_patches, settings, adam=adam, start_step=start_step)
    save_checkpoint(model, ckpt_out, step=settings.total_steps, seed=settings.seed, adam=adam)
    return result

"""FastAPI service wrapping the denoising library.

The service owns all heavy operations (synthesis, training, inference,
evaluation, diagnostics); clients - including the bundled CLI - only move
small JSON payloads. Checkpoints are cached per (path, mtime, size) so a
long-running instance denoises many requests without reloading.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..degradation import NoiseSpec
from ..errors import ParameterError, SertError
from ..hsio import HsiImage, load_checkpoint, load_hsi, save_hsi
from ..metrics import evaluate
from ..model import ModelConfig, SertModel, activate_tail, flops_estimate, init_weights, param_count
from ..numerics import Tensor, check_gradients, mse, no_tape
from ..synthesis import texture_cube
from ..training import TrainSettings, epochs_to_steps, run_training
from . import schemas

app = FastAPI(title="sert", version=__version__)

_ckpt_cache: dict[str, tuple[int, int, SertModel]] = {}

_GENERATOR_RE = re.compile(r"^gen:texture:(\d+)x(\d+)x(\d+)$")


@app.exception_handler(SertError)
async def _sert_error(request, exc: SertError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _missing_file(request, exc: FileNotFoundError):
    return JSONResponse(status_code=404, content={"detail": str(exc)})


def _cached_model(path: str) -> SertModel:
    stat = Path(path).stat()
    key = (stat.st_mtime_ns, stat.st_size)
    hit = _ckpt_cache.get(path)
    if hit is not None and hit[:2] == key:
        return hit[2]
    model, _, _, _ = load_checkpoint(path)
    _ckpt_cache[path] = (key[0], key[1], model)
    return model


def _load_clean(spec: str, seed: int) -> np.ndarray:
    match = _GENERATOR_RE.match(spec)
    if match:
        h, w, b = (int(g) for g in match.groups())
        return texture_cube(h, w, b, seed)
    if spec.startswith("gen:"):
        raise ParameterError(f"unknown generator '{spec}'; expected gen:texture:HxWxB")
    return load_hsi(spec).data


def _load_recipe(recipe_text: str | None, recipe_path: str | None) -> NoiseSpec:
    if recipe_text is not None:
        return NoiseSpec.from_text(recipe_text)
    if recipe_path is not None:
        return NoiseSpec.from_text(Path(recipe_path).read_text(encoding="utf-8"))
    raise ParameterError("a noise recipe is required (recipe_text or recipe_path)")


def _load_config(path: str | None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    return ModelConfig.from_text(Path(path).read_text(encoding="utf-8"))


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    clean = _load_clean(req.clean, req.seed)
    recipe = _load_recipe(req.recipe_text, req.recipe_path)
    noisy = recipe.apply(clean, seed=req.seed)
    meta = {"seed": str(req.seed)}
    for line in recipe.to_text().strip().split("\n"):
        key, value = (part.strip() for part in line.split("=", 1))
        meta[f"recipe.{key}"] = value
    save_hsi(noisy, req.out, meta=meta)
    if req.clean_out:
        save_hsi(clean, req.clean_out, meta={"seed": str(req.seed)})
    from ..metrics import psnr

    h, w, b = noisy.shape
    return schemas.SynthResponse(
        out=req.out, height=h, width=w, bands=b, variant=recipe.variant, seed=req.seed,
        psnr_vs_clean_db=psnr(noisy, clean),
    )


@app.post("/denoise", response_model=schemas.DenoiseResponse)
def denoise(req: schemas.DenoiseRequest) -> schemas.DenoiseResponse:
    model = _cached_model(req.ckpt)
    image = load_hsi(req.input)
    restored = model.denoise(image.data)
    meta = dict(image.meta)
    meta["denoised_with"] = Path(req.ckpt).name
    save_hsi(HsiImage(restored, dtype=image.dtype, meta=meta), req.output)
    h, w, b = restored.shape
    return schemas.DenoiseResponse(output=req.output, height=h, width=w, bands=b)


@app.post("/eval", response_model=schemas.EvalResponse)
def eval_pair(req: schemas.EvalRequest) -> schemas.EvalResponse:
    ref = load_hsi(req.ref).data
    test = load_hsi(req.test).data
    report = evaluate(test, ref)
    return schemas.EvalResponse(
        psnr_db=report.psnr_db,
        ssim=report.ssim,
        sam_degrees=report.sam_degrees,
        band_psnr_db=report.band_psnr_db,
        sam_skipped_pixels=report.sam_skipped_pixels,
        table=report.to_table(),
    )


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    config = _load_config(req.config_path)
    files = sorted(Path(req.data_dir).glob("*.hsr"))
    if not files:
        raise ParameterError(f"no .hsr files in '{req.data_dir}'")
    cubes = [load_hsi(f).data for f in files]
    val_count = min(req.val_count, max(0, len(cubes) - 1))
    train_patches = cubes[: len(cubes) - val_count]
    val_patches = cubes[len(cubes) - val_count:]
    if req.noise_recipe_path:
        noise = NoiseSpec.from_text(Path(req.noise_recipe_path).read_text(encoding="utf-8"))
    else:
        noise = NoiseSpec("gaussian_iid", {"sigma": 50.0})
    if req.steps is not None:
        total_steps = req.steps
    elif req.epochs is not None:
        total_steps = epochs_to_steps(req.epochs, len(train_patches), req.batch_size)
    else:
        raise ParameterError("either steps or epochs must be given")
    settings = TrainSettings(
        total_steps=total_steps, seed=req.seed, noise=noise, lr=req.lr, batch_size=req.batch_size
    )
    result = run_training(config, train_patches, val_patches, settings, req.ckpt_out, resume_from=req.resume_from)
    return schemas.TrainResponse(
        ckpt=req.ckpt_out,
        steps=result.steps,
        final_lr=result.final_lr,
        final_train_loss=result.final_train_loss,
        val_psnr_noisy_db=result.val_psnr_noisy,
        val_psnr_denoised_db=result.val_psnr_denoised,
    )


@app.post("/gradcheck", response_model=schemas.GradcheckResponse)
def gradcheck(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
    config = _load_config(req.config_path)
    model = init_weights(config, req.seed)
    activate_tail(model, req.seed)
    clean = texture_cube(8, 8, config.bands, req.seed)
    noisy = NoiseSpec("gaussian_iid", {"sigma": 30.0}).apply(clean, seed=req.seed)
    x, target = Tensor(noisy), Tensor(clean)

    def loss_fn():
        return mse(model.forward(x), target)

    groups = check_gradients(loss_fn, model.named_parameters(), step=req.fd_step)
    worst = max(groups.values())
    return schemas.GradcheckResponse(
        groups=groups, max_rel_error=worst, tolerance=req.tolerance, passed=worst < req.tolerance
    )


@app.post("/stats", response_model=schemas.StatsResponse)
def stats(req: schemas.StatsRequest) -> schemas.StatsResponse:
    config = _load_config(req.config_path)
    params = param_count(config)
    flops = flops_estimate(config, req.height, req.width)
    return schemas.StatsResponse(
        total_params=params.total,
        assumed_params=params.assumed_total,
        param_components=[
            schemas.ComponentEntry(component=c.component, value=c.count, assumed=c.assumed)
            for c in params.components
        ],
        total_macs=flops.total_macs,
        gflops=flops.gflops,
        mac_components=[
            schemas.ComponentEntry(component=c.component, value=c.count, assumed=c.assumed)
            for c in flops.components
        ],
    )


@app.post("/dump-zl", response_model=schemas.DumpZlResponse)
def dump_zl(req: schemas.DumpZlRequest) -> schemas.DumpZlResponse:
    model = _cached_model(req.ckpt)
    image = load_hsi(req.input)
    collector: list = []
    with no_tape():
        model.forward(Tensor(image.data), collector=collector)
    rank = model.config.rank
    lines = ["\t".join(["layer", "block", "patch_row", "patch_col"] + [f"z{i}" for i in range(rank)])]
    for layer_idx, block_idx, grid, zl in collector:
        for row in range(grid.rows):
            for col in range(grid.cols):
                vec = zl[row * grid.cols + col]
                lines.append(
                    "\t".join([str(layer_idx), str(block_idx), str(row), str(col)]
                              + [f"{v:.10g}" for v in vec])
                )
    Path(req.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return schemas.DumpZlResponse(out=req.out, rows=len(lines) - 1)

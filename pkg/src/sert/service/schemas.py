"""Request/response models for the HTTP service.

All file references are paths on the host running the service; the CLI runs
the app in-process by default, so they are ordinary local paths there.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    clean: str = Field(description="Path to a clean .hsr cube, or 'gen:texture:HxWxB' to synthesize one")
    recipe_path: str | None = Field(default=None, description="Path to a noise recipe file")
    recipe_text: str | None = Field(default=None, description="Inline recipe body (overrides recipe_path)")
    seed: int
    out: str
    clean_out: str | None = Field(default=None, description="Also write the clean cube here (for generators)")


class SynthResponse(BaseModel):
    out: str
    height: int
    width: int
    bands: int
    variant: str
    seed: int
    psnr_vs_clean_db: float


class DenoiseRequest(BaseModel):
    ckpt: str
    input: str
    output: str


class DenoiseResponse(BaseModel):
    output: str
    height: int
    width: int
    bands: int


class EvalRequest(BaseModel):
    ref: str
    test: str


class EvalResponse(BaseModel):
    psnr_db: float
    ssim: float
    sam_degrees: float
    band_psnr_db: list[float]
    sam_skipped_pixels: int
    table: str


class TrainRequest(BaseModel):
    config_path: str
    data_dir: str
    seed: int
    ckpt_out: str
    epochs: int | None = None
    steps: int | None = Field(default=None, description="Overrides epochs as the total step budget")
    noise_recipe_path: str | None = Field(default=None, description="Training noise; default iid Gaussian sigma 50")
    resume_from: str | None = None
    batch_size: int = 4
    val_count: int = Field(default=8, description="Patches held out (from the end of the sorted listing)")
    lr: float = 1e-4


class TrainResponse(BaseModel):
    ckpt: str
    steps: int
    final_lr: float
    final_train_loss: float
    val_psnr_noisy_db: float
    val_psnr_denoised_db: float


class GradcheckRequest(BaseModel):
    config_path: str
    seed: int
    fd_step: float = 1e-5
    tolerance: float = 1e-4


class GradcheckResponse(BaseModel):
    groups: dict[str, float]
    max_rel_error: float
    tolerance: float
    passed: bool


class StatsRequest(BaseModel):
    config_path: str | None = Field(default=None, description="Default: the stock configuration")
    height: int = 512
    width: int = 512


class ComponentEntry(BaseModel):
    component: str
    value: int
    assumed: bool


class StatsResponse(BaseModel):
    total_params: int
    assumed_params: int
    param_components: list[ComponentEntry]
    total_macs: int
    gflops: float
    mac_components: list[ComponentEntry]


class DumpZlRequest(BaseModel):
    ckpt: str
    input: str
    out: str


class DumpZlResponse(BaseModel):
    out: str
    rows: int


class ErrorResponse(BaseModel):
    detail: str

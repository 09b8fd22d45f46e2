"""Network assembly: transformer blocks, residual layers, accounting.

Topology (all spatial extents preserved end to end):

    f1 = conv3x3(bands -> C)(y)
    x = f1
    for each stage:  x = conv3x3(C -> C)( x + blocks(x) )   # residual layer, then conv
    x = conv3x3(C -> C)(x + f1)
    out = y + conv3x3(C -> bands)(x)                        # tail starts at zero

Every block adds rectangle attention and spectral enhancement of the same
pre-normed input onto the running features, then an MLP sub-block with its
own residual. The tail convolution is zero-initialized, so a freshly built
network is the identity map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import numerics as nm
from .attention import AttentionWeights, RectSpec, ra_forward
from .enhancement import SEWeights, se_forward
from .errors import ConfigError, FormatError
from .numerics import Tensor

MLP_EXPANSION = 2
SE_GATES = ("linear", "sigmoid")
SE_SCOPES = ("nonlocal", "global", "local")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 96
    rank: int = 12
    bands: int = 31
    rects: tuple[tuple[int, int], ...] = ((16, 1), (32, 2), (32, 4))
    blocks: tuple[int, ...] = (6, 6, 6)
    heads: int = 2
    memory_entries: int = 31
    use_ra: bool = True
    use_se: bool = True
    use_shuffle: bool = True
    use_mu: bool = True
    use_mlp: bool = True
    use_norm: bool = True
    se_gate: str = "linear"
    se_scope: str = "nonlocal"

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ConfigError(f"channels must be even, got {self.channels}")
        if not 1 <= self.rank < self.channels:
            raise ConfigError(f"rank must satisfy 1 <= K < C, got K={self.rank}, C={self.channels}")
        if self.bands < 1:
            raise ConfigError(f"bands must be positive, got {self.bands}")
        if (self.channels // 2) % self.heads != 0:
            raise ConfigError(f"heads={self.heads} must divide half channels {self.channels // 2}")
        if len(self.rects) != len(self.blocks) or not self.rects:
            raise ConfigError("rects and blocks must be non-empty lists of equal length")
        for h, w in self.rects:
            RectSpec(h, w)  # validates h >= w >= 1
        if any(b < 1 for b in self.blocks):
            raise ConfigError(f"blocks per layer must be positive, got {self.blocks}")
        if self.memory_entries < 1:
            raise ConfigError(f"memory_entries must be positive, got {self.memory_entries}")
        if self.se_gate not in SE_GATES:
            raise ConfigError(f"se_gate must be one of {SE_GATES}, got '{self.se_gate}'")
        if self.se_scope not in SE_SCOPES:
            raise ConfigError(f"se_scope must be one of {SE_SCOPES}, got '{self.se_scope}'")

    @property
    def half_channels(self) -> int:
        return self.channels // 2

    def layer_specs(self) -> list[RectSpec]:
        return [RectSpec(h, w) for h, w in self.rects]

    # -- flat key=value text form ------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"channels = {self.channels}",
            f"rank = {self.rank}",
            f"bands = {self.bands}",
            "rects = " + ",".join(f"{h}x{w}" for h, w in self.rects),
            "blocks = " + ",".join(str(b) for b in self.blocks),
            f"heads = {self.heads}",
            f"memory_entries = {self.memory_entries}",
            f"use_ra = {str(self.use_ra).lower()}",
            f"use_se = {str(self.use_se).lower()}",
            f"use_shuffle = {str(self.use_shuffle).lower()}",
            f"use_mu = {str(self.use_mu).lower()}",
            f"use_mlp = {str(self.use_mlp).lower()}",
            f"use_norm = {str(self.use_norm).lower()}",
            f"se_gate = {self.se_gate}",
            f"se_scope = {self.se_scope}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"config line {lineno}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        kwargs: dict = {}
        try:
            for key in ("channels", "rank", "bands", "heads", "memory_entries"):
                if key in values:
                    kwargs[key] = int(values.pop(key))
            if "rects" in values:
                rects = []
                for token in values.pop("rects").split(","):
                    h, w = token.strip().split("x")
                    rects.append((int(h), int(w)))
                kwargs["rects"] = tuple(rects)
            if "blocks" in values:
                kwargs["blocks"] = tuple(int(tok) for tok in values.pop("blocks").split(","))
            for key in ("use_ra", "use_se", "use_shuffle", "use_mu", "use_mlp", "use_norm"):
                if key in values:
                    token = values.pop(key).lower()
                    if token not in ("true", "false"):
                        raise FormatError(f"config key '{key}' must be true/false, got '{token}'")
                    kwargs[key] = token == "true"
            for key in ("se_gate", "se_scope"):
                if key in values:
                    kwargs[key] = values.pop(key)
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(f"malformed config value: {exc}") from exc
        if values:
            raise FormatError(f"unknown config keys: {sorted(values)}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Parameter registry


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # proj | pos | bank | zero | one


def parameter_specs(config: ModelConfig) -> list[ParamSpec]:
    """Every learnable parameter of the configured network, in registry order."""
    c = config.channels
    half = config.half_channels
    k = config.rank
    specs: list[ParamSpec] = [
        ParamSpec("head.weight", (3, 3, config.bands, c), "proj"),
        ParamSpec("head.bias", (c,), "zero"),
    ]
    block_active = config.use_ra or config.use_se
    for li, (h, w) in enumerate(config.rects):
        for bi in range(config.blocks[li]):
            prefix = f"layers.{li}.blocks.{bi}"
            if not block_active:
                continue
            if config.use_norm:
                specs.append(ParamSpec(f"{prefix}.norm_attn.gamma", (c,), "one"))
                specs.append(ParamSpec(f"{prefix}.norm_attn.beta", (c,), "zero"))
            if config.use_ra:
                for branch, (th, tw) in (("h", (h, w)), ("v", (w, h))):
                    for proj in ("w_q", "w_k", "w_v", "w_o"):
                        specs.append(ParamSpec(f"{prefix}.ra.{branch}.{proj}", (half, half), "proj"))
                    table = (2 * th - 1) * (2 * tw - 1)
                    specs.append(ParamSpec(f"{prefix}.ra.{branch}.pos_bias", (config.heads, table), "pos"))
            if config.use_se:
                specs.append(ParamSpec(f"{prefix}.se.w_down", (c, k), "proj"))
                specs.append(ParamSpec(f"{prefix}.se.w_gate", (c, k), "proj"))
                if config.use_mu:
                    specs.append(ParamSpec(f"{prefix}.se.memory", (k, config.memory_entries), "bank"))
            if config.use_mlp:
                if config.use_norm:
                    specs.append(ParamSpec(f"{prefix}.norm_mlp.gamma", (c,), "one"))
                    specs.append(ParamSpec(f"{prefix}.norm_mlp.beta", (c,), "zero"))
                hidden = MLP_EXPANSION * c
                specs.append(ParamSpec(f"{prefix}.mlp.w1", (c, hidden), "proj"))
                specs.append(ParamSpec(f"{prefix}.mlp.b1", (hidden,), "zero"))
                specs.append(ParamSpec(f"{prefix}.mlp.w2", (hidden, c), "proj"))
                specs.append(ParamSpec(f"{prefix}.mlp.b2", (c,), "zero"))
    for li in range(len(config.rects)):
        specs.append(ParamSpec(f"layers.{li}.conv.weight", (3, 3, c, c), "proj"))
        specs.append(ParamSpec(f"layers.{li}.conv.bias", (c,), "zero"))
    specs.append(ParamSpec("body.weight", (3, 3, c, c), "proj"))
    specs.append(ParamSpec("body.bias", (c,), "zero"))
    specs.append(ParamSpec("tail.weight", (3, 3, c, config.bands), "zero"))
    specs.append(ParamSpec("tail.bias", (config.bands,), "zero"))
    return specs


_TRUNC_LO = ndtr(-2.0)
_TRUNC_HI = ndtr(2.0)


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std via inverse-CDF sampling."""
    u = rng.random(shape)
    return ndtri(_TRUNC_LO + u * (_TRUNC_HI - _TRUNC_LO)) * std


def init_weights(config: ModelConfig, seed: int) -> "SertModel":
    """Deterministically initialize a model; same seed gives identical bits."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed)))
    params: dict[str, Tensor] = {}
    for spec in parameter_specs(config):
        if spec.init in ("proj", "pos"):
            data = _trunc_normal(rng, spec.shape)
        elif spec.init == "bank":
            bound = 1.0 / math.sqrt(config.rank)
            data = rng.uniform(-bound, bound, spec.shape)
        elif spec.init == "zero":
            data = np.zeros(spec.shape)
        elif spec.init == "one":
            data = np.ones(spec.shape)
        else:  # pragma: no cover
            raise ConfigError(f"unknown init kind '{spec.init}'")
        params[spec.name] = Tensor(data, requires_grad=True)
    return SertModel(config, params)


class SertModel:
    """Configured network plus its named parameters."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = parameter_specs(config)
        for spec in expected:
            if spec.name not in params:
                raise ConfigError(f"missing parameter '{spec.name}'")
            if params[spec.name].shape != spec.shape:
                raise ConfigError(
                    f"parameter '{spec.name}' has shape {params[spec.name].shape}, expected {spec.shape}"
                )
        self.config = config
        self.params = {spec.name: params[spec.name] for spec in expected}
        self._ra_weights: dict[tuple[int, int, str], AttentionWeights] = {}
        self._se_weights: dict[tuple[int, int], SEWeights] = {}
        if config.use_ra or config.use_se:
            for li, (h, w) in enumerate(config.rects):
                for bi in range(config.blocks[li]):
                    prefix = f"layers.{li}.blocks.{bi}"
                    if config.use_ra:
                        for branch, (th, tw) in (("h", (h, w)), ("v", (w, h))):
                            self._ra_weights[(li, bi, branch)] = AttentionWeights(
                                self.params[f"{prefix}.ra.{branch}.w_q"],
                                self.params[f"{prefix}.ra.{branch}.w_k"],
                                self.params[f"{prefix}.ra.{branch}.w_v"],
                                self.params[f"{prefix}.ra.{branch}.w_o"],
                                self.params[f"{prefix}.ra.{branch}.pos_bias"],
                                config.heads,
                                th,
                                tw,
                            )
                    if config.use_se:
                        self._se_weights[(li, bi)] = SEWeights(
                            self.params[f"{prefix}.se.w_down"],
                            self.params[f"{prefix}.se.w_gate"],
                            self.params[f"{prefix}.se.memory"] if config.use_mu else None,
                            gate=config.se_gate,
                        )

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, y: Tensor, collector: list | None = None) -> Tensor:
        return sert_forward(self, y, collector=collector)

    def denoise(self, y: np.ndarray) -> np.ndarray:
        """Inference on a raw H x W x bands cube (no tape, no gradients)."""
        with nm.no_tape():
            return self.forward(Tensor(y)).data


def _maybe_norm(model: SertModel, prefix: str, which: str, z: Tensor) -> Tensor:
    if not model.config.use_norm:
        return z
    return nm.layer_norm(z, model.params[f"{prefix}.{which}.gamma"], model.params[f"{prefix}.{which}.beta"])


def _se_patch_extents(config: ModelConfig, spec: RectSpec, height: int, width: int) -> tuple[int, int]:
    if config.se_scope == "global":
        return height, width
    if config.se_scope == "local":
        return spec.h, spec.w
    return spec.h, spec.h


def block_forward(model: SertModel, z: Tensor, layer_idx: int, block_idx: int,
                  collector: list | None = None) -> Tensor:
    """One transformer block: attention + spectral gate on the residual stream."""
    config = model.config
    if not (config.use_ra or config.use_se):
        return z
    spec = config.layer_specs()[layer_idx]
    prefix = f"layers.{layer_idx}.blocks.{block_idx}"
    normed = _maybe_norm(model, prefix, "norm_attn", z)

    mixed: Tensor | None = None
    if config.use_ra:
        mixed = ra_forward(
            normed,
            spec,
            model._ra_weights[(layer_idx, block_idx, "h")],
            model._ra_weights[(layer_idx, block_idx, "v")],
            use_shuffle=config.use_shuffle,
        )
    if config.use_se:
        ph, pw = _se_patch_extents(config, spec, normed.shape[0], normed.shape[1])
        shifted = config.se_scope != "global" and block_idx % 2 == 1
        local_collector: list | None = [] if collector is not None else None
        se_out = se_forward(
            normed,
            ph,
            pw,
            model._se_weights[(layer_idx, block_idx)],
            shifted=shifted,
            use_memory=config.use_mu,
            collector=local_collector,
        )
        if collector is not None and local_collector:
            for grid, zl in local_collector:
                collector.append((layer_idx, block_idx, grid, zl))
        mixed = se_out if mixed is None else nm.add(mixed, se_out)

    z = nm.add(z, mixed)
    if config.use_mlp:
        normed = _maybe_norm(model, prefix, "norm_mlp", z)
        hidden = nm.add(nm.matmul(normed, model.params[f"{prefix}.mlp.w1"]), model.params[f"{prefix}.mlp.b1"])
        hidden = nm.gelu(hidden)
        out = nm.add(nm.matmul(hidden, model.params[f"{prefix}.mlp.w2"]), model.params[f"{prefix}.mlp.b2"])
        z = nm.add(z, out)
    return z


def rtl_forward(model: SertModel, z: Tensor, layer_idx: int, collector: list | None = None) -> Tensor:
    """Residual layer: sequential blocks wrapped by a layer-level skip."""
    x = z
    for block_idx in range(model.config.blocks[layer_idx]):
        x = block_forward(model, x, layer_idx, block_idx, collector=collector)
    return nm.add(z, x)


def sert_forward(model: SertModel, y: Tensor, collector: list | None = None) -> Tensor:
    """Denoise a noisy cube; shape is preserved and the tail starts at zero."""
    config = model.config
    if y.data.ndim != 3 or y.shape[-1] != config.bands:
        raise ConfigError(f"input shape {y.shape} does not match configured bands {config.bands}")
    f1 = nm.conv2d(y, model.params["head.weight"], model.params["head.bias"])
    x = f1
    for li in range(len(config.rects)):
        x = rtl_forward(model, x, li, collector=collector)
        x = nm.conv2d(x, model.params[f"layers.{li}.conv.weight"], model.params[f"layers.{li}.conv.bias"])
    x = nm.conv2d(nm.add(x, f1), model.params["body.weight"], model.params["body.bias"])
    residual = nm.conv2d(x, model.params["tail.weight"], model.params["tail.bias"])
    return nm.add(y, residual)


# ---------------------------------------------------------------------------
# Accounting


@dataclass(frozen=True)
class ComponentCount:
    component: str
    count: int
    assumed: bool


@dataclass(frozen=True)
class ParamReport:
    total: int
    components: tuple[ComponentCount, ...]

    @property
    def assumed_total(self) -> int:
        return sum(c.count for c in self.components if c.assumed)


_ASSUMED_COMPONENTS = {
    "head conv",
    "tail conv",
    "stage convs",
    "body conv",
    "attention output proj",
    "mlp",
    "layer norms",
}


def _component_of(name: str) -> str:
    if name.startswith("head."):
        return "head conv"
    if name.startswith("tail."):
        return "tail conv"
    if name.startswith("body."):
        return "body conv"
    if ".conv." in name:
        return "stage convs"
    if ".ra." in name:
        if name.endswith(".w_o"):
            return "attention output proj"
        if name.endswith(".pos_bias"):
            return "attention position bias"
        return "attention qkv"
    if ".se.memory" in name:
        return "memory bank"
    if ".se." in name:
        return "spectral gate projections"
    if ".mlp." in name:
        return "mlp"
    if ".norm_" in name:
        return "layer norms"
    raise ConfigError(f"unclassified parameter '{name}'")  # pragma: no cover


def param_count(config: ModelConfig) -> ParamReport:
    """Exact learnable-scalar total, itemized by component."""
    totals: dict[str, int] = {}
    for spec in parameter_specs(config):
        component = _component_of(spec.name)
        totals[component] = totals.get(component, 0) + int(np.prod(spec.shape))
    components = tuple(
        ComponentCount(name, count, name in _ASSUMED_COMPONENTS) for name, count in sorted(totals.items())
    )
    return ParamReport(sum(totals.values()), components)


@dataclass(frozen=True)
class FlopsReport:
    """Multiply-accumulate counts; one MAC is conventionally two FLOPs."""

    total_macs: int
    components: tuple[ComponentCount, ...]

    @property
    def gflops(self) -> float:
        return 2.0 * self.total_macs / 1e9


def _round_up(value: int, multiple: int) -> int:
    return value + (-value) % multiple


def flops_estimate(config: ModelConfig, height: int, width: int) -> FlopsReport:
    """Analytic MAC count of one forward pass at the given extents.

    Counts matrix products and convolutions only, mirroring exactly what the
    runtime counter instruments; padding inside attention and enhancement is
    accounted per stage.
    """
    c = config.channels
    half = config.half_channels
    k = config.rank
    hw = height * width
    totals: dict[str, int] = {}

    def bump(component: str, macs: int) -> None:
        totals[component] = totals.get(component, 0) + macs

    bump("head conv", hw * 9 * config.bands * c)
    block_active = config.use_ra or config.use_se
    for li, spec in enumerate(config.layer_specs()):
        blocks = config.blocks[li]
        if not block_active:
            continue
        if config.use_ra:
            m = spec.lcm
            ph, pw = _round_up(height, m), _round_up(width, m)
            tokens = spec.h * spec.w
            qkv_scores = 3 * ph * pw * half * half + 2 * ph * pw * tokens * half
            bump("attention qkv", blocks * 2 * qkv_scores)
            bump("attention output proj", blocks * 2 * ph * pw * half * half)
        if config.use_se:
            eh, ew = _se_patch_extents(config, spec, height, width)
            sh, sw = _round_up(height, eh), _round_up(width, ew)
            patches = (sh // eh) * (sw // ew)
            macs = patches * c * k  # rank projection
            if config.use_mu:
                macs += 2 * patches * k * config.memory_entries
            macs += patches * k * c  # gate expansion
            bump("spectral enhancement", blocks * macs)
        if config.use_mlp:
            bump("mlp", blocks * 2 * hw * c * (MLP_EXPANSION * c))
    for _ in range(len(config.rects)):
        bump("stage convs", hw * 9 * c * c)
    bump("body conv", hw * 9 * c * c)
    bump("tail conv", hw * 9 * c * config.bands)
    components = tuple(
        ComponentCount(name, count, name in _ASSUMED_COMPONENTS) for name, count in sorted(totals.items())
    )
    return FlopsReport(sum(totals.values()), components)


def activate_tail(model: SertModel, seed: int) -> None:
    """Replace the zero tail projection with small random values.

    The tail starts at zero so the network is the identity; gradient probes
    need it non-zero or every upstream derivative vanishes identically.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(999,))))
    for name in ("tail.weight", "tail.bias"):
        tensor = model.params[name]
        tensor.data[...] = _trunc_normal(rng, tensor.data.shape)


def parameter_checksum(model: SertModel) -> float:
    """Order-stable fingerprint of all parameter values."""
    acc = 0.0
    for name in model.params:
        data = model.params[name].data
        acc += float(np.sum(data * np.arange(1, data.size + 1).reshape(data.shape)))
    return acc


def toy_config(**overrides) -> ModelConfig:
    """Small configuration for tests and gradient checks."""
    base = dict(
        channels=8,
        rank=2,
        bands=4,
        rects=((4, 2),),
        blocks=(2,),
        heads=2,
        memory_entries=5,
    )
    base.update(overrides)
    return ModelConfig(**base)

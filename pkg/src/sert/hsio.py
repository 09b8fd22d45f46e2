"""File formats: the HSR image container and model checkpoints.

Both formats are a UTF-8 text header terminated by one blank line, followed by
raw little-endian payload bytes. Headers are lowercase ``key=value`` lines in
a canonical order, so saving what was just loaded reproduces the bytes
exactly on any platform.

HSR container::

    HSR1\n
    height=H\n width=W\n bands=B\n dtype=f64|f32\n layout=band-major\n
    [seed=...]\n [recipe.<key>=...]\n ...\n
    \n
    <H*W*B little-endian floats, band-major (b, y, x)>

Checkpoint::

    SERTCKPT1\n format_version=1\n step=S\n seed=S\n config.<key>=...\n
    [adam.lr=... adam.beta1=... adam.beta2=... adam.eps=...]\n
    \n
    repeated: tensor <name> f64 <ndim> <d0> <d1> ...\n <raw bytes>
    end\n
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, SertModel, parameter_specs
from .numerics import AdamState, Tensor

HSR_MAGIC = "HSR1"
CKPT_MAGIC = "SERTCKPT1"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass
class HsiImage:
    """An HxWxB reflectance cube plus the header metadata it was stored with."""

    data: np.ndarray
    dtype: str = "f64"
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def _parse_header(blob: bytes, magic: str, path: Path) -> tuple[dict[str, str], bytes]:
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing blank line after header")
    try:
        header = blob[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not valid UTF-8") from exc
    lines = header.split("\n")
    if not lines or lines[0] != magic:
        raise FormatError(f"{path}: bad magic, expected '{magic}'")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line '{line}'")
        key, value = line.split("=", 1)
        if key != key.lower() or key.strip() != key:
            raise FormatError(f"{path}: header keys must be lowercase without padding, got '{key}'")
        fields[key] = value
    return fields, blob[sep + 2:]


def _positive_int(fields: dict[str, str], key: str, path: Path) -> int:
    if key not in fields:
        raise FormatError(f"{path}: missing header field '{key}'")
    try:
        value = int(fields[key])
    except ValueError as exc:
        raise FormatError(f"{path}: field '{key}' is not an integer: '{fields[key]}'") from exc
    if value <= 0:
        raise FormatError(f"{path}: field '{key}' must be positive, got {value}")
    return value


def save_hsi(image: HsiImage | np.ndarray, path: str | Path, meta: dict[str, str] | None = None,
             dtype: str | None = None) -> None:
    """Write a cube; ``meta`` entries (seed, recipe provenance) go in the header."""
    path = Path(path)
    if isinstance(image, HsiImage):
        data, use_dtype = image.data, dtype or image.dtype
        all_meta = dict(image.meta)
    else:
        data, use_dtype = np.asarray(image), dtype or "f64"
        all_meta = {}
    if meta:
        all_meta.update(meta)
    if data.ndim != 3:
        raise FormatError(f"can only store HxWxB cubes, got shape {data.shape}")
    if use_dtype not in _DTYPES:
        raise FormatError(f"unknown dtype '{use_dtype}', expected one of {sorted(_DTYPES)}")
    h, w, b = data.shape
    lines = [HSR_MAGIC, f"height={h}", f"width={w}", f"bands={b}", f"dtype={use_dtype}", "layout=band-major"]
    for key, value in all_meta.items():
        if "\n" in str(value):
            raise FormatError(f"header value for '{key}' must be a single line")
        lines.append(f"{key.lower()}={value}")
    payload = np.ascontiguousarray(data.transpose(2, 0, 1)).astype(_DTYPES[use_dtype]).tobytes()
    path.write_bytes("\n".join(lines).encode("utf-8") + b"\n\n" + payload)


def load_hsi(path: str | Path) -> HsiImage:
    """Read and validate a cube; header problems are reported before the payload."""
    path = Path(path)
    fields, payload = _parse_header(path.read_bytes(), HSR_MAGIC, path)
    h = _positive_int(fields, "height", path)
    w = _positive_int(fields, "width", path)
    b = _positive_int(fields, "bands", path)
    dtype = fields.get("dtype")
    if dtype not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype '{dtype}'")
    layout = fields.get("layout")
    if layout != "band-major":
        raise FormatError(f"{path}: unsupported layout '{layout}'")
    expected = h * w * b * _DTYPES[dtype].itemsize
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise FormatError(f"{path}: {kind} payload, expected {expected} bytes, found {len(payload)}")
    cube = np.frombuffer(payload, dtype=_DTYPES[dtype]).reshape(b, h, w).transpose(1, 2, 0)
    meta = {k: v for k, v in fields.items() if k not in ("height", "width", "bands", "dtype", "layout")}
    return HsiImage(data=np.ascontiguousarray(cube, dtype=np.float64), dtype=dtype, meta=meta)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: SertModel, path: str | Path, step: int = 0, seed: int = 0,
                    adam: AdamState | None = None) -> None:
    path = Path(path)
    lines = [CKPT_MAGIC, "format_version=1", f"step={step}", f"seed={seed}"]
    for line in model.config.to_text().strip().split("\n"):
        key, value = (part.strip() for part in line.split("=", 1))
        lines.append(f"config.{key}={value}")
    lines.append(f"has_adam={'true' if adam is not None else 'false'}")
    if adam is not None:
        lines.append(f"adam.lr={adam.lr!r}")
        lines.append(f"adam.beta1={adam.beta1!r}")
        lines.append(f"adam.beta2={adam.beta2!r}")
        lines.append(f"adam.eps={adam.eps!r}")
        lines.append(f"adam.step={adam.step}")
    buf = io.BytesIO()
    buf.write("\n".join(lines).encode("utf-8") + b"\n\n")

    def write_blob(name: str, array: np.ndarray) -> None:
        dims = " ".join(str(d) for d in array.shape)
        buf.write(f"tensor {name} f64 {array.ndim} {dims}".rstrip().encode("utf-8") + b"\n")
        buf.write(np.ascontiguousarray(array, dtype="<f8").tobytes())

    for name, tensor in model.params.items():
        write_blob(name, tensor.data)
    if adam is not None:
        for name in model.params:
            write_blob(f"adam.m.{name}", adam.m.get(name, np.zeros(model.params[name].shape)))
        for name in model.params:
            write_blob(f"adam.v.{name}", adam.v.get(name, np.zeros(model.params[name].shape)))
    buf.write(b"end\n")
    path.write_bytes(buf.getvalue())


def _read_blobs(stream: io.BytesIO, path: Path) -> dict[str, np.ndarray]:
    blobs: dict[str, np.ndarray] = {}
    while True:
        line = stream.readline()
        if not line:
            raise FormatError(f"{path}: checkpoint ended without 'end' marker")
        text = line.decode("utf-8").rstrip("\n")
        if text == "end":
            return blobs
        parts = text.split(" ")
        if len(parts) < 4 or parts[0] != "tensor" or parts[2] != "f64":
            raise FormatError(f"{path}: malformed tensor record '{text}'")
        name = parts[1]
        ndim = int(parts[3])
        dims = tuple(int(d) for d in parts[4:4 + ndim])
        if len(dims) != ndim:
            raise FormatError(f"{path}: tensor record '{name}' promises {ndim} dims, lists {len(dims)}")
        count = int(np.prod(dims)) if dims else 1
        raw = stream.read(count * 8)
        if len(raw) != count * 8:
            raise FormatError(f"{path}: truncated tensor payload for '{name}'")
        blobs[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return blobs


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None):
    """Rebuild (model, step, seed, adam_state_or_None) from a checkpoint file."""
    path = Path(path)
    blob = path.read_bytes()
    fields, payload = _parse_header(blob, CKPT_MAGIC, path)
    if fields.get("format_version") != "1":
        raise FormatError(f"{path}: unsupported format_version '{fields.get('format_version')}'")
    step = int(fields.get("step", "0"))
    seed = int(fields.get("seed", "0"))
    config_lines = [f"{k[len('config.'):]} = {v}" for k, v in fields.items() if k.startswith("config.")]
    config = ModelConfig.from_text("\n".join(config_lines))
    if expect_config is not None and config != expect_config:
        raise FormatError(
            f"{path}: checkpoint config conflicts with the requested configuration "
            f"(file: {config}, requested: {expect_config})"
        )
    blobs = _read_blobs(io.BytesIO(payload), path)

    params: dict[str, Tensor] = {}
    for spec in parameter_specs(config):
        if spec.name not in blobs:
            raise FormatError(f"{path}: checkpoint is missing parameter '{spec.name}'")
        array = blobs[spec.name]
        if array.shape != spec.shape:
            raise FormatError(
                f"{path}: shape conflict for parameter '{spec.name}': file has {array.shape}, "
                f"config requires {spec.shape}"
            )
        params[spec.name] = Tensor(array, requires_grad=True)
    model = SertModel(config, params)

    adam: AdamState | None = None
    if fields.get("has_adam") == "true":
        adam = AdamState(
            lr=float(fields["adam.lr"]),
            beta1=float(fields["adam.beta1"]),
            beta2=float(fields["adam.beta2"]),
            eps=float(fields["adam.eps"]),
            step=int(fields["adam.step"]),
        )
        for name in model.params:
            m = blobs.get(f"adam.m.{name}")
            v = blobs.get(f"adam.v.{name}")
            if m is None or v is None:
                raise FormatError(f"{path}: checkpoint is missing optimizer state for '{name}'")
            if m.shape != model.params[name].shape or v.shape != model.params[name].shape:
                raise FormatError(f"{path}: shape conflict in optimizer state for '{name}'")
            adam.m[name] = m
            adam.v[name] = v
    return model, step, seed, adam

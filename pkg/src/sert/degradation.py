"""Synthetic noise generation for hyperspectral cubes.

All generators are pure functions of (clean cube, parameters, seed). Noise is
drawn per band from a counter-based Philox stream keyed by (seed, stream tag,
band), so band-parallel and serial generation produce identical bits. Sigma
values live on the 0..255 scale and are divided by 255 before addition; noisy
outputs are intentionally not clipped to [0, 1].

Structured corruptions (stripes, dead columns, impulses) are split into an
explicit plan (which bands / columns / voxels, with what values) and an apply
step, so corpora are replayable and testable coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError

RECIPE_VERSION = 1

# Stream tags keep every random decision in its own Philox stream.
_T_GAUSS = 1
_T_SIGMA = 2
_T_NONIID = 3
_T_STRIPE_BANDS = 4
_T_STRIPE = 5
_T_DEADLINE_BANDS = 6
_T_DEADLINE = 7
_T_IMPULSE_BANDS = 8
_T_IMPULSE = 9
_T_MIX_ASSIGN = 10

DEFAULT_BAND_FRACTION = 1.0 / 3.0
DEFAULT_COL_FRACTION = (0.05, 0.15)
DEFAULT_STRIPE_MAGNITUDE = 0.25
DEFAULT_IMPULSE_AMOUNTS = (0.1, 0.3, 0.5, 0.7)
DEFAULT_DEADLINE_WIDTHS = (1, 3)


def generator(seed: int, *key: int) -> np.random.Generator:
    """Philox stream for a (seed, key...) tuple; keys separate decision kinds."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key)))


def derive_seed(seed: int, *key: int) -> int:
    """Stable 63-bit sub-seed (for nesting one seeded API inside another)."""
    state = np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def _check_cube(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ParameterError(f"expected an HxWxB cube, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Gaussian


def gaussian_iid(x: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise with std sigma/255 to every voxel."""
    x = _check_cube(x)
    if not 0.0 <= sigma <= 255.0:
        raise ParameterError(f"sigma must be in [0, 255], got {sigma}")
    y = x.copy()
    h, w, bands = x.shape
    s = sigma / 255.0
    for b in range(bands):
        y[:, :, b] += generator(seed, _T_GAUSS, b).normal(0.0, s, (h, w)) if s > 0 else 0.0
    return y


def plan_gaussian_noniid(bands: int, sigma_min: float, sigma_max: float, seed: int) -> np.ndarray:
    """Per-band sigma draws on the 0..255 scale."""
    if not 0.0 <= sigma_min <= sigma_max:
        raise ParameterError(f"need 0 <= sigma_min <= sigma_max, got [{sigma_min}, {sigma_max}]")
    sigmas = np.empty(bands)
    for b in range(bands):
        sigmas[b] = generator(seed, _T_SIGMA, b).uniform(sigma_min, sigma_max)
    return sigmas


def gaussian_noniid(x: np.ndarray, sigma_min: float = 10.0, sigma_max: float = 70.0, seed: int = 0) -> np.ndarray:
    """Per-band sigma ~ U[sigma_min, sigma_max], then i.i.d. Gaussian inside the band."""
    x = _check_cube(x)
    sigmas = plan_gaussian_noniid(x.shape[2], sigma_min, sigma_max, seed)
    y = x.copy()
    h, w, bands = x.shape
    for b in range(bands):
        y[:, :, b] += generator(seed, _T_NONIID, b).normal(0.0, sigmas[b] / 255.0, (h, w))
    return y


# ---------------------------------------------------------------------------
# Structured corruptions


def _select_bands(bands: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"band fraction must be in [0, 1], got {fraction}")
    count = int(np.floor(bands * fraction))
    if count == 0:
        return np.empty(0, dtype=np.intp)
    return np.sort(rng.permutation(bands)[:count]).astype(np.intp)


@dataclass(frozen=True)
class StripeBand:
    band: int
    cols: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True)
class StripePlan:
    entries: tuple[StripeBand, ...]


def plan_stripe(
    shape: tuple[int, int, int],
    bands: np.ndarray,
    col_fraction: tuple[float, float],
    magnitude: float,
    seed: int,
) -> StripePlan:
    _, w, _ = shape
    lo, hi = col_fraction
    if not 0.0 <= lo <= hi <= 1.0:
        raise ParameterError(f"column fraction range must satisfy 0 <= lo <= hi <= 1, got {col_fraction}")
    entries = []
    for b in bands:
        rng = generator(seed, _T_STRIPE, int(b))
        n_min, n_max = int(np.floor(lo * w)), int(np.floor(hi * w))
        count = int(rng.integers(n_min, n_max + 1))
        cols = np.sort(rng.permutation(w)[:count]).astype(np.intp)
        offsets = rng.uniform(-magnitude, magnitude, count)
        entries.append(StripeBand(int(b), cols, offsets))
    return StripePlan(tuple(entries))


def apply_stripe(y: np.ndarray, plan: StripePlan) -> np.ndarray:
    for entry in plan.entries:
        y[:, entry.cols, entry.band] += entry.offsets
    return y


def stripe(
    x: np.ndarray,
    band_fraction: float = DEFAULT_BAND_FRACTION,
    col_fraction: tuple[float, float] = DEFAULT_COL_FRACTION,
    magnitude: float = DEFAULT_STRIPE_MAGNITUDE,
    seed: int = 0,
) -> np.ndarray:
    """Constant per-column offsets on a random subset of bands."""
    x = _check_cube(x)
    bands = _select_bands(x.shape[2], band_fraction, generator(seed, _T_STRIPE_BANDS))
    plan = plan_stripe(x.shape, bands, col_fraction, magnitude, seed)
    return apply_stripe(x.copy(), plan)


@dataclass(frozen=True)
class DeadlineBand:
    band: int
    starts: np.ndarray
    widths: np.ndarray

    def columns(self, width_limit: int) -> np.ndarray:
        cols: list[int] = []
        for start, width in zip(self.starts, self.widths):
            cols.extend(range(int(start), min(int(start) + int(width), width_limit)))
        return np.unique(np.asarray(cols, dtype=np.intp))


@dataclass(frozen=True)
class DeadlinePlan:
    entries: tuple[DeadlineBand, ...]


def plan_deadline(
    shape: tuple[int, int, int],
    bands: np.ndarray,
    col_fraction: tuple[float, float],
    widths: tuple[int, int],
    seed: int,
) -> DeadlinePlan:
    _, w, _ = shape
    lo, hi = col_fraction
    if not 0.0 <= lo <= hi <= 1.0:
        raise ParameterError(f"column fraction range must satisfy 0 <= lo <= hi <= 1, got {col_fraction}")
    entries = []
    for b in bands:
        rng = generator(seed, _T_DEADLINE, int(b))
        n_min, n_max = int(np.floor(lo * w)), int(np.floor(hi * w))
        count = int(rng.integers(n_min, n_max + 1))
        starts = np.sort(rng.permutation(w)[:count]).astype(np.intp)
        drawn = rng.integers(widths[0], widths[1] + 1, count).astype(np.intp)
        entries.append(DeadlineBand(int(b), starts, drawn))
    return DeadlinePlan(tuple(entries))


def apply_deadline(y: np.ndarray, plan: DeadlinePlan) -> np.ndarray:
    w = y.shape[1]
    for entry in plan.entries:
        y[:, entry.columns(w), entry.band] = 0.0
    return y


def deadline(
    x: np.ndarray,
    band_fraction: float = DEFAULT_BAND_FRACTION,
    col_fraction: tuple[float, float] = DEFAULT_COL_FRACTION,
    seed: int = 0,
) -> np.ndarray:
    """Zero out short runs of columns (dead sensor lines) in selected bands."""
    x = _check_cube(x)
    bands = _select_bands(x.shape[2], band_fraction, generator(seed, _T_DEADLINE_BANDS))
    plan = plan_deadline(x.shape, bands, col_fraction, DEFAULT_DEADLINE_WIDTHS, seed)
    return apply_deadline(x.copy(), plan)


@dataclass(frozen=True)
class ImpulseBand:
    band: int
    p: float
    mask: np.ndarray  # HxW bool
    values: np.ndarray  # one 0/1 value per masked voxel, row-major


@dataclass(frozen=True)
class ImpulsePlan:
    entries: tuple[ImpulseBand, ...]


def plan_impulse(
    shape: tuple[int, int, int],
    bands: np.ndarray,
    amounts: tuple[float, ...],
    p: float | None,
    seed: int,
) -> ImpulsePlan:
    h, w, _ = shape
    if p is not None and not 0.0 <= p <= 1.0:
        raise ParameterError(f"impulse probability must be in [0, 1], got {p}")
    entries = []
    for b in bands:
        rng = generator(seed, _T_IMPULSE, int(b))
        prob = float(rng.choice(np.asarray(amounts))) if p is None else p
        mask = rng.random((h, w)) < prob
        values = rng.integers(0, 2, int(mask.sum())).astype(np.float64)
        entries.append(ImpulseBand(int(b), prob, mask, values))
    return ImpulsePlan(tuple(entries))


def apply_impulse(y: np.ndarray, plan: ImpulsePlan) -> np.ndarray:
    for entry in plan.entries:
        y[:, :, entry.band][entry.mask] = entry.values
    return y


def impulse(
    x: np.ndarray,
    band_fraction: float = DEFAULT_BAND_FRACTION,
    p: float | None = None,
    amounts: tuple[float, ...] = DEFAULT_IMPULSE_AMOUNTS,
    seed: int = 0,
) -> np.ndarray:
    """Salt-and-pepper replacement in selected bands.

    With ``p`` unset, each affected band draws its replacement probability
    from ``amounts``.
    """
    x = _check_cube(x)
    bands = _select_bands(x.shape[2], band_fraction, generator(seed, _T_IMPULSE_BANDS))
    plan = plan_impulse(x.shape, bands, amounts, p, seed)
    return apply_impulse(x.copy(), plan)


# ---------------------------------------------------------------------------
# Mixture

BAND_TAG_NONE = 0
BAND_TAG_STRIPE = 1
BAND_TAG_DEADLINE = 2
BAND_TAG_IMPULSE = 3


DEFAULT_MIXTURE_FRACTIONS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


def plan_mixture_assignment(
    bands: int, seed: int, fractions: tuple[float, float, float] = DEFAULT_MIXTURE_FRACTIONS
) -> np.ndarray:
    """Tag each band none/stripe/deadline/impulse; a band-count share per type."""
    if any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ParameterError(f"mixture fractions must be non-negative and sum to at most 1, got {fractions}")
    order = generator(seed, _T_MIX_ASSIGN).permutation(bands)
    tags = np.full(bands, BAND_TAG_NONE, dtype=np.intp)
    cursor = 0
    for tag, fraction in zip((BAND_TAG_STRIPE, BAND_TAG_DEADLINE, BAND_TAG_IMPULSE), fractions):
        count = int(np.floor(bands * fraction))
        tags[order[cursor:cursor + count]] = tag
        cursor += count
    return tags


def mixture(
    x: np.ndarray,
    seed: int = 0,
    sigma_min: float = 10.0,
    sigma_max: float = 70.0,
    fractions: tuple[float, float, float] = DEFAULT_MIXTURE_FRACTIONS,
) -> np.ndarray:
    """Non-i.i.d. Gaussian everywhere, then one structured corruption per band."""
    x = _check_cube(x)
    y = gaussian_noniid(x, sigma_min, sigma_max, seed)
    tags = plan_mixture_assignment(x.shape[2], seed, fractions)
    stripe_bands = np.flatnonzero(tags == BAND_TAG_STRIPE)
    dead_bands = np.flatnonzero(tags == BAND_TAG_DEADLINE)
    imp_bands = np.flatnonzero(tags == BAND_TAG_IMPULSE)
    y = apply_stripe(y, plan_stripe(x.shape, stripe_bands, DEFAULT_COL_FRACTION, DEFAULT_STRIPE_MAGNITUDE, seed))
    y = apply_deadline(y, plan_deadline(x.shape, dead_bands, DEFAULT_COL_FRACTION, DEFAULT_DEADLINE_WIDTHS, seed))
    y = apply_impulse(y, plan_impulse(x.shape, imp_bands, DEFAULT_IMPULSE_AMOUNTS, None, seed))
    return y


# ---------------------------------------------------------------------------
# Recipes

_VARIANTS = ("gaussian_iid", "gaussian_noniid", "stripe", "deadline", "impulse", "mixture")


@dataclass
class NoiseSpec:
    """A reproducible noise recipe: variant tag, parameters, seed."""

    variant: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ParameterError(f"unknown noise variant '{self.variant}'; expected one of {_VARIANTS}")

    def apply(self, x: np.ndarray, seed: int | None = None) -> np.ndarray:
        """Degrade ``x``; an explicit ``seed`` overrides the recipe's."""
        use_seed = seed if seed is not None else self.seed
        if use_seed is None:
            raise ParameterError("noise recipe has no seed and none was provided")
        p = self.params
        if self.variant == "gaussian_iid":
            return gaussian_iid(x, p.get("sigma", 50.0), use_seed)
        if self.variant == "gaussian_noniid":
            return gaussian_noniid(x, p.get("sigma_min", 10.0), p.get("sigma_max", 70.0), use_seed)
        base_min = p.get("base_sigma_min", 0.0)
        base_max = p.get("base_sigma_max", 0.0)
        y = x if base_max <= 0 else gaussian_noniid(x, base_min, base_max, use_seed)
        if self.variant == "stripe":
            return stripe(
                y,
                band_fraction=p.get("band_fraction", DEFAULT_BAND_FRACTION),
                col_fraction=(p.get("col_fraction_min", 0.05), p.get("col_fraction_max", 0.15)),
                magnitude=p.get("magnitude", DEFAULT_STRIPE_MAGNITUDE),
                seed=use_seed,
            )
        if self.variant == "deadline":
            return deadline(
                y,
                band_fraction=p.get("band_fraction", DEFAULT_BAND_FRACTION),
                col_fraction=(p.get("col_fraction_min", 0.05), p.get("col_fraction_max", 0.15)),
                seed=use_seed,
            )
        if self.variant == "impulse":
            amounts = p.get("amounts", DEFAULT_IMPULSE_AMOUNTS)
            return impulse(
                y,
                band_fraction=p.get("band_fraction", DEFAULT_BAND_FRACTION),
                p=p.get("p"),
                amounts=tuple(amounts),
                seed=use_seed,
            )
        fractions = (
            p.get("fraction_stripe", DEFAULT_MIXTURE_FRACTIONS[0]),
            p.get("fraction_deadline", DEFAULT_MIXTURE_FRACTIONS[1]),
            p.get("fraction_impulse", DEFAULT_MIXTURE_FRACTIONS[2]),
        )
        return mixture(x, use_seed, p.get("sigma_min", 10.0), p.get("sigma_max", 70.0), fractions)

    # -- text form -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"recipe_version = {RECIPE_VERSION}", f"variant = {self.variant}"]
        for key in sorted(self.params):
            value = self.params[key]
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{key} = {value}")
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseSpec":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"recipe line {lineno}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        version = values.pop("recipe_version", str(RECIPE_VERSION))
        if int(version) != RECIPE_VERSION:
            raise FormatError(f"unsupported recipe_version {version}")
        variant = values.pop("variant", None)
        if variant is None:
            raise FormatError("recipe is missing the 'variant' key")
        seed = int(values.pop("seed")) if "seed" in values else None
        params: dict = {}
        for key, token in values.items():
            if key == "amounts":
                params[key] = tuple(float(t) for t in token.split(","))
            else:
                try:
                    params[key] = float(token)
                except ValueError as exc:
                    raise FormatError(f"recipe key '{key}' has non-numeric value '{token}'") from exc
        return cls(variant=variant, params=params, seed=seed)

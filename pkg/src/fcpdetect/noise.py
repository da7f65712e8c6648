"""Null-field simulation and Monte-Carlo confidence supersets.

A confidence superset U is a random set of pixels guaranteed to contain the
entire source-free region with probability at least 1 - alpha. Both
constructions here calibrate against B simulated replicates of a pure-noise
model:

* the removal construction strips pixels from the observed image in
  descending intensity order, stopping as soon as the maximum of the
  remaining set is unremarkable (empirical p-value above alpha) against
  simulated maxima over random surviving sets of the same size;

* the percentile construction thresholds the image at the 1 - alpha
  percentile of B simulated whole-image maxima.

Noise models are composable: a base field (Poisson counts or Gaussian), and
optionally the same deterministic transform pipeline that was applied to the
data, so the simulated maxima live on the same scale as the analyzed image.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapacityError,
    ModelError,
    ParameterError,
    ParseError,
    StructuralError,
    TableLookupError,
)
from .grid import as_grid
from .msd import msd_image, validate_scales
from .transforms import gaussian_smooth, sqrt_transform, z_score

DEFAULT_B = 2000
DEFAULT_MAX_REMOVALS = 5000


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class PoissonField:
    """IID Poisson counts with rate ``lambda0`` at every pixel."""

    lambda0: float


@dataclass(frozen=True)
class GaussianField:
    """IID Gaussian draws with mean ``mu`` and standard deviation ``sigma``."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class Smooth:
    sigma: float


@dataclass(frozen=True)
class Sqrt:
    pass


@dataclass(frozen=True)
class ZScore:
    mu0: float
    sigma0: float


@dataclass(frozen=True)
class Msd:
    scales: tuple


@dataclass(frozen=True)
class Negate:
    pass


@dataclass(frozen=True)
class Filtered:
    """A base noise field pushed through an ordered transform pipeline."""

    base: "NoiseModel"
    pipeline: tuple


NoiseModel = PoissonField | GaussianField | Filtered
Stage = Smooth | Sqrt | ZScore | Msd | Negate


def validate_model(model) -> bool:
    """Check a noise model; returns whether its output is surely nonnegative.

    Raises
    ------
    ModelError
        If a parameter is out of range or the pipeline composition is
        invalid (most importantly: a square-root stage fed values that are
        not guaranteed nonnegative).
    """
    if isinstance(model, PoissonField):
        lam = model.lambda0
        if not (math.isfinite(lam) and lam >= 0):
            raise ModelError(f"Poisson rate must be finite and >= 0, got {lam}")
        return True
    if isinstance(model, GaussianField):
        if not (math.isfinite(model.sigma) and model.sigma > 0):
            raise ModelError(f"Gaussian sigma must be finite and > 0, got {model.sigma}")
        if not math.isfinite(model.mu):
            raise ModelError(f"Gaussian mu must be finite, got {model.mu}")
        return False
    if isinstance(model, Filtered):
        if not model.pipeline:
            raise ModelError("filtered model requires a nonempty pipeline")
        nonneg = validate_model(model.base)
        for pos, stage in enumerate(model.pipeline):
            nonneg = _validate_stage(stage, pos, nonneg)
        return nonneg
    raise ModelError(f"unknown noise model {model!r}")


def _validate_stage(stage, pos: int, nonneg: bool) -> bool:
    if isinstance(stage, Smooth):
        if not (math.isfinite(stage.sigma) and stage.sigma > 0):
            raise ModelError(f"smooth stage {pos}: sigma must be > 0, got {stage.sigma}")
        return nonneg  # averaging nonnegative values stays nonnegative
    if isinstance(stage, Sqrt):
        if not nonneg:
            raise ModelError(
                f"sqrt stage {pos} requires nonnegative input, but the "
                "preceding stages can produce negative values"
            )
        return True
    if isinstance(stage, ZScore):
        if not (math.isfinite(stage.sigma0) and stage.sigma0 > 0):
            raise ModelError(f"zscore stage {pos}: sigma0 must be > 0, got {stage.sigma0}")
        if not math.isfinite(stage.mu0):
            raise ModelError(f"zscore stage {pos}: mu0 must be finite, got {stage.mu0}")
        return False
    if isinstance(stage, Msd):
        validate_scales(stage.scales)
        return False
    if isinstance(stage, Negate):
        return False
    raise ModelError(f"unknown pipeline stage {stage!r}")


def _fmt(x: float) -> str:
    return repr(float(x))


def stage_descriptor(stage) -> str:
    if isinstance(stage, Smooth):
        return f"smooth({_fmt(stage.sigma)})"
    if isinstance(stage, Sqrt):
        return "sqrt"
    if isinstance(stage, ZScore):
        return f"zscore({_fmt(stage.mu0)},{_fmt(stage.sigma0)})"
    if isinstance(stage, Msd):
        return "msd(" + ",".join(_fmt(h) for h in stage.scales) + ")"
    if isinstance(stage, Negate):
        return "negate"
    raise ModelError(f"unknown pipeline stage {stage!r}")


def model_descriptor(model) -> str:
    """Canonical string form of a model; equal strings mean equal models."""
    if isinstance(model, PoissonField):
        return f"poisson({_fmt(model.lambda0)})"
    if isinstance(model, GaussianField):
        return f"gaussian({_fmt(model.mu)},{_fmt(model.sigma)})"
    if isinstance(model, Filtered):
        stages = " -> ".join(stage_descriptor(s) for s in model.pipeline)
        return f"filtered({model_descriptor(model.base)} | {stages})"
    raise ModelError(f"unknown noise model {model!r}")


def model_to_dict(model) -> dict:
    """JSON-ready nested dict form of a noise model."""
    if isinstance(model, PoissonField):
        return {"kind": "poisson", "lambda0": float(model.lambda0)}
    if isinstance(model, GaussianField):
        return {"kind": "gaussian", "mu": float(model.mu), "sigma": float(model.sigma)}
    if isinstance(model, Filtered):
        return {
            "kind": "filtered",
            "base": model_to_dict(model.base),
            "pipeline": [_stage_to_dict(s) for s in model.pipeline],
        }
    raise ModelError(f"unknown noise model {model!r}")


def _stage_to_dict(stage) -> dict:
    if isinstance(stage, Smooth):
        return {"stage": "smooth", "sigma": float(stage.sigma)}
    if isinstance(stage, Sqrt):
        return {"stage": "sqrt"}
    if isinstance(stage, ZScore):
        return {"stage": "zscore", "mu0": float(stage.mu0), "sigma0": float(stage.sigma0)}
    if isinstance(stage, Msd):
        return {"stage": "msd", "scales": [float(h) for h in stage.scales]}
    if isinstance(stage, Negate):
        return {"stage": "negate"}
    raise ModelError(f"unknown pipeline stage {stage!r}")


def model_from_dict(doc) -> NoiseModel:
    """Inverse of model_to_dict. Structural problems raise ParseError."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ParseError(f"noise model must be an object with a 'kind' key, got {doc!r}")
    kind = doc["kind"]
    try:
        if kind == "poisson":
            model = PoissonField(float(doc["lambda0"]))
        elif kind == "gaussian":
            model = GaussianField(float(doc["mu"]), float(doc["sigma"]))
        elif kind == "filtered":
            stages = tuple(_stage_from_dict(s) for s in doc["pipeline"])
            model = Filtered(model_from_dict(doc["base"]), stages)
        else:
            raise ParseError(f"unknown noise model kind {kind!r}")
    except KeyError as exc:
        raise ParseError(f"noise model {kind!r} is missing field {exc.args[0]!r}") from None
    validate_model(model)
    return model


def _stage_from_dict(doc) -> Stage:
    if not isinstance(doc, dict) or "stage" not in doc:
        raise ParseError(f"pipeline stage must be an object with a 'stage' key, got {doc!r}")
    name = doc["stage"]
    try:
        if name == "smooth":
            return Smooth(float(doc["sigma"]))
        if name == "sqrt":
            return Sqrt()
        if name == "zscore":
            return ZScore(float(doc["mu0"]), float(doc["sigma0"]))
        if name == "msd":
            return Msd(tuple(float(h) for h in doc["scales"]))
        if name == "negate":
            return Negate()
    except KeyError as exc:
        raise ParseError(f"pipeline stage {name!r} is missing field {exc.args[0]!r}") from None
    raise ParseError(f"unknown pipeline stage {name!r}")


# ---------------------------------------------------------------------------
# simulation


def child_seed(master: int, index: int) -> int:
    """Deterministic per-replicate seed: mixes (master, index), splits cleanly."""
    seq = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _check_dims(rows, cols):
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1:
        raise ParameterError(f"grid dimensions must be positive, got {rows}x{cols}")
    return rows, cols


def apply_stage(img: np.ndarray, stage) -> np.ndarray:
    """Apply one pipeline stage to an image."""
    if isinstance(stage, Smooth):
        return gaussian_smooth(img, stage.sigma)
    if isinstance(stage, Sqrt):
        return sqrt_transform(img)
    if isinstance(stage, ZScore):
        return z_score(img, stage.mu0, stage.sigma0)
    if isinstance(stage, Msd):
        return msd_image(img, stage.scales)
    if isinstance(stage, Negate):
        return -as_grid(img)
    raise ModelError(f"unknown pipeline stage {stage!r}")


def _sample(model, rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(model, PoissonField):
        return rng.poisson(model.lambda0, size=(rows, cols)).astype(np.float64)
    if isinstance(model, GaussianField):
        return rng.normal(model.mu, model.sigma, size=(rows, cols))
    img = _sample(model.base, rows, cols, rng)
    for stage in model.pipeline:
        img = apply_stage(img, stage)
    return img


def simulate_noise_image(model, rows, cols, seed: int) -> np.ndarray:
    """Draw one pure-noise image: deterministic in (model, dims, seed)."""
    validate_model(model)
    rows, cols = _check_dims(rows, cols)
    rng = np.random.default_rng(int(seed))
    return _sample(model, rows, cols, rng)


# ---------------------------------------------------------------------------
# max-distribution tables


@dataclass
class MaxDistributionTable:
    """Sorted simulated maxima of a noise model, indexed by retained area.

    Row ``i`` of ``maxima`` holds B ascending maxima over random surviving
    pixel sets of size ``areas[i]``. Within each simulated replicate pixels
    are only ever removed (one shared permutation), so the rows are
    elementwise monotone: smaller areas never have larger maxima.
    """

    B: int
    areas: tuple
    maxima: np.ndarray
    model: str | None = None
    rows: int | None = None
    cols: int | None = None
    seed: int | None = None
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.areas = tuple(int(x) for x in self.areas)
        self.maxima = np.asarray(self.maxima, dtype=np.float64)
        if self.B < 1:
            raise StructuralError(f"table needs B >= 1, got {self.B}")
        if not self.areas:
            raise StructuralError("table needs at least one area")
        if any(b >= a for a, b in zip(self.areas, self.areas[1:])):
            raise StructuralError("table areas must be strictly descending")
        if self.areas[-1] < 1:
            raise StructuralError(f"table areas must be >= 1, got {self.areas[-1]}")
        if self.maxima.shape != (len(self.areas), self.B):
            raise StructuralError(
                f"maxima shape {self.maxima.shape} does not match "
                f"{len(self.areas)} areas x B={self.B}"
            )
        if not np.all(np.diff(self.maxima, axis=1) >= 0):
            raise StructuralError("each maxima row must be sorted ascending")
        if not np.all(np.diff(self.maxima, axis=0) <= 0):
            raise StructuralError("maxima must be elementwise non-increasing as area shrinks")
        self._index = {area: i for i, area in enumerate(self.areas)}


def _replicate_maxima(model, rows, cols, B, removals, seed):
    """Maxima after each removal count in ``removals``, one column per replicate.

    Replicate b draws its field with child_seed(seed, b) — bit-identical to
    simulate_noise_image under that seed — then a removal permutation from
    the same stream. A reversed running maximum over the permuted field
    gives the maxima for every removal count in one O(N) pass.
    """
    n = rows * cols
    removals = np.asarray(removals, dtype=np.intp)
    out = np.empty((len(removals), B))
    strip_any = bool(removals.max(initial=0) > 0)
    for b in range(B):
        rng = np.random.default_rng(child_seed(seed, b))
        flat = _sample(model, rows, cols, rng).ravel()
        if strip_any:
            surviving = flat[rng.permutation(n)]
            best_from = np.maximum.accumulate(surviving[::-1])[::-1]
            out[:, b] = best_from[removals]
        else:
            out[:, b] = flat.max()
    return out


def build_max_distributions(model, rows, cols, B=DEFAULT_B, a=None, seed=0):
    """Simulate the removal-maxima table for areas N, N-1, ..., N-a.

    Parameters
    ----------
    model : NoiseModel
        Null model to calibrate against.
    rows, cols : int
        Image dimensions; N = rows*cols.
    B : int
        Number of replicates.
    a : int or None
        Number of removal steps; default min(5000, N // 10).
    seed : int
        Master seed; replicate b uses child_seed(seed, b).
    """
    validate_model(model)
    rows, cols = _check_dims(rows, cols)
    n = rows * cols
    if a is None:
        a = min(DEFAULT_MAX_REMOVALS, n // 10)
    a, B = int(a), int(B)
    if B < 1:
        raise ParameterError(f"B must be >= 1, got {B}")
    if a < 0 or a >= n:
        raise ParameterError(f"removal count a must satisfy 0 <= a < {n}, got {a}")
    raw = _replicate_maxima(model, rows, cols, B, np.arange(a + 1), seed)
    return MaxDistributionTable(
        B=B,
        areas=tuple(range(n, n - a - 1, -1)),
        maxima=np.sort(raw, axis=1),
        model=model_descriptor(model),
        rows=rows,
        cols=cols,
        seed=int(seed),
    )


def removal_maxima(model, rows, cols, B, areas, seed=0):
    """Sorted removal maxima for a sparse set of retained areas.

    Same construction as build_max_distributions but records only the
    requested areas, so widely spaced areas (e.g. 4, 100, 2500) do not
    force a dense — and memory-hungry — table.
    """
    validate_model(model)
    rows, cols = _check_dims(rows, cols)
    n = rows * cols
    areas = [int(x) for x in areas]
    if not areas:
        raise ParameterError("at least one area is required")
    for area in areas:
        if not 1 <= area <= n:
            raise ParameterError(f"area {area} outside 1..{n}")
    raw = _replicate_maxima(model, rows, cols, int(B), [n - x for x in areas], seed)
    return {area: np.sort(raw[i]) for i, area in enumerate(areas)}


def build_square_region_maxima(model, rows, cols, B, side, seed=0):
    """Sorted maxima over one uniformly placed side*side square per replicate."""
    validate_model(model)
    rows, cols = _check_dims(rows, cols)
    side = int(side)
    if not 1 <= side <= min(rows, cols):
        raise ParameterError(f"side must be in 1..{min(rows, cols)}, got {side}")
    out = np.empty(int(B))
    for b in range(int(B)):
        rng = np.random.default_rng(child_seed(seed, b))
        img = _sample(model, rows, cols, rng)
        r0 = int(rng.integers(0, rows - side + 1))
        c0 = int(rng.integers(0, cols - side + 1))
        out[b] = img[r0 : r0 + side, c0 : c0 + side].max()
    return np.sort(out)


def save_table(path, table: MaxDistributionTable):
    """Write a table as JSON: {B, areas, maxima-by-area} plus provenance."""
    doc = {
        "B": table.B,
        "areas": list(table.areas),
        "maxima": {str(area): table.maxima[i].tolist() for i, area in enumerate(table.areas)},
        "model": table.model,
        "rows": table.rows,
        "cols": table.cols,
        "seed": table.seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_table(path) -> MaxDistributionTable:
    """Read a table written by save_table; malformed documents raise ParseError."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    for key in ("B", "areas", "maxima"):
        if key not in doc:
            raise ParseError(f"{path}: missing key {key!r}")
    try:
        areas = [int(x) for x in doc["areas"]]
        maxima = np.array([doc["maxima"][str(area)] for area in areas], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed table payload ({exc})") from None
    return MaxDistributionTable(
        B=int(doc["B"]),
        areas=tuple(areas),
        maxima=maxima,
        model=doc.get("model"),
        rows=doc.get("rows"),
        cols=doc.get("cols"),
        seed=doc.get("seed"),
    )


# ---------------------------------------------------------------------------
# p-values and supersets


def empirical_pvalue(table: MaxDistributionTable, x: float, area: int) -> float:
    """Fraction of the B simulated maxima at ``area`` that are >= x."""
    idx = table._index.get(int(area))
    if idx is None:
        raise TableLookupError(
            f"area {area} not in table (covers {table.areas[0]} down to {table.areas[-1]})"
        )
    row = table.maxima[idx]
    return float(table.B - np.searchsorted(row, x, side="left")) / table.B


def max_percentile(maxima, alpha: float) -> float:
    """The ceil((1-alpha)*B)-th smallest of B maxima (a conservative percentile)."""
    _check_alpha(alpha)
    values = np.sort(np.asarray(maxima, dtype=np.float64).ravel())
    if values.size == 0:
        raise ParameterError("maxima list must be nonempty")
    # tiny slack so e.g. 0.95*2000 -> 1900, not 1901 via float round-up
    k = math.ceil((1.0 - alpha) * values.size - 1e-9)
    k = min(max(k, 1), values.size)
    return float(values[k - 1])


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")


@dataclass(frozen=True)
class ConfidenceSuperset:
    """Pixels that cannot be ruled out as pure background at level alpha."""

    mask: np.ndarray
    alpha: float
    method: str

    def __post_init__(self):
        if self.method not in ("alg1", "alg2"):
            raise ParameterError(f"method must be 'alg1' or 'alg2', got {self.method!r}")
        _check_alpha(self.alpha)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise StructuralError(f"superset mask must be 2-D, got ndim={mask.ndim}")
        object.__setattr__(self, "mask", mask)


def superset_alg2(img, r: float, alpha: float) -> ConfidenceSuperset:
    """Threshold construction: U = all pixels with value <= r."""
    img = as_grid(img)
    if not math.isfinite(r):
        raise ParameterError(f"threshold r must be finite, got {r}")
    return ConfidenceSuperset(mask=img <= r, alpha=float(alpha), method="alg2")


def superset_alg1(img, table: MaxDistributionTable, alpha: float) -> ConfidenceSuperset:
    """Removal construction of a confidence superset.

    Strips pixels in descending intensity order (ties broken row-major)
    until the maximum of the remaining set has empirical p-value above
    alpha against the table; the surviving pixels form U. If the whole
    image already passes, nothing is removed.
    """
    img = as_grid(img)
    _check_alpha(alpha)
    n = img.size
    if table.areas[0] != n:
        raise StructuralError(
            f"table was built for {table.areas[0]} pixels, image has {n}"
        )
    flat = img.ravel()
    order = np.argsort(-flat, kind="stable")  # descending, ties row-major
    removed = 0
    while True:
        area = n - removed
        if area not in table._index:
            raise CapacityError(
                f"removal table exhausted after {removed} removals "
                f"(covers down to area {table.areas[-1]}); rebuild with a larger a"
            )
        if empirical_pvalue(table, flat[order[removed]], area) > alpha:
            break
        removed += 1
    mask = np.ones(n, dtype=bool)
    mask[order[:removed]] = False
    return ConfidenceSuperset(mask=mask.reshape(img.shape), alpha=float(alpha), method="alg1")

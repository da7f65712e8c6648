"""End-to-end detection runs, synthetic skies, catalogs, and evaluation.

A run takes raw counts, applies a statistic pipeline (smooth-then-root with
Z-scoring, or the multi-scale derivative route), calibrates a confidence
superset by simulating the *same* pipeline on a matched noise model, and
scans thresholds for the lowest one keeping the false-cluster envelope
within c. The noise model is constructed from the very stage list applied
to the data, so the simulated maxima always live on the statistic's scale —
a mismatched cached table is rejected, never silently accepted.
"""

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .clusters import (
    ClusterSet,
    Cluster,
    FcpResult,
    connected_components,
    find_threshold,
    true_fcp,
    write_envelope_csv,
    write_result_json,
)
from .errors import EnvelopeUndefined, ParameterError, ParseError, StructuralError
from .grid import FORMATS, as_grid, as_mask, load_image
from .msd import msd_image, validate_scales
from .noise import (
    Filtered,
    Msd,
    Negate,
    PoissonField,
    Smooth,
    Sqrt,
    ZScore,
    build_max_distributions,
    child_seed,
    load_table,
    max_percentile,
    model_descriptor,
    model_from_dict,
    save_table,
    superset_alg1,
    superset_alg2,
)
from .transforms import estimate_background, gaussian_smooth, sqrt_transform, z_score

DEFAULT_SCALES = (1.0, 2.0, 4.0, 8.0)


# ---------------------------------------------------------------------------
# synthetic skies


@dataclass(frozen=True)
class SyntheticSky:
    """Poisson counts with planted Gaussian bumps and the exact source mask."""

    image: np.ndarray
    truth: np.ndarray
    sources: tuple
    lambda0: float
    seed: int


def synth_sky(rows, cols, lambda0, sources, seed=0) -> SyntheticSky:
    """Draw Poisson counts over a flat rate lambda0 plus Gaussian bumps.

    Each source is (row, col, amplitude, width); its rate contribution is
    amplitude * exp(-d^2 / (2 width^2)), zeroed where it falls below
    1e-3 * amplitude so every source has a sharp-edged footprint. The truth
    mask marks pixels whose total source rate is positive.
    """
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1:
        raise ParameterError(f"grid dimensions must be positive, got {rows}x{cols}")
    if not (math.isfinite(lambda0) and lambda0 >= 0):
        raise ParameterError(f"lambda0 must be finite and >= 0, got {lambda0}")
    rate = np.zeros((rows, cols))
    rr, cc = np.mgrid[0:rows, 0:cols]
    normalized = []
    for k, (r0, c0, amplitude, width) in enumerate(sources):
        if not (amplitude >= 0):
            raise ParameterError(f"source {k}: amplitude must be >= 0, got {amplitude}")
        if not (width > 0):
            raise ParameterError(f"source {k}: width must be > 0, got {width}")
        bump = amplitude * np.exp(
            -((rr - r0) ** 2 + (cc - c0) ** 2) / (2.0 * width**2)
        )
        bump[bump < 1e-3 * amplitude] = 0.0
        rate += bump
        normalized.append((float(r0), float(c0), float(amplitude), float(width)))
    rng = np.random.default_rng(int(seed))
    image = rng.poisson(rate + lambda0).astype(np.float64)
    return SyntheticSky(
        image=image,
        truth=rate > 0,
        sources=tuple(normalized),
        lambda0=float(lambda0),
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything a detection run needs; all knobs have working defaults.

    ``lambda0`` / ``mu0`` / ``sigma0`` may be left unset to be estimated
    from the input counts (mean of the raw counts for lambda0; background
    median/MAD of the transformed image for the Z-scoring pair). ``noise``
    optionally replaces the Poisson base model with an explicit model dict.
    """

    input: str | None = None
    fmt: str = "ascii-matrix"
    method: str = "msfcp"
    alpha: float = 0.05
    c: float = 0.10
    epsilon: float = 0.99
    sigma_smooth: float = 1.0
    scales: tuple = DEFAULT_SCALES
    lambda0: float | None = None
    mu0: float | None = None
    sigma0: float | None = None
    noise: dict | None = None
    B: int = 2000
    a: int | None = None
    superset: str = "alg2"
    connectivity: str = "eight"
    seed: int = 0
    min_area: int = 1
    rows: int | None = None
    cols: int | None = None
    table_path: str | None = None
    out_catalog: str | None = None
    out_envelope: str | None = None
    out_metadata: str | None = None
    out_result: str | None = None

    def __post_init__(self):
        if self.method not in ("fcp-z", "msfcp"):
            raise ParameterError(f"method must be 'fcp-z' or 'msfcp', got {self.method!r}")
        if self.fmt not in FORMATS:
            raise ParameterError(f"format must be one of {FORMATS}, got {self.fmt!r}")
        if self.superset not in ("alg1", "alg2"):
            raise ParameterError(f"superset must be 'alg1' or 'alg2', got {self.superset!r}")
        if self.connectivity not in ("four", "eight"):
            raise ParameterError(
                f"connectivity must be 'four' or 'eight', got {self.connectivity!r}"
            )
        for name in ("alpha", "c"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ParameterError(f"{name} must be in (0, 1), got {value}")
        if not (0.0 < self.epsilon <= 1.0):
            raise ParameterError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not (self.sigma_smooth > 0):
            raise ParameterError(f"sigma_smooth must be > 0, got {self.sigma_smooth}")
        self.scales = validate_scales(self.scales)
        if int(self.B) < 1:
            raise ParameterError(f"B must be >= 1, got {self.B}")
        self.B = int(self.B)
        if self.a is not None:
            self.a = int(self.a)
            if self.a < 0:
                raise ParameterError(f"a must be >= 0, got {self.a}")
        if int(self.min_area) < 1:
            raise ParameterError(f"min_area must be >= 1, got {self.min_area}")
        self.min_area = int(self.min_area)
        self.seed = int(self.seed)
        if (self.mu0 is None) != (self.sigma0 is None):
            raise ParameterError("mu0 and sigma0 must be pinned together or not at all")
        if self.sigma0 is not None and not (self.sigma0 > 0):
            raise ParameterError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.lambda0 is not None and not (self.lambda0 >= 0):
            raise ParameterError(f"lambda0 must be >= 0, got {self.lambda0}")
        if self.noise is not None:
            model_from_dict(self.noise)  # validate eagerly

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ParameterError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ParameterError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            doc[name] = list(value) if isinstance(value, tuple) else value
        return doc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# detection runs


def pipeline_stages(config: RunConfig, mu0=None, sigma0=None):
    """The exact stage tuple the configured method applies to its input.

    This single constructor serves both the data transform and the mirror
    noise model, so the two can never drift apart. The fcp-z route needs
    the Z-scoring pair; pass the pinned or estimated values.
    """
    if config.method == "fcp-z":
        if mu0 is None or sigma0 is None:
            raise ParameterError(
                "the fcp-z pipeline needs mu0 and sigma0 (pin them in the "
                "config when there is no input image to estimate them from)"
            )
        return (Smooth(config.sigma_smooth), Sqrt(), ZScore(float(mu0), float(sigma0)))
    return (Smooth(config.sigma_smooth), Sqrt(), Msd(config.scales), Negate())


def _statistic_stages(config: RunConfig, raw: np.ndarray):
    """Transform the raw counts and mirror the stages into model descriptors.

    Returns (statistic image, stage tuple, resolved parameter dict); the
    stage tuple is exactly what was applied to the data, ready to wrap
    around the noise base model.
    """
    smoothed = gaussian_smooth(raw, config.sigma_smooth)
    rooted = sqrt_transform(smoothed)
    if config.method == "fcp-z":
        if config.mu0 is not None:
            mu0, sigma0 = float(config.mu0), float(config.sigma0)
        else:
            mu0, sigma0 = estimate_background(rooted)
        stages = pipeline_stages(config, mu0, sigma0)
        statistic = z_score(rooted, mu0, sigma0)
        resolved = {"mu0": mu0, "sigma0": sigma0}
    else:
        stages = pipeline_stages(config)
        statistic = -msd_image(rooted, config.scales)
        resolved = {"scales": list(config.scales)}
    return statistic, stages, resolved


def base_model_for(config: RunConfig, raw=None):
    """The noise base model: explicit dict, pinned lambda0, or estimated.

    Returns (model, lambda0-or-None). Without an input image the rate
    cannot be estimated, so an unset lambda0 is then a configuration error.
    """
    if config.noise is not None:
        return model_from_dict(config.noise), None
    if config.lambda0 is not None:
        lambda0 = float(config.lambda0)
    elif raw is not None:
        lambda0 = float(raw.mean())
    else:
        raise ParameterError(
            "lambda0 is unset and there is no input image to estimate it from"
        )
    if lambda0 < 0:
        raise ParameterError(f"lambda0 must be >= 0, got {lambda0}")
    return PoissonField(lambda0), lambda0


def _obtain_table(config: RunConfig, model, rows, cols, table=None):
    """Build, load, or validate the removal-maxima table for this run."""
    want = model_descriptor(model)
    if table is None and config.table_path is not None:
        try:
            table = load_table(config.table_path)
        except FileNotFoundError:
            table = None
    if table is not None:
        if table.model is not None and table.model != want:
            raise ParameterError(
                "cached table was simulated under a different model:\n"
                f"  table: {table.model}\n  run:   {want}"
            )
        if table.areas[0] != rows * cols:
            raise ParameterError(
                f"cached table covers {table.areas[0]} pixels, input has {rows * cols}"
            )
        if table.B != config.B:
            raise ParameterError(f"cached table has B={table.B}, config wants B={config.B}")
        return table, False
    a = 0 if config.superset == "alg2" else config.a
    table = build_max_distributions(
        model, rows, cols, B=config.B, a=a, seed=child_seed(config.seed, 1)
    )
    return table, True


def _run_detection(config: RunConfig, image=None, table=None):
    if image is None:
        if config.input is None:
            raise ParameterError("config gives no input path and no image was supplied")
        image = load_image(config.input, config.fmt)
    raw = as_grid(image)
    rows, cols = raw.shape

    statistic, stages, resolved = _statistic_stages(config, raw)
    base, lambda0 = base_model_for(config, raw)
    model = Filtered(base, stages)
    table, built = _obtain_table(config, model, rows, cols, table)
    if built and config.table_path is not None:
        save_table(config.table_path, table)

    if config.superset == "alg2":
        r = max_percentile(table.maxima[table._index[rows * cols]], config.alpha)
        superset = superset_alg2(statistic, r, config.alpha)
        resolved["r"] = r
    else:
        superset = superset_alg1(statistic, table, config.alpha)
    resolved.update(
        {
            "lambda0": lambda0,
            "model": model_descriptor(model),
            "table_seed": table.seed,
            "table_a": len(table.areas) - 1,
        }
    )

    result = find_threshold(
        statistic, superset, config.epsilon, config.c, connectivity=config.connectivity
    )
    catalog = build_catalog(result, config, rows, cols, resolved)
    _write_outputs(config, catalog, result)
    return catalog, result


def run_fcp_z(config: RunConfig, image=None, table=None):
    """Smooth-then-root Z-statistic route; returns (Catalog, FcpResult)."""
    if config.method != "fcp-z":
        config = replace(config, method="fcp-z")
    return _run_detection(config, image, table)


def run_msfcp(config: RunConfig, image=None, table=None):
    """Multi-scale derivative route; returns (Catalog, FcpResult)."""
    if config.method != "msfcp":
        config = replace(config, method="msfcp")
    return _run_detection(config, image, table)


def run(config: RunConfig, image=None, table=None):
    """Dispatch on config.method."""
    return _run_detection(config, image, table)


# ---------------------------------------------------------------------------
# catalogs


@dataclass(frozen=True)
class Catalog:
    """Detected-source table, brightest first, plus reproduction metadata."""

    entries: tuple
    metadata: dict


def build_catalog(result: FcpResult, config: RunConfig, rows, cols, resolved) -> Catalog:
    entries = []
    for cl in result.clusters.clusters:
        if cl.area < config.min_area:
            continue
        entries.append(
            {
                "id": cl.id,
                "row": cl.centroid[0],
                "col": cl.centroid[1],
                "area": cl.area,
                "peak": cl.peak,
                "bbox_rmin": cl.bbox[0],
                "bbox_rmax": cl.bbox[1],
                "bbox_cmin": cl.bbox[2],
                "bbox_cmax": cl.bbox[3],
            }
        )
    entries.sort(key=lambda e: (-e["peak"], e["id"]))
    metadata = {
        "method": config.method,
        "t_c": result.t_c,
        "qualified": result.qualified,
        "envelope_value": result.envelope_value,
        "alpha": config.alpha,
        "c": config.c,
        "epsilon": config.epsilon,
        "seed": config.seed,
        "B": config.B,
        "rows": rows,
        "cols": cols,
        "n_detections": len(entries),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "resolved": resolved,
        "config": config.to_dict(),
    }
    return Catalog(entries=tuple(entries), metadata=metadata)


CATALOG_COLUMNS = (
    "id",
    "row",
    "col",
    "area",
    "peak",
    "bbox_rmin",
    "bbox_rmax",
    "bbox_cmin",
    "bbox_cmax",
)


def write_catalog_csv(path, catalog: Catalog):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_COLUMNS)
        for entry in catalog.entries:
            writer.writerow(
                [
                    entry["id"],
                    repr(entry["row"]),
                    repr(entry["col"]),
                    entry["area"],
                    repr(entry["peak"]),
                    entry["bbox_rmin"],
                    entry["bbox_rmax"],
                    entry["bbox_cmin"],
                    entry["bbox_cmax"],
                ]
            )


def write_metadata_json(path, catalog: Catalog):
    with open(path, "w") as fh:
        json.dump(catalog.metadata, fh, indent=2)


def _write_outputs(config: RunConfig, catalog: Catalog, result: FcpResult):
    if config.out_catalog:
        write_catalog_csv(config.out_catalog, catalog)
    if config.out_envelope:
        write_envelope_csv(config.out_envelope, result)
    if config.out_metadata:
        write_metadata_json(config.out_metadata, catalog)
    if config.out_result:
        write_result_json(config.out_result, result, include_pixels=True)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvaluationReport:
    """Scorecard against known truth.

    ``xi`` is the realized false-cluster proportion (None with zero
    detections, where it is undefined); ``completeness`` is the fraction of
    true connected sources touched by at least one detection (None when the
    truth has no sources); ``matched`` flags, per detected cluster, whether
    it overlaps any true source pixel.
    """

    xi: float | None
    completeness: float | None
    matched: tuple
    n_true_sources: int
    n_detections: int

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "completeness": self.completeness,
            "matched": list(self.matched),
            "n_true_sources": self.n_true_sources,
            "n_detections": self.n_detections,
        }


def evaluate(result: FcpResult, truth, epsilon: float) -> EvaluationReport:
    """Score a detection result against the true source mask (true = source)."""
    clusters = result.clusters
    truth = as_mask(truth, shape=clusters.shape if clusters.shape else None)
    truth_components = connected_components(truth, clusters.connectivity or "eight")
    n_true = len(truth_components)

    if len(clusters) == 0:
        return EvaluationReport(
            xi=None,
            completeness=None if n_true == 0 else 0.0,
            matched=(),
            n_true_sources=n_true,
            n_detections=0,
        )

    try:
        xi = true_fcp(clusters, ~truth, epsilon)
    except EnvelopeUndefined:  # unreachable: guarded above
        xi = None

    detected = np.zeros(truth.shape, dtype=bool)
    matched = []
    for cl in clusters.clusters:
        rows_i, cols_i = cl.pixels[:, 0], cl.pixels[:, 1]
        detected[rows_i, cols_i] = True
        matched.append(bool(truth[rows_i, cols_i].any()))

    if n_true == 0:
        completeness = None
    else:
        hit = 0
        for comp in truth_components.clusters:
            if detected[comp.pixels[:, 0], comp.pixels[:, 1]].any():
                hit += 1
        completeness = hit / n_true
    return EvaluationReport(
        xi=xi,
        completeness=completeness,
        matched=tuple(matched),
        n_true_sources=n_true,
        n_detections=len(clusters),
    )


def load_result(path) -> FcpResult:
    """Rebuild an FcpResult from detect's JSON output (pixels required)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    try:
        cs = doc["clusters"]
        clusters = []
        for entry in cs["clusters"]:
            if "pixels" not in entry:
                raise ParseError(
                    f"{path}: cluster {entry.get('id')} has no pixel list; "
                    "re-run detect with a result output to include pixels"
                )
            pixels = np.asarray(entry["pixels"], dtype=np.intp).reshape(-1, 2)
            clusters.append(
                Cluster(
                    id=int(entry["id"]),
                    pixels=pixels,
                    area=int(entry["area"]),
                    centroid=tuple(entry["centroid"]),
                    peak=float(entry["peak"]),
                    bbox=tuple(entry["bbox"]),
                )
            )
        cluster_set = ClusterSet(
            threshold=float(cs["threshold"]),
            connectivity=cs["connectivity"],
            shape=tuple(cs["shape"]),
            clusters=tuple(clusters),
        )
        return FcpResult(
            t_c=float(doc["t_c"]),
            clusters=cluster_set,
            envelope_value=float(doc["envelope_value"]),
            curve=tuple((t, e, int(k)) for t, e, k in doc["curve"]),
            qualified=bool(doc["qualified"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed result document ({exc})") from None

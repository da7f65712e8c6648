"""Level-set clusters and false-cluster-proportion control.

Thresholding an image at t and splitting the strict level set into connected
components gives a candidate catalog of detections. A cluster is counted as
false when at least a fraction ``epsilon`` of its pixels lie inside a
confidence superset U of the source-free region; since U covers the true
background with probability 1 - alpha, the observable false fraction
(the envelope) bounds the unobservable true false proportion simultaneously
for every threshold. find_threshold scans candidate thresholds for the
smallest t whose envelope is within the tolerated proportion c, which
maximizes the number of reported detections under the guarantee.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EnvelopeUndefined, ParameterError, StructuralError
from .grid import as_grid, as_mask

_STRUCTURES = {
    "four": ndimage.generate_binary_structure(2, 1),
    "eight": ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class Cluster:
    """One connected component of a strict level set.

    ``pixels`` is an (area, 2) array of (row, col) coordinates in raster
    order; ``bbox`` is inclusive (rmin, rmax, cmin, cmax); ``peak`` is the
    largest image value inside the cluster (nan when no values were given).
    """

    id: int
    pixels: np.ndarray
    area: int
    centroid: tuple
    peak: float
    bbox: tuple


@dataclass(frozen=True)
class ClusterSet:
    """All clusters of one level set, ids counted from 1 in raster order."""

    threshold: float
    connectivity: str
    shape: tuple
    clusters: tuple

    def __len__(self):
        return len(self.clusters)


def level_set(img, t: float) -> np.ndarray:
    """Mask of pixels with value strictly greater than t."""
    return as_grid(img) > t


def _check_connectivity(connectivity: str):
    if connectivity not in _STRUCTURES:
        raise ParameterError(
            f"connectivity must be 'four' or 'eight', got {connectivity!r}"
        )


def _label(mask: np.ndarray, connectivity: str) -> tuple[np.ndarray, int]:
    """Label components and force ids into raster order of first occurrence."""
    labels, count = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    if count > 1:
        flat = labels.ravel()
        occupied = np.flatnonzero(flat)
        _, first = np.unique(flat[occupied], return_index=True)
        remap = np.zeros(count + 1, dtype=labels.dtype)
        remap[flat[occupied[np.sort(first)]]] = np.arange(1, count + 1)
        labels = remap[labels]
    return labels, count


def connected_components(mask, connectivity="eight", values=None, threshold=math.nan):
    """Decompose a mask into maximal connected clusters.

    Parameters
    ----------
    mask : boolean grid
    connectivity : {'four', 'eight'}
        Whether diagonal neighbors touch.
    values : optional grid matching mask
        Supplies per-cluster peak values; peaks are nan without it.
    threshold : float
        Recorded on the result for bookkeeping.
    """
    mask = as_mask(mask)
    _check_connectivity(connectivity)
    if values is not None:
        values = as_grid(values)
        if values.shape != mask.shape:
            raise StructuralError(
                f"values shape {values.shape} does not match mask {mask.shape}"
            )
    labels, count = _label(mask, connectivity)
    clusters = []
    if count:
        flat = labels.ravel()
        occupied = np.flatnonzero(flat)
        owner = flat[occupied]
        areas = np.bincount(owner, minlength=count + 1)[1:]
        rows_i, cols_i = np.divmod(occupied, mask.shape[1])
        row_sum = np.bincount(owner, weights=rows_i, minlength=count + 1)[1:]
        col_sum = np.bincount(owner, weights=cols_i, minlength=count + 1)[1:]
        boxes = ndimage.find_objects(labels)
        if values is not None:
            peaks = ndimage.maximum(values, labels, index=np.arange(1, count + 1))
        # group member pixels by cluster; stable sort keeps raster order within each
        grouping = np.argsort(owner, kind="stable")
        starts = np.concatenate(([0], np.cumsum(areas)))
        for i in range(count):
            members = occupied[grouping[starts[i] : starts[i + 1]]]
            pixels = np.column_stack(np.divmod(members, mask.shape[1]))
            rs, cs = boxes[i]
            clusters.append(
                Cluster(
                    id=i + 1,
                    pixels=pixels,
                    area=int(areas[i]),
                    centroid=(float(row_sum[i] / areas[i]), float(col_sum[i] / areas[i])),
                    peak=float(peaks[i]) if values is not None else math.nan,
                    bbox=(rs.start, rs.stop - 1, cs.start, cs.stop - 1),
                )
            )
    return ClusterSet(
        threshold=float(threshold),
        connectivity=connectivity,
        shape=mask.shape,
        clusters=tuple(clusters),
    )


def clusters_at(img, t: float, connectivity="eight") -> ClusterSet:
    """Clusters of the strict level set of ``img`` at threshold t."""
    img = as_grid(img)
    return connected_components(level_set(img, t), connectivity, values=img, threshold=t)


def _check_epsilon(epsilon):
    if not (0.0 < epsilon <= 1.0):
        raise ParameterError(f"epsilon must be in (0, 1], got {epsilon}")


def _false_fraction(clusters: ClusterSet, mask: np.ndarray, epsilon: float) -> float:
    if len(clusters) == 0:
        raise EnvelopeUndefined(
            "false cluster proportion is undefined with zero clusters"
        )
    false = 0
    for cluster in clusters.clusters:
        inside = np.count_nonzero(mask[cluster.pixels[:, 0], cluster.pixels[:, 1]])
        if inside / cluster.area >= epsilon:
            false += 1
    return false / len(clusters)


def envelope(clusters: ClusterSet, superset, epsilon: float) -> float:
    """Observable bound on the false cluster proportion.

    Fraction of clusters with at least an ``epsilon`` share of their pixels
    inside the confidence superset. Raises EnvelopeUndefined when the
    cluster set is empty.
    """
    _check_epsilon(epsilon)
    mask = as_mask(getattr(superset, "mask", superset), shape=clusters.shape)
    return _false_fraction(clusters, mask, epsilon)


def true_fcp(clusters: ClusterSet, background: np.ndarray, epsilon: float) -> float:
    """Actual false cluster proportion against a known source-free mask."""
    _check_epsilon(epsilon)
    mask = as_mask(background, shape=clusters.shape)
    return _false_fraction(clusters, mask, epsilon)


@dataclass(frozen=True)
class FcpResult:
    """Outcome of the threshold search.

    ``qualified`` is False when no candidate threshold met the criterion;
    then t_c is +inf, the cluster set is empty, and envelope_value is nan.
    ``curve`` holds one (t, envelope, cluster count) triple per candidate,
    in the descending order the candidates were scanned (envelope is nan
    where the level set is empty).
    """

    t_c: float
    clusters: ClusterSet
    envelope_value: float
    curve: tuple
    qualified: bool


def _curve_point(img, in_superset, t, epsilon, connectivity):
    """(envelope, k) at threshold t, without building Cluster objects."""
    labels, count = ndimage.label(img > t, structure=_STRUCTURES[connectivity])
    if count == 0:
        return math.nan, 0
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=count + 1)[1:]
    overlap = np.bincount(flat, weights=in_superset.ravel(), minlength=count + 1)[1:]
    return float(np.mean(overlap / areas >= epsilon)), int(count)


def find_threshold(img, superset, epsilon, c, t_grid=None, connectivity="eight"):
    """Search candidate thresholds for the lowest one with envelope <= c.

    Candidates default to the distinct pixel values found outside the
    superset plus the global minimum, scanned from brightest down; the
    lowest qualifying threshold (envelope <= c with at least one cluster)
    keeps the most detections. Returns an FcpResult; an unqualified result
    (no threshold works, e.g. the superset covers the whole image) is a
    normal outcome, not an error.
    """
    img = as_grid(img)
    _check_epsilon(epsilon)
    if not (0.0 <= c < 1.0):
        raise ParameterError(f"tolerated false proportion c must be in [0, 1), got {c}")
    _check_connectivity(connectivity)
    mask = as_mask(getattr(superset, "mask", superset), shape=img.shape)

    if t_grid is None:
        outside = img[~mask]
        candidates = np.unique(outside) if outside.size else np.empty(0)
        lowest = img.min()
        if candidates.size == 0 or candidates[0] > lowest:
            candidates = np.concatenate(([lowest], candidates))
    else:
        candidates = np.unique(np.asarray(t_grid, dtype=np.float64))
        if candidates.size == 0:
            raise ParameterError("t_grid must contain at least one threshold")
        if not np.all(np.isfinite(candidates)):
            raise ParameterError("t_grid thresholds must be finite")
    candidates = candidates[::-1]  # descending

    in_superset = mask.astype(np.float64)
    curve = []
    best_t = math.inf
    best_env = math.nan
    for t in candidates:
        env, count = _curve_point(img, in_superset, t, epsilon, connectivity)
        curve.append((float(t), env, count))
        if count >= 1 and env <= c:
            best_t, best_env = float(t), env  # descending scan: last hit is lowest t
    if math.isinf(best_t):
        empty = ClusterSet(math.nan, connectivity, img.shape, ())
        return FcpResult(math.inf, empty, math.nan, tuple(curve), False)
    return FcpResult(
        t_c=best_t,
        clusters=clusters_at(img, best_t, connectivity),
        envelope_value=best_env,
        curve=tuple(curve),
        qualified=True,
    )


# ---------------------------------------------------------------------------
# serialization


def cluster_set_to_dict(clusters: ClusterSet, include_pixels=False) -> dict:
    doc = {
        "threshold": clusters.threshold,
        "connectivity": clusters.connectivity,
        "shape": list(clusters.shape),
        "clusters": [],
    }
    for cl in clusters.clusters:
        entry = {
            "id": cl.id,
            "area": cl.area,
            "centroid": [cl.centroid[0], cl.centroid[1]],
            "peak": cl.peak,
            "bbox": list(cl.bbox),
        }
        if include_pixels:
            entry["pixels"] = cl.pixels.tolist()
        doc["clusters"].append(entry)
    return doc


def result_to_dict(result: FcpResult, include_pixels=False) -> dict:
    return {
        "t_c": result.t_c,
        "qualified": result.qualified,
        "envelope_value": result.envelope_value,
        "curve": [[t, env, k] for t, env, k in result.curve],
        "clusters": cluster_set_to_dict(result.clusters, include_pixels),
    }


def write_result_json(path, result: FcpResult, include_pixels=False):
    with open(path, "w") as fh:
        json.dump(result_to_dict(result, include_pixels), fh, indent=2)


def write_envelope_csv(path, result: FcpResult):
    """Envelope curve as CSV rows (t, envelope, k_t) for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "envelope", "k_t"])
        for t, env, k in result.curve:
            writer.writerow([repr(t), "nan" if math.isnan(env) else repr(env), k])

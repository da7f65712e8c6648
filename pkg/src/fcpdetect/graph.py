"""False-cluster-proportion control on irregular point clouds.

Locations carry a per-point p-value (small = active) and a response phase.
Points are partitioned into phase classes, and two points are connected at
level t when they share a class, both have p-value below t, and are joined
by a path whose edges are no longer than a distance bound d. Clusters are
the connected components of that graph; the confidence superset is the
conservative uniform-order-statistic rule, which needs no simulation. The
threshold search mirrors the image-domain one, except that the level
condition is an upper bound on p-values, so the *largest* qualifying t
admits the most detections.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EnvelopeUndefined, ParameterError, ParseError
from .clusters import _check_epsilon

_TWO_PI = 2.0 * math.pi


def _wrap_phase(phase: np.ndarray) -> np.ndarray:
    return np.mod(phase + math.pi, _TWO_PI) - math.pi


@dataclass(frozen=True)
class LocationSet:
    """Point locations with p-values in [0,1] and phases wrapped to [-pi, pi)."""

    x: np.ndarray
    y: np.ndarray
    pvalue: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("x", "y", "pvalue", "phase"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.ndim != 1:
                raise ParameterError(f"{name} must be 1-D, got shape {arr.shape}")
            arrays[name] = arr
        sizes = {arr.size for arr in arrays.values()}
        if len(sizes) != 1:
            raise ParameterError(f"location fields differ in length: {sorted(sizes)}")
        if arrays["x"].size == 0:
            raise ParameterError("a location set needs at least one point")
        for name in ("x", "y", "phase"):
            if not np.all(np.isfinite(arrays[name])):
                bad = int(np.flatnonzero(~np.isfinite(arrays[name]))[0])
                raise ParameterError(f"{name}[{bad}] is not finite")
        pv = arrays["pvalue"]
        if not np.all((pv >= 0.0) & (pv <= 1.0)):
            bad = int(np.flatnonzero(~((pv >= 0.0) & (pv <= 1.0)))[0])
            raise ParameterError(f"pvalue[{bad}] = {pv[bad]} outside [0, 1]")
        arrays["phase"] = _wrap_phase(arrays["phase"])
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class ClassLabeling:
    """Per-point class indices in 0..K-1."""

    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        if self.K < 1:
            raise ParameterError(f"class count K must be >= 1, got {self.K}")
        if labels.size and not (labels.min() >= 0 and labels.max() < self.K):
            raise ParameterError("labels must lie in 0..K-1")
        object.__setattr__(self, "labels", labels)


def classify_phase(points: LocationSet, K: int = 2) -> ClassLabeling:
    """Partition points into K phase classes.

    Runs Lloyd's algorithm on the unit-circle embedding (cos, sin) of the
    phases. Initialization is deterministic with no random draws — the
    first center is the embedding of point 0 and each further center is the
    point farthest from those chosen — so equal inputs give equal labels,
    and rotating every phase by a constant permutes classes without moving
    the partition. Classes are numbered by ascending circular mean.
    """
    K = int(K)
    if K < 1:
        raise ParameterError(f"class count K must be >= 1, got {K}")
    if points.n < K:
        raise ParameterError(f"cannot form {K} classes from {points.n} points")
    if K == 1:
        return ClassLabeling(np.zeros(points.n, dtype=np.intp), 1)

    emb = np.column_stack((np.cos(points.phase), np.sin(points.phase)))
    centers = np.empty((K, 2))
    centers[0] = emb[0]
    dist = np.linalg.norm(emb - centers[0], axis=1)
    for k in range(1, K):
        centers[k] = emb[np.argmax(dist)]
        dist = np.minimum(dist, np.linalg.norm(emb - centers[k], axis=1))

    labels = np.full(points.n, -1, dtype=np.intp)
    for _ in range(200):
        d2 = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            members = labels == k
            if members.any():  # empty classes keep their previous center
                centers[k] = emb[members].mean(axis=0)

    # renumber by ascending circular mean; empty classes (duplicate-heavy
    # degenerate inputs) sort last
    keys = np.full(K, np.inf)
    for k in range(K):
        members = labels == k
        if members.any():
            keys[k] = math.atan2(
                float(np.sin(points.phase[members]).mean()),
                float(np.cos(points.phase[members]).mean()),
            )
    remap = np.empty(K, dtype=np.intp)
    remap[np.argsort(keys, kind="stable")] = np.arange(K)
    return ClassLabeling(remap[labels], K)


def superset_threshold(n: int, alpha: float) -> float:
    """P-value cutoff 1 - (1-alpha)^(1/n): above it a point joins U."""
    if n < 1:
        raise ParameterError(f"need n >= 1 points, got {n}")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    return 1.0 - (1.0 - alpha) ** (1.0 / n)


def conservative_superset(points: LocationSet, alpha: float) -> np.ndarray:
    """Indices whose p-value exceeds the uniform-order-statistic cutoff.

    Under the null every p-value is Uniform(0,1), so all n points clear the
    cutoff simultaneously with probability exactly 1 - alpha; no noise
    simulation is needed.
    """
    cut = superset_threshold(points.n, alpha)
    return np.flatnonzero(points.pvalue > cut)


def _membership(n: int, indices) -> np.ndarray:
    member = np.zeros(n, dtype=bool)
    idx = np.asarray(list(indices) if isinstance(indices, set) else indices, dtype=np.intp)
    if idx.size:
        if idx.min() < 0 or idx.max() >= n:
            raise ParameterError(f"superset index out of range 0..{n - 1}")
        member[idx] = True
    return member


def graph_components(points: LocationSet, labeling: ClassLabeling, t: float, d: float):
    """Connected clusters at level t: same class, p-value < t, edges <= d.

    Returns a list of ascending index arrays, ordered by smallest member.
    """
    if labeling.labels.size != points.n:
        raise ParameterError(
            f"labeling covers {labeling.labels.size} points, expected {points.n}"
        )
    if not (d > 0):
        raise ParameterError(f"distance bound d must be > 0, got {d}")
    active = np.flatnonzero(points.pvalue < t)
    if active.size == 0:
        return []
    coords = np.column_stack((points.x[active], points.y[active]))
    parent = np.arange(active.size)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    labels = labeling.labels[active]
    for i, j in cKDTree(coords).query_pairs(r=float(d)):
        if labels[i] == labels[j]:
            parent[find(i)] = find(j)

    roots = np.array([find(i) for i in range(active.size)])
    clusters = {}
    for local, root in enumerate(roots):
        clusters.setdefault(root, []).append(active[local])
    out = [np.asarray(members, dtype=np.intp) for members in clusters.values()]
    out.sort(key=lambda members: members[0])
    return out


def graph_envelope(clusters, in_superset: np.ndarray, epsilon: float) -> float:
    """Fraction of clusters with an epsilon share of members in the superset."""
    if not clusters:
        raise EnvelopeUndefined("false cluster proportion is undefined with zero clusters")
    false = sum(
        1 for members in clusters
        if np.count_nonzero(in_superset[members]) / members.size >= epsilon
    )
    return false / len(clusters)


def graph_find_threshold(points, labeling, superset, epsilon, c, d):
    """Largest p-value level whose clusters keep the false fraction within c.

    Candidates are the distinct observed p-values, scanned from the largest
    down; the first level with at least one cluster and envelope <= c wins
    (the level condition is an upper bound, so larger t admits more
    points). Returns (t_c, clusters); (None, []) when no level qualifies.
    """
    _check_epsilon(epsilon)
    if not (0.0 <= c < 1.0):
        raise ParameterError(f"tolerated false proportion c must be in [0, 1), got {c}")
    in_superset = _membership(points.n, superset)
    for t in np.unique(points.pvalue)[::-1]:
        clusters = graph_components(points, labeling, float(t), d)
        if clusters and graph_envelope(clusters, in_superset, epsilon) <= c:
            return float(t), clusters
    return None, []


def cluster_ids(n: int, clusters) -> np.ndarray:
    """Per-point cluster id (position in the cluster list); -1 = undetected."""
    ids = np.full(n, -1, dtype=np.intp)
    for cid, members in enumerate(clusters):
        ids[members] = cid
    return ids


# ---------------------------------------------------------------------------
# CSV interface


def read_locations(path) -> LocationSet:
    """Read a location table: CSV with header columns x, y, pvalue, phase."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("x", "y", "pvalue", "phase") if c not in header]
        if missing:
            raise ParseError(f"{path}: header is missing column(s) {', '.join(missing)}")
        cols = {"x": [], "y": [], "pvalue": [], "phase": []}
        for line, row in enumerate(reader, start=2):
            for name in cols:
                token = row.get(name)
                if token is None or token == "":
                    raise ParseError(f"{path}:{line}: empty {name} field")
                try:
                    value = float(token)
                except ValueError:
                    raise ParseError(
                        f"{path}:{line}: cannot parse {name}={token!r} as a number"
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(f"{path}:{line}: {name} must be finite, got {token}")
                if name == "pvalue" and not 0.0 <= value <= 1.0:
                    raise ParseError(f"{path}:{line}: pvalue {value} outside [0, 1]")
                cols[name].append(value)
    if not cols["x"]:
        raise ParseError(f"{path}: no data rows")
    return LocationSet(**{k: np.array(v) for k, v in cols.items()})


def write_locations(path, points: LocationSet, labeling: ClassLabeling, clusters):
    """Write the detection table: x, y, class, cluster_id (-1 = undetected)."""
    ids = cluster_ids(points.n, clusters)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "class", "cluster_id"])
        for i in range(points.n):
            writer.writerow(
                [repr(float(points.x[i])), repr(float(points.y[i])),
                 int(labeling.labels[i]), int(ids[i])]
            )

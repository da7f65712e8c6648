"""Deliberately naive reference implementations used to cross-check the
package. Everything here favors obviousness over speed: explicit loops,
breadth-first searches, exhaustive scans."""

import math
from collections import deque

import numpy as np


def sampled_gaussian_kernel(sigma, radius):
    """Normalized truncated Gaussian sampled on an integer grid."""
    coords = np.arange(-radius, radius + 1, dtype=float)
    u, v = np.meshgrid(coords, coords, indexing="ij")
    kernel = np.exp(-(u * u + v * v) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def reflect_index(i, n):
    """Edge-inclusive mirror: ... 2,1,0 | 0,1,2 ... n-1 | n-1,n-2 ..."""
    period = 2 * n
    i = i % period
    if i < 0:
        i += period
    return i if i < n else period - 1 - i


def convolve_reflect_direct(img, kernel):
    """Plain quadruple-loop convolution with edge-inclusive mirror padding."""
    rows, cols = img.shape
    radius = kernel.shape[0] // 2
    out = np.zeros_like(img, dtype=float)
    for r in range(rows):
        for c in range(cols):
            acc = 0.0
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    rr = reflect_index(r - dr, rows)
                    cc = reflect_index(c - dc, cols)
                    acc += kernel[dr + radius, dc + radius] * img[rr, cc]
            out[r, c] = acc
    return out


def flood_fill_components(mask, connectivity="eight"):
    """Connected components by breadth-first flood fill.

    Returns (labels grid with ids 1..k in raster order of first pixel, k).
    """
    if connectivity == "eight":
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        steps = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    rows, cols = mask.shape
    labels = np.zeros(mask.shape, dtype=int)
    k = 0
    for r in range(rows):
        for c in range(cols):
            if mask[r, c] and labels[r, c] == 0:
                k += 1
                queue = deque([(r, c)])
                labels[r, c] = k
                while queue:
                    cr, cc = queue.popleft()
                    for dr, dc in steps:
                        nr, nc = cr + dr, cc + dc
                        if 0 <= nr < rows and 0 <= nc < cols:
                            if mask[nr, nc] and labels[nr, nc] == 0:
                                labels[nr, nc] = k
                                queue.append((nr, nc))
    return labels, k


def partition_from_labels(labels):
    """Frozen set of frozen pixel sets, one per positive label."""
    groups = {}
    for r in range(labels.shape[0]):
        for c in range(labels.shape[1]):
            if labels[r, c] > 0:
                groups.setdefault(labels[r, c], set()).add((r, c))
    return frozenset(frozenset(g) for g in groups.values())


def envelope_direct(labels, k, in_superset, epsilon):
    """Fraction of clusters with >= epsilon of their pixels in the superset."""
    false = 0
    for cid in range(1, k + 1):
        members = labels == cid
        inside = np.count_nonzero(in_superset & members)
        if inside / np.count_nonzero(members) >= epsilon:
            false += 1
    return false / k


def exhaustive_threshold_search(img, superset_mask, epsilon, c, connectivity="eight"):
    """Try every candidate threshold; keep the smallest that qualifies.

    Candidates are the distinct pixel values outside the superset plus the
    global minimum, the same grid the package scans. Returns (t_c, k) or
    (None, 0).
    """
    outside = img[~superset_mask]
    candidates = sorted(set(outside.tolist()) | {float(img.min())})
    best = None
    for t in candidates:
        labels, k = flood_fill_components(img > t, connectivity)
        if k == 0:
            continue
        if envelope_direct(labels, k, superset_mask, epsilon) <= c:
            best = (float(t), k)
            break  # ascending order: first qualifying is the smallest
    return best if best is not None else (None, 0)


def bfs_point_components(x, y, labels, pvalues, t, d):
    """Brute-force graph clusters: all-pairs edges, breadth-first search.

    Returns a list of sorted index lists, ordered by smallest member.
    """
    n = len(x)
    active = [i for i in range(n) if pvalues[i] < t]
    adjacency = {i: [] for i in active}
    for ai in range(len(active)):
        for bi in range(ai + 1, len(active)):
            i, j = active[ai], active[bi]
            if labels[i] != labels[j]:
                continue
            if math.hypot(x[i] - x[j], y[i] - y[j]) <= d:
                adjacency[i].append(j)
                adjacency[j].append(i)
    seen = set()
    clusters = []
    for start in active:
        if start in seen:
            continue
        queue = deque([start])
        seen.add(start)
        members = []
        while queue:
            i = queue.popleft()
            members.append(i)
            for j in adjacency[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        clusters.append(sorted(members))
    clusters.sort(key=lambda m: m[0])
    return clusters

"""Unsupervised over-segmentation by normal-based greedy region growing.

Faces join a region while their normal stays within an angle threshold of
the region's running (area-weighted) mean normal; growth order is BFS from
ascending seed face indices, so results are deterministic. Regions smaller
than min_faces merge into the edge-adjacent region with the closest mean
normal. Labels are never consulted except for the summary statistics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .mesh import (TriangleMesh, UNLABELED, degenerate_faces, face_adjacency,
                   face_areas, face_normals)


@dataclass
class Segmentation:
    """A partition of the faces plus per-segment summary statistics."""

    segment_ids: np.ndarray      # (M,) int32, dense ids starting at 0
    centroids: np.ndarray        # (S, 3) area-weighted surface centroids
    mean_normals: np.ndarray     # (S, 3) unit vectors; zero where degenerate
    areas: np.ndarray            # (S,) summed face area, m^2
    dominant_labels: np.ndarray  # (S,) int32 class id or UNLABELED

    @property
    def segment_count(self):
        return len(self.areas)


def face_majority_labels(mesh: TriangleMesh) -> np.ndarray:
    """Per-face label: majority of the three vertices, ties to smallest id."""
    vl = mesh.labels[mesh.faces]  # (M, 3)
    out = np.full(mesh.face_count, UNLABELED, dtype=np.int32)
    for i in range(mesh.face_count):
        vals, counts = np.unique(vl[i], return_counts=True)
        keep = vals != UNLABELED
        vals, counts = vals[keep], counts[keep]
        if len(vals):
            out[i] = vals[np.argmax(counts)]  # unique is sorted: ties go low
    return out


def oversegment(mesh: TriangleMesh, normal_threshold: float = 0.26,
                min_faces: int = 4) -> Segmentation:
    """Partition the faces into connected, normal-coherent segments."""
    m = mesh.face_count
    if m == 0:
        z3 = np.zeros((0, 3))
        return Segmentation(np.zeros(0, np.int32), z3, z3, np.zeros(0), np.zeros(0, np.int32))

    normals = face_normals(mesh)
    areas = face_areas(mesh)
    degenerate = degenerate_faces(mesh)
    adjacency = face_adjacency(mesh)
    cos_thresh = np.cos(normal_threshold)

    assignment = np.full(m, -1, dtype=np.int64)
    region_sums = []  # area-weighted normal accumulators
    for seed in range(m):
        if assignment[seed] >= 0 or degenerate[seed]:
            continue
        rid = len(region_sums)
        assignment[seed] = rid
        acc = areas[seed] * normals[seed]
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            norm = np.linalg.norm(acc)
            mean = acc / norm if norm > 1e-12 else normals[f]
            for nbr in adjacency[f]:
                if assignment[nbr] >= 0 or degenerate[nbr]:
                    continue
                if np.dot(normals[nbr], mean) > cos_thresh:
                    assignment[nbr] = rid
                    acc = acc + areas[nbr] * normals[nbr]
                    queue.append(nbr)
        region_sums.append(acc)

    # attach degenerate faces to their lowest-id assigned neighbor
    for f in np.nonzero(degenerate)[0]:
        assigned = [n for n in adjacency[f] if assignment[n] >= 0]
        if assigned:
            assignment[f] = assignment[min(assigned)]
        else:
            assignment[f] = len(region_sums)
            region_sums.append(np.zeros(3))

    assignment = _merge_small_regions(assignment, adjacency, areas, normals, min_faces)
    segment_ids = _compact_ids(assignment)
    return Segmentation(segment_ids=segment_ids,
                        **_summaries(mesh, segment_ids, areas, normals))


def _merge_small_regions(assignment, adjacency, areas, normals, min_faces):
    if min_faces <= 1:
        return assignment
    n_regions = int(assignment.max()) + 1
    sizes = np.bincount(assignment, minlength=n_regions)
    sums = np.zeros((n_regions, 3))
    for k in range(3):
        np.add.at(sums[:, k], assignment, areas * normals[:, k])
    means = np.zeros_like(sums)
    lens = np.linalg.norm(sums, axis=1)
    ok = lens > 1e-12
    means[ok] = sums[ok] / lens[ok, None]

    remap = np.arange(n_regions, dtype=np.int64)
    for rid in range(n_regions):
        if sizes[rid] >= min_faces:
            continue
        member_faces = np.nonzero(assignment == rid)[0]
        neighbor_ids = set()
        for f in member_faces:
            for nbr in adjacency[f]:
                tgt = remap[assignment[nbr]]
                if tgt != remap[rid]:
                    neighbor_ids.add(int(tgt))
        if not neighbor_ids:
            continue
        cands = sorted(neighbor_ids)
        dots = [float(np.dot(means[rid], means[c])) for c in cands]
        best = cands[int(np.argmax(dots))]
        remap[remap == remap[rid]] = best
    return remap[assignment]


def _compact_ids(assignment):
    order = {}
    out = np.empty(len(assignment), dtype=np.int32)
    for i, rid in enumerate(assignment):
        if rid not in order:
            order[rid] = len(order)
        out[i] = order[rid]
    return out


def _summaries(mesh, segment_ids, areas, normals):
    s = int(segment_ids.max()) + 1 if len(segment_ids) else 0
    area_sum = np.bincount(segment_ids, weights=areas, minlength=s)

    centroids = np.zeros((s, 3))
    mean_normals = np.zeros((s, 3))
    face_centers = mesh.positions[mesh.faces].mean(axis=1)
    for k in range(3):
        np.add.at(centroids[:, k], segment_ids, areas * face_centers[:, k])
        np.add.at(mean_normals[:, k], segment_ids, areas * normals[:, k])
    nz = area_sum > 1e-12
    centroids[nz] /= area_sum[nz, None]
    lens = np.linalg.norm(mean_normals, axis=1)
    ok = lens > 1e-9
    mean_normals[ok] /= lens[ok, None]
    mean_normals[~ok] = 0.0

    flabels = face_majority_labels(mesh)
    dominant = np.full(s, UNLABELED, dtype=np.int32)
    for rid in range(s):
        in_seg = segment_ids == rid
        lab = flabels[in_seg]
        w = areas[in_seg]
        keep = lab != UNLABELED
        if keep.any():
            votes = np.zeros(int(lab[keep].max()) + 1)
            np.add.at(votes, lab[keep], w[keep])
            dominant[rid] = int(np.argmax(votes))  # argmax ties go low
    return {"centroids": centroids, "mean_normals": mean_normals,
            "areas": area_sum, "dominant_labels": dominant}
